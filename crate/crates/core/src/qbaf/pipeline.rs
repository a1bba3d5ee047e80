//! Checkpoint-to-sparse-graph pipeline shared by the command line and the
//! test suites.

use super::{
    cluster_hidden, mlp_to_qbaf, sparsify, unfaithfulness, CognitiveComplexity, Qbaf, QbafError,
    ReferenceSplit, SparsifyConfig, UnfaithfulnessReport,
};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::shapes::Dataset;
use rayon::prelude::*;

pub struct SparsifyOutcome {
    /// Unsparsified graph (singleton arguments).
    pub qbaf: Qbaf,
    pub sparsified: Qbaf,
    /// One partition per hidden layer.
    pub partitions: Vec<Vec<Vec<usize>>>,
    /// Measured on the test split, accuracy included.
    pub report: UnfaithfulnessReport,
    pub complexity: CognitiveComplexity,
}

/// Classifier input vectors (similarity scores, or channel maxima for the
/// ablated pipeline) over the given samples.
pub fn classifier_inputs(
    cfg: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>, QbafError> {
    indices
        .par_iter()
        .map(|&i| {
            let trace = forward(cfg, params, &dataset.samples[i].image)?;
            Ok(trace.classifier_input.data().to_vec())
        })
        .collect()
}

/// Translate the trained classifier, cluster hidden neurons on the reference
/// split's activation profiles, sparsify, and measure unfaithfulness and
/// accuracy on the test split.
pub fn sparsify_pipeline(
    cfg: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    scfg: &SparsifyConfig,
) -> Result<SparsifyOutcome, QbafError> {
    scfg.validate()?;
    let layers = params.classifier_layers();
    let qbaf = mlp_to_qbaf(&layers);

    let reference_idx = match scfg.reference_split {
        ReferenceSplit::Train => &dataset.train_idx,
        ReferenceSplit::Test => &dataset.test_idx,
    };
    if reference_idx.is_empty() {
        return Err(QbafError::EmptyReference);
    }
    let reference_inputs = classifier_inputs(cfg, params, dataset, reference_idx)?;

    // Activation profiles per hidden layer: one row per neuron, one column
    // per reference sample.
    let mut partitions = Vec::new();
    for layer in 0..layers.len().saturating_sub(1) {
        let width = layers[layer].weight.shape()[1];
        let mut profiles = vec![vec![0.0; reference_inputs.len()]; width];
        for (si, input) in reference_inputs.iter().enumerate() {
            let (hidden, _) = super::mlp_forward(&layers, input);
            for (n, &a) in hidden[layer].iter().enumerate() {
                profiles[n][si] = a;
            }
        }
        partitions.push(cluster_hidden(&profiles, scfg.ratio, scfg.cluster_seed)?);
    }

    let sparsified = sparsify(&qbaf, &partitions)?;

    let test_inputs = classifier_inputs(cfg, params, dataset, &dataset.test_idx)?;
    let test_labels: Vec<usize> = dataset.test_idx.iter().map(|&i| dataset.samples[i].label).collect();
    let report = unfaithfulness(&layers, &sparsified, &test_inputs, Some(&test_labels))?;
    let complexity = sparsified.cognitive_complexity();

    Ok(SparsifyOutcome { qbaf, sparsified, partitions, report, complexity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::shapes::generate;

    #[test]
    fn ratio_zero_pipeline_is_faithful() {
        let cfg = ModelConfig {
            backbone_channels: vec![4, 8],
            n_prototypes: 6,
            n_combinations: 2,
            mlp_hidden: vec![10],
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 4).unwrap();
        let ds = generate(11, 20).unwrap();
        let out = sparsify_pipeline(&cfg, &params, &ds, &SparsifyConfig::default()).unwrap();
        assert_eq!(out.report.hidden, 0.0);
        assert_eq!(out.report.output, 0.0);
        assert_eq!(out.sparsified.hidden_cluster_count(), 10);
        assert_eq!(out.complexity.headline, 2 + 10);
        assert_eq!(out.complexity.full, 2 + 10 + 2);
    }

    #[test]
    fn compression_shrinks_cluster_count() {
        let cfg = ModelConfig {
            backbone_channels: vec![4, 8],
            n_prototypes: 6,
            n_combinations: 2,
            mlp_hidden: vec![10],
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 4).unwrap();
        let ds = generate(11, 20).unwrap();
        let scfg = SparsifyConfig { ratio: 0.8, ..Default::default() };
        let out = sparsify_pipeline(&cfg, &params, &ds, &scfg).unwrap();
        assert_eq!(out.sparsified.hidden_cluster_count(), 2, "round(0.2 * 10)");
        assert!(out.report.hidden >= 0.0 && out.report.output >= 0.0);
    }
}
