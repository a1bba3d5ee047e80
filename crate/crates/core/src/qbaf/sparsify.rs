//! Cluster-merge sparsification and its faithfulness cost.

use super::{forward_strengths, mlp_forward, Argument, ArgumentKind, Edge, Qbaf, QbafError};
use crate::model::MlpLayer;

/// Merge hidden neurons within each cluster into one argument per cluster.
///
/// Aggregation: a cluster's base score is the mean of its members' biases,
/// an incoming edge is the mean of the members' incoming weights, and an
/// outgoing edge is the sum of the members' outgoing weights. When both ends
/// of an edge are clusters the two rules compose (sum over sources, mean
/// over targets). This keeps downstream pre-activations exact whenever a
/// cluster's members carry equal activations.
///
/// `partitions` holds one partition per hidden layer, each covering that
/// layer's neurons exactly. The input must be an unsparsified graph
/// (singleton hidden members).
pub fn sparsify(qbaf: &Qbaf, partitions: &[Vec<Vec<usize>>]) -> Result<Qbaf, QbafError> {
    let hidden_layers = qbaf.n_layers.saturating_sub(2);
    if partitions.len() != hidden_layers {
        return Err(QbafError::BadPartition(format!(
            "{} partitions for {} hidden layers",
            partitions.len(),
            hidden_layers
        )));
    }

    // Old argument id -> (new id, aggregation weight divisor).
    let mut new_arguments: Vec<Argument> = Vec::new();
    let mut old_to_new: Vec<usize> = vec![usize::MAX; qbaf.arguments.len()];

    for layer in 0..qbaf.n_layers {
        let layer_ids = qbaf.layer_ids(layer);
        let is_hidden = layer > 0 && layer < qbaf.n_layers - 1;
        if !is_hidden {
            for id in layer_ids {
                let old = &qbaf.arguments[id];
                let new_id = new_arguments.len();
                old_to_new[id] = new_id;
                new_arguments.push(Argument { id: new_id, ..old.clone() });
            }
            continue;
        }

        let partition = &partitions[layer - 1];
        let width = layer_ids.len();
        let mut seen = vec![false; width];
        for cluster in partition {
            if cluster.is_empty() {
                return Err(QbafError::BadPartition("empty cluster".into()));
            }
            for &n in cluster {
                if n >= width || seen[n] {
                    return Err(QbafError::BadPartition(format!(
                        "neuron {n} missing or duplicated in layer {layer}"
                    )));
                }
                seen[n] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(QbafError::BadPartition(format!("partition does not cover layer {layer}")));
        }

        for cluster in partition {
            let new_id = new_arguments.len();
            let base = cluster.iter().map(|&n| qbaf.arguments[layer_ids[n]].base_score).sum::<f64>()
                / cluster.len() as f64;
            let mut members = cluster.clone();
            members.sort_unstable();
            for &n in cluster {
                old_to_new[layer_ids[n]] = new_id;
            }
            new_arguments.push(Argument {
                id: new_id,
                layer,
                base_score: base,
                kind: ArgumentKind::HiddenCluster,
                members,
            });
        }
    }

    // Aggregate edge weights: sum over source members, then divide by the
    // target cluster size (mean over incoming).
    let mut agg: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); new_arguments.len()];
    for e in &qbaf.edges {
        let (nf, nt) = (old_to_new[e.from], old_to_new[e.to]);
        *agg[nt].entry(nf).or_insert(0.0) += e.weight;
    }
    let mut edges = Vec::new();
    for arg in &new_arguments {
        let target_size = arg.members.len() as f64;
        for (&from, &sum) in &agg[arg.id] {
            let weight = if arg.kind == ArgumentKind::Output { sum } else { sum / target_size };
            if weight != 0.0 {
                edges.push(Edge { from, to: arg.id, weight });
            }
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));

    Ok(Qbaf {
        arguments: new_arguments,
        edges,
        influences: qbaf.influences.clone(),
        n_layers: qbaf.n_layers,
        source_hash: qbaf.source_hash,
    })
}

/// How far the sparsified graph drifts from the original network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnfaithfulnessReport {
    /// Mean over samples and clusters of |cluster strength - mean member
    /// activation|.
    pub hidden: f64,
    /// Mean absolute difference of class probabilities.
    pub output: f64,
    /// Accuracy of the sparsified graph, when labels are supplied.
    pub accuracy: Option<f64>,
}

/// Evaluate both unfaithfulness measures of `sparsified` against the
/// original classifier over an evaluation set of classifier inputs.
pub fn unfaithfulness(
    layers: &[MlpLayer],
    sparsified: &Qbaf,
    inputs: &[Vec<f64>],
    labels: Option<&[usize]>,
) -> Result<UnfaithfulnessReport, QbafError> {
    if inputs.is_empty() {
        return Err(QbafError::EmptyReference);
    }
    if let Some(labels) = labels {
        assert_eq!(labels.len(), inputs.len());
    }

    let cluster_args: Vec<&Argument> = sparsified
        .arguments
        .iter()
        .filter(|a| a.kind == ArgumentKind::HiddenCluster)
        .collect();

    let mut hidden_sum = 0.0;
    let mut hidden_count = 0usize;
    let mut output_sum = 0.0;
    let mut correct = 0usize;

    for (si, input) in inputs.iter().enumerate() {
        let (hidden_acts, logits) = mlp_forward(layers, input);
        let sa = forward_strengths(sparsified, input)?;

        for arg in &cluster_args {
            let acts = &hidden_acts[arg.layer - 1];
            let mean: f64 = arg.members.iter().map(|&n| acts[n]).sum::<f64>() / arg.members.len() as f64;
            hidden_sum += (sa.strengths[arg.id] - mean).abs();
            hidden_count += 1;
        }

        let p_mlp = super::translate::softmax(&logits);
        let diff: f64 = p_mlp
            .iter()
            .zip(&sa.probabilities)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / p_mlp.len() as f64;
        output_sum += diff;

        if let Some(labels) = labels {
            if sa.predicted_class() == labels[si] {
                correct += 1;
            }
        }
    }

    Ok(UnfaithfulnessReport {
        hidden: if hidden_count > 0 { hidden_sum / hidden_count as f64 } else { 0.0 },
        output: output_sum / inputs.len() as f64,
        accuracy: labels.map(|_| correct as f64 / inputs.len() as f64),
    })
}
