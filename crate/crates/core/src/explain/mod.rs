//! Per-input explanations: class heatmaps in image space, prototype
//! provenance, similarity scores, and the argumentation graph with final
//! strengths.

mod export;
mod overlay;

pub use export::{export, parse_explanation, ExportFormat};
pub use overlay::{render_overlay, Raster, DEFAULT_MAX_ALPHA};

use crate::model::{upscale_heatmap, ModelConfig, ModelError, ModelParams};
use crate::qbaf::{forward_strengths, Qbaf, QbafError, StrengthAssignment};
use crate::shapes::Dataset;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("checkpoint/graph mismatch: classifier hash {params:#x} vs graph source {qbaf:#x}")]
    HashMismatch { params: u64, qbaf: u64 },
    #[error("sample index {index} out of range for dataset of {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("explanations need the super-prototype pipeline (use_super_prototypes = true)")]
    NoSuperPrototypes,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qbaf(#[from] QbafError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed explanation text: {0}")]
    Format(String),
    #[error("unknown export format {0:?}")]
    UnknownFormat(String),
}

/// Which training patch a prototype stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeProvenance {
    pub prototype: usize,
    /// Dataset sample index of the source image.
    pub image_index: usize,
    /// Latent position of the source patch.
    pub position: (usize, usize),
    pub similarity: f64,
    /// Receptive-field pixel crop (y0, x0, y1, x1), end-exclusive.
    pub pixel_block: (usize, usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    /// Dataset container path or label the sample came from.
    pub data_ref: String,
    pub sample_index: usize,
    /// Argmax of the graph's output strengths (ties to the lowest class).
    pub predicted_class: usize,
    /// Probability of the predicted class under the graph's softmax.
    pub probability: f64,
    /// Per-class similarity scores.
    pub ss: Vec<f64>,
    /// Input image [28,28,3], for overlay rendering.
    pub image: Tensor,
    /// Per-class signed heatmaps [28,28]; positive supports the class,
    /// negative attacks it.
    pub heatmaps: Vec<Tensor>,
    pub provenance: Vec<PrototypeProvenance>,
    pub qbaf: Qbaf,
    pub strengths: StrengthAssignment,
}

/// Assemble the explanation for one dataset sample. Pure function of its
/// inputs; rejects a graph that was not derived from these parameters.
pub fn explain(
    cfg: &ModelConfig,
    params: &ModelParams,
    qbaf: &Qbaf,
    dataset: &Dataset,
    index: usize,
    data_ref: &str,
) -> Result<Explanation, ExplainError> {
    if index >= dataset.samples.len() {
        return Err(ExplainError::IndexOutOfRange { index, size: dataset.samples.len() });
    }
    let params_hash = params.classifier_hash();
    if params_hash != qbaf.source_hash {
        return Err(ExplainError::HashMismatch { params: params_hash, qbaf: qbaf.source_hash });
    }

    let sample = &dataset.samples[index];
    let trace = crate::model::forward(cfg, params, &sample.image)?;
    let (Some(ss), Some(sp)) = (&trace.ss, &trace.sp) else {
        return Err(ExplainError::NoSuperPrototypes);
    };

    let strengths = forward_strengths(qbaf, ss.data())?;
    let predicted_class = strengths.predicted_class();
    let probability = strengths.probabilities[predicted_class];

    let scale = cfg.upscale_factor();
    let (h, w) = (sp.shape()[1], sp.shape()[2]);
    let heatmaps: Vec<Tensor> = (0..cfg.n_classes)
        .map(|k| {
            let map = Tensor::new(vec![h, w], sp.data()[k * h * w..(k + 1) * h * w].to_vec())
                .expect("sp slice");
            upscale_heatmap(&map, scale)
        })
        .collect();

    let provenance = params
        .projection
        .as_ref()
        .map(|report| {
            report
                .entries
                .iter()
                .enumerate()
                .map(|(prototype, e)| {
                    let (ph, pw) = e.position;
                    PrototypeProvenance {
                        prototype,
                        image_index: e.image_index,
                        position: e.position,
                        similarity: e.similarity,
                        pixel_block: (ph * scale, pw * scale, (ph + 1) * scale, (pw + 1) * scale),
                    }
                })
                .collect()
        })
        .unwrap_or_default();

    Ok(Explanation {
        data_ref: data_ref.to_string(),
        sample_index: index,
        predicted_class,
        probability,
        ss: ss.data().to_vec(),
        image: sample.image.clone(),
        heatmaps,
        provenance,
        qbaf: qbaf.clone(),
        strengths,
    })
}
