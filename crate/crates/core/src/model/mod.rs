//! The forward architecture.
//!
//! backbone conv stack -> prototype similarity maps -> channel-wise max ->
//! per-class linear combinations -> super-prototype maps -> similarity
//! scores -> classifier. With `use_super_prototypes = false` the classifier
//! instead sees the per-channel global maxima of the similarity maps, which
//! deliberately discards all position information (the ablation baseline).

mod checkpoint;
mod forward;
mod heatmap;
mod init;
mod project;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{forward, forward_on_tape, TapeForward};
pub use heatmap::upscale_heatmap;
pub use init::init_params;
pub use project::project_prototypes;

use crate::hash::Fnv1a;
use crate::shapes::IMAGE_SIZE;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameters inconsistent with configuration: {0}")]
    ParamShape(String),
    #[error("projection requires a nonempty train set")]
    EmptyTrainSet,
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
}

/// How the prototype layer scores a latent patch against a prototype.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    /// Cosine similarity, implemented by convolving the patch-normalized
    /// latent tensor with normalized prototype kernels.
    Cosine,
    /// Log-ratio activation over squared L2 distance, ln((d2+1)/(d2+eps)).
    NegL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Mlp,
    /// Frozen linear layer: weight 1.0 from a class's own inputs, -0.5 from
    /// the others; never trained.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Output channels of each backbone conv stage (3x3, pad 1, followed by
    /// ReLU and a 2x2 max-pool).
    pub backbone_channels: Vec<usize>,
    /// Prototype count N.
    pub n_prototypes: usize,
    /// Linear combinations per class, M.
    pub n_combinations: usize,
    /// Prototype spatial size; only 1x1 is supported.
    pub proto_h: usize,
    pub proto_w: usize,
    /// Class count K.
    pub n_classes: usize,
    pub mlp_hidden: Vec<usize>,
    pub similarity: Similarity,
    pub classifier: ClassifierKind,
    pub use_super_prototypes: bool,
    /// Normalization guard for zero patches/prototypes.
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_channels: vec![16, 32],
            n_prototypes: 64,
            n_combinations: 8,
            proto_h: 1,
            proto_w: 1,
            n_classes: 2,
            mlp_hidden: vec![100],
            similarity: Similarity::Cosine,
            classifier: ClassifierKind::Mlp,
            use_super_prototypes: true,
            epsilon: 1e-8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.backbone_channels.is_empty() {
            return Err(ModelError::Config("backbone needs at least one conv stage".into()));
        }
        if self.n_prototypes < 1 {
            return Err(ModelError::Config("n_prototypes must be >= 1".into()));
        }
        if self.n_combinations < 1 {
            return Err(ModelError::Config("n_combinations must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(ModelError::Config("n_classes must be >= 2".into()));
        }
        if self.proto_h != 1 || self.proto_w != 1 {
            return Err(ModelError::Config("only 1x1 prototypes are supported".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(ModelError::Config("epsilon must be positive".into()));
        }
        let (h, _, _) = self.latent_dims();
        if h == 0 {
            return Err(ModelError::Config(format!(
                "{} pool stages collapse a {}px image to nothing",
                self.backbone_channels.len(),
                IMAGE_SIZE
            )));
        }
        if self.classifier == ClassifierKind::Mlp && self.mlp_hidden.contains(&0) {
            return Err(ModelError::Config("mlp hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// (H, W, D) of the backbone output.
    pub fn latent_dims(&self) -> (usize, usize, usize) {
        let mut side = IMAGE_SIZE;
        for _ in &self.backbone_channels {
            side /= 2;
        }
        (side, side, *self.backbone_channels.last().unwrap_or(&0))
    }

    /// Cumulative backbone stride; one latent cell covers this many pixels.
    pub fn upscale_factor(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    /// Width of the classifier's input vector.
    pub fn classifier_input_dim(&self) -> usize {
        if self.use_super_prototypes {
            self.n_classes
        } else {
            self.n_prototypes
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// [3, 3, cin, cout]
    pub kernels: Tensor,
    /// [cout]
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    /// [in, out]
    pub weight: Tensor,
    /// [out]
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierParams {
    Mlp(Vec<MlpLayer>),
    /// Frozen weight [in, K]; excluded from training.
    Fixed { weight: Tensor },
}

/// Where a prototype landed during projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionEntry {
    /// Index into the dataset's sample list.
    pub image_index: usize,
    pub position: (usize, usize),
    /// Best similarity found during the scan (before replacement).
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProjectionReport {
    pub entries: Vec<ProjectionEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv_layers: Vec<ConvLayer>,
    /// Prototype bank [N, 1, 1, D].
    pub prototypes: Tensor,
    /// [K, M, N]
    pub lc_weights: Tensor,
    /// [K, M, H, W]
    pub sp_weights: Tensor,
    pub classifier: ClassifierParams,
    /// Present once prototypes have been projected onto training patches.
    pub projection: Option<ProjectionReport>,
}

impl ModelParams {
    /// Trainable tensors in a fixed order: backbone, prototypes, linear
    /// combination weights, super-prototype weights, MLP. The frozen
    /// classifier variant contributes nothing.
    pub fn trainable(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv_layers.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), &layer.kernels));
            out.push((format!("conv{i}.bias"), &layer.bias));
        }
        out.push(("prototypes".to_string(), &self.prototypes));
        out.push(("lc_weights".to_string(), &self.lc_weights));
        out.push(("sp_weights".to_string(), &self.sp_weights));
        if let ClassifierParams::Mlp(layers) = &self.classifier {
            for (i, layer) in layers.iter().enumerate() {
                out.push((format!("mlp{i}.weight"), &layer.weight));
                out.push((format!("mlp{i}.bias"), &layer.bias));
            }
        }
        out
    }

    /// Tensors actually trained under `cfg`: the ablated pipeline never
    /// touches the linear-combination or super-prototype weights, so they
    /// are excluded there. `forward_on_tape` registers exactly this set.
    pub fn trainable_for(&self, cfg: &ModelConfig) -> Vec<(String, &Tensor)> {
        self.trainable()
            .into_iter()
            .filter(|(name, _)| cfg.use_super_prototypes || (name != "lc_weights" && name != "sp_weights"))
            .collect()
    }

    pub fn trainable_for_mut(&mut self, cfg: &ModelConfig) -> Vec<(String, &mut Tensor)> {
        let keep_sp = cfg.use_super_prototypes;
        self.trainable_mut()
            .into_iter()
            .filter(|(name, _)| keep_sp || (name != "lc_weights" && name != "sp_weights"))
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, layer) in self.conv_layers.iter_mut().enumerate() {
            out.push((format!("conv{i}.kernels"), &mut layer.kernels));
            out.push((format!("conv{i}.bias"), &mut layer.bias));
        }
        out.push(("prototypes".to_string(), &mut self.prototypes));
        out.push(("lc_weights".to_string(), &mut self.lc_weights));
        out.push(("sp_weights".to_string(), &mut self.sp_weights));
        if let ClassifierParams::Mlp(layers) = &mut self.classifier {
            for (i, layer) in layers.iter_mut().enumerate() {
                out.push((format!("mlp{i}.weight"), &mut layer.weight));
                out.push((format!("mlp{i}.bias"), &mut layer.bias));
            }
        }
        out
    }

    /// Every stored array, including frozen classifier weights, in
    /// checkpoint order.
    pub fn all_arrays(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.trainable();
        if let ClassifierParams::Fixed { weight } = &self.classifier {
            out.push(("fixed.weight".to_string(), weight));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.all_arrays().iter().all(|(_, t)| t.all_finite())
    }

    /// Shape consistency against a configuration.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let (h, w, d) = cfg.latent_dims();
        if self.conv_layers.len() != cfg.backbone_channels.len() {
            return Err(ModelError::ParamShape(format!(
                "{} conv layers vs {} configured",
                self.conv_layers.len(),
                cfg.backbone_channels.len()
            )));
        }
        let mut cin = 3;
        for (i, (layer, &cout)) in self.conv_layers.iter().zip(&cfg.backbone_channels).enumerate() {
            if layer.kernels.shape() != [3, 3, cin, cout] {
                return Err(ModelError::ParamShape(format!(
                    "conv{} kernels {:?}, expected [3, 3, {}, {}]",
                    i,
                    layer.kernels.shape(),
                    cin,
                    cout
                )));
            }
            if layer.bias.shape() != [cout] {
                return Err(ModelError::ParamShape(format!("conv{} bias {:?}", i, layer.bias.shape())));
            }
            cin = cout;
        }
        if self.prototypes.shape() != [cfg.n_prototypes, cfg.proto_h, cfg.proto_w, d] {
            return Err(ModelError::ParamShape(format!(
                "prototypes {:?}, expected [{}, {}, {}, {}]",
                self.prototypes.shape(),
                cfg.n_prototypes,
                cfg.proto_h,
                cfg.proto_w,
                d
            )));
        }
        if self.lc_weights.shape() != [cfg.n_classes, cfg.n_combinations, cfg.n_prototypes] {
            return Err(ModelError::ParamShape(format!("lc_weights {:?}", self.lc_weights.shape())));
        }
        if self.sp_weights.shape() != [cfg.n_classes, cfg.n_combinations, h, w] {
            return Err(ModelError::ParamShape(format!("sp_weights {:?}", self.sp_weights.shape())));
        }
        let in_dim = cfg.classifier_input_dim();
        match (&self.classifier, cfg.classifier) {
            (ClassifierParams::Mlp(layers), ClassifierKind::Mlp) => {
                let mut dim = in_dim;
                let widths: Vec<usize> = cfg.mlp_hidden.iter().copied().chain([cfg.n_classes]).collect();
                if layers.len() != widths.len() {
                    return Err(ModelError::ParamShape(format!(
                        "{} mlp layers vs {} configured",
                        layers.len(),
                        widths.len()
                    )));
                }
                for (i, (layer, &out_dim)) in layers.iter().zip(&widths).enumerate() {
                    if layer.weight.shape() != [dim, out_dim] || layer.bias.shape() != [out_dim] {
                        return Err(ModelError::ParamShape(format!(
                            "mlp{} weight {:?} bias {:?}, expected [{}, {}] and [{}]",
                            i,
                            layer.weight.shape(),
                            layer.bias.shape(),
                            dim,
                            out_dim,
                            out_dim
                        )));
                    }
                    dim = out_dim;
                }
            }
            (ClassifierParams::Fixed { weight }, ClassifierKind::Fixed) => {
                if weight.shape() != [in_dim, cfg.n_classes] {
                    return Err(ModelError::ParamShape(format!("fixed weight {:?}", weight.shape())));
                }
            }
            _ => return Err(ModelError::ParamShape("classifier kind mismatch".into())),
        }
        Ok(())
    }

    /// Identity hash of the classifier; embedded in derived argumentation
    /// graphs so stale pairings are rejected.
    pub fn classifier_hash(&self) -> u64 {
        hash_mlp_layers(&self.classifier_layers())
    }

    /// MLP view of the classifier: the frozen variant reads as a single
    /// bias-free layer.
    pub fn classifier_layers(&self) -> Vec<MlpLayer> {
        match &self.classifier {
            ClassifierParams::Mlp(layers) => layers.clone(),
            ClassifierParams::Fixed { weight } => vec![MlpLayer {
                weight: weight.clone(),
                bias: Tensor::zeros(vec![weight.shape()[1]]),
            }],
        }
    }
}

/// Values captured along one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Backbone output [H,W,D].
    pub z: Tensor,
    /// Similarity maps [H,W,N].
    pub sm: Tensor,
    /// Channel-wise max of `sm`; absent in the ablated pipeline.
    pub cwm: Option<Tensor>,
    /// Linear combinations [K,M,H,W].
    pub lc: Option<Tensor>,
    /// Super-prototype maps [K,H,W].
    pub sp: Option<Tensor>,
    /// Per-class similarity scores [K].
    pub ss: Option<Tensor>,
    /// What the classifier consumed: `ss`, or per-channel maxima [N].
    pub classifier_input: Tensor,
    /// Post-activation hidden layers of the MLP.
    pub hidden: Vec<Tensor>,
    /// [K]
    pub logits: Tensor,
}

impl ForwardTrace {
    /// Predicted class: argmax of logits, ties to the lowest class id.
    pub fn predicted_class(&self) -> usize {
        argmax_lowest(self.logits.data())
    }
}

/// Hash over layer weights and biases, in order.
pub fn hash_mlp_layers(layers: &[MlpLayer]) -> u64 {
    let mut h = Fnv1a::new();
    for layer in layers {
        h.update_f64s(layer.weight.data());
        h.update_f64s(layer.bias.data());
    }
    h.finish()
}

pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
