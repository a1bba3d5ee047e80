//! Quantitative bipolar argumentation view of the classifier.
//!
//! An MLP maps onto a layered argumentation graph: neurons become arguments,
//! biases become base scores, connection weights become attack (negative) or
//! support (positive) edges, and the MLP's activations coincide with the
//! arguments' final strengths. Clustering hidden neurons with similar
//! activation profiles and merging each cluster into one argument shrinks
//! the graph; the price is measured as unfaithfulness against the original
//! network.

mod cluster;
mod export;
mod pipeline;
mod sparsify;
mod translate;

pub use cluster::{cluster_hidden, kmeans, KmeansResult};
pub use export::{from_graph_text, to_graph_text, to_graph_text_with_strengths};
pub use pipeline::{classifier_inputs, sparsify_pipeline, SparsifyOutcome};
pub use sparsify::{sparsify, unfaithfulness, UnfaithfulnessReport};
pub use translate::{forward_strengths, mlp_forward, mlp_to_qbaf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QbafError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("input has {got} values but the framework expects {expected}")]
    InputMismatch { expected: usize, got: usize },
    #[error("invalid partition: {0}")]
    BadPartition(String),
    #[error("compression ratio must lie in [0, 1), got {0}")]
    BadRatio(f64),
    #[error("reference set is empty")]
    EmptyReference,
    #[error("malformed graph text: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgumentKind {
    Input,
    HiddenCluster,
    Output,
}

impl ArgumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArgumentKind::Input => "input",
            ArgumentKind::HiddenCluster => "hidden-cluster",
            ArgumentKind::Output => "output",
        }
    }

    pub fn parse(text: &str) -> Result<Self, QbafError> {
        match text {
            "input" => Ok(ArgumentKind::Input),
            "hidden-cluster" => Ok(ArgumentKind::HiddenCluster),
            "output" => Ok(ArgumentKind::Output),
            other => Err(QbafError::Parse(format!("unknown argument kind {other:?}"))),
        }
    }
}

/// How a layer turns accumulated evidence into a final strength.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Influence {
    Identity,
    Relu,
    /// Output layer: strengths stay pre-softmax; probabilities are reported
    /// alongside.
    SoftmaxOutput,
}

impl Influence {
    pub fn as_str(self) -> &'static str {
        match self {
            Influence::Identity => "identity",
            Influence::Relu => "relu",
            Influence::SoftmaxOutput => "softmax-output",
        }
    }

    pub fn parse(text: &str) -> Result<Self, QbafError> {
        match text {
            "identity" => Ok(Influence::Identity),
            "relu" => Ok(Influence::Relu),
            "softmax-output" => Ok(Influence::SoftmaxOutput),
            other => Err(QbafError::Parse(format!("unknown influence {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Argument {
    pub id: usize,
    pub layer: usize,
    pub base_score: f64,
    pub kind: ArgumentKind,
    /// Source neuron indices within the argument's layer. Singletons before
    /// sparsification; cluster provenance after.
    pub members: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

impl Edge {
    pub fn is_support(&self) -> bool {
        self.weight > 0.0
    }

    pub fn is_attack(&self) -> bool {
        self.weight < 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Qbaf {
    /// Arguments ordered by (layer, position); ids equal indices.
    pub arguments: Vec<Argument>,
    /// Feed-forward edges (layer l -> l+1 only), zero weights dropped.
    pub edges: Vec<Edge>,
    /// Influence per layer; index 0 is the input layer.
    pub influences: Vec<Influence>,
    pub n_layers: usize,
    /// Hash of the classifier weights this graph was derived from.
    pub source_hash: u64,
}

impl Qbaf {
    pub fn layer_ids(&self, layer: usize) -> Vec<usize> {
        self.arguments.iter().filter(|a| a.layer == layer).map(|a| a.id).collect()
    }

    pub fn input_count(&self) -> usize {
        self.layer_ids(0).len()
    }

    pub fn output_count(&self) -> usize {
        self.layer_ids(self.n_layers - 1).len()
    }

    pub fn hidden_cluster_count(&self) -> usize {
        self.arguments.iter().filter(|a| a.kind == ArgumentKind::HiddenCluster).count()
    }

    /// Explanation size. The headline count follows the convention of adding
    /// the per-class super-prototypes (the input arguments) and the hidden
    /// cluster arguments; `full` also counts the output arguments.
    pub fn cognitive_complexity(&self) -> CognitiveComplexity {
        let paper = self.input_count() + self.hidden_cluster_count();
        CognitiveComplexity { headline: paper, full: paper + self.output_count() }
    }

    /// Structural sanity: edges feed forward exactly one layer and carry no
    /// zero weights; member lists are nonempty.
    pub fn check_structure(&self) -> Result<(), QbafError> {
        for (i, arg) in self.arguments.iter().enumerate() {
            if arg.id != i {
                return Err(QbafError::Parse(format!("argument id {} at index {i}", arg.id)));
            }
            if arg.members.is_empty() {
                return Err(QbafError::Parse(format!("argument {} has no members", arg.id)));
            }
        }
        for e in &self.edges {
            let (from, to) = (&self.arguments[e.from], &self.arguments[e.to]);
            if to.layer != from.layer + 1 {
                return Err(QbafError::Parse(format!(
                    "edge {}->{} skips layers {}->{}",
                    e.from, e.to, from.layer, to.layer
                )));
            }
            if e.weight == 0.0 {
                return Err(QbafError::Parse(format!("zero-weight edge {}->{}", e.from, e.to)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CognitiveComplexity {
    /// Inputs (one per class super-prototype) + hidden clusters.
    pub headline: usize,
    /// Headline plus output arguments.
    pub full: usize,
}

/// Final strengths for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct StrengthAssignment {
    /// Indexed by argument id. Output arguments hold pre-softmax strengths.
    pub strengths: Vec<f64>,
    pub output_pre_softmax: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl StrengthAssignment {
    pub fn predicted_class(&self) -> usize {
        crate::model::argmax_lowest(&self.output_pre_softmax)
    }
}

/// Which dataset split provides activation profiles for clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceSplit {
    Train,
    Test,
}

impl ReferenceSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceSplit::Train => "train",
            ReferenceSplit::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsifyConfig {
    /// Compression ratio in [0, 1); cluster count per hidden layer is
    /// max(1, round((1 - ratio) * width)).
    pub ratio: f64,
    pub reference_split: ReferenceSplit,
    pub cluster_seed: u64,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        SparsifyConfig { ratio: 0.0, reference_split: ReferenceSplit::Train, cluster_seed: 0 }
    }
}

impl SparsifyConfig {
    pub fn validate(&self) -> Result<(), QbafError> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(QbafError::BadRatio(self.ratio));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("ratio".into(), format!("{}", self.ratio)),
            ("clustering".into(), "kmeans".into()),
            ("reference_split".into(), self.reference_split.as_str().into()),
            ("cluster_seed".into(), self.cluster_seed.to_string()),
        ]
    }

    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), QbafError> {
        match key {
            "ratio" => {
                self.ratio = value
                    .parse()
                    .map_err(|_| QbafError::Parse(format!("bad value {value:?} for ratio")))?;
            }
            "clustering" => {
                if value != "kmeans" {
                    return Err(QbafError::Parse(format!("unsupported clustering {value:?}")));
                }
            }
            "reference_split" => {
                self.reference_split = match value {
                    "train" => ReferenceSplit::Train,
                    "test" => ReferenceSplit::Test,
                    _ => return Err(QbafError::Parse(format!("bad value {value:?} for reference_split"))),
                };
            }
            "cluster_seed" => {
                self.cluster_seed = value
                    .parse()
                    .map_err(|_| QbafError::Parse(format!("bad value {value:?} for cluster_seed")))?;
            }
            _ => return Err(QbafError::Parse(format!("unknown sparsify key {key:?}"))),
        }
        Ok(())
    }
}
