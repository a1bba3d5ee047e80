//! MLP <-> argumentation graph correspondence.

use super::{Argument, ArgumentKind, Edge, Influence, Qbaf, QbafError, StrengthAssignment};
use crate::model::{hash_mlp_layers, MlpLayer};

/// Translate classifier layers into a layered argumentation framework with
/// singleton arguments: one input argument per classifier input, one hidden
/// argument per hidden neuron, one output argument per class. Biases become
/// base scores (inputs get 0) and nonzero connection weights become edges.
pub fn mlp_to_qbaf(layers: &[MlpLayer]) -> Qbaf {
    assert!(!layers.is_empty(), "classifier needs at least one layer");
    let input_dim = layers[0].weight.shape()[0];
    let n_layers = layers.len() + 1;

    let mut arguments = Vec::new();
    for i in 0..input_dim {
        arguments.push(Argument {
            id: arguments.len(),
            layer: 0,
            base_score: 0.0,
            kind: ArgumentKind::Input,
            members: vec![i],
        });
    }
    let mut layer_offsets = vec![0usize];
    for (li, layer) in layers.iter().enumerate() {
        let out_dim = layer.weight.shape()[1];
        layer_offsets.push(arguments.len());
        let kind = if li + 1 == layers.len() { ArgumentKind::Output } else { ArgumentKind::HiddenCluster };
        for j in 0..out_dim {
            arguments.push(Argument {
                id: arguments.len(),
                layer: li + 1,
                base_score: layer.bias.data()[j],
                kind,
                members: vec![j],
            });
        }
    }

    let mut edges = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        let (in_dim, out_dim) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let from_base = layer_offsets[li];
        let to_base = layer_offsets[li + 1];
        for i in 0..in_dim {
            for j in 0..out_dim {
                let weight = layer.weight.data()[i * out_dim + j];
                if weight != 0.0 {
                    edges.push(Edge { from: from_base + i, to: to_base + j, weight });
                }
            }
        }
    }

    let mut influences = vec![Influence::Identity];
    influences.extend(std::iter::repeat_n(Influence::Relu, layers.len().saturating_sub(1)));
    influences.push(Influence::SoftmaxOutput);

    Qbaf { arguments, edges, influences, n_layers, source_hash: hash_mlp_layers(layers) }
}

/// Layer-by-layer strength evaluation. Each argument accumulates
/// weight-times-parent-strength in parent order, adds its base score, and
/// applies its layer's influence; this mirrors the MLP's arithmetic exactly.
pub fn forward_strengths(qbaf: &Qbaf, input: &[f64]) -> Result<StrengthAssignment, QbafError> {
    let input_count = qbaf.input_count();
    if input.len() != input_count {
        return Err(QbafError::InputMismatch { expected: input_count, got: input.len() });
    }

    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qbaf.arguments.len()];
    for e in &qbaf.edges {
        incoming[e.to].push((e.from, e.weight));
    }

    let mut strengths = vec![0.0; qbaf.arguments.len()];
    for (arg, &value) in qbaf.arguments.iter().zip(input) {
        debug_assert_eq!(arg.layer, 0);
        strengths[arg.id] = value;
    }

    let mut output_pre_softmax = Vec::new();
    for layer in 1..qbaf.n_layers {
        let influence = qbaf.influences[layer];
        for id in qbaf.layer_ids(layer) {
            let mut acc = 0.0;
            for &(from, weight) in &incoming[id] {
                acc += weight * strengths[from];
            }
            acc += qbaf.arguments[id].base_score;
            strengths[id] = match influence {
                Influence::Identity | Influence::SoftmaxOutput => acc,
                Influence::Relu => acc.max(0.0),
            };
            if layer == qbaf.n_layers - 1 {
                output_pre_softmax.push(strengths[id]);
            }
        }
    }

    let probabilities = softmax(&output_pre_softmax);
    Ok(StrengthAssignment { strengths, output_pre_softmax, probabilities })
}

/// Plain MLP forward pass returning post-activation hidden layers and
/// logits; the reference the argumentation graph is checked against.
pub fn mlp_forward(layers: &[MlpLayer], input: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut hidden = Vec::new();
    let mut current = input.to_vec();
    for (li, layer) in layers.iter().enumerate() {
        let (in_dim, out_dim) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        assert_eq!(current.len(), in_dim);
        let mut next = vec![0.0; out_dim];
        for (j, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, v) in current.iter().enumerate() {
                acc += v * layer.weight.data()[i * out_dim + j];
            }
            *out = acc + layer.bias.data()[j];
        }
        if li + 1 < layers.len() {
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
            hidden.push(next.clone());
        }
        current = next;
    }
    (hidden, current)
}

pub(super) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn layer(weight: Vec<f64>, shape: [usize; 2], bias: Vec<f64>) -> MlpLayer {
        MlpLayer {
            weight: Tensor::new(shape.to_vec(), weight).unwrap(),
            bias: Tensor::new(vec![shape[1]], bias).unwrap(),
        }
    }

    fn random_mlp(dims: &[usize], seed: u64) -> Vec<MlpLayer> {
        let mut rng = Rng::new(seed);
        dims.windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                layer(
                    (0..i * o).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    [i, o],
                    (0..o).map(|_| rng.uniform(-0.5, 0.5)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_no_edges_and_bias_strengths() {
        let layers = vec![layer(vec![0.0; 4], [2, 2], vec![0.3, -0.2])];
        let qbaf = mlp_to_qbaf(&layers);
        assert!(qbaf.edges.is_empty());
        let sa = forward_strengths(&qbaf, &[5.0, -1.0]).unwrap();
        assert_eq!(sa.output_pre_softmax, vec![0.3, -0.2]);
    }

    #[test]
    fn structural_counts_for_2_4_2() {
        let layers = random_mlp(&[2, 4, 2], 1);
        let qbaf = mlp_to_qbaf(&layers);
        assert_eq!(qbaf.arguments.len(), 8);
        let nonzero = layers
            .iter()
            .map(|l| l.weight.data().iter().filter(|&&w| w != 0.0).count())
            .sum::<usize>();
        assert_eq!(qbaf.edges.len(), nonzero);
        qbaf.check_structure().unwrap();
    }

    #[test]
    fn strengths_match_mlp_activations() {
        let layers = random_mlp(&[2, 5, 3, 2], 7);
        let qbaf = mlp_to_qbaf(&layers);
        let mut rng = Rng::new(99);
        for _ in 0..100 {
            let input = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let (hidden, logits) = mlp_forward(&layers, &input);
            let sa = forward_strengths(&qbaf, &input).unwrap();
            for (k, &l) in logits.iter().enumerate() {
                assert!((sa.output_pre_softmax[k] - l).abs() < 1e-9);
            }
            let mut id = qbaf.input_count();
            for layer_acts in &hidden {
                for &a in layer_acts {
                    assert!((sa.strengths[id] - a).abs() < 1e-9);
                    id += 1;
                }
            }
        }
    }

    #[test]
    fn single_support_edge_relu() {
        // input -> hidden (relu) -> output; weight 1 everywhere, base 0.
        let layers = vec![
            layer(vec![1.0], [1, 1], vec![0.0]),
            layer(vec![1.0], [1, 1], vec![0.0]),
        ];
        let qbaf = mlp_to_qbaf(&layers);
        let sa = forward_strengths(&qbaf, &[-2.0]).unwrap();
        assert_eq!(sa.strengths[1], 0.0, "relu clamps the hidden argument");
        let sa = forward_strengths(&qbaf, &[2.0]).unwrap();
        assert_eq!(sa.strengths[1], 2.0);
    }

    #[test]
    fn input_mismatch_rejected() {
        let layers = random_mlp(&[3, 2], 0);
        let qbaf = mlp_to_qbaf(&layers);
        assert!(matches!(
            forward_strengths(&qbaf, &[1.0]),
            Err(QbafError::InputMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn sign_flip_flips_exactly_one_edge() {
        let mut layers = random_mlp(&[2, 4, 2], 11);
        let before = mlp_to_qbaf(&layers);
        let flip_idx = 3;
        let w = layers[0].weight.data()[flip_idx];
        layers[0].weight.data_mut()[flip_idx] = -w;
        let after = mlp_to_qbaf(&layers);
        let mut flipped = 0;
        for (a, b) in before.edges.iter().zip(&after.edges) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            if a.is_support() != b.is_support() {
                flipped += 1;
            }
        }
        assert_eq!(flipped, 1);
    }
}
