//! Seeded parameter initialization.
//!
//! Conv and MLP weights draw from a zero-mean uniform with the fan-in bound
//! sqrt(6/fan_in); biases start at zero. Prototypes draw from the standard
//! normal and are normalized inside the layer, not here. Linear-combination
//! and super-prototype weights start small (+-0.01) so early similarity
//! scores stay near zero. Each tensor has its own seed stream, so adding a
//! layer does not reshuffle the others.

use super::{ClassifierKind, ClassifierParams, ConvLayer, MlpLayer, ModelConfig, ModelError, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

// Init streams live in their own seed domain so reusing one seed for data,
// init, and epoch shuffling cannot alias streams.
const INIT_DOMAIN: u64 = 0x4d4f_4445_4c00;
const STREAM_CONV_BASE: u64 = 10;
const STREAM_PROTOTYPES: u64 = 50;
const STREAM_LC: u64 = 51;
const STREAM_SP: u64 = 52;
const STREAM_MLP_BASE: u64 = 60;

fn stream(seed: u64, id: u64) -> Rng {
    Rng::derive(seed ^ INIT_DOMAIN, id)
}

fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let (h, w, d) = cfg.latent_dims();

    let mut conv_layers = Vec::with_capacity(cfg.backbone_channels.len());
    let mut cin = 3;
    for (i, &cout) in cfg.backbone_channels.iter().enumerate() {
        let mut rng = stream(seed, STREAM_CONV_BASE + i as u64);
        conv_layers.push(ConvLayer {
            kernels: he_uniform(vec![3, 3, cin, cout], 3 * 3 * cin, &mut rng),
            bias: Tensor::zeros(vec![cout]),
        });
        cin = cout;
    }

    // Half-normal: latent patches are post-ReLU and therefore nonnegative,
    // so prototypes start inside the cone real patches live in. This keeps
    // the best-patch cosine high, which is what makes projection cheap.
    let mut prototypes = Tensor::normal(
        vec![cfg.n_prototypes, cfg.proto_h, cfg.proto_w, d],
        &mut stream(seed, STREAM_PROTOTYPES),
    );
    for v in prototypes.data_mut() {
        *v = v.abs();
    }
    let prototypes = prototypes;
    let lc_weights = Tensor::uniform(
        vec![cfg.n_classes, cfg.n_combinations, cfg.n_prototypes],
        -0.01,
        0.01,
        &mut stream(seed, STREAM_LC),
    );
    let sp_weights = Tensor::uniform(
        vec![cfg.n_classes, cfg.n_combinations, h, w],
        -0.01,
        0.01,
        &mut stream(seed, STREAM_SP),
    );

    let classifier = match cfg.classifier {
        ClassifierKind::Mlp => {
            let mut layers = Vec::new();
            let mut dim = cfg.classifier_input_dim();
            let widths: Vec<usize> = cfg.mlp_hidden.iter().copied().chain([cfg.n_classes]).collect();
            for (i, &out_dim) in widths.iter().enumerate() {
                let mut rng = stream(seed, STREAM_MLP_BASE + i as u64);
                layers.push(MlpLayer {
                    weight: he_uniform(vec![dim, out_dim], dim, &mut rng),
                    bias: Tensor::zeros(vec![out_dim]),
                });
                dim = out_dim;
            }
            ClassifierParams::Mlp(layers)
        }
        ClassifierKind::Fixed => ClassifierParams::Fixed { weight: fixed_weight(cfg) },
    };

    let params = ModelParams {
        conv_layers,
        prototypes,
        lc_weights,
        sp_weights,
        classifier,
        projection: None,
    };
    params.validate_against(cfg)?;
    Ok(params)
}

/// Frozen classifier weight: +1 from inputs owned by a class, -0.5 from the
/// rest. With super-prototypes the input is one score per class; without
/// them, prototypes are assigned to classes in contiguous blocks.
fn fixed_weight(cfg: &ModelConfig) -> Tensor {
    let in_dim = cfg.classifier_input_dim();
    let k = cfg.n_classes;
    let mut data = vec![0.0; in_dim * k];
    for j in 0..in_dim {
        let owner = if cfg.use_super_prototypes { j } else { j * k / in_dim };
        for class in 0..k {
            data[j * k + class] = if class == owner { 1.0 } else { -0.5 };
        }
    }
    Tensor::new(vec![in_dim, k], data).expect("fixed weight shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_give_different_weights() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 4).unwrap();
        assert_ne!(a.conv_layers[0].kernels, b.conv_layers[0].kernels);
    }

    #[test]
    fn fixed_classifier_blocks_prototypes_by_class() {
        let cfg = ModelConfig {
            classifier: ClassifierKind::Fixed,
            use_super_prototypes: false,
            n_prototypes: 4,
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 0).unwrap();
        let ClassifierParams::Fixed { weight } = &params.classifier else {
            panic!("expected fixed classifier");
        };
        // Prototypes 0,1 -> class 0; prototypes 2,3 -> class 1.
        assert_eq!(weight.data()[0], 1.0);
        assert_eq!(weight.data()[1], -0.5);
        assert_eq!(weight.data()[2 * 2], -0.5);
        assert_eq!(weight.data()[2 * 2 + 1], 1.0);
    }

    #[test]
    fn biases_start_at_zero() {
        let params = init_params(&ModelConfig::default(), 1).unwrap();
        assert!(params.conv_layers.iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
    }
}
