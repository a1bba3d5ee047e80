//! Tape-recorded forward pass.

use super::{ClassifierParams, ForwardTrace, ModelConfig, ModelError, ModelParams, Similarity};
use crate::tensor::{Tape, Tensor, ValueId};

/// Node ids of one recorded forward pass, for driving `Tape::backward` and
/// reading gradients back out.
pub struct TapeForward {
    /// Trainable leaves, in `ModelParams::trainable` order.
    pub param_ids: Vec<(String, ValueId)>,
    pub z: ValueId,
    pub sm: ValueId,
    pub cwm: Option<ValueId>,
    pub lc: Option<ValueId>,
    pub sp: Option<ValueId>,
    pub ss: Option<ValueId>,
    pub classifier_input: ValueId,
    pub hidden: Vec<ValueId>,
    pub logits: ValueId,
}

/// Record the full forward pass for one image onto `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &ModelParams,
    image: &Tensor,
) -> Result<TapeForward, ModelError> {
    if image.shape() != [crate::shapes::IMAGE_SIZE, crate::shapes::IMAGE_SIZE, 3] {
        return Err(ModelError::ParamShape(format!("input image shape {:?}", image.shape())));
    }
    let mut param_ids = Vec::new();

    // Backbone: conv3x3(pad 1) + bias + ReLU + 2x2 max-pool per stage.
    let mut x = tape.leaf(image.clone());
    for (i, layer) in params.conv_layers.iter().enumerate() {
        let k = tape.leaf(layer.kernels.clone());
        let b = tape.leaf(layer.bias.clone());
        param_ids.push((format!("conv{i}.kernels"), k));
        param_ids.push((format!("conv{i}.bias"), b));
        x = tape.conv2d(x, k, 1, 1)?;
        x = tape.bias_add_channels(x, b)?;
        x = tape.relu(x);
        x = tape.max_pool2(x)?;
    }
    let z = x;

    // Prototype layer: one similarity map per prototype.
    let (_, _, d) = cfg.latent_dims();
    let proto_leaf = tape.leaf(params.prototypes.clone());
    param_ids.push(("prototypes".to_string(), proto_leaf));
    let proto_mat = tape.reshape(proto_leaf, vec![cfg.n_prototypes, d])?;
    let sm = match cfg.similarity {
        Similarity::Cosine => {
            let z_hat = tape.l2_normalize_patches(z, cfg.epsilon)?;
            let p_hat = tape.l2_normalize_patches(proto_mat, cfg.epsilon)?;
            let p_t = tape.transpose2(p_hat)?;
            let kernels = tape.reshape(p_t, vec![1, 1, d, cfg.n_prototypes])?;
            tape.conv2d(z_hat, kernels, 1, 0)?
        }
        Similarity::NegL2 => tape.neg_l2_similarity(z, proto_mat, cfg.epsilon)?,
    };

    // Super-prototype path, or the position-free ablation.
    let (cwm, lc, sp, ss, classifier_input) = if cfg.use_super_prototypes {
        let cwm = tape.channel_wise_max(sm)?;
        let lc_leaf = tape.leaf(params.lc_weights.clone());
        param_ids.push(("lc_weights".to_string(), lc_leaf));
        let lc = tape.linear_combinations(cwm, lc_leaf)?;
        let sp_leaf = tape.leaf(params.sp_weights.clone());
        param_ids.push(("sp_weights".to_string(), sp_leaf));
        let weighted = tape.mul(lc, sp_leaf)?;
        let sp = tape.sum_axis(weighted, 1)?;
        let ss = tape.channel_sum(sp)?;
        (Some(cwm), Some(lc), Some(sp), Some(ss), ss)
    } else {
        let maxima = tape.global_max_channels(sm)?;
        (None, None, None, None, maxima)
    };

    // Classifier.
    let in_dim = cfg.classifier_input_dim();
    let mut hidden = Vec::new();
    let mut a = tape.reshape(classifier_input, vec![1, in_dim])?;
    let logits = match &params.classifier {
        ClassifierParams::Mlp(layers) => {
            for (i, layer) in layers.iter().enumerate() {
                let w = tape.leaf(layer.weight.clone());
                let b = tape.leaf(layer.bias.clone());
                param_ids.push((format!("mlp{i}.weight"), w));
                param_ids.push((format!("mlp{i}.bias"), b));
                let out_dim = layer.weight.shape()[1];
                a = tape.matmul(a, w)?;
                let b_row = tape.reshape(b, vec![1, out_dim])?;
                a = tape.add(a, b_row)?;
                if i + 1 < layers.len() {
                    a = tape.relu(a);
                    hidden.push(a);
                }
            }
            tape.reshape(a, vec![cfg.n_classes])?
        }
        ClassifierParams::Fixed { weight } => {
            let w = tape.leaf(weight.clone());
            a = tape.matmul(a, w)?;
            tape.reshape(a, vec![cfg.n_classes])?
        }
    };

    Ok(TapeForward {
        param_ids,
        z,
        sm,
        cwm,
        lc,
        sp,
        ss,
        classifier_input,
        hidden,
        logits,
    })
}

/// Forward pass returning captured tensors only.
pub fn forward(cfg: &ModelConfig, params: &ModelParams, image: &Tensor) -> Result<ForwardTrace, ModelError> {
    let mut tape = Tape::new();
    let ids = forward_on_tape(&mut tape, cfg, params, image)?;
    let grab = |id: ValueId| tape.value(id).clone();
    let flat = |id: ValueId| {
        let t = tape.value(id);
        Tensor::new(vec![t.len()], t.data().to_vec()).expect("flatten")
    };
    Ok(ForwardTrace {
        z: grab(ids.z),
        sm: grab(ids.sm),
        cwm: ids.cwm.map(grab),
        lc: ids.lc.map(grab),
        sp: ids.sp.map(grab),
        ss: ids.ss.map(grab),
        classifier_input: flat(ids.classifier_input),
        hidden: ids.hidden.into_iter().map(flat).collect(),
        logits: grab(ids.logits),
    })
}
