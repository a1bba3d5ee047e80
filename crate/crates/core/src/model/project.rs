//! Prototype projection: replace each prototype with the training latent
//! patch it matches best, giving every prototype a literal image identity.

use super::{forward, ModelConfig, ModelError, ModelParams, ProjectionEntry, ProjectionReport};
use crate::shapes::Dataset;
use rayon::prelude::*;

/// Best match for one prototype within one image's latent grid.
#[derive(Clone, Copy)]
struct Candidate {
    similarity: f64,
    position: (usize, usize),
}

/// Scan every training image and latent position, pick each prototype's
/// highest-cosine patch, and overwrite the prototype with that raw patch.
/// Ties keep the earliest (train order, then row-major position) candidate.
pub fn project_prototypes(
    cfg: &ModelConfig,
    params: &mut ModelParams,
    dataset: &Dataset,
) -> Result<ProjectionReport, ModelError> {
    if dataset.train_idx.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    let (h, w, d) = cfg.latent_dims();
    let n = cfg.n_prototypes;
    let eps = cfg.epsilon;

    // Unit-normalized prototype directions; cosine ignores scale.
    let p_hat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = &params.prototypes.data()[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            row.iter().map(|v| v / norm).collect()
        })
        .collect();

    // Per-image best candidates, computed in parallel, reduced in train order
    // so ties resolve deterministically.
    let per_image: Vec<(Vec<Candidate>, Vec<f64>)> = dataset
        .train_idx
        .par_iter()
        .map(|&sample_idx| {
            let trace = forward(cfg, params, &dataset.samples[sample_idx].image).expect("projection forward");
            let z = trace.z;
            let mut best: Vec<Candidate> =
                vec![Candidate { similarity: f64::NEG_INFINITY, position: (0, 0) }; n];
            for hi in 0..h {
                for wi in 0..w {
                    let patch = &z.data()[(hi * w + wi) * d..(hi * w + wi + 1) * d];
                    let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
                    for (pi, phat) in p_hat.iter().enumerate() {
                        let dot: f64 = patch.iter().zip(phat).map(|(a, b)| a * b).sum();
                        let cos = dot / norm;
                        if cos > best[pi].similarity {
                            best[pi] = Candidate { similarity: cos, position: (hi, wi) };
                        }
                    }
                }
            }
            (best, z.data().to_vec())
        })
        .collect();

    let mut winners: Vec<(usize, Candidate)> = vec![
        (
            usize::MAX,
            Candidate { similarity: f64::NEG_INFINITY, position: (0, 0) }
        );
        n
    ];
    for (train_pos, (cands, _)) in per_image.iter().enumerate() {
        for (pi, cand) in cands.iter().enumerate() {
            if cand.similarity > winners[pi].1.similarity {
                winners[pi] = (train_pos, *cand);
            }
        }
    }

    let mut entries = Vec::with_capacity(n);
    for (pi, (train_pos, cand)) in winners.iter().enumerate() {
        let (hi, wi) = cand.position;
        let z_data = &per_image[*train_pos].1;
        let patch = &z_data[(hi * w + wi) * d..(hi * w + wi + 1) * d];
        params.prototypes.data_mut()[pi * d..(pi + 1) * d].copy_from_slice(patch);
        entries.push(ProjectionEntry {
            image_index: dataset.train_idx[*train_pos],
            position: (hi, wi),
            similarity: cand.similarity,
        });
    }

    let report = ProjectionReport { entries };
    params.projection = Some(report.clone());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::shapes::generate;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            backbone_channels: vec![4, 8],
            n_prototypes: 5,
            n_combinations: 2,
            mlp_hidden: vec![6],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rejects_empty_train_set() {
        let cfg = tiny_cfg();
        let mut params = init_params(&cfg, 0).unwrap();
        let mut ds = generate(1, 4).unwrap();
        ds.train_idx.clear();
        assert!(matches!(
            project_prototypes(&cfg, &mut params, &ds),
            Err(ModelError::EmptyTrainSet)
        ));
    }

    #[test]
    fn prototypes_become_training_patches_with_unit_self_similarity() {
        let cfg = tiny_cfg();
        let mut params = init_params(&cfg, 3).unwrap();
        let ds = generate(8, 10).unwrap();
        let report = project_prototypes(&cfg, &mut params, &ds).unwrap();
        assert_eq!(report.entries.len(), cfg.n_prototypes);

        let (_, w, d) = cfg.latent_dims();
        for (pi, entry) in report.entries.iter().enumerate() {
            let trace = forward(&cfg, &params, &ds.samples[entry.image_index].image).unwrap();
            let (hi, wi) = entry.position;
            let patch = &trace.z.data()[(hi * w + wi) * d..(hi * w + wi + 1) * d];
            // Bit-exact copy of the source patch.
            assert_eq!(patch, &params.prototypes.data()[pi * d..(pi + 1) * d]);
            // And the similarity map now peaks at exactly 1 there.
            let sm = trace.sm.data()[(hi * w + wi) * cfg.n_prototypes + pi];
            assert!((sm - 1.0).abs() < 1e-9, "prototype {pi} similarity {sm}");
        }
    }

    #[test]
    fn matches_exhaustive_scan() {
        let cfg = tiny_cfg();
        let mut params = init_params(&cfg, 17).unwrap();
        let ds = generate(6, 8).unwrap();
        let before = params.prototypes.clone();
        let report = project_prototypes(&cfg, &mut params, &ds).unwrap();

        // Independent exhaustive scan over (train image, h, w) with the
        // pre-projection prototypes.
        let (h, w, d) = cfg.latent_dims();
        let mut restored = params.clone();
        restored.prototypes = before;
        for pi in 0..cfg.n_prototypes {
            let proto = &restored.prototypes.data()[pi * d..(pi + 1) * d];
            let pn = proto.iter().map(|v| v * v).sum::<f64>().sqrt().max(cfg.epsilon);
            let mut best = f64::NEG_INFINITY;
            let mut best_key = (0usize, 0usize, 0usize);
            for &si in &ds.train_idx {
                let z = forward(&cfg, &restored, &ds.samples[si].image).unwrap().z;
                for hi in 0..h {
                    for wi in 0..w {
                        let patch = &z.data()[(hi * w + wi) * d..(hi * w + wi + 1) * d];
                        let zn = patch.iter().map(|v| v * v).sum::<f64>().sqrt().max(cfg.epsilon);
                        let cos = patch.iter().zip(proto).map(|(a, b)| a * b).sum::<f64>() / (zn * pn);
                        if cos > best {
                            best = cos;
                            best_key = (si, hi, wi);
                        }
                    }
                }
            }
            let entry = report.entries[pi];
            assert_eq!((entry.image_index, entry.position.0, entry.position.1), best_key);
            assert!((entry.similarity - best).abs() < 1e-12);
        }
    }
}
