//! Versioned checkpoint container.
//!
//! Text header, then named binary arrays:
//!
//! ```text
//! PARG-CKPT 1\n
//! config\n
//! <key = value>\n ...
//! end-config\n
//! array <name> <rank> <dim0> <dim1> ...\n   followed by len*8 bytes of LE f64
//! ...
//! end\n
//! ```
//!
//! Round trips are bit-exact: floats live only in the binary sections.

use super::{ClassifierKind, ClassifierParams, ConvLayer, MlpLayer, ModelConfig, ModelError, ModelParams,
            ProjectionEntry, ProjectionReport};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const HEADER: &str = "PARG-CKPT 1";

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<(), ModelError> {
    params.validate_against(cfg)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HEADER}")?;
    writeln!(w, "config")?;
    for (key, value) in cfg.to_key_values() {
        writeln!(w, "{key} = {value}")?;
    }
    writeln!(w, "end-config")?;

    let mut arrays: Vec<(String, &Tensor)> = params.all_arrays();
    let projection_arrays;
    if let Some(report) = &params.projection {
        projection_arrays = projection_to_tensors(report);
        arrays.push(("projection.sources".to_string(), &projection_arrays.0));
        arrays.push(("projection.similarities".to_string(), &projection_arrays.1));
    }
    for (name, tensor) in arrays {
        write!(w, "array {name} {}", tensor.shape().len())?;
        for dim in tensor.shape() {
            write!(w, " {dim}")?;
        }
        writeln!(w)?;
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), ModelError> {
    let mut r = BufReader::new(File::open(path)?);

    if read_line(&mut r)? != HEADER {
        return Err(ModelError::CheckpointFormat("missing PARG-CKPT 1 header".into()));
    }
    if read_line(&mut r)? != "config" {
        return Err(ModelError::CheckpointFormat("expected config block".into()));
    }
    let mut cfg = ModelConfig::default();
    loop {
        let line = read_line(&mut r)?;
        if line == "end-config" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ModelError::CheckpointFormat(format!("bad config line {line:?}")))?;
        cfg.set_field(key.trim(), value.trim())
            .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    }
    cfg.validate()?;

    let mut arrays: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut order = Vec::new();
    loop {
        let line = read_line(&mut r)?;
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("array") {
            return Err(ModelError::CheckpointFormat(format!("expected array header, got {line:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| ModelError::CheckpointFormat("array header missing name".into()))?
            .to_string();
        let rank: usize = parse_field(parts.next(), "rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(parse_field(parts.next(), "dimension")?);
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| ModelError::CheckpointFormat(format!("array {name} truncated")))?;
        let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        order.push(name.clone());
        arrays.insert(name, Tensor::new(shape, data)?);
    }

    let mut take = |name: &str| -> Result<Tensor, ModelError> {
        arrays
            .remove(name)
            .ok_or_else(|| ModelError::CheckpointFormat(format!("checkpoint missing array {name}")))
    };

    let mut conv_layers = Vec::new();
    for i in 0..cfg.backbone_channels.len() {
        conv_layers.push(ConvLayer {
            kernels: take(&format!("conv{i}.kernels"))?,
            bias: take(&format!("conv{i}.bias"))?,
        });
    }
    let prototypes = take("prototypes")?;
    let lc_weights = take("lc_weights")?;
    let sp_weights = take("sp_weights")?;
    let classifier = match cfg.classifier {
        ClassifierKind::Mlp => {
            let mut layers = Vec::new();
            for i in 0..=cfg.mlp_hidden.len() {
                layers.push(MlpLayer {
                    weight: take(&format!("mlp{i}.weight"))?,
                    bias: take(&format!("mlp{i}.bias"))?,
                });
            }
            ClassifierParams::Mlp(layers)
        }
        ClassifierKind::Fixed => ClassifierParams::Fixed { weight: take("fixed.weight")? },
    };
    let projection = if order.iter().any(|n| n == "projection.sources") {
        let sources = take("projection.sources")?;
        let sims = take("projection.similarities")?;
        Some(projection_from_tensors(&sources, &sims)?)
    } else {
        None
    };
    if let Some(stray) = arrays.keys().next() {
        return Err(ModelError::CheckpointFormat(format!("unexpected array {stray}")));
    }

    let params = ModelParams { conv_layers, prototypes, lc_weights, sp_weights, classifier, projection };
    params.validate_against(&cfg)?;
    Ok((cfg, params))
}

fn projection_to_tensors(report: &ProjectionReport) -> (Tensor, Tensor) {
    let n = report.entries.len();
    let mut sources = Vec::with_capacity(n * 3);
    let mut sims = Vec::with_capacity(n);
    for e in &report.entries {
        sources.push(e.image_index as f64);
        sources.push(e.position.0 as f64);
        sources.push(e.position.1 as f64);
        sims.push(e.similarity);
    }
    (
        Tensor::new(vec![n, 3], sources).expect("projection sources"),
        Tensor::new(vec![n], sims).expect("projection similarities"),
    )
}

fn projection_from_tensors(sources: &Tensor, sims: &Tensor) -> Result<ProjectionReport, ModelError> {
    if sources.shape().len() != 2 || sources.shape()[1] != 3 || sources.shape()[0] != sims.len() {
        return Err(ModelError::CheckpointFormat("malformed projection arrays".into()));
    }
    let entries = sources
        .data()
        .chunks_exact(3)
        .zip(sims.data())
        .map(|(src, &similarity)| ProjectionEntry {
            image_index: src[0] as usize,
            position: (src[1] as usize, src[2] as usize),
            similarity,
        })
        .collect();
    Ok(ProjectionReport { entries })
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, ModelError> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::CheckpointFormat(format!("bad or missing {what}")))
}

fn read_line<R: Read>(r: &mut R) -> Result<String, ModelError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 => {
                if line.is_empty() {
                    return Err(ModelError::CheckpointFormat("unexpected end of file".into()));
                }
                break;
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
            }
        }
    }
    String::from_utf8(line).map_err(|_| ModelError::CheckpointFormat("non-utf8 header line".into()))
}

// --- ModelConfig <-> key/value text -----------------------------------------

impl ModelConfig {
    /// Stable key/value listing, also used for config echoes.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        use super::{ClassifierKind, Similarity};
        vec![
            ("backbone_channels".into(), join_list(&self.backbone_channels)),
            ("n_prototypes".into(), self.n_prototypes.to_string()),
            ("n_combinations".into(), self.n_combinations.to_string()),
            ("proto_h".into(), self.proto_h.to_string()),
            ("proto_w".into(), self.proto_w.to_string()),
            ("n_classes".into(), self.n_classes.to_string()),
            ("mlp_hidden".into(), join_list(&self.mlp_hidden)),
            (
                "similarity".into(),
                match self.similarity {
                    Similarity::Cosine => "cosine".into(),
                    Similarity::NegL2 => "negl2".into(),
                },
            ),
            (
                "classifier".into(),
                match self.classifier {
                    ClassifierKind::Mlp => "mlp".into(),
                    ClassifierKind::Fixed => "fixed".into(),
                },
            ),
            ("use_super_prototypes".into(), self.use_super_prototypes.to_string()),
            ("epsilon".into(), format!("{}", self.epsilon)),
        ]
    }

    /// Set one field from its text form. Unknown keys and unparsable values
    /// are errors naming the key.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        use super::{ClassifierKind, Similarity};
        let bad = |key: &str, value: &str| ModelError::Config(format!("bad value {value:?} for {key}"));
        match key {
            "backbone_channels" => self.backbone_channels = parse_list(value).map_err(|_| bad(key, value))?,
            "n_prototypes" => self.n_prototypes = value.parse().map_err(|_| bad(key, value))?,
            "n_combinations" => self.n_combinations = value.parse().map_err(|_| bad(key, value))?,
            "proto_h" => self.proto_h = value.parse().map_err(|_| bad(key, value))?,
            "proto_w" => self.proto_w = value.parse().map_err(|_| bad(key, value))?,
            "n_classes" => self.n_classes = value.parse().map_err(|_| bad(key, value))?,
            "mlp_hidden" => self.mlp_hidden = parse_list(value).map_err(|_| bad(key, value))?,
            "similarity" => {
                self.similarity = match value.to_ascii_lowercase().as_str() {
                    "cosine" => Similarity::Cosine,
                    "negl2" | "neg_l2" | "l2" => Similarity::NegL2,
                    _ => return Err(bad(key, value)),
                }
            }
            "classifier" => {
                self.classifier = match value.to_ascii_lowercase().as_str() {
                    "mlp" => ClassifierKind::Mlp,
                    "fixed" => ClassifierKind::Fixed,
                    _ => return Err(bad(key, value)),
                }
            }
            "use_super_prototypes" => self.use_super_prototypes = value.parse().map_err(|_| bad(key, value))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad(key, value))?,
            _ => return Err(ModelError::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }
}

fn join_list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(text: &str) -> Result<Vec<usize>, std::num::ParseIntError> {
    text.split(',').map(|p| p.trim().parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("ckpt-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            backbone_channels: vec![4, 8],
            n_prototypes: 6,
            n_combinations: 2,
            mlp_hidden: vec![5],
            ..ModelConfig::default()
        };
        let mut params = init_params(&cfg, 42).unwrap();
        params.projection = Some(ProjectionReport {
            entries: (0..cfg.n_prototypes)
                .map(|i| ProjectionEntry { image_index: i * 7, position: (i % 7, (i * 3) % 7), similarity: 0.5 + i as f64 * 0.01 })
                .collect(),
        });
        let path = temp_path("roundtrip.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();

        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);

        // Bit-exact file reproduction as well.
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &cfg2, &params2).unwrap();
        let second = std::fs::read(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(first, second);
    }

    #[test]
    fn fixed_classifier_round_trips() {
        let cfg = ModelConfig {
            backbone_channels: vec![4],
            n_prototypes: 4,
            n_combinations: 2,
            classifier: ClassifierKind::Fixed,
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 1).unwrap();
        let path = temp_path("fixed.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn bad_header_rejected() {
        let path = temp_path("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint\n").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, ModelError::CheckpointFormat(_)));
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = ModelConfig {
            similarity: super::super::Similarity::NegL2,
            classifier: ClassifierKind::Fixed,
            epsilon: 2.5e-7,
            ..ModelConfig::default()
        };
        let mut rebuilt = ModelConfig::default();
        for (k, v) in cfg.to_key_values() {
            rebuilt.set_field(&k, &v).unwrap();
        }
        assert_eq!(cfg, rebuilt);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = ModelConfig::default();
        let err = cfg.set_field("n_protos", "12").unwrap_err();
        assert!(err.to_string().contains("n_protos"));
    }
}
