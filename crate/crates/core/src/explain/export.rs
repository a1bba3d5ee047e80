//! Explanation serialization.
//!
//! Three formats: `structured-text` (all fields, round-trippable),
//! `graph-file` (the argumentation graph with this sample's strengths), and
//! `raster-bundle` (the input image plus one overlay per class, as portable
//! pixel-maps). All outputs are deterministic byte-for-byte.

use super::{render_overlay, Explanation, ExplainError, PrototypeProvenance, Raster, DEFAULT_MAX_ALPHA};
use crate::qbaf::{from_graph_text, to_graph_text_with_strengths, StrengthAssignment};
use crate::shapes::IMAGE_SIZE;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    StructuredText,
    GraphFile,
    RasterBundle,
}

impl ExportFormat {
    pub fn parse(text: &str) -> Result<Self, ExplainError> {
        match text {
            "structured-text" => Ok(ExportFormat::StructuredText),
            "graph-file" => Ok(ExportFormat::GraphFile),
            "raster-bundle" => Ok(ExportFormat::RasterBundle),
            other => Err(ExplainError::UnknownFormat(other.to_string())),
        }
    }
}

/// Write the explanation in the given format. `path` names a file for the
/// text formats and a directory for the raster bundle. Returns the files
/// written.
pub fn export(explanation: &Explanation, format: ExportFormat, path: &Path) -> Result<Vec<PathBuf>, ExplainError> {
    match format {
        ExportFormat::StructuredText => {
            std::fs::write(path, to_structured_text(explanation))?;
            Ok(vec![path.to_path_buf()])
        }
        ExportFormat::GraphFile => {
            std::fs::write(path, to_graph_text_with_strengths(&explanation.qbaf, &explanation.strengths))?;
            Ok(vec![path.to_path_buf()])
        }
        ExportFormat::RasterBundle => {
            std::fs::create_dir_all(path)?;
            let mut written = Vec::new();
            let input_path = path.join("input.ppm");
            Raster::from_image(&explanation.image).save_ppm(&input_path)?;
            written.push(input_path);
            for (k, hm) in explanation.heatmaps.iter().enumerate() {
                let overlay = render_overlay(&explanation.image, hm, DEFAULT_MAX_ALPHA);
                let p = path.join(format!("overlay_class{k}.ppm"));
                overlay.save_ppm(&p)?;
                written.push(p);
            }
            Ok(written)
        }
    }
}

pub fn to_structured_text(e: &Explanation) -> String {
    let mut out = String::from("explanation 1\n");
    out.push_str(&format!("data_ref {}\n", e.data_ref));
    out.push_str(&format!("sample_index {}\n", e.sample_index));
    out.push_str(&format!("predicted_class {}\n", e.predicted_class));
    out.push_str(&format!("probability {}\n", e.probability));
    out.push_str("ss");
    for v in &e.ss {
        out.push_str(&format!(" {v}"));
    }
    out.push('\n');
    out.push_str("image");
    for v in e.image.data() {
        out.push_str(&format!(" {v}"));
    }
    out.push('\n');
    for (k, hm) in e.heatmaps.iter().enumerate() {
        out.push_str(&format!("heatmap {k}"));
        for v in hm.data() {
            out.push_str(&format!(" {v}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("provenance {}\n", e.provenance.len()));
    for p in &e.provenance {
        out.push_str(&format!(
            "proto {} {} {} {} {} {} {} {} {}\n",
            p.prototype,
            p.image_index,
            p.position.0,
            p.position.1,
            p.similarity,
            p.pixel_block.0,
            p.pixel_block.1,
            p.pixel_block.2,
            p.pixel_block.3
        ));
    }
    out.push_str("graph\n");
    out.push_str(&to_graph_text_with_strengths(&e.qbaf, &e.strengths));
    out.push_str("end-explanation\n");
    out
}

pub fn parse_explanation(text: &str) -> Result<Explanation, ExplainError> {
    let mut lines = text.lines().peekable();
    let bad = |msg: &str| ExplainError::Format(msg.to_string());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| ExplainError::Format(format!("unexpected end of text, wanted {what}")))
    };

    if next("header")? != "explanation 1" {
        return Err(bad("missing 'explanation 1' header"));
    }
    let data_ref = next("data_ref")?
        .strip_prefix("data_ref ")
        .ok_or_else(|| bad("missing data_ref"))?
        .to_string();
    let sample_index = parse_one(next("sample_index")?, "sample_index")?;
    let predicted_class = parse_one(next("predicted_class")?, "predicted_class")?;
    let probability: f64 = parse_one(next("probability")?, "probability")?;
    let ss = parse_floats(next("ss")?, "ss")?;
    let image_data = parse_floats(next("image")?, "image")?;
    if image_data.len() != IMAGE_SIZE * IMAGE_SIZE * 3 {
        return Err(bad("image field has wrong length"));
    }
    let image = Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], image_data).expect("checked length");

    let mut heatmaps = Vec::with_capacity(ss.len());
    for k in 0..ss.len() {
        let line = next("heatmap")?;
        let rest = line
            .strip_prefix(&format!("heatmap {k} "))
            .ok_or_else(|| ExplainError::Format(format!("expected heatmap {k}")))?;
        let data = parse_floats(&format!("x {rest}"), "heatmap")?;
        if data.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(bad("heatmap field has wrong length"));
        }
        heatmaps.push(Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE], data).expect("checked length"));
    }

    let count: usize = parse_one(next("provenance")?, "provenance")?;
    let mut provenance = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next("proto")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 || fields[0] != "proto" {
            return Err(bad("malformed proto line"));
        }
        provenance.push(PrototypeProvenance {
            prototype: fields[1].parse().map_err(|_| bad("proto index"))?,
            image_index: fields[2].parse().map_err(|_| bad("proto image"))?,
            position: (
                fields[3].parse().map_err(|_| bad("proto position"))?,
                fields[4].parse().map_err(|_| bad("proto position"))?,
            ),
            similarity: fields[5].parse().map_err(|_| bad("proto similarity"))?,
            pixel_block: (
                fields[6].parse().map_err(|_| bad("proto block"))?,
                fields[7].parse().map_err(|_| bad("proto block"))?,
                fields[8].parse().map_err(|_| bad("proto block"))?,
                fields[9].parse().map_err(|_| bad("proto block"))?,
            ),
        });
    }

    if next("graph")? != "graph" {
        return Err(bad("missing graph section"));
    }
    let mut graph_text = String::new();
    let mut strengths_raw = Vec::new();
    let mut probs_raw = Vec::new();
    loop {
        let line = next("graph body")?;
        if line == "end-explanation" {
            break;
        }
        if let Some(rest) = line.strip_prefix("strength ") {
            let mut it = rest.split_whitespace();
            let _id: usize = parse_field(it.next(), "strength id")?;
            strengths_raw.push(parse_field::<f64>(it.next(), "strength value")?);
        } else if let Some(rest) = line.strip_prefix("probability ") {
            let mut it = rest.split_whitespace();
            let _class: usize = parse_field(it.next(), "probability class")?;
            probs_raw.push(parse_field::<f64>(it.next(), "probability value")?);
        }
        graph_text.push_str(line);
        graph_text.push('\n');
    }
    let qbaf = from_graph_text(&graph_text)?;
    let output_ids = qbaf.layer_ids(qbaf.n_layers - 1);
    let output_pre_softmax: Vec<f64> = output_ids.iter().map(|&id| strengths_raw[id]).collect();
    let strengths = StrengthAssignment {
        strengths: strengths_raw,
        output_pre_softmax,
        probabilities: probs_raw,
    };

    Ok(Explanation {
        data_ref,
        sample_index,
        predicted_class,
        probability,
        ss,
        image,
        heatmaps,
        provenance,
        qbaf,
        strengths,
    })
}

fn parse_one<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, ExplainError> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| ExplainError::Format(format!("expected {key}, got {line:?}")))?;
    rest.trim()
        .parse()
        .map_err(|_| ExplainError::Format(format!("bad value for {key}: {rest:?}")))
}

fn parse_floats(line: &str, key: &str) -> Result<Vec<f64>, ExplainError> {
    line.split_whitespace()
        .skip(1)
        .map(|v| v.parse().map_err(|_| ExplainError::Format(format!("bad float in {key}: {v:?}"))))
        .collect()
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, ExplainError> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExplainError::Format(format!("bad or missing {what}")))
}

#[cfg(test)]
mod tests {
    use super::super::explain;
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::qbaf::mlp_to_qbaf;
    use crate::shapes::generate;

    fn sample_explanation() -> Explanation {
        let cfg = ModelConfig {
            backbone_channels: vec![4, 8],
            n_prototypes: 5,
            n_combinations: 2,
            mlp_hidden: vec![6],
            ..ModelConfig::default()
        };
        let mut params = init_params(&cfg, 2).unwrap();
        let ds = generate(3, 10).unwrap();
        crate::model::project_prototypes(&cfg, &mut params, &ds).unwrap();
        let qbaf = mlp_to_qbaf(&params.classifier_layers());
        explain(&cfg, &params, &qbaf, &ds, 1, "unit.shapes").unwrap()
    }

    fn temp_dir(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("explain-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn structured_text_round_trips() {
        let e = sample_explanation();
        let text = to_structured_text(&e);
        let parsed = parse_explanation(&text).unwrap();
        assert_eq!(e, parsed);
    }

    #[test]
    fn raster_bundle_has_k_plus_one_files() {
        let e = sample_explanation();
        let dir = temp_dir("bundle");
        let files = export(&e, ExportFormat::RasterBundle, &dir).unwrap();
        assert_eq!(files.len(), e.heatmaps.len() + 1);
        for f in &files {
            assert!(f.exists());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn graph_file_node_count_matches() {
        let e = sample_explanation();
        let path = temp_dir("graph.txt");
        export(&e, ExportFormat::GraphFile, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let nodes = text.lines().filter(|l| l.starts_with("node ")).count();
        assert_eq!(nodes, e.qbaf.arguments.len());
    }

    #[test]
    fn exports_are_deterministic() {
        let a = sample_explanation();
        let b = sample_explanation();
        assert_eq!(to_structured_text(&a), to_structured_text(&b));
    }

    #[test]
    fn format_names_parse() {
        assert_eq!(ExportFormat::parse("structured-text").unwrap(), ExportFormat::StructuredText);
        assert!(ExportFormat::parse("json").is_err());
    }
}
