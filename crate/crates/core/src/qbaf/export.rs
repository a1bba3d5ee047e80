//! Graph text format.
//!
//! ```text
//! qbaf 1
//! hash <u64>
//! layers <n> influences <name> <name> ...
//! args <count> edges <count>
//! node <id> <layer> <base> <kind> <member_count> <member> ...
//! edge <from> <to> <weight> <attack|support>
//! strength <id> <value>            (optional, per-sample exports only)
//! probability <class> <value>      (optional)
//! end
//! ```
//!
//! Floats print in Rust's shortest-round-trip form, so emit -> parse -> emit
//! is byte-stable.

use super::{Argument, Edge, Influence, Qbaf, QbafError, StrengthAssignment};

pub fn to_graph_text(qbaf: &Qbaf) -> String {
    let mut out = String::new();
    header(&mut out, qbaf);
    out.push_str("end\n");
    out
}

/// Graph text plus final strengths and class probabilities for one input.
pub fn to_graph_text_with_strengths(qbaf: &Qbaf, sa: &StrengthAssignment) -> String {
    let mut out = String::new();
    header(&mut out, qbaf);
    for (id, s) in sa.strengths.iter().enumerate() {
        out.push_str(&format!("strength {id} {s}\n"));
    }
    for (class, p) in sa.probabilities.iter().enumerate() {
        out.push_str(&format!("probability {class} {p}\n"));
    }
    out.push_str("end\n");
    out
}

fn header(out: &mut String, qbaf: &Qbaf) {
    out.push_str("qbaf 1\n");
    out.push_str(&format!("hash {}\n", qbaf.source_hash));
    out.push_str(&format!("layers {}", qbaf.n_layers));
    out.push_str(" influences");
    for inf in &qbaf.influences {
        out.push(' ');
        out.push_str(inf.as_str());
    }
    out.push('\n');
    out.push_str(&format!("args {} edges {}\n", qbaf.arguments.len(), qbaf.edges.len()));
    for a in &qbaf.arguments {
        out.push_str(&format!(
            "node {} {} {} {} {}",
            a.id,
            a.layer,
            a.base_score,
            a.kind.as_str(),
            a.members.len()
        ));
        for m in &a.members {
            out.push_str(&format!(" {m}"));
        }
        out.push('\n');
    }
    for e in &qbaf.edges {
        let relation = if e.is_support() { "support" } else { "attack" };
        out.push_str(&format!("edge {} {} {} {relation}\n", e.from, e.to, e.weight));
    }
}

pub fn from_graph_text(text: &str) -> Result<Qbaf, QbafError> {
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| QbafError::Parse(format!("unexpected end of text, wanted {what}")))
    };

    if next("header")? != "qbaf 1" {
        return Err(QbafError::Parse("missing 'qbaf 1' header".into()));
    }
    let hash_line = next("hash")?;
    let source_hash = hash_line
        .strip_prefix("hash ")
        .and_then(|h| h.parse().ok())
        .ok_or_else(|| QbafError::Parse(format!("bad hash line {hash_line:?}")))?;

    let layers_line = next("layers")?;
    let mut parts = layers_line.split_whitespace();
    expect(parts.next(), "layers")?;
    let n_layers: usize = parse(parts.next(), "layer count")?;
    expect(parts.next(), "influences")?;
    let influences = parts.map(Influence::parse).collect::<Result<Vec<_>, _>>()?;
    if influences.len() != n_layers {
        return Err(QbafError::Parse(format!(
            "{} influences for {} layers",
            influences.len(),
            n_layers
        )));
    }

    let counts_line = next("counts")?;
    let mut parts = counts_line.split_whitespace();
    expect(parts.next(), "args")?;
    let n_args: usize = parse(parts.next(), "arg count")?;
    expect(parts.next(), "edges")?;
    let n_edges: usize = parse(parts.next(), "edge count")?;

    let mut arguments = Vec::with_capacity(n_args);
    for _ in 0..n_args {
        let line = next("node")?;
        let mut parts = line.split_whitespace();
        expect(parts.next(), "node")?;
        let id: usize = parse(parts.next(), "node id")?;
        let layer: usize = parse(parts.next(), "node layer")?;
        let base_score: f64 = parse(parts.next(), "base score")?;
        let kind = super::ArgumentKind::parse(parts.next().unwrap_or(""))?;
        let member_count: usize = parse(parts.next(), "member count")?;
        let members: Vec<usize> = parts
            .map(|m| m.parse().map_err(|_| QbafError::Parse(format!("bad member {m:?}"))))
            .collect::<Result<_, _>>()?;
        if members.len() != member_count {
            return Err(QbafError::Parse(format!(
                "node {id} declares {member_count} members, lists {}",
                members.len()
            )));
        }
        arguments.push(Argument { id, layer, base_score, kind, members });
    }

    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let line = next("edge")?;
        let mut parts = line.split_whitespace();
        expect(parts.next(), "edge")?;
        let from: usize = parse(parts.next(), "edge source")?;
        let to: usize = parse(parts.next(), "edge target")?;
        let weight: f64 = parse(parts.next(), "edge weight")?;
        let relation = parts.next().unwrap_or("");
        let expected = if weight > 0.0 { "support" } else { "attack" };
        if relation != expected {
            return Err(QbafError::Parse(format!(
                "edge {from}->{to} labeled {relation:?} but weight {weight} says {expected}"
            )));
        }
        edges.push(Edge { from, to, weight });
    }

    // Trailing strength/probability lines are per-sample decorations; accept
    // and skip them before 'end'.
    loop {
        let line = next("end")?;
        if line == "end" {
            break;
        }
        if !line.starts_with("strength ") && !line.starts_with("probability ") {
            return Err(QbafError::Parse(format!("unexpected line {line:?}")));
        }
    }

    let qbaf = Qbaf { arguments, edges, influences, n_layers, source_hash };
    qbaf.check_structure()?;
    Ok(qbaf)
}

fn expect(field: Option<&str>, keyword: &str) -> Result<(), QbafError> {
    if field == Some(keyword) {
        Ok(())
    } else {
        Err(QbafError::Parse(format!("expected {keyword:?}, found {field:?}")))
    }
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, QbafError> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| QbafError::Parse(format!("bad or missing {what}")))
}

#[cfg(test)]
mod tests {
    use super::super::{forward_strengths, mlp_to_qbaf};
    use super::*;
    use crate::model::MlpLayer;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn sample_qbaf() -> Qbaf {
        let mut rng = Rng::new(8);
        let layers = vec![
            MlpLayer {
                weight: Tensor::new(vec![2, 3], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap(),
                bias: Tensor::new(vec![3], vec![0.1, -0.2, 0.0]).unwrap(),
            },
            MlpLayer {
                weight: Tensor::new(vec![3, 2], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap(),
                bias: Tensor::new(vec![2], vec![0.05, 0.0]).unwrap(),
            },
        ];
        mlp_to_qbaf(&layers)
    }

    #[test]
    fn text_round_trip_is_exact() {
        let qbaf = sample_qbaf();
        let text = to_graph_text(&qbaf);
        let parsed = from_graph_text(&text).unwrap();
        assert_eq!(qbaf, parsed);
        assert_eq!(to_graph_text(&parsed), text);
    }

    #[test]
    fn strengths_variant_parses_as_same_graph() {
        let qbaf = sample_qbaf();
        let sa = forward_strengths(&qbaf, &[0.4, -1.2]).unwrap();
        let text = to_graph_text_with_strengths(&qbaf, &sa);
        assert!(text.lines().any(|l| l.starts_with("strength ")));
        assert!(text.lines().any(|l| l.starts_with("probability ")));
        let parsed = from_graph_text(&text).unwrap();
        assert_eq!(qbaf, parsed);
    }

    #[test]
    fn edge_labels_follow_sign() {
        let qbaf = sample_qbaf();
        let text = to_graph_text(&qbaf);
        for line in text.lines().filter(|l| l.starts_with("edge ")) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let weight: f64 = fields[3].parse().unwrap();
            assert_eq!(fields[4], if weight > 0.0 { "support" } else { "attack" });
        }
    }

    #[test]
    fn corrupted_text_rejected() {
        let qbaf = sample_qbaf();
        let text = to_graph_text(&qbaf).replace("qbaf 1", "qbaf 2");
        assert!(from_graph_text(&text).is_err());
    }
}
