//! Command implementations.

use crate::config::RunConfig;
use crate::{CliError, Flags};
use protoarg_core::explain::{export, ExportFormat};
use protoarg_core::model::{load_checkpoint, save_checkpoint, ModelError};
use protoarg_core::qbaf::{from_graph_text, sparsify_pipeline, to_graph_text};
use protoarg_core::shapes;
use protoarg_core::train::{self, TrainError};
use std::path::{Path, PathBuf};

const RUN_ROOT_ENV: &str = "PROTOARG_RUN_ROOT";

pub fn gen_data(flags: Flags) -> Result<(), CliError> {
    let seed: u64 = flags.parse_value("seed", 0)?;
    let n: usize = flags.parse_value("n", 10_000)?;
    let out = PathBuf::from(flags.require("out")?);

    let dataset = shapes::generate(seed, n).map_err(|e| CliError::usage(e.to_string()))?;
    shapes::save(&dataset, &out).map_err(|e| CliError::runtime(e.to_string()))?;
    let [zeros, ones] = dataset.class_counts();
    println!("wrote {} samples to {} (class 0: {zeros}, class 1: {ones})", n, out.display());
    println!("train/test split: {}/{}", dataset.train_idx.len(), dataset.test_idx.len());
    Ok(())
}

pub fn train(flags: Flags) -> Result<(), CliError> {
    let data_path = PathBuf::from(flags.require("data")?);
    let mut cfg = RunConfig::default();
    if let Some(config_path) = flags.get("config") {
        cfg.apply_file(Path::new(config_path))?;
    }
    for (key, value) in flags.overrides() {
        cfg.set(key, value)?;
    }

    let out_dir = resolve_out_dir(&flags, &format!("run-seed{}", cfg.train.seed))?;
    let dataset = shapes::load(&data_path).map_err(|e| CliError::runtime(e.to_string()))?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&out_dir.join("config.txt"), cfg.to_text())?;

    let outcome = train::train(&cfg.model, &dataset, &cfg.train).map_err(map_train_error)?;

    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &cfg.model, &outcome.params).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&out_dir.join("report.txt"), outcome.report.to_text())?;

    println!("final test accuracy {}", outcome.report.final_test_acc);
    if let Some(pre) = outcome.report.pre_projection_test_acc {
        println!("pre-projection test accuracy {pre}");
    }
    println!("trained in {:?}; checkpoint at {}", outcome.report.total_wall_clock, ckpt_path.display());
    Ok(())
}

pub fn eval(flags: Flags) -> Result<(), CliError> {
    let (cfg, params) = load_checkpoint(Path::new(flags.require("checkpoint")?)).map_err(map_model_error)?;
    let dataset = shapes::load(Path::new(flags.require("data")?)).map_err(|e| CliError::runtime(e.to_string()))?;
    let split = flags.require("split")?;
    let indices = match split {
        "train" => &dataset.train_idx,
        "test" => &dataset.test_idx,
        other => return Err(CliError::usage(format!("bad value {other:?} for --split (train|test)"))),
    };
    let accuracy = train::evaluate(&cfg, &params, &dataset, indices).map_err(map_train_error)?;
    println!("{split} accuracy {accuracy}");
    Ok(())
}

pub fn sparsify(flags: Flags) -> Result<(), CliError> {
    let (cfg, params) = load_checkpoint(Path::new(flags.require("checkpoint")?)).map_err(map_model_error)?;
    let dataset = shapes::load(Path::new(flags.require("data")?)).map_err(|e| CliError::runtime(e.to_string()))?;

    let mut run_cfg = RunConfig::default();
    for (key, value) in flags.overrides() {
        run_cfg.set(key, value)?;
    }
    if let Some(ratio) = flags.get("ratio") {
        run_cfg.set("sparsify.ratio", ratio)?;
    }
    let scfg = run_cfg.sparsify.clone();
    scfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let out_dir = resolve_out_dir(&flags, &format!("sparsify-ratio{}", scfg.ratio))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&out_dir.join("config.txt"), run_cfg.to_text())?;

    let outcome = sparsify_pipeline(&cfg, &params, &dataset, &scfg).map_err(|e| CliError::runtime(e.to_string()))?;

    write_file(&out_dir.join("qbaf.graph"), to_graph_text(&outcome.sparsified))?;
    let metrics = format!(
        "ratio {}\nclusters {}\naccuracy {}\nhidden_unfaithfulness {}\noutput_unfaithfulness {}\ncognitive_complexity {}\ncognitive_complexity_full {}\n",
        scfg.ratio,
        outcome.sparsified.hidden_cluster_count(),
        outcome.report.accuracy.unwrap_or(f64::NAN),
        outcome.report.hidden,
        outcome.report.output,
        outcome.complexity.headline,
        outcome.complexity.full,
    );
    write_file(&out_dir.join("metrics.txt"), metrics.clone())?;
    print!("{metrics}");
    println!("graph written to {}", out_dir.join("qbaf.graph").display());
    Ok(())
}

pub fn explain(flags: Flags) -> Result<(), CliError> {
    let (cfg, params) = load_checkpoint(Path::new(flags.require("checkpoint")?)).map_err(map_model_error)?;
    let data_path = flags.require("data")?.to_string();
    let dataset = shapes::load(Path::new(&data_path)).map_err(|e| CliError::runtime(e.to_string()))?;
    let qbaf_text = std::fs::read_to_string(flags.require("qbaf")?).map_err(|e| CliError::runtime(e.to_string()))?;
    let qbaf = from_graph_text(&qbaf_text).map_err(|e| CliError::runtime(e.to_string()))?;
    let index: usize = flags
        .require("index")?
        .parse()
        .map_err(|_| CliError::usage(format!("bad value {:?} for --index", flags.get("index").unwrap_or(""))))?;
    let out_dir = resolve_out_dir(&flags, &format!("explain-{index}"))?;

    let explanation = protoarg_core::explain::explain(&cfg, &params, &qbaf, &dataset, index, &data_path)
        .map_err(|e| match e {
            protoarg_core::explain::ExplainError::IndexOutOfRange { .. } => CliError::usage(e.to_string()),
            protoarg_core::explain::ExplainError::NoSuperPrototypes => CliError::usage(e.to_string()),
            other => CliError::runtime(other.to_string()),
        })?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    let mut written = Vec::new();
    written.extend(
        export(&explanation, ExportFormat::StructuredText, &out_dir.join("explanation.txt"))
            .map_err(|e| CliError::runtime(e.to_string()))?,
    );
    written.extend(
        export(&explanation, ExportFormat::GraphFile, &out_dir.join("qbaf_strengths.graph"))
            .map_err(|e| CliError::runtime(e.to_string()))?,
    );
    written.extend(
        export(&explanation, ExportFormat::RasterBundle, &out_dir).map_err(|e| CliError::runtime(e.to_string()))?,
    );

    println!(
        "class {} (p = {}) for sample {index}; {} files:",
        explanation.predicted_class,
        explanation.probability,
        written.len()
    );
    for f in &written {
        println!("  {}", f.display());
    }
    Ok(())
}

fn resolve_out_dir(flags: &Flags, default_name: &str) -> Result<PathBuf, CliError> {
    if let Some(out) = flags.get("out") {
        return Ok(PathBuf::from(out));
    }
    match std::env::var(RUN_ROOT_ENV) {
        Ok(root) if !root.is_empty() => Ok(PathBuf::from(root).join(default_name)),
        _ => Err(CliError::usage(format!("missing --out (set it or export {RUN_ROOT_ENV})"))),
    }
}

fn write_file(path: &Path, content: String) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn map_train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } => CliError::runtime(e.to_string()),
        TrainError::Config(_) | TrainError::EmptySplit => CliError::usage(e.to_string()),
        TrainError::Model(ModelError::Config(_)) | TrainError::Model(ModelError::ParamShape(_)) => {
            CliError::usage(e.to_string())
        }
        other => CliError::runtime(other.to_string()),
    }
}

fn map_model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Config(_) | ModelError::ParamShape(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other.to_string()),
    }
}
