use protoarg_core::model::{project_prototypes, ClassifierKind, ModelConfig};
use protoarg_core::shapes::generate;
use protoarg_core::train::{evaluate, train, ProjectionInterval, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let lambda: f64 = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let seed: u64 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(0);
    let interval = args
        .get(6)
        .map(|v| ProjectionInterval::parse(v).unwrap())
        .unwrap_or(ProjectionInterval::Final);
    let variant = args.get(7).map(String::as_str).unwrap_or("default");

    let t0 = Instant::now();
    let ds = generate(7, n).unwrap();
    println!("generated {} samples in {:?}; counts {:?}", n, t0.elapsed(), ds.class_counts());

    let mut cfg = ModelConfig::default();
    match variant {
        "default" => {}
        "ablated" => cfg.use_super_prototypes = false,
        "fixed" => cfg.classifier = ClassifierKind::Fixed,
        "fixed_nosp" => {
            cfg.classifier = ClassifierKind::Fixed;
            cfg.use_super_prototypes = false;
        }
        other => panic!("unknown variant {other}"),
    }
    let tcfg = TrainConfig {
        epochs,
        learning_rate: lr,
        lambda_sp: lambda,
        seed,
        projection_interval: interval,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let out = train(&cfg, &ds, &tcfg).unwrap();
    for r in &out.report.epochs {
        println!(
            "epoch {:>3}  ce {:>8.4}  sp {:>9.4}  train_acc {:.4}  test_acc {:.4}  ({:?})",
            r.epoch, r.ce_loss, r.sp_loss, r.train_acc, r.test_acc, r.wall_clock
        );
    }
    println!(
        "total {:?}  final test acc {:.4} (pre-projection {:?})",
        t1.elapsed(),
        out.report.final_test_acc,
        out.report.pre_projection_test_acc
    );

    // Post-hoc projection cost from the final state, plus how far the
    // prototypes sit from their nearest patches.
    let mut projected = out.params.clone();
    let report = project_prototypes(&cfg, &mut projected, &ds).unwrap();
    let acc = evaluate(&cfg, &projected, &ds, &ds.test_idx).unwrap();
    let mut sims: Vec<f64> = report.entries.iter().map(|e| e.similarity).collect();
    sims.sort_by(|a, b| a.total_cmp(b));
    println!(
        "post-hoc projection: acc {:.4} (drop {:.4}); similarity min {:.4} p25 {:.4} median {:.4} max {:.4}",
        acc,
        out.report.final_test_acc - acc,
        sims[0],
        sims[sims.len() / 4],
        sims[sims.len() / 2],
        sims[sims.len() - 1]
    );
}
