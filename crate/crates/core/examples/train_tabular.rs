//! Trains the `tabular_counting` preset (one-hot counts) and verifies that
//! no bisimulation-distinguishable pair of counts shares an embedding.
//!
//! Usage: `cargo run --release --example train_tabular -- [STEPS] [OUT_DIR]`

use bisimlab::pipeline::{self, ExperimentConfig, Preset};

fn main() -> bisimlab::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::preset(Preset::TabularCounting);
    if let Some(steps) = args.next() {
        cfg.train.steps = steps.parse().expect("steps");
    }
    cfg.out_dir = args.next().unwrap_or_else(|| "out/tabular".into()).into();
    cfg.propagate_seed();

    let t = std::time::Instant::now();
    let (outcome, _) = pipeline::cmd_train(&cfg)?;
    for m in outcome.metrics.iter().filter(|m| m.centroid_acc.is_some()) {
        println!("step {:>6} dyn {:.2e} aux {:.2e} nca {:.3}", m.step, m.dyn_loss, m.aux_loss, m.centroid_acc.unwrap());
    }
    println!("trained in {:?}", t.elapsed());

    let ckpt = cfg.out_dir.join("best.ckpt");
    let (report, _) = pipeline::cmd_verify(&ckpt, None, &cfg.out_dir)?;
    println!(
        "verify: {:?}, {} violations among {} pairs, closest distinguishable pair {:?}",
        report.verdict,
        report.violations.len(),
        report.pairs_checked,
        report.min_cross_class_distance
    );
    Ok(())
}
