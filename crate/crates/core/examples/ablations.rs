//! Image counting environment: trains the dynamics-only, reward-auxiliary,
//! reward-only and random-auxiliary presets on the same data and prints their
//! cluster statistics.
//!
//! Usage: `cargo run --release --example ablations -- [STEPS] [PRESET]`

use bisimlab::analysis::{collapse_ratio, distance_summary, nearest_centroid_accuracy};
use bisimlab::pipeline::{ExperimentConfig, Preset};
use bisimlab::train::train;

fn main() -> bisimlab::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: Option<usize> = args.first().map(|s| s.parse().expect("steps"));
    let only: Option<Preset> = args.get(1).map(|s| s.parse().expect("preset name"));

    let base = ExperimentConfig::preset(Preset::RewardAux);
    let t = std::time::Instant::now();
    let data = base.training_data()?;
    println!("collected {} transitions in {:?}", data.transitions.len(), t.elapsed());

    for preset in [Preset::DynOnly, Preset::RewardAux, Preset::RewardOnly, Preset::RandomAux] {
        if only.is_some_and(|p| p != preset) {
            continue;
        }
        let mut cfg = ExperimentConfig::preset(preset);
        if let Some(s) = steps {
            cfg.train.steps = s;
        }
        cfg.propagate_seed();
        let t = std::time::Instant::now();
        let out = train(&cfg.train, &data)?;
        let embs = data.holdout_embeddings(&out.params)?;
        let s = distance_summary(&embs);
        println!(
            "{:<12} nca {:.3} collapse_ratio {:.3} median within {:.4} across {:.4} ({:?})",
            preset.name(),
            nearest_centroid_accuracy(&embs)?,
            collapse_ratio(&embs)?,
            s.median_within_label,
            s.median_across_labels,
            t.elapsed()
        );
    }
    Ok(())
}
