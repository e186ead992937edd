//! Bisimulation estimated from rollouts of the image counting environment
//! as the dataset grows, compared with the exact relation of the abstract MDP.
//!
//! Usage: `cargo run --release --example empirical_bisim -- [SEED]`

use bisimlab::bisim::{least_fixed_point, AuxTolerance};
use bisimlab::dataset::{collect_dataset, TransitionDataset};
use bisimlab::empirical::empirical_lfp;
use bisimlab::env::CountingEnvConfig;
use bisimlab::mdp::counting_abstract_mdp;

fn main() -> bisimlab::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let env = CountingEnvConfig { seed, ..Default::default() };
    let collected = collect_dataset(&env, 4000, 4)?;
    let exact = least_fixed_point(&counting_abstract_mdp(env.max_count, env.target_n)?, AuxTolerance::EXACT)?.relation;
    println!("exact relation separates {} ordered pairs", exact.len());

    for size in [5, 20, 50, 200, 1000, 4000] {
        let dataset = TransitionDataset {
            records: collected.dataset.records[..size].to_vec(),
            ..collected.dataset.clone()
        };
        let emp = empirical_lfp(&dataset, AuxTolerance::EXACT)?;
        let seen = emp.sources.iter().filter(|&&s| s).count();
        let sound = emp.relation.is_subset(&exact.restricted_to(&emp.sources));
        println!(
            "{size:>5} transitions: {seen} counts seen, {} pairs separated, sound {sound}, partition {}",
            emp.relation.len(),
            if emp.transitive_complement { "formed" } else { "not transitive" }
        );
    }
    Ok(())
}
