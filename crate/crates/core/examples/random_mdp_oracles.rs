//! Cross-checks the two bisimulation engines against the brute-force
//! distinguishing-sequence search on random MDPs.
//!
//! Usage: `cargo run --release --example random_mdp_oracles -- [COUNT] [SEED]`

use std::time::{Duration, Instant};

use bisimlab::bisim::{distinguishing_oracle, least_fixed_point, partition_refine, AuxTolerance};
use bisimlab::mdp::random_mdp;
use rand::Rng;

fn main() -> bisimlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(200, |a| a.parse().expect("count"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let mut rng = bisimlab::rng::seeded(seed);
    let mut time = [Duration::ZERO; 3];
    let mut blocks = Vec::new();
    for i in 0..count {
        let n = rng.gen_range(1..=50);
        let mdp = random_mdp(n, rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen())?;

        let t = Instant::now();
        let naive = least_fixed_point(&mdp, AuxTolerance::EXACT)?.relation;
        time[0] += t.elapsed();
        let t = Instant::now();
        let refined = partition_refine(&mdp)?.partition;
        time[1] += t.elapsed();
        let t = Instant::now();
        let oracle = distinguishing_oracle(&mdp, n * n);
        time[2] += t.elapsed();

        if naive != refined.separated_pairs() || naive != oracle {
            eprintln!("mismatch on MDP #{i}: {}", serde_json::to_string(&mdp)?);
            std::process::exit(1);
        }
        blocks.push((n, refined.num_blocks));
    }
    let merged = blocks.iter().filter(|(n, b)| b < n).count();
    println!("{count} MDPs agree; {merged} have a nontrivial quotient");
    println!("naive {:?}  refine {:?}  oracle {:?}", time[0], time[1], time[2]);
    Ok(())
}
