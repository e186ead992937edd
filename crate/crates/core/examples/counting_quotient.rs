//! Largest bisimulation of the abstract counting MDP, computed by plain
//! iteration and by partition refinement.
//!
//! Usage: `cargo run --example counting_quotient -- [MAX_COUNT] [TARGET]`

use bisimlab::bisim::{least_fixed_point, partition_refine, quotient, shortest_distinguishing_sequence, AuxTolerance};
use bisimlab::mdp::counting_abstract_mdp;

fn main() -> bisimlab::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let max_count = args.first().copied().unwrap_or(8);
    let target = args.get(1).copied().unwrap_or(4);
    let mdp = counting_abstract_mdp(max_count, target)?;

    let fp = least_fixed_point(&mdp, AuxTolerance::EXACT)?;
    println!("iteration: {} rounds, pairs added per round {:?}", fp.iterations, fp.trace);
    let blocks = quotient(&fp.relation, &mdp, AuxTolerance::EXACT)?;
    println!("{} blocks: {:?}", blocks.num_blocks, blocks.blocks());

    let refined = partition_refine(&mdp)?;
    println!("refinement: {} rounds, same blocks: {}", refined.rounds, refined.partition.canonical() == blocks.canonical());

    // Neighbouring counts agree on reward until one of them reaches the target.
    for k in 0..max_count {
        let seq = shortest_distinguishing_sequence(&mdp, k, k + 1, mdp.num_observations.pow(2));
        println!("{k} vs {}: actions {:?}", k + 1, seq.expect("counts are distinguishable"));
    }
    Ok(())
}
