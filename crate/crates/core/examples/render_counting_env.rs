//! Renders one frame per object count and a short random-policy rollout to a
//! binary PPM strip.
//!
//! Usage: `cargo run --example render_counting_env -- [OUT.ppm] [SEED]`

use std::io::Write;

use bisimlab::env::{CountingEnv, CountingEnvConfig, Observation};

fn main() -> bisimlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "counting_env.ppm".into());
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));
    let config = CountingEnvConfig { seed, ..Default::default() };
    let mut env = CountingEnv::new(config.clone())?;

    let mut frames: Vec<Observation> = (0..=config.max_count).map(|k| env.sample_observation(k)).collect();
    let mut obs = env.reset();
    for step in 0..config.max_count + 1 {
        frames.push(obs.clone());
        let action = if step % 2 == 0 { 0.8 } else { -0.3 };
        let outcome = env.step(action)?;
        println!("count {} -> {} reward {}", obs.count, outcome.observation.count, outcome.reward);
        obs = if outcome.done { env.reset() } else { outcome.observation };
    }

    let size = config.image_size;
    let rgb: Vec<Vec<u8>> = frames.iter().map(Observation::to_rgb).collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    write!(f, "P6\n{} {}\n255\n", size * frames.len(), size)?;
    for y in 0..size {
        for img in &rgb {
            f.write_all(&img[y * size * 3..(y + 1) * size * 3])?;
        }
    }
    f.flush()?;
    println!("wrote {} frames to {out}", frames.len());
    Ok(())
}
