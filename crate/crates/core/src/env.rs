//! The counting environment: images holding `k` identical objects, where the
//! action sign adds or removes one object and the reward fires when `k` hits a
//! fixed target.
//!
//! Shape and color are drawn once per episode; object positions are redrawn on
//! every step, so only the count is predictable from one frame to the next.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Triangle,
    Disk,
    Square,
    Bar,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Triangle, Shape::Disk, Shape::Square, Shape::Bar];

    /// Whether pixel `(x, y)` of an `side`-pixel bounding box is covered.
    pub fn covers(self, x: usize, y: usize, side: usize) -> bool {
        let s = side as f64;
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match self {
            Shape::Square => true,
            Shape::Disk => {
                let c = s / 2.0;
                (px - c).powi(2) + (py - c).powi(2) <= c * c
            }
            // Apex at the top edge, base along the bottom row.
            Shape::Triangle => (px - s / 2.0).abs() <= (y as f64 + 1.0) / 2.0,
            Shape::Bar => y >= side / 4 && y < side - side / 4,
        }
    }

    pub fn area(self, side: usize) -> usize {
        (0..side)
            .flat_map(|y| (0..side).map(move |x| (x, y)))
            .filter(|&(x, y)| self.covers(x, y, side))
            .count()
    }
}

/// Fully saturated RGB colors objects are drawn in.
pub const PALETTE: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountingEnvConfig {
    pub max_count: usize,
    pub target_n: usize,
    pub image_size: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub shapes: Vec<Shape>,
    pub colors: Vec<[u8; 3]>,
    pub grace_steps: usize,
    pub seed: u64,
}

impl Default for CountingEnvConfig {
    fn default() -> Self {
        Self {
            max_count: 8,
            target_n: 4,
            image_size: 32,
            channels: 3,
            shapes: Shape::ALL.to_vec(),
            colors: PALETTE.to_vec(),
            grace_steps: 1,
            seed: 0,
        }
    }
}

impl CountingEnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.target_n > self.max_count {
            return fail(format!("target_n {} > max_count {}", self.target_n, self.max_count));
        }
        if self.image_size < 8 {
            return fail(format!("image_size {} < 8", self.image_size));
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.shapes.is_empty() || self.colors.is_empty() {
            return fail("shapes and colors must be non-empty".into());
        }
        Ok(())
    }

    pub fn object_side(&self) -> usize {
        self.image_size / 8
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }
}

/// A rendered frame stored channel-major (`[C][H][W]`) as bytes; pixel value
/// `v` stands for the real intensity `v / 255` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub channels: usize,
    pub size: usize,
    pub pixels: Vec<u8>,
    /// Ground-truth number of objects. Only analysis code reads this.
    pub count: usize,
}

impl Observation {
    pub fn value(&self, idx: usize) -> f64 {
        f64::from(self.pixels[idx]) / 255.0
    }

    /// Intensities in `[0, 1]`, channel-major.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Number of pixel sites with any non-zero channel.
    pub fn lit_pixels(&self) -> usize {
        let plane = self.size * self.size;
        (0..plane)
            .filter(|&i| (0..self.channels).any(|c| self.pixels[c * plane + i] != 0))
            .count()
    }

    /// Interleaved RGB bytes, grayscale replicated across channels.
    pub fn to_rgb(&self) -> Vec<u8> {
        let plane = self.size * self.size;
        let mut out = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                let src = if self.channels == 3 { c } else { 0 };
                out.push(self.pixels[src * plane + i]);
            }
        }
        out
    }
}

/// Per-episode state: fixed shape and color, the current count, and how many
/// steps have elapsed since the first success.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub count: usize,
    pub shape: Shape,
    pub color: [u8; 3],
    pub steps_since_success: Option<usize>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 100;

pub struct CountingEnv {
    config: CountingEnvConfig,
    rng: SeededRng,
    state: Option<EpisodeState>,
}

impl CountingEnv {
    pub fn new(config: CountingEnvConfig) -> Result<Self> {
        config.validate()?;
        let rng = rng::seeded(rng::derive_seed(config.seed, rng::stream::ENV));
        Ok(Self { config, rng, state: None })
    }

    pub fn config(&self) -> &CountingEnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    /// Starts an episode with a uniform initial count and a fresh shape/color.
    pub fn reset(&mut self) -> Observation {
        let count = self.rng.gen_range(0..=self.config.max_count);
        let shape = self.config.shapes[self.rng.gen_range(0..self.config.shapes.len())];
        let color = self.config.colors[self.rng.gen_range(0..self.config.colors.len())];
        let steps_since_success = (count == self.config.target_n).then_some(0);
        let state = EpisodeState {
            count,
            shape,
            color,
            steps_since_success,
            done: false,
        };
        let obs = self.render(&state);
        self.state = Some(state);
        obs
    }

    /// A frame with `count` objects in a freshly drawn shape and color,
    /// independent of the running episode.
    pub fn sample_observation(&mut self, count: usize) -> Observation {
        let shape = self.config.shapes[self.rng.gen_range(0..self.config.shapes.len())];
        let color = self.config.colors[self.rng.gen_range(0..self.config.colors.len())];
        let state = EpisodeState {
            count: count.min(self.config.max_count),
            shape,
            color,
            steps_since_success: None,
            done: false,
        };
        self.render(&state)
    }

    /// Non-negative actions add an object, negative actions remove one.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if !action.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite action {action}")));
        }
        let mut state = self
            .state
            .take()
            .ok_or_else(|| Error::InvalidConfig("step called before reset".into()))?;
        state.count = next_count(state.count, action, self.config.max_count);
        let reward = if state.count == self.config.target_n { 1.0 } else { 0.0 };
        state.steps_since_success = match state.steps_since_success {
            Some(k) => Some(k + 1),
            None if reward > 0.0 => Some(0),
            None => None,
        };
        state.done = state
            .steps_since_success
            .is_some_and(|k| k >= self.config.grace_steps);
        let observation = self.render(&state);
        let done = state.done;
        self.state = Some(state);
        Ok(StepOutcome { observation, reward, done })
    }

    fn render(&mut self, state: &EpisodeState) -> Observation {
        let cfg = &self.config;
        let side = cfg.object_side();
        let size = cfg.image_size;
        let boxes = place_boxes(&mut self.rng, state.count, side, size);
        let plane = size * size;
        let mut pixels = vec![0u8; cfg.channels * plane];
        let gray = state.color.iter().copied().max().unwrap_or(255);
        for (bx, by) in boxes {
            for y in 0..side {
                for x in 0..side {
                    if !state.shape.covers(x, y, side) {
                        continue;
                    }
                    let i = (by + y) * size + bx + x;
                    if cfg.channels == 3 {
                        for c in 0..3 {
                            pixels[c * plane + i] = state.color[c];
                        }
                    } else {
                        pixels[i] = gray;
                    }
                }
            }
        }
        Observation {
            channels: cfg.channels,
            size,
            pixels,
            count: state.count,
        }
    }
}

/// Count after applying `action`; the sign is all that matters.
pub fn next_count(count: usize, action: f64, max_count: usize) -> usize {
    if action >= 0.0 {
        (count + 1).min(max_count)
    } else {
        count.saturating_sub(1)
    }
}

/// Top-left corners of `count` boxes, redrawn until pairwise disjoint or the
/// attempt budget runs out (after which overlap is accepted).
fn place_boxes(
    rng: &mut SeededRng,
    count: usize,
    side: usize,
    size: usize,
) -> Vec<(usize, usize)> {
    let span = size - side + 1;
    let draw = |rng: &mut SeededRng| -> Vec<(usize, usize)> {
        (0..count)
            .map(|_| (rng.gen_range(0..span), rng.gen_range(0..span)))
            .collect()
    };
    let disjoint = |boxes: &[(usize, usize)]| {
        boxes.iter().enumerate().all(|(i, a)| {
            boxes[i + 1..]
                .iter()
                .all(|b| a.0.abs_diff(b.0) >= side || a.1.abs_diff(b.1) >= side)
        })
    };
    let mut boxes = draw(rng);
    for _ in 1..MAX_PLACEMENT_ATTEMPTS {
        if disjoint(&boxes) {
            break;
        }
        boxes = draw(rng);
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seed: u64) -> CountingEnv {
        CountingEnv::new(CountingEnvConfig { seed, ..Default::default() }).unwrap()
    }

    fn force_count(env: &mut CountingEnv, count: usize) {
        let state = env.state.as_mut().unwrap();
        state.count = count;
        state.steps_since_success = None;
        state.done = false;
    }

    #[test]
    fn shapes_have_positive_area() {
        for shape in Shape::ALL {
            for side in [1, 2, 4, 8] {
                assert!(shape.area(side) > 0, "{shape:?} at side {side}");
            }
        }
    }

    #[test]
    fn zero_objects_render_dark() {
        let mut e = env(1);
        e.reset();
        force_count(&mut e, 1);
        let out = e.step(-1.0).unwrap();
        assert_eq!(out.observation.count, 0);
        assert!(out.observation.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn rendered_objects_match_count() {
        let mut e = env(3);
        for _ in 0..20 {
            let obs = e.reset();
            let st = e.state().unwrap();
            let area = st.shape.area(e.config().object_side());
            assert_eq!(obs.lit_pixels(), obs.count * area);
            let lit_colors: std::collections::BTreeSet<_> = (0..32 * 32)
                .filter(|&i| (0..3).any(|c| obs.pixels[c * 1024 + i] != 0))
                .map(|i| [obs.pixels[i], obs.pixels[1024 + i], obs.pixels[2048 + i]])
                .collect();
            assert!(lit_colors.len() <= 1);
        }
    }

    #[test]
    fn step_moves_count_by_sign_and_rewards_target() {
        let mut e = env(5);
        e.reset();
        force_count(&mut e, 3);
        let out = e.step(0.7).unwrap();
        assert_eq!(out.observation.count, 4);
        assert_eq!(out.reward, 1.0);
        assert!(!out.done);
        let out = e.step(0.2).unwrap();
        assert!(out.done);

        force_count(&mut e, 0);
        let out = e.step(-1.0).unwrap();
        assert_eq!(out.observation.count, 0);
        assert_eq!(out.reward, 0.0);

        assert!(e.step(f64::NAN).is_err());
    }

    #[test]
    fn positions_resample_but_count_is_deterministic() {
        let mut e = env(8);
        e.reset();
        force_count(&mut e, 5);
        let a = e.step(1.0).unwrap().observation;
        force_count(&mut e, 5);
        let b = e.step(1.0).unwrap().observation;
        assert_eq!(a.count, b.count);
        assert_ne!(a.pixels, b.pixels);
    }

    #[test]
    fn seeded_resets_are_identical() {
        assert_eq!(env(77).reset(), env(77).reset());
    }
}
