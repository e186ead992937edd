//! Finite deterministic MDPs over dense observation and action indices.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Action index of "increment" in the abstract counting MDP.
pub const INC: usize = 0;
/// Action index of "decrement" in the abstract counting MDP.
pub const DEC: usize = 1;

/// A finite deterministic MDP `(O, A, mu, f, r)` together with an auxiliary
/// function `p : O -> R^d_p`.
///
/// `transition` is row-major: the successor of `(o, a)` lives at
/// `o * num_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicMdp {
    pub num_observations: usize,
    pub num_actions: usize,
    pub transition: Vec<usize>,
    pub aux: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
}

impl DeterministicMdp {
    #[inline]
    pub fn next(&self, obs: usize, action: usize) -> usize {
        self.transition[obs * self.num_actions + action]
    }

    pub fn aux_dim(&self) -> usize {
        self.aux.first().map_or(0, Vec::len)
    }

    /// All invariant violations; an empty list means the MDP is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let n = self.num_observations;
        if n == 0 {
            errors.push("num_observations must be positive".to_string());
        }
        if self.num_actions == 0 {
            errors.push("num_actions must be positive".to_string());
        }
        if self.transition.len() != n * self.num_actions {
            errors.push(format!(
                "transition table has {} entries, expected {}",
                self.transition.len(),
                n * self.num_actions
            ));
        }
        for (idx, &succ) in self.transition.iter().enumerate() {
            if succ >= n {
                let (o, a) = (idx / self.num_actions.max(1), idx % self.num_actions.max(1));
                errors.push(format!("transition out of range: f({o}, {a}) = {succ} >= {n}"));
            }
        }
        if self.aux.len() != n {
            errors.push(format!("aux has {} rows, expected {n}", self.aux.len()));
        }
        let d_p = self.aux_dim();
        if self.aux.iter().any(|row| row.len() != d_p) {
            errors.push("aux rows have differing dimensions".to_string());
        }
        if self.aux.iter().flatten().any(|v| !v.is_finite()) {
            errors.push("aux contains non-finite values".to_string());
        }
        if self.reward.len() != n {
            errors.push(format!("reward has {} entries, expected {n}", self.reward.len()));
        }
        if self.initial_dist.len() != n {
            errors.push(format!(
                "initial_dist has {} entries, expected {n}",
                self.initial_dist.len()
            ));
        }
        if self.initial_dist.iter().any(|&w| !(w >= 0.0)) {
            errors.push("initial_dist has negative or NaN entries".to_string());
        }
        let total: f64 = self.initial_dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            errors.push(format!("initial_dist not normalized: sums to {total}"));
        }
        errors
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let errors = self.validate();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(errors))
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// The count-level quotient of the counting environment: observation `k`
/// stands for "k objects on screen", `INC`/`DEC` are clamped to
/// `[0, max_count]`, and the auxiliary equals the reward `1{k == target_n}`.
pub fn counting_abstract_mdp(max_count: usize, target_n: usize) -> Result<DeterministicMdp> {
    if target_n > max_count {
        return Err(Error::InvalidConfig(format!(
            "target_n = {target_n} outside [0, {max_count}]"
        )));
    }
    let n = max_count + 1;
    let mut transition = Vec::with_capacity(2 * n);
    for k in 0..n {
        transition.push((k + 1).min(max_count));
        transition.push(k.saturating_sub(1));
    }
    let reward: Vec<f64> = (0..n).map(|k| if k == target_n { 1.0 } else { 0.0 }).collect();
    Ok(DeterministicMdp {
        num_observations: n,
        num_actions: 2,
        transition,
        aux: reward.iter().map(|&r| vec![r]).collect(),
        reward,
        initial_dist: uniform(n),
    })
}

/// Fuzzing input for the bisimulation engines: successors uniform over `O`,
/// scalar auxiliaries uniform over `{0, 1, ..., num_aux_values - 1}`.
pub fn random_mdp(
    num_obs: usize,
    num_actions: usize,
    num_aux_values: usize,
    seed: u64,
) -> Result<DeterministicMdp> {
    if num_obs == 0 || num_actions == 0 || num_aux_values == 0 {
        return Err(Error::InvalidConfig("random_mdp counts must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let transition = (0..num_obs * num_actions)
        .map(|_| rng.gen_range(0..num_obs))
        .collect();
    let reward: Vec<f64> = (0..num_obs)
        .map(|_| rng.gen_range(0..num_aux_values) as f64)
        .collect();
    Ok(DeterministicMdp {
        num_observations: num_obs,
        num_actions,
        transition,
        aux: reward.iter().map(|&r| vec![r]).collect(),
        reward,
        initial_dist: uniform(num_obs),
    })
}
