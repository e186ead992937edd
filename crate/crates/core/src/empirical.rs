//! Bisimulation from a finite dataset of transitions.
//!
//! Only observations that appear as sources (`O_D`) take part, and the
//! successor clause of the operator may only use actions observed from both
//! sides of a pair (the co-observed actions `A∩(x, y)`). Successors that never
//! appear as sources cannot be in the relation, so a pair that only leads
//! there is never separated through them.

use crate::bisim::AuxTolerance;
use crate::dataset::TransitionDataset;
use crate::error::Result;
use crate::relation::PairRelation;

/// Per-source lookup of observed successors and aux values.
#[derive(Debug, Clone)]
pub struct CoObservedIndex {
    num_actions: usize,
    /// `successor[o * |A| + a]`, when `(o, a)` was observed.
    successor: Vec<Option<usize>>,
    aux: Vec<Option<Vec<f64>>>,
}

impl CoObservedIndex {
    /// Builds the index after validating the dataset.
    pub fn new(dataset: &TransitionDataset) -> Result<Self> {
        dataset.validate()?;
        let n = dataset.num_observations;
        let mut successor = vec![None; n * dataset.num_actions];
        let mut aux = vec![None; n];
        for r in &dataset.records {
            successor[r.source * dataset.num_actions + r.action] = Some(r.successor);
            aux[r.source].get_or_insert_with(|| r.aux_value.clone());
        }
        Ok(Self {
            num_actions: dataset.num_actions,
            successor,
            aux,
        })
    }

    pub fn num_observations(&self) -> usize {
        self.aux.len()
    }

    pub fn is_source(&self, o: usize) -> bool {
        self.aux[o].is_some()
    }

    /// Membership mask of `O_D`.
    pub fn sources(&self) -> Vec<bool> {
        self.aux.iter().map(Option::is_some).collect()
    }

    pub fn num_sources(&self) -> usize {
        self.aux.iter().filter(|a| a.is_some()).count()
    }

    pub fn successor(&self, o: usize, a: usize) -> Option<usize> {
        self.successor[o * self.num_actions + a]
    }

    /// `A∩(x, y)` paired with the successors on each side.
    pub fn co_observed(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.num_actions).filter_map(move |a| {
            Some((a, self.successor(x, a)?, self.successor(y, a)?))
        })
    }
}

/// One application of the empirical operator `F_D`.
pub fn empirical_apply_f(index: &CoObservedIndex, r: &PairRelation, tol: AuxTolerance) -> PairRelation {
    let n = index.num_observations();
    let mut out = PairRelation::empty(n);
    for x in (0..n).filter(|&x| index.is_source(x)) {
        let px = index.aux[x].as_deref().unwrap_or_default();
        for y in (0..n).filter(|&y| index.is_source(y)) {
            let py = index.aux[y].as_deref().unwrap_or_default();
            if tol.differs(px, py) || index.co_observed(x, y).any(|(_, sx, sy)| r.contains(sx, sy)) {
                out.insert(x, y);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EmpiricalBisim {
    /// `R*_D`, indexed over the full observation space but only relating
    /// sources.
    pub relation: PairRelation,
    /// `B*_D = O_D² \ R*_D`, kept as a relation: under partial coverage it
    /// need not be transitive.
    pub complement: PairRelation,
    pub sources: Vec<bool>,
    pub iterations: usize,
    pub transitive_complement: bool,
}

/// Least fixed point of `F_D` from `∅`.
pub fn empirical_lfp(dataset: &TransitionDataset, tol: AuxTolerance) -> Result<EmpiricalBisim> {
    let index = CoObservedIndex::new(dataset)?;
    let n = index.num_observations();
    let mut relation = PairRelation::empty(n);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = empirical_apply_f(&index, &relation, tol);
        if next == relation {
            break;
        }
        relation = next;
    }
    let sources = index.sources();
    let mut complement = PairRelation::empty(n);
    for x in (0..n).filter(|&x| sources[x]) {
        for y in (0..n).filter(|&y| sources[y]) {
            if !relation.contains(x, y) {
                complement.insert(x, y);
            }
        }
    }
    let transitive_complement = is_transitive(&complement, &sources);
    if !transitive_complement {
        log::warn!("empirical bisimulation complement is not transitive; no partition is formed");
    }
    Ok(EmpiricalBisim {
        relation,
        complement,
        sources,
        iterations,
        transitive_complement,
    })
}

fn is_transitive(r: &PairRelation, members: &[bool]) -> bool {
    let n = r.num_observations();
    (0..n).filter(|&i| members[i]).all(|i| {
        (0..n)
            .filter(|&j| r.contains(i, j))
            .all(|j| (0..n).filter(|&k| r.contains(j, k)).all(|k| r.contains(i, k)))
    })
}
