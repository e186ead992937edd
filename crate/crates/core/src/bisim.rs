//! Largest bisimulation of a deterministic MDP.
//!
//! Three independent routes compute the same object:
//!
//! * [`least_fixed_point`] iterates the distinguishability operator
//!   `F(R) = {(o,o') : p(o) != p(o')} ∪ {(o,o') : ∃a. (f(o,a), f(o',a)) ∈ R}`
//!   from the empty relation, recomputing every pair on each sweep;
//! * [`partition_refine`] splits the aux partition on successor blocks until
//!   it is stable (the coarsest partition refining `p` and closed under `f`);
//! * [`distinguishing_oracle`] searches synchronized action sequences from
//!   every pair, looking for one that ends in disagreeing aux values.
//!
//! The largest bisimulation `B*` is the complement of the fixed point `R*`.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::DeterministicMdp;
use crate::relation::{PairRelation, Partition};

/// Rows at or above this size are swept in parallel.
const PARALLEL_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AuxTolerance(pub f64);

impl AuxTolerance {
    pub const EXACT: Self = Self(0.0);

    #[inline]
    pub fn differs(self, a: &[f64], b: &[f64]) -> bool {
        if self.0 == 0.0 {
            a != b
        } else {
            a.iter().zip(b).any(|(x, y)| (x - y).abs() > self.0)
        }
    }
}

fn check_dims(mdp: &DeterministicMdp, r: &PairRelation) -> Result<()> {
    if r.num_observations() != mdp.num_observations {
        return Err(Error::DimensionMismatch(format!(
            "relation over {} observations, MDP has {}",
            r.num_observations(),
            mdp.num_observations
        )));
    }
    Ok(())
}

/// One application of the distinguishability operator.
pub fn apply_f(mdp: &DeterministicMdp, r: &PairRelation, tol: AuxTolerance) -> Result<PairRelation> {
    check_dims(mdp, r)?;
    let n = mdp.num_observations;
    let mut out = PairRelation::empty(n);
    let fill_row = |i: usize, row: &mut [u64]| {
        for j in 0..n {
            let related = tol.differs(&mdp.aux[i], &mdp.aux[j])
                || (0..mdp.num_actions).any(|a| r.contains(mdp.next(i, a), mdp.next(j, a)));
            if related {
                row[j / 64] |= 1 << (j % 64);
            }
        }
    };
    let words = n.div_ceil(64);
    if n >= PARALLEL_ROWS {
        out.raw_bits_mut()
            .par_chunks_mut(words)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for i in 0..n {
            fill_row(i, out.row_mut(i));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub relation: PairRelation,
    /// Number of operator applications, including the final one that
    /// confirmed stability.
    pub iterations: usize,
    /// `|R^(t+1) \ R^(t)|` for every application.
    pub trace: Vec<usize>,
}

/// Iterates `F` from `∅` with full sweeps until `F(R) = R`.
pub fn least_fixed_point(mdp: &DeterministicMdp, tol: AuxTolerance) -> Result<FixedPoint> {
    mdp.ensure_valid()?;
    let mut current = PairRelation::empty(mdp.num_observations);
    let mut trace = Vec::new();
    loop {
        let next = apply_f(mdp, &current, tol)?;
        let added = next.difference_len(&current);
        trace.push(added);
        if added == 0 {
            debug_assert_eq!(next, current);
            return Ok(FixedPoint {
                relation: current,
                iterations: trace.len(),
                trace,
            });
        }
        current = next;
    }
}

/// `F(R) = R`.
pub fn is_fixed_point(mdp: &DeterministicMdp, r: &PairRelation, tol: AuxTolerance) -> Result<bool> {
    Ok(apply_f(mdp, r, tol)? == *r)
}

/// Equivalence classes of the complement of `r`.
///
/// Fails when the complement is not an equivalence relation, which cannot
/// happen for fixed points of `F` on a total deterministic MDP but does happen
/// for empirical relations under partial coverage.
pub fn complement_partition(r: &PairRelation) -> Result<Partition> {
    let n = r.num_observations();
    if let Some(i) = (0..n).find(|&i| r.contains(i, i)) {
        return Err(Error::NonTransitiveComplement(format!(
            "observation {i} is related to itself"
        )));
    }
    if let Some((i, j)) = r.pairs().find(|&(i, j)| !r.contains(j, i)) {
        return Err(Error::NonTransitiveComplement(format!(
            "({i}, {j}) is related but ({j}, {i}) is not"
        )));
    }
    let labels: Vec<&[u64]> = (0..n).map(|i| r.row(i)).collect();
    for i in 0..n {
        for j in 0..n {
            if r.contains(i, j) || r.row(i) == r.row(j) {
                continue;
            }
            // (i, j) is in the complement but the rows differ somewhere.
            let k = (0..n)
                .find(|&k| r.contains(i, k) != r.contains(j, k))
                .expect("rows differ");
            let (a, b) = if r.contains(i, k) { (i, j) } else { (j, i) };
            return Err(Error::NonTransitiveComplement(format!(
                "({a}, {b}) and ({b}, {k}) are in the complement but ({a}, {k}) is not"
            )));
        }
    }
    Ok(Partition::from_labels(&labels))
}

/// Blocks of `B* = O² \ R*`, after checking that `R*` is a fixed point.
pub fn quotient(r_star: &PairRelation, mdp: &DeterministicMdp, tol: AuxTolerance) -> Result<Partition> {
    if !is_fixed_point(mdp, r_star, tol)? {
        return Err(Error::InvalidConfig(
            "quotient requires a fixed point of the distinguishability operator".into(),
        ));
    }
    complement_partition(r_star)
}

fn aux_key(row: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 compare equal and must share a block.
    row.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// Moore-style refinement: start from the partition induced by `p` and split
/// every block by the tuple of successor blocks until the block count stops
/// growing. Blocks are numbered by their smallest member.
pub fn partition_refine(mdp: &DeterministicMdp) -> Result<RefineOutcome> {
    mdp.ensure_valid()?;
    let keys: Vec<Vec<u64>> = mdp.aux.iter().map(|row| aux_key(row)).collect();
    let mut partition = Partition::from_labels(&keys);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let signatures: Vec<Vec<usize>> = (0..mdp.num_observations)
            .map(|o| {
                std::iter::once(partition.block_of[o])
                    .chain((0..mdp.num_actions).map(|a| partition.block_of[mdp.next(o, a)]))
                    .collect()
            })
            .collect();
        let refined = Partition::from_labels(&signatures);
        if refined.num_blocks == partition.num_blocks {
            return Ok(RefineOutcome { partition: refined, rounds });
        }
        partition = refined;
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub partition: Partition,
    pub rounds: usize,
}

/// Pairs `(o, o')` for which some action sequence of length at most
/// `max_depth`, applied to both, reaches observations with different aux
/// values.
///
/// Runs a breadth-first search over the synchronized product from every
/// starting pair; sequences that lead to the same pair of observations are
/// explored once. `max_depth >= |O|²` makes the result exact.
pub fn distinguishing_oracle(mdp: &DeterministicMdp, max_depth: usize) -> PairRelation {
    let n = mdp.num_observations;
    let mut out = PairRelation::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if shortest_distinguishing_sequence(mdp, i, j, max_depth).is_some() {
                out.insert_symmetric(i, j);
            }
        }
    }
    out
}

/// The shortest action sequence (of length at most `max_depth`) after which
/// `i` and `j` have different aux values, if any.
pub fn shortest_distinguishing_sequence(
    mdp: &DeterministicMdp,
    i: usize,
    j: usize,
    max_depth: usize,
) -> Option<Vec<usize>> {
    let differs = |x: usize, y: usize| mdp.aux[x] != mdp.aux[y];
    let mut parent: HashMap<(usize, usize), ((usize, usize), usize)> = HashMap::new();
    let mut queue = VecDeque::from([((i, j), 0usize)]);
    let mut seen = std::collections::HashSet::from([(i, j)]);
    while let Some(((x, y), depth)) = queue.pop_front() {
        if differs(x, y) {
            let mut seq = Vec::with_capacity(depth);
            let mut cur = (x, y);
            while let Some(&(prev, a)) = parent.get(&cur) {
                seq.push(a);
                cur = prev;
            }
            seq.reverse();
            return Some(seq);
        }
        if depth == max_depth {
            continue;
        }
        for a in 0..mdp.num_actions {
            let next = (mdp.next(x, a), mdp.next(y, a));
            if seen.insert(next) {
                parent.insert(next, ((x, y), a));
                queue.push_back((next, depth + 1));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{counting_abstract_mdp, random_mdp};

    /// o0 -> o1 -> o2 -> o2 under one action, p = (0, 0, 1).
    pub(crate) fn chain() -> DeterministicMdp {
        DeterministicMdp {
            num_observations: 3,
            num_actions: 1,
            transition: vec![1, 2, 2],
            aux: vec![vec![0.0], vec![0.0], vec![1.0]],
            reward: vec![0.0, 0.0, 1.0],
            initial_dist: vec![1.0 / 3.0; 3],
        }
    }

    fn constant_aux(mut mdp: DeterministicMdp) -> DeterministicMdp {
        for row in &mut mdp.aux {
            row.fill(0.5);
        }
        mdp
    }

    /// Clause 1 alone, by enumerating every ordered pair.
    fn aux_disagreement(mdp: &DeterministicMdp) -> PairRelation {
        let n = mdp.num_observations;
        let mut r = PairRelation::empty(n);
        for i in 0..n {
            for j in 0..n {
                if mdp.aux[i] != mdp.aux[j] {
                    r.insert(i, j);
                }
            }
        }
        r
    }

    #[test]
    fn f_of_empty() {
        let mdp = constant_aux(random_mdp(6, 2, 1, 1).unwrap());
        assert!(apply_f(&mdp, &PairRelation::empty(6), AuxTolerance::EXACT)
            .unwrap()
            .is_empty());

        let counting = counting_abstract_mdp(8, 4).unwrap();
        let f0 = apply_f(&counting, &PairRelation::empty(9), AuxTolerance::EXACT).unwrap();
        assert_eq!(f0, aux_disagreement(&counting));
        let expected =
            PairRelation::from_pairs(9, (0..9).filter(|&k| k != 4).flat_map(|k| [(4, k), (k, 4)]));
        assert_eq!(f0, expected);
    }

    #[test]
    fn f_on_chain_adds_predecessor_pair() {
        let mdp = chain();
        let r = PairRelation::from_pairs(3, [(1, 2), (2, 1), (0, 2), (2, 0)]);
        let next = apply_f(&mdp, &r, AuxTolerance::EXACT).unwrap();
        assert!(next.contains(0, 1) && next.contains(1, 0));
        assert!(r.is_subset(&next));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mdp = chain();
        assert!(matches!(
            apply_f(&mdp, &PairRelation::empty(4), AuxTolerance::EXACT),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn chain_fixed_point_separates_everything() {
        let mdp = chain();
        let fp = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap();
        assert_eq!(fp.relation.len(), 6);
        assert_eq!(fp.relation, distinguishing_oracle(&mdp, 3));
        let q = quotient(&fp.relation, &mdp, AuxTolerance::EXACT).unwrap();
        assert_eq!(q, Partition::singletons(3));
        assert_eq!(shortest_distinguishing_sequence(&mdp, 0, 1, 9), Some(vec![0]));
    }

    #[test]
    fn counting_quotient_has_nine_singletons() {
        let mdp = counting_abstract_mdp(8, 4).unwrap();
        let fp = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap();
        assert_eq!(fp.relation.len(), 72);
        assert!(fp.iterations <= 81);
        let q = quotient(&fp.relation, &mdp, AuxTolerance::EXACT).unwrap();
        assert_eq!(q, Partition::singletons(9));
        assert_eq!(partition_refine(&mdp).unwrap().partition, q);
        assert_eq!(distinguishing_oracle(&mdp, 8), fp.relation);
    }

    #[test]
    fn constant_aux_collapses_to_one_block() {
        let mdp = constant_aux(random_mdp(10, 3, 1, 4).unwrap());
        let fp = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap();
        assert!(fp.relation.is_empty());
        assert_eq!(fp.iterations, 1);
        assert_eq!(quotient(&fp.relation, &mdp, AuxTolerance::EXACT).unwrap().num_blocks, 1);
        assert_eq!(partition_refine(&mdp).unwrap().partition.num_blocks, 1);
    }

    #[test]
    fn oracle_depth_zero_is_clause_one() {
        let mdp = random_mdp(12, 2, 3, 5).unwrap();
        assert_eq!(distinguishing_oracle(&mdp, 0), aux_disagreement(&mdp));
    }

    #[test]
    fn quotient_rejects_non_fixed_points_and_intransitive_complements() {
        let mdp = chain();
        let r = PairRelation::from_pairs(3, [(0, 2), (2, 0)]);
        assert!(quotient(&r, &mdp, AuxTolerance::EXACT).is_err());
        // complement holds (0,1) and (1,2) but not (0,2)
        assert!(matches!(
            complement_partition(&r),
            Err(Error::NonTransitiveComplement(..))
        ));
    }

    #[test]
    fn tolerance_merges_close_aux_values() {
        let mut mdp = chain();
        mdp.aux[2] = vec![1e-9];
        let exact = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap();
        let loose = least_fixed_point(&mdp, AuxTolerance(1e-6)).unwrap();
        assert_eq!(exact.relation.len(), 6);
        assert!(loose.relation.is_empty());
    }
}
