use bisimlab::analysis::{
    collapse_ratio, nearest_centroid_accuracy, pairwise_distances, pca_2d, verify_no_collapse, EmbeddingSet,
};
use bisimlab::autodiff::Tensor;
use bisimlab::bisim::{
    apply_f, complement_partition, distinguishing_oracle, is_fixed_point, least_fixed_point, partition_refine,
    AuxTolerance,
};
use bisimlab::dataset::{TransitionDataset, TransitionRecord};
use bisimlab::empirical::empirical_lfp;
use bisimlab::mdp::{random_mdp, DeterministicMdp};
use bisimlab::model::perfect_fit;
use bisimlab::relation::PairRelation;
use bisimlab::train::{loss, AuxSource, LossWeights, TrainingData};
use proptest::prelude::*;

fn mdp_strategy(max_obs: usize) -> impl Strategy<Value = DeterministicMdp> {
    (1..=max_obs, 1usize..=4, 1usize..=3, any::<u64>())
        .prop_map(|(n, a, k, seed)| random_mdp(n, a, k, seed).unwrap())
}

/// A symmetric irreflexive relation drawn from `bits`.
fn relation_from_bits(n: usize, bits: &[bool]) -> PairRelation {
    let mut r = PairRelation::empty(n);
    let mut it = bits.iter().cycle();
    for i in 0..n {
        for j in (i + 1)..n {
            if *it.next().unwrap() {
                r.insert_symmetric(i, j);
            }
        }
    }
    r
}

fn union(a: &PairRelation, b: &PairRelation) -> PairRelation {
    PairRelation::from_pairs(a.num_observations(), a.pairs().chain(b.pairs()))
}

fn embeddings(rows: &[Vec<f64>], labels: &[usize]) -> EmbeddingSet {
    let d = rows[0].len();
    let v = Tensor::from_shape_fn((rows.len(), d), |(i, k)| rows[i][k]);
    let n = labels.iter().max().unwrap() + 1;
    EmbeddingSet::new(v, labels.to_vec(), n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_monotone(
        mdp in mdp_strategy(12),
        a in prop::collection::vec(any::<bool>(), 1..80),
        b in prop::collection::vec(any::<bool>(), 1..80),
    ) {
        let n = mdp.num_observations;
        let small = relation_from_bits(n, &a);
        let big = union(&small, &relation_from_bits(n, &b));
        let f_small = apply_f(&mdp, &small, AuxTolerance::EXACT).unwrap();
        let f_big = apply_f(&mdp, &big, AuxTolerance::EXACT).unwrap();
        prop_assert!(f_small.is_subset(&f_big));
        prop_assert!(f_big.is_symmetric() && f_big.is_irreflexive());
    }

    #[test]
    fn iteration_climbs_to_a_fixed_point(mdp in mdp_strategy(20)) {
        let fp = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap();
        let mut r = PairRelation::empty(mdp.num_observations);
        for &added in &fp.trace {
            let next = apply_f(&mdp, &r, AuxTolerance::EXACT).unwrap();
            prop_assert!(r.is_subset(&next));
            prop_assert_eq!(next.difference_len(&r), added);
            r = next;
        }
        prop_assert_eq!(&r, &fp.relation);
        prop_assert!(is_fixed_point(&mdp, &fp.relation, AuxTolerance::EXACT).unwrap());
        prop_assert!(fp.relation.is_symmetric() && fp.relation.is_irreflexive());
        // The complement is an equivalence, so R* is recovered from its blocks.
        let partition = complement_partition(&fp.relation).unwrap();
        prop_assert_eq!(partition.separated_pairs(), fp.relation);
    }

    #[test]
    fn engines_and_oracle_agree(mdp in mdp_strategy(15)) {
        let n = mdp.num_observations;
        let naive = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap().relation;
        let refined = partition_refine(&mdp).unwrap().partition.separated_pairs();
        let oracle = distinguishing_oracle(&mdp, n * n);
        prop_assert_eq!(&naive, &refined);
        prop_assert_eq!(&naive, &oracle);
    }

    #[test]
    fn bisimilarity_is_transitive(mdp in mdp_strategy(15)) {
        let r = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap().relation;
        let n = mdp.num_observations;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != k && !r.contains(i, j) && !r.contains(j, k) {
                        prop_assert!(!r.contains(i, k));
                    }
                }
            }
        }
    }

    #[test]
    fn empirical_relation_is_sound_and_monotone(
        mdp in mdp_strategy(12),
        keep in prop::collection::vec(any::<bool>(), 48),
    ) {
        let full = TransitionDataset::full_coverage(&mdp);
        let d2: Vec<TransitionRecord> = full
            .records
            .iter()
            .zip(keep.iter().cycle())
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        let d1: Vec<TransitionRecord> = d2.iter().step_by(2).cloned().collect();
        let with = |records: Vec<TransitionRecord>| TransitionDataset { records, ..full.clone() };
        let r1 = empirical_lfp(&with(d1), AuxTolerance::EXACT).unwrap().relation;
        let r2 = empirical_lfp(&with(d2), AuxTolerance::EXACT).unwrap();
        let r_full = empirical_lfp(&full, AuxTolerance::EXACT).unwrap().relation;
        let r_star = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap().relation;
        prop_assert!(r1.is_subset(&r2.relation));
        prop_assert!(r2.relation.is_subset(&r_star.restricted_to(&r2.sources)));
        prop_assert_eq!(r_full, r_star);
    }

    #[test]
    fn distances_are_a_metric(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..12),
    ) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| i % 2).collect();
        let dm = pairwise_distances(&embeddings(&rows, &labels)).values;
        let n = rows.len();
        for i in 0..n {
            prop_assert_eq!(dm[[i, i]], 0.0);
            for j in 0..n {
                prop_assert!(dm[[i, j]] >= 0.0);
                prop_assert_eq!(dm[[i, j]], dm[[j, i]]);
                for k in 0..n {
                    prop_assert!(dm[[i, k]] <= dm[[i, j]] + dm[[j, k]] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn collapse_check_is_monotone_in_eps(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 2..16),
        e1 in 0.0f64..2.0,
        e2 in 0.0f64..2.0,
    ) {
        let ids: Vec<usize> = (0..rows.len()).map(|i| i % 3).collect();
        let embs = embeddings(&rows, &ids).with_source_ids(ids.clone()).unwrap();
        let r = PairRelation::from_pairs(3, [(0, 1), (1, 0), (1, 2), (2, 1)]);
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let a = verify_no_collapse(&embs, &r, lo).unwrap();
        let b = verify_no_collapse(&embs, &r, hi).unwrap();
        prop_assert!(a.violations.len() <= b.violations.len());
        prop_assert_eq!(a.pairs_checked, b.pairs_checked);
    }

    #[test]
    fn pca_axes_are_orthonormal(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 3..20),
    ) {
        let labels = vec![0; rows.len()];
        let pca = pca_2d(&embeddings(&rows, &labels)).unwrap();
        let [u, v] = &pca.components;
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(dot.abs() < 1e-8);
        prop_assert!((nu - 1.0).abs() < 1e-8);
        prop_assert!((nv - 1.0).abs() < 1e-8);
        prop_assert!(pca.eigenvalues[0] + 1e-9 >= pca.eigenvalues[1]);
    }

    #[test]
    fn cluster_scores_stay_in_unit_interval(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 4..20),
    ) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| i % 3).collect();
        let embs = embeddings(&rows, &labels);
        let c = collapse_ratio(&embs).unwrap();
        let a = nearest_centroid_accuracy(&embs).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn zero_loss_parameters_never_collapse_distinguishable_pairs(mdp in mdp_strategy(10)) {
        let n = mdp.num_observations;
        let params = perfect_fit(&mdp, n + 2).unwrap();
        let data = TrainingData::tabular(&TransitionDataset::full_coverage(&mdp), n).unwrap();
        let all: Vec<usize> = (0..data.transitions.len()).collect();
        let weights = LossWeights { c_p: 1.0, dynamics: true, aux: true, decoder: false };
        let (report, _) = loss(&params, &data.batch(&all, &AuxSource::Reward), weights).unwrap();
        prop_assert_eq!(report.dyn_loss, 0.0);
        prop_assert_eq!(report.aux_loss, 0.0);

        let embs = data.holdout_embeddings(&params).unwrap();
        let r_star = least_fixed_point(&mdp, AuxTolerance::EXACT).unwrap().relation;
        let check = verify_no_collapse(&embs, &r_star, 1e-9).unwrap();
        prop_assert!(check.violations.is_empty());
    }

    #[test]
    fn generators_are_seed_deterministic(n in 1usize..30, a in 1usize..4, k in 1usize..4, seed in any::<u64>()) {
        prop_assert_eq!(random_mdp(n, a, k, seed).unwrap(), random_mdp(n, a, k, seed).unwrap());
    }

    #[test]
    fn dataset_round_trips(mdp in mdp_strategy(10)) {
        let d = TransitionDataset::full_coverage(&mdp);
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        prop_assert_eq!(&bytes[..4], b"BSLB");
        prop_assert_eq!(TransitionDataset::read_from(bytes.as_slice()).unwrap(), d);
    }
}
