//! Collapse diagnostics on two hand-built encoders for the counting MDP: the
//! zero-loss construction, which keeps every count apart, and a copy whose
//! encoder output is squashed so counts 0..=3 share one embedding.

use bisimlab::analysis::{collapse_ratio, median_pairwise_distance, nearest_centroid_accuracy, pca_2d, verify_no_collapse};
use bisimlab::bisim::{least_fixed_point, AuxTolerance};
use bisimlab::dataset::TransitionDataset;
use bisimlab::mdp::counting_abstract_mdp;
use bisimlab::model::perfect_fit;
use bisimlab::train::TrainingData;

fn main() -> bisimlab::Result<()> {
    let mdp = counting_abstract_mdp(8, 4)?;
    let r_star = least_fixed_point(&mdp, AuxTolerance::EXACT)?.relation;
    let data = TrainingData::tabular(&TransitionDataset::full_coverage(&mdp), 90)?;
    let exact = perfect_fit(&mdp, 11)?;

    let mut squashed = exact.clone();
    // The encoder maps one-hot ids through its first layer's rows.
    let first = &mut squashed.encoder.layers[0].weight;
    let row0 = first.row(0).to_owned();
    for k in 1..4 {
        first.row_mut(k).assign(&row0);
    }

    for (name, params) in [("zero-loss", &exact), ("squashed", &squashed)] {
        let embs = data.holdout_embeddings(params)?;
        let eps = 1e-3 * median_pairwise_distance(&embs);
        let report = verify_no_collapse(&embs, &r_star, eps)?;
        println!(
            "{name}: nca {:.3} collapse_ratio {:.3} verdict {:?} ({} of {} pairs collapsed)",
            nearest_centroid_accuracy(&embs)?,
            collapse_ratio(&embs)?,
            report.verdict,
            report.violations.len(),
            report.pairs_checked
        );
        let pca = pca_2d(&embs)?;
        println!("  explained variance {:.3} {:.3}", pca.explained_variance[0], pca.explained_variance[1]);
    }
    Ok(())
}
