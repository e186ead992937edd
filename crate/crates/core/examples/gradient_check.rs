//! Compares tape gradients of the joint loss with central finite differences
//! on a small model of the counting MDP.

use bisimlab::dataset::TransitionDataset;
use bisimlab::mdp::counting_abstract_mdp;
use bisimlab::model::ModelParams;
use bisimlab::train::{loss, AuxSource, LossWeights, TrainConfig, TrainingData};

fn main() -> bisimlab::Result<()> {
    let mdp = counting_abstract_mdp(8, 4)?;
    let data = TrainingData::tabular(&TransitionDataset::full_coverage(&mdp), 9)?;
    let config = TrainConfig {
        latent_dim: 8,
        encoder_hidden: vec![6],
        dynamics_hidden: 6,
        aux_hidden: 5,
        decoder_hidden: 4,
        ..Default::default()
    };
    let mut params = ModelParams::init(data.architecture(&config), 7);
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        if t.nrows() == 1 {
            // Keep ReLUs off their kink.
            t.iter_mut().enumerate().for_each(|(j, v)| *v = 0.1 + 0.01 * ((i + j) % 7) as f64);
        }
    }
    let batch = data.batch(&[0, 3, 7, 12], &AuxSource::Reward);
    let weights = LossWeights::from_config(&config);
    // The decoder probe reads a detached latent, so its loss only counts
    // towards the decoder's own gradient.
    let first_decoder = params.tensors().len() - 2 * params.decoder.layers.len();
    let objective = |p: &ModelParams, t: usize| {
        loss(p, &batch, weights).map(|(r, _)| if t >= first_decoder { r.decoder_loss } else { r.total })
    };

    let (report, grads) = loss(&params, &batch, weights)?;
    println!("dyn {:.4e} aux {:.4e} decoder {:.4e}", report.dyn_loss, report.aux_loss, report.decoder_loss);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, g) in grads.iter().enumerate() {
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let orig = params.tensors()[t][[r, c]];
            params.tensors_mut()[t][[r, c]] = orig + h;
            let plus = objective(&params, t)?;
            params.tensors_mut()[t][[r, c]] = orig - h;
            let minus = objective(&params, t)?;
            params.tensors_mut()[t][[r, c]] = orig;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((g[[r, c]] - fd).abs() / g[[r, c]].abs().max(fd.abs()).max(1e-6));
            checked += 1;
        }
    }
    println!("{checked} parameters, worst relative error {worst:.2e}");
    Ok(())
}
