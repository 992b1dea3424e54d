//! Multi-modal causal representation learner: per-modality VAE encoders, a
//! shared-latent average, per-measurement decoders and a conditional
//! autoregressive flow whose parent gates form a learnable lower-triangular
//! adjacency.

mod eval;
mod io;
mod loss;
mod model;
mod nn;
mod tape;
mod train;

pub use eval::{
    abs_correlations, eval_recovery, extract_graph, max_weight_assignment, mcc, r2_per_latent,
    select_threshold, shd, EvalReport, GraphReport,
};
pub use io::{load_model, save_model, ModelManifest, ParamEntry, MODEL_MANIFEST};
pub use loss::{
    batch_moment_kl, kl_standard_normal, loss_recon, loss_sparsity, total_loss, Coefficients,
    LossParts,
};
pub use model::{
    adjacency_mask, reparameterize, Architecture, CrlModel, GaussianPosterior, IndLoss,
    ModalityDims, ModelDims, LOGVAR_CLAMP, LOG_SCALE_CLAMP,
};
pub use nn::{Adam, Mlp, Params};
pub use tape::{Mat, Tape, Var};
pub use train::{
    evaluate_loss, fit, gradient_check, largest_gradient_entry, train, EpochLoss, GradientCheck,
    Sabotage, TrainConfig, TrainTrace,
};

use crate::error::Result;
use crate::synth::SynthBatch;

/// Trains on a synthetic batch and scores the learned latents and graph
/// against its ground truth. `threshold: None` picks one with
/// [`select_threshold`] on this same batch.
pub fn train_and_evaluate(
    batch: &SynthBatch,
    cfg: &TrainConfig,
    threshold: Option<f64>,
) -> Result<(CrlModel, TrainTrace, EvalReport)> {
    let (model, trace) = train(&batch.x, cfg)?;
    let report = evaluate(&model, batch, threshold)?;
    Ok((model, trace, report))
}

/// Posterior-mean recovery metrics plus the thresholded graph.
pub fn evaluate(model: &CrlModel, batch: &SynthBatch, threshold: Option<f64>) -> Result<EvalReport> {
    let truth = crate::synth::hcat(&[batch.s.clone(), batch.z_all()]);
    evaluate_with_truth(model, &batch.x, &truth, &batch.spec.adjacency, threshold)
}

/// As [`evaluate`], with the true latents `[s, z]` and adjacency given
/// directly.
pub fn evaluate_with_truth(
    model: &CrlModel,
    x: &[Vec<Mat>],
    truth: &Mat,
    reference: &[Vec<u8>],
    threshold: Option<f64>,
) -> Result<EvalReport> {
    let post = model.encode(x)?;
    let mut report = eval_recovery(&post.latent_means(), truth, model.dims.d_s)?;
    let adj = model.adjacency();
    let t = match threshold {
        Some(t) => t,
        None => select_threshold(&adj, &report.z_assignment, reference)?,
    };
    report.graph = Some(extract_graph(&adj, t, Some(&report.z_assignment), reference)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_fig5_spec, sample, Mixing};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randm(r: usize, c: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    }

    fn small_dims() -> ModelDims {
        ModelDims {
            d_s: 1,
            modalities: vec![
                ModalityDims {
                    latent_dim: 2,
                    eta_dim: 1,
                    obs_dims: vec![3, 2],
                },
                ModalityDims {
                    latent_dim: 1,
                    eta_dim: 0,
                    obs_dims: vec![2],
                },
            ],
        }
    }

    fn small_arch() -> Architecture {
        Architecture {
            hidden: 5,
            depth: 2,
            flow_hidden: 3,
            ..Architecture::default()
        }
    }

    fn small_x(n: usize, seed: u64) -> Vec<Vec<Mat>> {
        vec![
            vec![randm(n, 3, seed), randm(n, 2, seed + 1)],
            vec![randm(n, 2, seed + 2)],
        ]
    }

    #[test]
    fn encode_shapes_and_row_independence() {
        let m = CrlModel::new(small_dims(), small_arch(), 1).unwrap();
        let x = small_x(6, 10);
        let p = m.encode(&x).unwrap();
        assert_eq!(p.z_mu[0].shape(), (6, 2));
        assert_eq!(p.z_mu[1].shape(), (6, 1));
        assert_eq!(p.eta_mu.len(), 1);
        assert_eq!(p.s_mu.shape(), (6, 1));
        assert_eq!(p.latent_means().shape(), (6, 4));

        // a row encodes the same alone as inside a batch
        let one: Vec<Vec<Mat>> = x
            .iter()
            .map(|xm| xm.iter().map(|a| a.rows(3, 1).into_owned()).collect())
            .collect();
        let q = m.encode(&one).unwrap();
        let diff = (q.latent_means().row(0) - p.latent_means().row(3)).amax();
        assert!(diff < 1e-12);

        assert!(m.encode(&small_x(6, 10)[..1]).is_err());
        let bad = vec![vec![randm(6, 4, 1), randm(6, 2, 1)], vec![randm(6, 2, 2)]];
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn reparameterize_moments() {
        let mu = Mat::from_element(20000, 1, 1.5);
        let lv = Mat::from_element(20000, 1, (0.25f64).ln());
        let z = reparameterize(&mu, &lv, &randm(20000, 1, 3)).unwrap();
        let mean = z.sum() / 20000.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20000.0;
        assert!((mean - 1.5).abs() < 0.01);
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn flow_is_identity_at_init() {
        let m = CrlModel::new(small_dims(), small_arch(), 2).unwrap();
        let z = randm(10, 3, 4);
        let s = randm(10, 1, 5);
        let eps = m.flow_to_eps(&z, &s).unwrap();
        assert!((eps - &z).amax() < 1e-15);
    }

    #[test]
    fn flow_inverts_after_jitter() {
        let m = CrlModel::new(small_dims(), small_arch(), 3).unwrap().jittered(0.3, 9);
        let z = randm(50, 3, 6);
        let s = randm(50, 1, 7);
        let eps = m.flow_to_eps(&z, &s).unwrap();
        let back = m.eps_to_z(&eps, &s).unwrap();
        assert!((back - z).amax() < 1e-8);
    }

    #[test]
    fn flow_with_linear_parents_recovers_exogenous_noise() {
        // zero MLP outputs plus adjacency equal to the true weights: the
        // flow undoes a linear SCM exactly
        let mut m = CrlModel::new(small_dims(), small_arch(), 4).unwrap();
        let mut w = Mat::zeros(3, 3);
        w[(1, 0)] = 0.8;
        w[(2, 1)] = -0.5;
        m.params.values[m.adjacency] = w.clone();
        let eps = randm(40, 3, 8);
        let mut z = Mat::zeros(40, 3);
        for r in 0..40 {
            z[(r, 0)] = eps[(r, 0)];
            z[(r, 1)] = 0.8 * z[(r, 0)] + eps[(r, 1)];
            z[(r, 2)] = -0.5 * z[(r, 1)] + eps[(r, 2)];
        }
        let got = m.flow_to_eps(&z, &Mat::zeros(40, 1)).unwrap();
        assert!((got - eps).amax() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mu = Mat::from_row_slice(1, 2, &[0.7, -1.2]);
        let lv = Mat::from_row_slice(1, 2, &[-0.5, 0.8]);
        let closed = kl_standard_normal(&mu, &lv).unwrap();
        let n = 100_000;
        let noise = randm(n, 2, 11);
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..2 {
                let sd = (0.5 * lv[(0, c)]).exp();
                let z = mu[(0, c)] + sd * noise[(r, c)];
                // log q - log p
                acc += -0.5 * noise[(r, c)].powi(2) - sd.ln() + 0.5 * z * z;
            }
        }
        let mc = acc / n as f64;
        assert!((mc - closed).abs() / closed < 0.01, "{mc} vs {closed}");
    }

    #[test]
    fn decoders_only_see_their_modality() {
        let m = CrlModel::new(small_dims(), small_arch(), 5).unwrap().jittered(0.1, 1);
        let x = small_x(8, 20);
        let mut perturbed = x.clone();
        perturbed[1][0] = randm(8, 2, 99);
        // modality-0 reconstructions depend on modality 1 only through s,
        // which the decoders never read
        let sab = largest_gradient_entry(&m, &x, &Coefficients::SYNTHETIC, 0).unwrap();
        assert!(sab.param < m.params.values.len());
        for (k, dec) in m.decoders[0].iter().enumerate() {
            let (wi, _) = dec.layers[0];
            assert_eq!(m.params.values[wi].nrows(), 3, "decoder (0,{k}) input width");
        }
        let a = m.encode(&x).unwrap();
        let b = m.encode(&perturbed).unwrap();
        assert_eq!(a.z_mu[0], b.z_mu[0]);
        assert_ne!(a.s_mu, b.s_mu);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = CrlModel::new(small_dims(), small_arch(), 6).unwrap().jittered(0.2, 3);
        let x = small_x(7, 30);
        let c = Coefficients {
            recon: 1.0,
            ind: 0.5,
            sparsity: 0.1,
        };
        let g = gradient_check(&m, &x, &c, 1, None).unwrap();
        assert_eq!(g.checked, m.params.count());
        assert!(g.max_rel_error <= 1e-4, "{g:?}");
        let sab = largest_gradient_entry(&m, &x, &c, 1).unwrap();
        let bad = gradient_check(&m, &x, &c, 1, Some(sab)).unwrap();
        assert!(bad.max_rel_error > 0.1);

        let mut moments = m.clone();
        moments.arch.ind_loss = IndLoss::Moments;
        let g = gradient_check(&moments, &x, &c, 1, None).unwrap();
        assert!(g.max_rel_error <= 1e-4, "{g:?}");
    }

    fn tiny_spec() -> crate::synth::SynthSpec {
        let mut spec = default_fig5_spec();
        spec.mixing = Mixing::Identity;
        spec
    }

    #[test]
    fn short_run_reduces_reconstruction() {
        let batch = sample(&tiny_spec(), 300).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            lr: 3e-3,
            batch_size: 64,
            seed: 1,
            arch: small_arch(),
            ..TrainConfig::default()
        };
        let (_, trace) = train(&batch.x, &cfg).unwrap();
        let first = trace.epochs[0].recon;
        let last = trace.epochs.last().unwrap().recon;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let batch = sample(&tiny_spec(), 120).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-3,
            batch_size: 32,
            seed: 4,
            arch: small_arch(),
            ..TrainConfig::default()
        };
        let (a, ta) = train(&batch.x, &cfg).unwrap();
        let (b, tb) = train(&batch.x, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ta, tb);

        let dir = tempfile::tempdir().unwrap();
        save_model(&a, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        for (x, y) in back.params.values.iter().zip(&a.params.values) {
            assert!((x - y).amax() <= 1e-6 * y.amax().max(1.0));
        }
        // a second save of the reloaded model is exact
        let dir2 = tempfile::tempdir().unwrap();
        save_model(&back, dir2.path()).unwrap();
        assert_eq!(load_model(dir2.path()).unwrap().params, back.params);

        let r = evaluate(&a, &batch, None).unwrap();
        assert!(r.mcc > 0.0 && r.mcc <= 1.0);
        assert_eq!(r.z_assignment.len(), 4);
    }

    #[test]
    fn bad_config_is_rejected() {
        let batch = sample(&tiny_spec(), 20).unwrap();
        let mut cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        cfg.lr = 0.0;
        assert!(train(&batch.x, &cfg).is_err());
        cfg.lr = 1e-3;
        cfg.latent_dims = vec![2];
        assert!(train(&batch.x, &cfg).is_err());
    }
}
