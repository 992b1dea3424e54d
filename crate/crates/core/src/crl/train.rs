use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::Coefficients;
use super::model::{Architecture, CrlModel, ModalityDims, ModelDims};
use super::nn::Adam;
use super::tape::{Mat, Tape};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, stream_rng};
use crate::synth::hcat;

const SHUFFLE: u64 = 11;
const NOISE: u64 = 12;
const INIT: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub coefficients: Coefficients,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d_s: usize,
    /// Latent width per modality.
    pub latent_dims: Vec<usize>,
    /// Width of each modality's measurement-noise latent.
    pub eta_dim: usize,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            coefficients: Coefficients::SYNTHETIC,
            lr: 3e-4,
            epochs: 3000,
            batch_size: 128,
            seed: 0,
            d_s: 1,
            latent_dims: vec![2, 2],
            eta_dim: 1,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return Err(Error::InvalidConfig("every modality needs a positive latent dim".into()));
        }
        Ok(())
    }

    /// Model dimensions for data whose measurement widths are `obs_dims[m][k]`.
    pub fn model_dims(&self, obs_dims: &[Vec<usize>]) -> Result<ModelDims> {
        if obs_dims.len() != self.latent_dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "data has {} modalities, config declares {}",
                obs_dims.len(),
                self.latent_dims.len()
            )));
        }
        Ok(ModelDims {
            d_s: self.d_s,
            modalities: obs_dims
                .iter()
                .zip(&self.latent_dims)
                .map(|(o, &d)| ModalityDims {
                    latent_dim: d,
                    eta_dim: self.eta_dim,
                    obs_dims: o.clone(),
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub recon: f64,
    pub ind: f64,
    pub sparsity: f64,
}

/// Row-weighted mean of the minibatch losses of every epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
}

fn measurement_widths(x: &[Vec<Mat>]) -> Vec<Vec<usize>> {
    x.iter().map(|m| m.iter().map(|a| a.ncols()).collect()).collect()
}

fn select_rows(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn split_targets(model: &CrlModel, inputs: &[Mat]) -> Vec<Vec<Mat>> {
    model
        .dims
        .modalities
        .iter()
        .zip(inputs)
        .map(|(md, x)| {
            let mut c = 0;
            md.obs_dims
                .iter()
                .map(|&d| {
                    let block = x.columns(c, d).into_owned();
                    c += d;
                    block
                })
                .collect()
        })
        .collect()
}

fn draw_noise(model: &CrlModel, n: usize, seed: u64, stream: u64) -> Vec<Mat> {
    let mut rng = stream_rng(seed, stream);
    model
        .noise_shapes(n)
        .into_iter()
        .map(|(r, c)| Mat::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng)))
        .collect()
}

/// Fits a fresh model to `x` (`x[m][k]` is measurement `k` of modality `m`)
/// with minibatch Adam. Deterministic given `cfg.seed`.
pub fn train(x: &[Vec<Mat>], cfg: &TrainConfig) -> Result<(CrlModel, TrainTrace)> {
    cfg.validate()?;
    let dims = cfg.model_dims(&measurement_widths(x))?;
    let mut model = CrlModel::new(dims, cfg.arch.clone(), mix_seed(cfg.seed, &[INIT]))?;
    let trace = fit(&mut model, x, cfg)?;
    Ok((model, trace))
}

/// Continues training `model` on `x`.
pub fn fit(model: &mut CrlModel, x: &[Vec<Mat>], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let n = model.check_inputs(x)?;
    let inputs: Vec<Mat> = x.iter().map(|xm| hcat(xm)).collect();
    let alphas = cfg.coefficients.as_array();
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    let noise_seed = mix_seed(cfg.seed, &[NOISE]);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(mix_seed(cfg.seed, &[SHUFFLE]), epoch as u64));
        let mut sums = [0.0; 4];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Mat> = inputs.iter().map(|m| select_rows(m, idx)).collect();
            let targets = split_targets(model, &batch);
            let stream = (epoch as u64) << 32 | b as u64;
            let noise = draw_noise(model, idx.len(), noise_seed, stream);
            let mut tape = Tape::new();
            let l = model.objective(&mut tape, &batch, &targets, &noise, alphas);
            let total = tape.scalar(l.total);
            if !total.is_finite() {
                return Err(Error::Divergence { epoch, loss: total });
            }
            let mut grads = model.params.zeros_like();
            tape.backward(l.total, &mut grads);
            opt.update(&mut model.params, &grads);
            let w = idx.len() as f64;
            sums[0] += w * total;
            sums[1] += w * tape.scalar(l.recon);
            sums[2] += w * tape.scalar(l.ind);
            sums[3] += w * tape.scalar(l.sparsity);
        }
        if !model.params.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        let nf = n as f64;
        trace.epochs.push(EpochLoss {
            total: sums[0] / nf,
            recon: sums[1] / nf,
            ind: sums[2] / nf,
            sparsity: sums[3] / nf,
        });
    }
    Ok(trace)
}

/// Objective parts and total on the whole of `x` with a fixed noise draw.
pub fn evaluate_loss(
    model: &CrlModel,
    x: &[Vec<Mat>],
    coefficients: &Coefficients,
    seed: u64,
) -> Result<EpochLoss> {
    let n = model.check_inputs(x)?;
    let inputs: Vec<Mat> = x.iter().map(|xm| hcat(xm)).collect();
    let targets = split_targets(model, &inputs);
    let noise = draw_noise(model, n, seed, 0);
    let mut tape = Tape::new();
    let l = model.objective(&mut tape, &inputs, &targets, &noise, coefficients.as_array());
    Ok(EpochLoss {
        total: tape.scalar(l.total),
        recon: tape.scalar(l.recon),
        ind: tape.scalar(l.ind),
        sparsity: tape.scalar(l.sparsity),
    })
}

/// Deliberate gradient corruption, for checking that the check can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sabotage {
    pub param: usize,
    pub entry: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Tape and finite-difference values at the worst entry.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares tape gradients of the total loss with central differences
/// (step 1e-4) on every parameter entry. Relative error is
/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn gradient_check(
    model: &CrlModel,
    x: &[Vec<Mat>],
    coefficients: &Coefficients,
    seed: u64,
    sabotage: Option<Sabotage>,
) -> Result<GradientCheck> {
    let n = model.check_inputs(x)?;
    let inputs: Vec<Mat> = x.iter().map(|xm| hcat(xm)).collect();
    let targets = split_targets(model, &inputs);
    let noise = draw_noise(model, n, seed, 0);
    let alphas = coefficients.as_array();

    let mut tape = Tape::new();
    let l = model.objective(&mut tape, &inputs, &targets, &noise, alphas);
    let mut grads = model.params.zeros_like();
    tape.backward(l.total, &mut grads);
    if let Some(s) = sabotage {
        grads[s.param][s.entry] = -grads[s.param][s.entry];
    }

    let loss_at = |m: &CrlModel| {
        let mut t = Tape::new();
        let l = m.objective(&mut t, &inputs, &targets, &noise, alphas);
        t.scalar(l.total)
    };
    let h = 1e-4;
    let mut probe = model.clone();
    let mut worst = (0.0, String::new(), 0.0, 0.0);
    let mut checked = 0;
    for p in 0..model.params.values.len() {
        for e in 0..model.params.values[p].len() {
            let orig = model.params.values[p][e];
            probe.params.values[p][e] = orig + h;
            let up = loss_at(&probe);
            probe.params.values[p][e] = orig - h;
            let down = loss_at(&probe);
            probe.params.values[p][e] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grads[p][e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if rel > worst.0 {
                worst = (rel, format!("{}[{e}]", model.params.names[p]), a, fd);
            }
            checked += 1;
        }
    }
    Ok(GradientCheck {
        max_rel_error: worst.0,
        worst_param: worst.1,
        worst_analytic: worst.2,
        worst_numeric: worst.3,
        checked,
    })
}

/// Entry with the largest gradient magnitude, the natural sabotage target.
pub fn largest_gradient_entry(
    model: &CrlModel,
    x: &[Vec<Mat>],
    coefficients: &Coefficients,
    seed: u64,
) -> Result<Sabotage> {
    let n = model.check_inputs(x)?;
    let inputs: Vec<Mat> = x.iter().map(|xm| hcat(xm)).collect();
    let targets = split_targets(model, &inputs);
    let noise = draw_noise(model, n, seed, 0);
    let mut tape = Tape::new();
    let l = model.objective(&mut tape, &inputs, &targets, &noise, coefficients.as_array());
    let mut grads = model.params.zeros_like();
    tape.backward(l.total, &mut grads);
    let mut best = (0.0, Sabotage { param: 0, entry: 0 });
    for (p, g) in grads.iter().enumerate() {
        for (e, v) in g.iter().enumerate() {
            if v.abs() > best.0 {
                best = (v.abs(), Sabotage { param: p, entry: e });
            }
        }
    }
    Ok(best.1)
}
