use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, Params};
use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::synth::hcat;

/// Latent layout of one modality and the widths of its measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub latent_dim: usize,
    /// Width of the per-modality measurement-noise latent.
    pub eta_dim: usize,
    pub obs_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_s: usize,
    pub modalities: Vec<ModalityDims>,
}

impl ModelDims {
    pub fn total_latents(&self) -> usize {
        self.modalities.iter().map(|m| m.latent_dim).sum()
    }

    pub fn latent_offset(&self, m: usize) -> usize {
        self.modalities[..m].iter().map(|x| x.latent_dim).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig("no modalities".into()));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.latent_dim == 0 || m.obs_dims.is_empty() || m.obs_dims.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "modality {i}: latent_dim and every measurement width must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// How the independence term treats `z_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndLoss {
    /// Closed-form KL of every posterior block to N(0, I), plus the KL of a
    /// Gaussian with the batch moments of `eps_hat` to N(0, I).
    Moments,
    /// KL of the `eta_hat` and `s_hat` posteriors to N(0, I), and for
    /// `z_hat` the negative posterior entropy minus the log-density of
    /// `z_hat` under the flow with a standard-normal base.
    #[default]
    FlowPrior,
}

/// Network shape and objective variant; everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden: usize,
    /// Hidden layers per encoder/decoder network.
    pub depth: usize,
    pub flow_hidden: usize,
    /// Add `sum_j A_ij z_j` to the flow shift on top of the network output.
    pub linear_parent_shift: bool,
    pub ind_loss: IndLoss,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: 32,
            depth: 2,
            flow_hidden: 16,
            linear_parent_shift: true,
            ind_loss: IndLoss::FlowPrior,
        }
    }
}

pub const LOGVAR_CLAMP: f64 = 10.0;
pub const LOG_SCALE_CLAMP: f64 = 5.0;

/// Diagonal Gaussian posterior, one matrix per block with samples in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub z_mu: Vec<Mat>,
    pub z_logvar: Vec<Mat>,
    pub eta_mu: Vec<Mat>,
    pub eta_logvar: Vec<Mat>,
    pub s_mu: Mat,
    pub s_logvar: Mat,
}

impl GaussianPosterior {
    /// Posterior means as `[s_hat, z_hat_1, ..., z_hat_M]` columns.
    pub fn latent_means(&self) -> Mat {
        let mut blocks = vec![self.s_mu.clone()];
        blocks.extend(self.z_mu.iter().cloned());
        hcat(&blocks)
    }

    pub fn z_means(&self) -> Mat {
        hcat(&self.z_mu)
    }

    pub fn eta_means(&self) -> Mat {
        hcat(&self.eta_mu)
    }
}

/// `mu + exp(logvar / 2) * noise`.
pub fn reparameterize(mu: &Mat, logvar: &Mat, noise: &Mat) -> Result<Mat> {
    if mu.shape() != logvar.shape() || mu.shape() != noise.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mu {:?}, logvar {:?}, noise {:?}",
            mu.shape(),
            logvar.shape(),
            noise.shape()
        )));
    }
    Ok(mu + logvar.map(|l| (0.5 * l).exp()).component_mul(noise))
}

/// Encoders, per-measurement decoders, masked adjacency and per-latent
/// affine flows.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlModel {
    pub dims: ModelDims,
    pub arch: Architecture,
    pub params: Params,
    pub encoders: Vec<Mlp>,
    pub decoders: Vec<Vec<Mlp>>,
    pub adjacency: usize,
    pub flow_shift: Vec<Mlp>,
    pub flow_log_scale: Vec<Mlp>,
}

/// Strictly lower-triangular 0/1 mask.
pub fn adjacency_mask(l: usize) -> Mat {
    Mat::from_fn(l, l, |i, j| if j < i { 1.0 } else { 0.0 })
}

impl CrlModel {
    pub fn new(dims: ModelDims, arch: Architecture, seed: u64) -> Result<Self> {
        dims.validate()?;
        if arch.hidden == 0 || arch.flow_hidden == 0 {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        let hidden = vec![arch.hidden; arch.depth];
        let widths = |i: usize, o: usize| {
            let mut w = vec![i];
            w.extend(&hidden);
            w.push(o);
            w
        };

        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for (m, md) in dims.modalities.iter().enumerate() {
            let input: usize = md.obs_dims.iter().sum();
            let out = 2 * (md.latent_dim + md.eta_dim + dims.d_s);
            encoders.push(Mlp::new(&mut params, &format!("enc{m}"), &widths(input, out), false, &mut rng));
            let mut per = Vec::new();
            for (k, &od) in md.obs_dims.iter().enumerate() {
                per.push(Mlp::new(
                    &mut params,
                    &format!("dec{m}_{k}"),
                    &widths(md.latent_dim + md.eta_dim, od),
                    false,
                    &mut rng,
                ));
            }
            decoders.push(per);
        }
        let l = dims.total_latents();
        let adjacency = params.add("adjacency".into(), Mat::zeros(l, l));
        let flow_widths = [l + dims.d_s, arch.flow_hidden, arch.flow_hidden, 1];
        let mut flow_shift = Vec::new();
        let mut flow_log_scale = Vec::new();
        for i in 0..l {
            flow_shift.push(Mlp::new(&mut params, &format!("flow{i}.shift"), &flow_widths, true, &mut rng));
            flow_log_scale.push(Mlp::new(
                &mut params,
                &format!("flow{i}.log_scale"),
                &flow_widths,
                true,
                &mut rng,
            ));
        }
        Ok(CrlModel {
            dims,
            arch,
            params,
            encoders,
            decoders,
            adjacency,
            flow_shift,
            flow_log_scale,
        })
    }

    /// Copy with N(0, scale^2) noise added to every parameter, including
    /// the zero-initialized flow outputs and adjacency.
    pub fn jittered(&self, scale: f64, seed: u64) -> CrlModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for v in &mut out.params.values {
            for x in v.iter_mut() {
                let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                *x += scale * e;
            }
        }
        out
    }

    pub fn latents(&self) -> usize {
        self.dims.total_latents()
    }

    /// Masked adjacency, `[i][j]` weighting `z_j -> z_i`.
    pub fn adjacency(&self) -> Mat {
        self.params.values[self.adjacency].component_mul(&adjacency_mask(self.latents()))
    }

    pub fn check_inputs(&self, x: &[Vec<Mat>]) -> Result<usize> {
        if x.len() != self.dims.modalities.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} modalities given, model has {}",
                x.len(),
                self.dims.modalities.len()
            )));
        }
        let n = x.first().and_then(|m| m.first()).map_or(0, |a| a.nrows());
        if n == 0 {
            return Err(Error::EmptyData);
        }
        for (m, (xm, md)) in x.iter().zip(&self.dims.modalities).enumerate() {
            if xm.len() != md.obs_dims.len() {
                return Err(Error::ShapeMismatch(format!(
                    "modality {m}: {} measurements given, model has {}",
                    xm.len(),
                    md.obs_dims.len()
                )));
            }
            for (k, (a, &d)) in xm.iter().zip(&md.obs_dims).enumerate() {
                if a.nrows() != n || a.ncols() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "measurement ({m},{k}) is {}x{}, expected {n}x{d}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
            }
        }
        Ok(n)
    }

    /// Posterior for every row of `x` (`x[m][k]` is measurement `k` of
    /// modality `m`).
    pub fn encode(&self, x: &[Vec<Mat>]) -> Result<GaussianPosterior> {
        self.check_inputs(x)?;
        let inputs: Vec<Mat> = x.iter().map(|xm| hcat(xm)).collect();
        let mut tape = Tape::new();
        let post = self.encode_on(&mut tape, &inputs);
        let v = |vs: &[Var]| vs.iter().map(|&a| tape.value(a).clone()).collect::<Vec<_>>();
        Ok(GaussianPosterior {
            z_mu: v(&post.z_mu),
            z_logvar: v(&post.z_lv),
            eta_mu: v(&post.eta_mu),
            eta_logvar: v(&post.eta_lv),
            s_mu: tape.value(post.s_mu).clone(),
            s_logvar: tape.value(post.s_lv).clone(),
        })
    }

    pub(crate) fn encode_on(&self, tape: &mut Tape, inputs: &[Mat]) -> PosteriorVars {
        let mut out = PosteriorVars::default();
        let mut s_mu = Vec::new();
        let mut s_lv = Vec::new();
        let ds = self.dims.d_s;
        for (m, md) in self.dims.modalities.iter().enumerate() {
            let x = tape.constant(inputs[m].clone());
            let h = self.encoders[m].forward(tape, &self.params, x);
            let (dz, de) = (md.latent_dim, md.eta_dim);
            let half = dz + de + ds;
            let lv_all = tape.cols(h, half, half);
            let lv_all = tape.clamp(lv_all, -LOGVAR_CLAMP, LOGVAR_CLAMP);
            out.z_mu.push(tape.cols(h, 0, dz));
            out.z_lv.push(tape.cols(lv_all, 0, dz));
            if de > 0 {
                out.eta_mu.push(tape.cols(h, dz, de));
                out.eta_lv.push(tape.cols(lv_all, dz, de));
            }
            if ds > 0 {
                s_mu.push(tape.cols(h, dz + de, ds));
                s_lv.push(tape.cols(lv_all, dz + de, ds));
            }
        }
        let avg = |tape: &mut Tape, parts: &[Var], n: usize| -> Var {
            if parts.is_empty() {
                return tape.constant(Mat::zeros(n, 0));
            }
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = tape.add(acc, p);
            }
            tape.scale(acc, 1.0 / parts.len() as f64)
        };
        let n = inputs[0].nrows();
        out.s_mu = avg(tape, &s_mu, n);
        out.s_lv = avg(tape, &s_lv, n);
        out
    }

    /// Recorded forward pass of the training objective for one minibatch.
    /// `noise` holds standard-normal draws for `(z, eta, s)` blocks in the
    /// order returned by [`CrlModel::noise_shapes`].
    pub(crate) fn objective(
        &self,
        tape: &mut Tape,
        inputs: &[Mat],
        targets: &[Vec<Mat>],
        noise: &[Mat],
        alphas: [f64; 3],
    ) -> LossVars {
        let post = self.encode_on(tape, inputs);
        let mut noise = noise.iter();
        let mut sample = |tape: &mut Tape, mu: Var, lv: Var| -> Var {
            let e = tape.constant(noise.next().expect("noise block").clone());
            let half = tape.scale(lv, 0.5);
            let sd = tape.exp(half);
            let jitter = tape.mul(sd, e);
            tape.add(mu, jitter)
        };
        let z: Vec<Var> = (0..post.z_mu.len())
            .map(|m| sample(tape, post.z_mu[m], post.z_lv[m]))
            .collect();
        let eta: Vec<Var> = (0..post.eta_mu.len())
            .map(|m| sample(tape, post.eta_mu[m], post.eta_lv[m]))
            .collect();
        let s = sample(tape, post.s_mu, post.s_lv);

        // reconstruction: decoder (m, k) sees only (z_m, eta_m)
        let mut recon: Option<Var> = None;
        let mut eta_iter = eta.iter();
        for (m, md) in self.dims.modalities.iter().enumerate() {
            let input = if md.eta_dim > 0 {
                let e = *eta_iter.next().expect("eta block");
                tape.hcat(&[z[m], e])
            } else {
                z[m]
            };
            for (k, dec) in self.decoders[m].iter().enumerate() {
                let xh = dec.forward(tape, &self.params, input);
                let x = tape.constant(targets[m][k].clone());
                let d = tape.sub(x, xh);
                let sq = tape.square(d);
                let total = tape.sum(sq);
                let n = targets[m][k].nrows() as f64;
                let per_row = tape.scale(total, 1.0 / n);
                recon = Some(match recon {
                    Some(r) => tape.add(r, per_row),
                    None => per_row,
                });
            }
        }
        let recon = recon.expect("at least one measurement");

        let z_all = tape.hcat(&z);
        let flow = self.flow_on(tape, z_all, s);

        let rows = inputs[0].nrows() as f64;
        let mean_kl = |tape: &mut Tape, mu: Var, lv: Var| -> Var {
            let k = kl_on(tape, mu, lv);
            tape.scale(k, 1.0 / rows)
        };
        let mut ind = mean_kl(tape, post.s_mu, post.s_lv);
        for m in 0..post.eta_mu.len() {
            let k = mean_kl(tape, post.eta_mu[m], post.eta_lv[m]);
            ind = tape.add(ind, k);
        }
        match self.arch.ind_loss {
            IndLoss::Moments => {
                for m in 0..post.z_mu.len() {
                    let k = mean_kl(tape, post.z_mu[m], post.z_lv[m]);
                    ind = tape.add(ind, k);
                }
                let k = batch_moment_kl_on(tape, flow.eps);
                ind = tape.add(ind, k);
            }
            IndLoss::FlowPrior => {
                for m in 0..post.z_lv.len() {
                    // negative entropy of the z posterior, up to a constant
                    let one_plus = tape.add_scalar(post.z_lv[m], 1.0);
                    let s = tape.sum(one_plus);
                    let k = tape.scale(s, -0.5 / rows);
                    ind = tape.add(ind, k);
                }
                let sq = tape.square(flow.eps);
                let half = tape.scale(sq, 0.5);
                let nll = tape.add(half, flow.log_scale);
                let s = tape.sum(nll);
                let k = tape.scale(s, 1.0 / rows);
                ind = tape.add(ind, k);
            }
        }

        let a = tape.param(self.adjacency, self.params.values[self.adjacency].clone());
        let mask = tape.constant(adjacency_mask(self.latents()));
        let masked = tape.mul(a, mask);
        let abs = tape.abs(masked);
        let sp = tape.sum(abs);

        let r = tape.scale(recon, alphas[0]);
        let i = tape.scale(ind, alphas[1]);
        let p = tape.scale(sp, alphas[2]);
        let ri = tape.add(r, i);
        let total = tape.add(ri, p);
        LossVars {
            recon,
            ind,
            sparsity: sp,
            total,
        }
    }

    /// Shapes of the standard-normal blocks [`CrlModel::objective`] consumes.
    pub fn noise_shapes(&self, n: usize) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> =
            self.dims.modalities.iter().map(|m| (n, m.latent_dim)).collect();
        v.extend(
            self.dims
                .modalities
                .iter()
                .filter(|m| m.eta_dim > 0)
                .map(|m| (n, m.eta_dim)),
        );
        v.push((n, self.dims.d_s));
        v
    }

    /// `eps_i = (z_i - shift_i) * exp(-log_scale_i)`, where shift and
    /// log-scale read the parents gated by row `i` of the masked adjacency
    /// together with `s`.
    pub(crate) fn flow_on(&self, tape: &mut Tape, z: Var, s: Var) -> FlowVars {
        let l = self.latents();
        let a = tape.param(self.adjacency, self.params.values[self.adjacency].clone());
        let mask = tape.constant(adjacency_mask(l));
        let masked = tape.mul(a, mask);
        let mut eps = Vec::with_capacity(l);
        let mut log_scale = Vec::with_capacity(l);
        for i in 0..l {
            let row = tape.rows(masked, i, 1);
            let gated = tape.mul_row(z, row);
            let input = tape.hcat(&[gated, s]);
            let mut shift = self.flow_shift[i].forward(tape, &self.params, input);
            if self.arch.linear_parent_shift {
                let lin = tape.sum_cols(gated);
                shift = tape.add(shift, lin);
            }
            let ls = self.flow_log_scale[i].forward(tape, &self.params, input);
            let ls = tape.clamp(ls, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
            let zi = tape.cols(z, i, 1);
            let centred = tape.sub(zi, shift);
            let neg = tape.scale(ls, -1.0);
            let inv = tape.exp(neg);
            eps.push(tape.mul(centred, inv));
            log_scale.push(ls);
        }
        FlowVars {
            eps: tape.hcat(&eps),
            log_scale: tape.hcat(&log_scale),
        }
    }

    /// Exogenous estimates for given latent samples.
    pub fn flow_to_eps(&self, z: &Mat, s: &Mat) -> Result<Mat> {
        let l = self.latents();
        if z.ncols() != l || s.ncols() != self.dims.d_s || z.nrows() != s.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "z {:?} and s {:?} for {l} latents and d_s {}",
                z.shape(),
                s.shape(),
                self.dims.d_s
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let sv = tape.constant(s.clone());
        let f = self.flow_on(&mut tape, zv, sv);
        Ok(tape.value(f.eps).clone())
    }

    /// Inverse of [`CrlModel::flow_to_eps`], solved in causal order.
    pub fn eps_to_z(&self, eps: &Mat, s: &Mat) -> Result<Mat> {
        let l = self.latents();
        if eps.ncols() != l || s.ncols() != self.dims.d_s || eps.nrows() != s.nrows() {
            return Err(Error::ShapeMismatch("eps/s shapes do not match the model".into()));
        }
        let mut z = Mat::zeros(eps.nrows(), l);
        let adj = self.adjacency();
        for i in 0..l {
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let sv = tape.constant(s.clone());
            let row = tape.constant(adj.rows(i, 1).into_owned());
            let gated = tape.mul_row(zv, row);
            let input = tape.hcat(&[gated, sv]);
            let mut shift = self.flow_shift[i].forward(&mut tape, &self.params, input);
            if self.arch.linear_parent_shift {
                let lin = tape.sum_cols(gated);
                shift = tape.add(shift, lin);
            }
            let ls = self.flow_log_scale[i].forward(&mut tape, &self.params, input);
            let ls = tape.clamp(ls, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
            let (shift, ls) = (tape.value(shift), tape.value(ls));
            for r in 0..z.nrows() {
                z[(r, i)] = eps[(r, i)] * ls[(r, 0)].exp() + shift[(r, 0)];
            }
        }
        Ok(z)
    }
}

#[derive(Default)]
pub(crate) struct PosteriorVars {
    pub z_mu: Vec<Var>,
    pub z_lv: Vec<Var>,
    pub eta_mu: Vec<Var>,
    pub eta_lv: Vec<Var>,
    pub s_mu: Var,
    pub s_lv: Var,
}

pub(crate) struct FlowVars {
    pub eps: Var,
    pub log_scale: Var,
}

pub(crate) struct LossVars {
    pub recon: Var,
    pub ind: Var,
    pub sparsity: Var,
    pub total: Var,
}

/// `sum 0.5 (mu^2 + exp(lv) - 1 - lv)` over all entries.
fn kl_on(tape: &mut Tape, mu: Var, lv: Var) -> Var {
    let m2 = tape.square(mu);
    let v = tape.exp(lv);
    let a = tape.add(m2, v);
    let b = tape.sub(a, lv);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5)
}

/// KL between N(batch mean, batch variance) and N(0, 1), summed over columns.
fn batch_moment_kl_on(tape: &mut Tape, x: Var) -> Var {
    let mean = tape.mean_rows(x);
    let sq = tape.square(x);
    let m2 = tape.mean_rows(sq);
    let mean_sq = tape.square(mean);
    let var = tape.sub(m2, mean_sq);
    let var = tape.clamp(var, 1e-12, f64::INFINITY);
    let lv = tape.ln(var);
    let a = tape.add(mean_sq, var);
    let b = tape.sub(a, lv);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5)
}
