//! Synthetic data from a multi-modality, multi-measurement structural causal
//! model with known ground truth.
//!
//! Latents of all modalities are concatenated in a global causal order.
//! Each latent is `lt(sum_j W_ij z_j + sum_k B_ik s_k) + sigma * eps_i` with
//! `lt(x) = tanh(x) + 0.1 x`; each measurement of modality `m` is an
//! invertible mixing of `z_m` plus `eta_scale` Gaussian noise.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::write_json;
use crate::rng::{mix_seed, stream_rng};
use crate::tabular::{load_embeddings, write_embeddings, EmbeddingMatrix};

const WEIGHTS: u64 = 1;
const MIXING: u64 = 2;
const ROWS: u64 = 3;
const REMEASURE: u64 = 4;

pub fn leaky_tanh(x: f64) -> f64 {
    x.tanh() + 0.1 * x
}

/// Inverse of [`leaky_tanh`] by safeguarded Newton iteration.
pub fn leaky_tanh_inv(y: f64) -> f64 {
    // |tanh| < 1 brackets the root
    let (mut lo, mut hi) = ((y - 1.0) / 0.1, (y + 1.0) / 0.1);
    let mut u = y.clamp(lo, hi);
    for _ in 0..100 {
        let f = leaky_tanh(u) - y;
        if f.abs() < 1e-15 * (1.0 + y.abs()) {
            break;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let t = u.tanh();
        let next = u - f / (1.0 - t * t + 0.1);
        u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub latent_dim: usize,
    pub measurements: usize,
    pub obs_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Mixing {
    /// `z_m` copied into the first `latent_dim` observed coordinates.
    Identity,
    /// `layers` rounds of orthogonal map + leaky-tanh, then a Gaussian lift.
    Random { layers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub d_s: usize,
    pub modalities: Vec<ModalitySpec>,
    /// `adjacency[i][j] = 1` encodes the edge `z_j -> z_i` (global latent
    /// indices); must be strictly lower-triangular.
    pub adjacency: Vec<Vec<u8>>,
    /// `shared_influence[i][k] = 1` when `s_k` enters latent `i`.
    pub shared_influence: Vec<Vec<u8>>,
    pub sigma: f64,
    pub eta_scale: f64,
    pub mixing: Mixing,
    pub seed: u64,
}

/// Two modalities with edges z1 -> z2, z1 -> z3, z3 -> z4, three
/// measurements of modality 1 and one of modality 2, a scalar shared latent
/// entering every latent, and 20-dimensional observations.
pub fn default_fig5_spec() -> SynthSpec {
    let mut adjacency = vec![vec![0; 4]; 4];
    adjacency[1][0] = 1;
    adjacency[2][0] = 1;
    adjacency[3][2] = 1;
    SynthSpec {
        d_s: 1,
        modalities: vec![
            ModalitySpec {
                latent_dim: 2,
                measurements: 3,
                obs_dim: 20,
            },
            ModalitySpec {
                latent_dim: 2,
                measurements: 1,
                obs_dim: 20,
            },
        ],
        adjacency,
        shared_influence: vec![vec![1]; 4],
        sigma: 0.3,
        eta_scale: 0.05,
        mixing: Mixing::Random { layers: 2 },
        seed: 7,
    }
}

impl SynthSpec {
    pub fn total_latents(&self) -> usize {
        self.modalities.iter().map(|m| m.latent_dim).sum()
    }

    /// Global index of the first latent of modality `m`.
    pub fn latent_offset(&self, m: usize) -> usize {
        self.modalities[..m].iter().map(|x| x.latent_dim).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&v| v == 1).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.latent_dim == 0 || m.measurements == 0 {
                return bad(format!("modality {i}: latent_dim and measurements must be positive"));
            }
            if m.obs_dim < m.latent_dim {
                return bad(format!(
                    "modality {i}: obs_dim {} < latent_dim {}",
                    m.obs_dim, m.latent_dim
                ));
            }
        }
        let l = self.total_latents();
        if self.adjacency.len() != l || self.adjacency.iter().any(|r| r.len() != l) {
            return bad(format!("adjacency must be {l}x{l}"));
        }
        for (i, row) in self.adjacency.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return bad(format!("adjacency[{i}][{j}] = {v} is not binary"));
                }
                if v == 1 && j >= i {
                    return bad(format!(
                        "adjacency[{i}][{j}] is not strictly lower-triangular"
                    ));
                }
            }
        }
        if self.shared_influence.len() != l
            || self.shared_influence.iter().any(|r| r.len() != self.d_s)
        {
            return bad(format!("shared_influence must be {l}x{}", self.d_s));
        }
        if self.shared_influence.iter().flatten().any(|&v| v > 1) {
            return bad("shared_influence is not binary".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma {} must be finite and non-negative", self.sigma));
        }
        if !(self.eta_scale.is_finite() && self.eta_scale >= 0.0) {
            return bad(format!("eta_scale {} must be finite and non-negative", self.eta_scale));
        }
        Ok(())
    }

    /// Generation weights and mixing maps, drawn once from `seed`.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        let l = self.total_latents();
        let mut rng = stream_rng(self.seed, WEIGHTS);
        let weight = |rng: &mut rand_chacha::ChaCha8Rng| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..=1.5)
        };
        let mut edges = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in 0..i {
                if self.adjacency[i][j] == 1 {
                    edges[(i, j)] = weight(&mut rng);
                }
            }
        }
        let mut shared = DMatrix::zeros(l, self.d_s);
        for i in 0..l {
            for k in 0..self.d_s {
                if self.shared_influence[i][k] == 1 {
                    shared[(i, k)] = weight(&mut rng);
                }
            }
        }
        let mut maps = Vec::new();
        for (m, ms) in self.modalities.iter().enumerate() {
            let mut per = Vec::new();
            for k in 0..ms.measurements {
                let seed = mix_seed(self.seed, &[MIXING, m as u64, k as u64]);
                per.push(MixingMap::new(self.mixing, ms.latent_dim, ms.obs_dim, seed)?);
            }
            maps.push(per);
        }
        Ok(GroundTruth {
            edges,
            shared,
            maps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `edges[(i, j)]` is the weight of `z_j -> z_i`.
    pub edges: DMatrix<f64>,
    pub shared: DMatrix<f64>,
    pub maps: Vec<Vec<MixingMap>>,
}

/// `x = lt(... lt(lt(z Q1') Q2') ...) A'` with orthogonal `Q` and a full
/// column rank lift `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMap {
    pub layers: Vec<DMatrix<f64>>,
    pub lift: DMatrix<f64>,
}

impl MixingMap {
    pub fn new(kind: Mixing, latent_dim: usize, obs_dim: usize, seed: u64) -> Result<Self> {
        if obs_dim < latent_dim {
            return Err(Error::InvalidSpec(format!(
                "obs_dim {obs_dim} < latent_dim {latent_dim}"
            )));
        }
        match kind {
            Mixing::Identity => Ok(MixingMap {
                layers: Vec::new(),
                lift: DMatrix::identity(obs_dim, latent_dim),
            }),
            Mixing::Random { layers } => {
                let mut rng = stream_rng(seed, 0);
                let mut gauss = |r: usize, c: usize| {
                    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
                };
                let qs: Vec<DMatrix<f64>> = (0..layers)
                    .map(|_| gauss(latent_dim, latent_dim).qr().q())
                    .collect();
                let lift = gauss(obs_dim, latent_dim);
                let sv = lift.clone().singular_values();
                let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
                if min < 1e-6 {
                    return Err(Error::InvalidSpec("mixing lift is rank deficient".into()));
                }
                Ok(MixingMap { layers: qs, lift })
            }
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.lift.ncols()
    }

    /// Rows of `z` are samples.
    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = z.clone();
        for q in &self.layers {
            h = (h * q.transpose()).map(leaky_tanh);
        }
        h * self.lift.transpose()
    }

    /// Left inverse on the image: least-squares through the lift, then the
    /// layers in reverse.
    pub fn invert(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let pinv = self
            .lift
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut h = x * pinv.transpose();
        for q in self.layers.iter().rev() {
            h = h.map(leaky_tanh_inv) * q;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBatch {
    pub spec: SynthSpec,
    pub s: DMatrix<f64>,
    /// Per modality, `n x latent_dim`.
    pub z: Vec<DMatrix<f64>>,
    /// Per modality and measurement, `n x obs_dim`.
    pub x: Vec<Vec<DMatrix<f64>>>,
    /// Causal noise, `n x total_latents`.
    pub eps: DMatrix<f64>,
    /// Measurement noise before scaling, shaped like `x`.
    pub eta: Vec<Vec<DMatrix<f64>>>,
}

impl SynthBatch {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    /// All latents side by side, `n x total_latents`, in global order.
    pub fn z_all(&self) -> DMatrix<f64> {
        hcat(&self.z)
    }
}

pub fn hcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// `n` rows using `spec.seed` for both the model and the noise.
pub fn sample(spec: &SynthSpec, n: usize) -> Result<SynthBatch> {
    sample_rows(spec, n, spec.seed)
}

/// `n` rows of the model fixed by `spec.seed`, with noise from `row_seed`.
/// Row `r` draws from its own stream, so a batch is a prefix of any larger
/// batch with the same seeds.
pub fn sample_rows(spec: &SynthSpec, n: usize, row_seed: u64) -> Result<SynthBatch> {
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let truth = spec.ground_truth()?;
    let l = spec.total_latents();
    let base = mix_seed(row_seed, &[ROWS]);

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base, r as u64);
            let s: Vec<f64> = (0..spec.d_s).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut z = vec![0.0; l];
            for i in 0..l {
                let mut pre = 0.0;
                for j in 0..i {
                    pre += truth.edges[(i, j)] * z[j];
                }
                for (k, sk) in s.iter().enumerate() {
                    pre += truth.shared[(i, k)] * sk;
                }
                z[i] = leaky_tanh(pre) + spec.sigma * eps[i];
            }
            (s, z, eps)
        })
        .collect();

    let s = DMatrix::from_fn(n, spec.d_s, |r, k| rows[r].0[k]);
    let z_all = DMatrix::from_fn(n, l, |r, i| rows[r].1[i]);
    let eps = DMatrix::from_fn(n, l, |r, i| rows[r].2[i]);
    let z: Vec<DMatrix<f64>> = spec
        .modalities
        .iter()
        .enumerate()
        .map(|(m, ms)| z_all.columns(spec.latent_offset(m), ms.latent_dim).into_owned())
        .collect();
    let (x, eta) = measure(spec, &truth, &z, mix_seed(row_seed, &[ROWS, 1]));
    Ok(SynthBatch {
        spec: spec.clone(),
        s,
        z,
        x,
        eps,
        eta,
    })
}

type Measurements = Vec<Vec<DMatrix<f64>>>;

fn measure(
    spec: &SynthSpec,
    truth: &GroundTruth,
    z: &[DMatrix<f64>],
    seed: u64,
) -> (Measurements, Measurements) {
    let mut xs = Vec::new();
    let mut etas = Vec::new();
    for (m, ms) in spec.modalities.iter().enumerate() {
        let mut xm = Vec::new();
        let mut em = Vec::new();
        for k in 0..ms.measurements {
            let n = z[m].nrows();
            let d = ms.obs_dim;
            let stream_seed = mix_seed(seed, &[m as u64, k as u64]);
            let flat: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|r| {
                    let mut rng = stream_rng(stream_seed, r as u64);
                    (0..d)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect::<Vec<f64>>()
                })
                .collect();
            let eta = DMatrix::from_row_slice(n, d, &flat);
            let x = truth.maps[m][k].apply(&z[m]) + &eta * spec.eta_scale;
            xm.push(x);
            em.push(eta);
        }
        xs.push(xm);
        etas.push(em);
    }
    (xs, etas)
}

/// Redraws only the measurement noise of `batch`, keeping `s` and `z`.
pub fn resample_measurements(batch: &SynthBatch, seed: u64) -> Result<SynthBatch> {
    let truth = batch.spec.ground_truth()?;
    let (x, eta) = measure(&batch.spec, &truth, &batch.z, mix_seed(seed, &[REMEASURE]));
    Ok(SynthBatch {
        x,
        eta,
        ..batch.clone()
    })
}

/// Zero pattern of the latent precision matrix given `s` when every
/// nonlinearity is replaced by the identity: `(I - W)' (I - W) / sigma^2`.
/// Entry `[i][j]` is true when the precision is non-zero.
pub fn latent_markov_oracle(spec: &SynthSpec) -> Result<Vec<Vec<bool>>> {
    let truth = spec.ground_truth()?;
    let l = spec.total_latents();
    let a = DMatrix::identity(l, l) - &truth.edges;
    let p = a.transpose() * a;
    Ok((0..l)
        .map(|i| (0..l).map(|j| p[(i, j)].abs() > 1e-12).collect())
        .collect())
}

/// On-disk layout written by the `synth` subcommand: one f32 blob plus
/// sidecar per observation matrix and per ground-truth latent block, and a
/// manifest naming them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub rows: usize,
    pub row_seed: u64,
    pub adjacency: Vec<Vec<u8>>,
    pub edge_weights: Vec<Vec<f64>>,
    pub shared_weights: Vec<Vec<f64>>,
    /// `x[m][k]` file stem.
    pub x: Vec<Vec<String>>,
    pub z: Vec<String>,
    pub s: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_block(dir: &Path, stem: &str, m: &DMatrix<f64>) -> Result<()> {
    let flat: Vec<f64> = m.transpose().as_slice().to_vec();
    let e = EmbeddingMatrix::from_f64(m.nrows(), m.ncols(), &flat)?;
    write_embeddings(&e, &dir.join(format!("{stem}.bin")), &dir.join(format!("{stem}.json")))
}

fn read_block(dir: &Path, stem: &str) -> Result<DMatrix<f64>> {
    Ok(load_embeddings(&dir.join(format!("{stem}.bin")), &dir.join(format!("{stem}.json")))?
        .to_dmatrix())
}

pub fn save_batch(batch: &SynthBatch, row_seed: u64, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let truth = batch.spec.ground_truth()?;
    let mut x_names = Vec::new();
    for (m, xm) in batch.x.iter().enumerate() {
        let mut names = Vec::new();
        for (k, x) in xm.iter().enumerate() {
            let stem = format!("x_m{m}_k{k}");
            write_block(dir, &stem, x)?;
            names.push(stem);
        }
        x_names.push(names);
    }
    let mut z_names = Vec::new();
    for (m, z) in batch.z.iter().enumerate() {
        let stem = format!("z_m{m}");
        write_block(dir, &stem, z)?;
        z_names.push(stem);
    }
    write_block(dir, "s", &batch.s)?;
    let manifest = SynthManifest {
        spec: batch.spec.clone(),
        rows: batch.n(),
        row_seed,
        adjacency: batch.spec.adjacency.clone(),
        edge_weights: to_rows(&truth.edges),
        shared_weights: to_rows(&truth.shared),
        x: x_names,
        z: z_names,
        s: "s".into(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Observations and ground-truth latents read back from [`save_batch`]
/// output. Noise is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBatch {
    pub manifest: SynthManifest,
    pub x: Vec<Vec<DMatrix<f64>>>,
    pub z: Vec<DMatrix<f64>>,
    pub s: DMatrix<f64>,
}

pub fn load_batch(dir: &Path) -> Result<StoredBatch> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SynthManifest = serde_json::from_str(&text)?;
    manifest.spec.validate()?;
    let x = manifest
        .x
        .iter()
        .map(|names| names.iter().map(|s| read_block(dir, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let z = manifest.z.iter().map(|s| read_block(dir, s)).collect::<Result<Vec<_>>>()?;
    let s = read_block(dir, &manifest.s)?;
    Ok(StoredBatch { manifest, x, z, s })
}
