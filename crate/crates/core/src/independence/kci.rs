use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::{frobenius, KernelGram, PermutationNull};
use super::{check_kernel_inputs, mix_seed, KciNull, KernelOptions, Method, NullKind, TestResult};
use crate::error::{Error, Result};

/// Unconditional kernel-based independence test.
///
/// Statistic `tr(K~ L~) / n` on doubly centred Gaussian Grams. The default
/// null is the weighted chi-square mixture `sum_ij l_i m_j z_ij^2`, where
/// `l`, `m` are the leading eigenvalues of `K~ / n` and `L~ / n`, sampled by
/// Monte Carlo. [`KciNull::Permutation`] permutes `y` instead.
pub fn kci_test(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &KernelOptions) -> Result<TestResult> {
    let n = check_kernel_inputs(x, y)?;
    let k = KernelGram::median_heuristic(x, opts.bandwidth_subsample)?;
    let l = KernelGram::median_heuristic(y, opts.bandwidth_subsample)?;
    let kc = k.centered();
    let nf = n as f64;

    match opts.kci_null {
        KciNull::Spectral => {
            let lc = l.centered();
            let statistic = (frobenius(&kc, &lc) / nf).max(0.0);
            let lx = leading_eigenvalues(&kc, nf, opts.spectral_mass);
            let ly = leading_eigenvalues(&lc, nf, opts.spectral_mass);
            let p_value = spectral_p_value(&lx, &ly, statistic, opts)?;
            Ok(TestResult {
                method: Method::Kci,
                statistic,
                p_value,
                dof: None,
                null_kind: NullKind::Spectral,
            })
        }
        KciNull::Permutation => {
            let null = PermutationNull::new(&kc, &l.matrix);
            let observed = null.observed();
            let p_value = null.p_value(observed, opts.permutations, opts.seed);
            Ok(TestResult {
                method: Method::Kci,
                statistic: (observed / nf).max(0.0),
                p_value,
                dof: None,
                null_kind: NullKind::Permutation,
            })
        }
    }
}

/// Largest eigenvalues of `g / n`, enough to cover `mass` of the positive
/// spectrum.
fn leading_eigenvalues(g: &DMatrix<f64>, n: f64, mass: f64) -> Vec<f64> {
    let mut eig: Vec<f64> = (g / n)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    let mut acc = 0.0;
    let mut keep = 0;
    for &v in &eig {
        acc += v;
        keep += 1;
        if acc >= mass * total {
            break;
        }
    }
    eig.truncate(keep);
    eig
}

fn spectral_p_value(lx: &[f64], ly: &[f64], statistic: f64, opts: &KernelOptions) -> Result<f64> {
    if opts.spectral_draws == 0 {
        return Err(Error::InvalidConfig("spectral_draws must be positive".into()));
    }
    let weights: Vec<f64> = lx
        .iter()
        .flat_map(|a| ly.iter().map(move |b| a * b))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, &[4]));
    let mut hits = 0usize;
    for _ in 0..opts.spectral_draws {
        let draw: f64 = weights
            .iter()
            .map(|w| {
                let z: f64 = StandardNormal.sample(&mut rng);
                w * z * z
            })
            .sum();
        if draw >= statistic {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (opts.spectral_draws + 1) as f64)
}
