use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kernel::{median_bandwidth, PermutationNull};
use super::{check_kernel_inputs, mix_seed, KernelOptions, Method, NullKind, TestResult};
use crate::error::{Error, Result};

/// Randomized independence test on random Fourier features.
///
/// `x` and `y` are each mapped to `opts.rff_features` cosine features of a
/// Gaussian kernel with median-heuristic bandwidth. The statistic is
/// `n * |C|_F^2` where `C` is the cross-covariance of the standardized
/// feature maps; its null is obtained by permuting the rows of `y`.
/// Only the unconditional test is available: passing a conditioning set
/// yields [`Error::Unsupported`].
pub fn rcit_test(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    conditioning: Option<&DMatrix<f64>>,
    opts: &KernelOptions,
) -> Result<TestResult> {
    if conditioning.is_some_and(|z| z.ncols() > 0) {
        return Err(Error::Unsupported(
            "RCIT with a non-empty conditioning set".into(),
        ));
    }
    let n = check_kernel_inputs(x, y)?;
    if opts.rff_features == 0 {
        return Err(Error::InvalidConfig("rff_features must be positive".into()));
    }
    let fx = fourier_features(x, opts, 1)?;
    let fy = fourier_features(y, opts, 2)?;

    let gx = &fx * fx.transpose();
    let gy = &fy * fy.transpose();
    let null = PermutationNull::new(&gx, &gy);
    let observed = null.observed();
    let p_value = null.p_value(observed, opts.permutations, mix_seed(opts.seed, &[3]));
    // sum_ij Gx_ij Gy_ij = |Fx' Fy|_F^2, so this is n * |Fx' Fy / n|_F^2.
    let statistic = (observed / n as f64).max(0.0);
    Ok(TestResult {
        method: Method::Rcit,
        statistic,
        p_value,
        dof: None,
        null_kind: NullKind::Permutation,
    })
}

/// Standardized `sqrt(2) cos(x W + b)` features.
fn fourier_features(x: &DMatrix<f64>, opts: &KernelOptions, label: u64) -> Result<DMatrix<f64>> {
    let bandwidth = median_bandwidth(x, opts.bandwidth_subsample)?;
    let d = opts.rff_features;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, &[label]));
    let normal = Normal::new(0.0, 1.0 / bandwidth).map_err(|_| Error::ZeroVariance)?;
    let w = DMatrix::from_fn(x.ncols(), d, |_, _| normal.sample(&mut rng));
    let b: Vec<f64> = (0..d)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let mut f = x * w;
    let n = f.nrows() as f64;
    for (j, mut col) in f.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = std::f64::consts::SQRT_2 * (*v + b[j]).cos();
        }
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
        }
    }
    Ok(f)
}
