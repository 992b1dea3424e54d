use nalgebra::DMatrix;
use statrs::function::gamma::gamma_ur;

use super::kernel::{center, frobenius, KernelGram, PermutationNull};
use super::{check_kernel_inputs, HsicNull, KernelOptions, Method, NullKind, TestResult};
use crate::error::Result;

/// HSIC with Gaussian kernels and median-heuristic bandwidths.
///
/// The statistic is the biased estimator `tr(K H L H) / n^2`. The default
/// null permutes the rows of `y`; [`HsicNull::Gamma`] instead fits a gamma
/// distribution to the first two null moments of `n * HSIC`.
pub fn hsic_test(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &KernelOptions) -> Result<TestResult> {
    let n = check_kernel_inputs(x, y)?;
    let k = KernelGram::median_heuristic(x, opts.bandwidth_subsample)?;
    let l = KernelGram::median_heuristic(y, opts.bandwidth_subsample)?;
    let kc = k.centered();
    let nn = (n * n) as f64;

    match opts.hsic_null {
        HsicNull::Permutation => {
            let null = PermutationNull::new(&kc, &l.matrix);
            let observed = null.observed();
            let p_value = null.p_value(observed, opts.permutations, opts.seed);
            Ok(TestResult {
                method: Method::Hsic,
                statistic: (observed / nn).max(0.0),
                p_value,
                dof: None,
                null_kind: NullKind::Permutation,
            })
        }
        HsicNull::Gamma => {
            let lc = center(&l.matrix);
            let statistic = (frobenius(&kc, &lc) / nn).max(0.0);
            let p_value = gamma_null_p_value(&k.matrix, &l.matrix, &kc, &lc, statistic);
            Ok(TestResult {
                method: Method::Hsic,
                statistic,
                p_value,
                dof: None,
                null_kind: NullKind::Analytic,
            })
        }
    }
}

/// Gamma approximation to the null of `n * HSIC_b` (Gretton et al., 2008).
fn gamma_null_p_value(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    kc: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    hsic: f64,
) -> f64 {
    let n = k.nrows();
    let m = n as f64;

    let mut off_diag = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let v = kc[(i, j)] * lc[(i, j)] / 6.0;
                off_diag += v * v;
            }
        }
    }
    let var = off_diag / (m * (m - 1.0)) * 72.0 * (m - 4.0) * (m - 5.0)
        / (m * (m - 1.0) * (m - 2.0) * (m - 3.0));

    let off_mean = |g: &DMatrix<f64>| (g.sum() - g.trace()) / (m * (m - 1.0));
    let mu_x = off_mean(k);
    let mu_y = off_mean(l);
    let mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / m;

    if !(var > 0.0 && mean > 0.0) {
        return 1.0;
    }
    let shape = mean * mean / var;
    let scale = var * m / mean;
    let stat = m * hsic;
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(shape, stat / scale).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::super::column;
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_series_hit_the_minimum_p() {
        let x = column(&normals(200, 1));
        let opts = KernelOptions {
            permutations: 200,
            ..KernelOptions::with_seed(4)
        };
        let r = hsic_test(&x, &x, &opts).unwrap();
        assert_eq!(r.p_value, 1.0 / 201.0);
        assert!(r.statistic > 0.0);
    }

    #[test]
    fn errors() {
        let x = column(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            hsic_test(&x, &x, &KernelOptions::default()),
            Err(Error::TooFewSamples { .. })
        ));
        let c = column(&[1.0; 10]);
        let y = column(&normals(10, 2));
        assert!(matches!(
            hsic_test(&c, &y, &KernelOptions::default()),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn gamma_null_is_a_probability_and_detects_dependence() {
        let x = normals(150, 3);
        let y: Vec<f64> = x.iter().zip(normals(150, 4)).map(|(a, e)| a * a + 0.2 * e).collect();
        let opts = KernelOptions {
            hsic_null: HsicNull::Gamma,
            ..Default::default()
        };
        let dep = hsic_test(&column(&x), &column(&y), &opts).unwrap();
        assert!(dep.p_value < 0.01);
        let ind = hsic_test(&column(&x), &column(&normals(150, 5)), &opts).unwrap();
        assert!((0.0..=1.0).contains(&ind.p_value));
        assert!(ind.p_value > dep.p_value);
    }

    #[test]
    fn p_value_roughly_symmetric() {
        let x = normals(120, 7);
        let y: Vec<f64> = x.iter().zip(normals(120, 8)).map(|(a, e)| 0.3 * a + e).collect();
        let opts = KernelOptions {
            permutations: 400,
            ..KernelOptions::with_seed(1)
        };
        let a = hsic_test(&column(&x), &column(&y), &opts).unwrap();
        let b = hsic_test(&column(&y), &column(&x), &opts).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 0.05, "{} vs {}", a.p_value, b.p_value);
    }
}
