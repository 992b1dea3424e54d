//! Loss terms on plain matrices. The training objective records the same
//! formulas on a tape; these versions are the reference implementations.

use serde::{Deserialize, Serialize};

use super::model::adjacency_mask;
use super::tape::Mat;
use crate::error::{Error, Result};

/// `sum_m sum_k |x_mk - xhat_mk|^2`, averaged over rows.
pub fn loss_recon(x: &[Vec<Mat>], xhat: &[Vec<Mat>]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::ShapeMismatch("modality counts differ".into()));
    }
    let mut total = 0.0;
    for (xm, hm) in x.iter().zip(xhat) {
        if xm.len() != hm.len() {
            return Err(Error::ShapeMismatch("measurement counts differ".into()));
        }
        for (a, b) in xm.iter().zip(hm) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            total += (a - b).norm_squared() / a.nrows() as f64;
        }
    }
    Ok(total)
}

/// KL of N(mu, exp(logvar)) to N(0, I), summed over columns and averaged
/// over rows.
pub fn kl_standard_normal(mu: &Mat, logvar: &Mat) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", mu.shape(), logvar.shape())));
    }
    if mu.nrows() == 0 {
        return Ok(0.0);
    }
    let s: f64 = mu
        .iter()
        .zip(logvar.iter())
        .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
        .sum();
    Ok(s / mu.nrows() as f64)
}

/// KL to N(0, I) of the Gaussian with the column means and (population)
/// variances of `x`, summed over columns.
pub fn batch_moment_kl(x: &Mat) -> f64 {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = (c.iter().map(|v| v * v).sum::<f64>() / n - mean * mean).max(1e-12);
            0.5 * (mean * mean + var - 1.0 - var.ln())
        })
        .sum()
}

/// `sum |A_ij|` over the strictly lower triangle.
pub fn loss_sparsity(adjacency: &Mat) -> f64 {
    adjacency
        .component_mul(&adjacency_mask(adjacency.nrows()))
        .iter()
        .map(|v| v.abs())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub ind: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub recon: f64,
    pub ind: f64,
    pub sparsity: f64,
}

impl Coefficients {
    /// Values for the digit-image experiments: 2, 1e-2, 1e-3.
    pub const SYNTHETIC: Coefficients = Coefficients {
        recon: 2.0,
        ind: 1e-2,
        sparsity: 1e-3,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.recon, self.ind, self.sparsity];
        if all.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidConfig("loss coefficients must be finite and >= 0".into()));
        }
        if all.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidConfig("at least one loss coefficient must be positive".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.recon, self.ind, self.sparsity]
    }
}

pub fn total_loss(parts: &LossParts, c: &Coefficients) -> f64 {
    c.recon * parts.recon + c.ind * parts.ind + c.sparsity * parts.sparsity
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randm(r: usize, c: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn recon_examples() {
        let x = vec![vec![randm(4, 3, 1), randm(4, 2, 2)], vec![randm(4, 5, 3)]];
        assert_eq!(loss_recon(&x, &x).unwrap(), 0.0);
        let plus: Vec<Vec<Mat>> = x
            .iter()
            .map(|m| m.iter().map(|a| a.add_scalar(1.0)).collect())
            .collect();
        // 10 elements per row
        assert!((loss_recon(&x, &plus).unwrap() - 10.0).abs() < 1e-12);

        let y = vec![vec![randm(4, 3, 4), randm(4, 2, 5)], vec![randm(4, 5, 6)]];
        let mut oracle = 0.0;
        for (xm, ym) in x.iter().zip(&y) {
            for (a, b) in xm.iter().zip(ym) {
                for r in 0..a.nrows() {
                    for c in 0..a.ncols() {
                        oracle += (a[(r, c)] - b[(r, c)]).powi(2) / 4.0;
                    }
                }
            }
        }
        assert!((loss_recon(&x, &y).unwrap() - oracle).abs() < 1e-10);
        assert!(loss_recon(&x, &y[..1]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&Mat::zeros(3, 2), &Mat::zeros(3, 2)).unwrap(), 0.0);
        let mu = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!((kl_standard_normal(&mu, &Mat::zeros(1, 2)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(loss_sparsity(&Mat::zeros(3, 3)), 0.0);
        let mut a = Mat::zeros(3, 3);
        a[(1, 0)] = 0.5;
        a[(2, 1)] = -0.5;
        // above the diagonal is masked out
        a[(0, 2)] = 9.0;
        assert_eq!(loss_sparsity(&a), 1.0);
        let r = randm(5, 5, 9);
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..i {
                oracle += r[(i, j)].abs();
            }
        }
        assert!((loss_sparsity(&r) - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let parts = LossParts {
            recon: 2.0,
            ind: 3.0,
            sparsity: 4.0,
        };
        let c = Coefficients {
            recon: 1.0,
            ind: 0.01,
            sparsity: 0.001,
        };
        assert!((total_loss(&parts, &c) - 2.034).abs() < 1e-12);
        let recon_only = Coefficients {
            recon: 2.0,
            ind: 0.0,
            sparsity: 0.0,
        };
        assert_eq!(total_loss(&parts, &recon_only), 4.0);
        assert!(Coefficients::SYNTHETIC.validate().is_ok());
        assert!(Coefficients {
            recon: 0.0,
            ind: 0.0,
            sparsity: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn batch_moments_of_standard_sample_are_near_zero() {
        let x = randm(20000, 2, 3);
        assert!(batch_moment_kl(&x) < 1e-3);
        let shifted = x.add_scalar(1.0);
        assert!((batch_moment_kl(&shifted) - 1.0).abs() < 0.02);
    }
}
