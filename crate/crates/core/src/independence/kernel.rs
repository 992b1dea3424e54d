//! Gaussian Gram matrices, centring, and the permutation null shared by the
//! kernel tests.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Gaussian-kernel Gram matrix `exp(-|a - b|^2 / (2 h^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGram {
    pub matrix: DMatrix<f64>,
    pub bandwidth: f64,
}

impl KernelGram {
    pub fn gaussian(x: &DMatrix<f64>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let n = x.nrows();
        let sq = pairwise_sq_dists(x);
        let scale = -1.0 / (2.0 * bandwidth * bandwidth);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = (sq[(i, j)] * scale).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(KernelGram {
            matrix: k,
            bandwidth,
        })
    }

    /// Gram matrix with the median-heuristic bandwidth.
    pub fn median_heuristic(x: &DMatrix<f64>, subsample: usize) -> Result<Self> {
        Self::gaussian(x, median_bandwidth(x, subsample)?)
    }

    pub fn centered(&self) -> DMatrix<f64> {
        center(&self.matrix)
    }
}

pub(crate) fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let t = x[(i, c)] - x[(j, c)];
                s += t * t;
            }
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Median pairwise Euclidean distance over at most `cap` evenly spaced rows.
///
/// When more than half of the pairs coincide (common for discrete scores)
/// the median is 0; the median of the non-zero distances is used instead.
/// Only input with no spread at all is rejected.
pub fn median_bandwidth(x: &DMatrix<f64>, cap: usize) -> Result<f64> {
    let n = x.nrows();
    let m = n.min(cap.max(2));
    let rows: Vec<usize> = (0..m).map(|i| i * n / m).collect();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[..a] {
            let s: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
            dists.push(s.sqrt());
        }
    }
    let median = median_of(&mut dists);
    if median > 0.0 {
        return Ok(median);
    }
    let mut nonzero: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        // The subsample may miss the spread of the full data.
        let full = pairwise_sq_dists(x);
        let mut all: Vec<f64> = full.iter().filter(|&&d| d > 0.0).map(|d| d.sqrt()).collect();
        if all.is_empty() {
            return Err(Error::ZeroVariance);
        }
        return Ok(median_of(&mut all));
    }
    Ok(median_of(&mut nonzero))
}

fn median_of(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `H K H` with `H = I - 11'/n`.
pub fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Frobenius inner product `sum_ij a_ij b_ij`.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Row-major copy for fast permuted access.
fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `sum_ij a_ij b_{p(i) p(j)}` for row-major `a`, `b`.
fn permuted_inner(a: &[f64], b: &[f64], n: usize, p: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let ar = &a[i * n..(i + 1) * n];
        let br = &b[p[i] * n..(p[i] + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += ar[j] * br[p[j]];
        }
        total += s;
    }
    total
}

/// Permutation null for statistics of the form `c * sum_ij a_ij b_ij`, where
/// `a` is centred. Permutation `b` uses RNG stream `b` of `seed`, so the
/// result is independent of how the work is split across threads.
pub(crate) struct PermutationNull {
    a: Vec<f64>,
    b: Vec<f64>,
    n: usize,
}

impl PermutationNull {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        PermutationNull {
            a: row_major(a),
            b: row_major(b),
            n: a.nrows(),
        }
    }

    /// Unpermuted inner product, computed on the same path as the null draws.
    pub fn observed(&self) -> f64 {
        let id: Vec<usize> = (0..self.n).collect();
        permuted_inner(&self.a, &self.b, self.n, &id)
    }

    /// `(1 + #{perm >= observed}) / (P + 1)`.
    pub fn p_value(&self, observed: f64, permutations: usize, seed: u64) -> f64 {
        let hits: usize = (0..permutations)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(seed, k as u64);
                let mut p: Vec<usize> = (0..self.n).collect();
                p.shuffle(&mut rng);
                usize::from(permuted_inner(&self.a, &self.b, self.n, &p) >= observed)
            })
            .sum();
        (1 + hits) as f64 / (permutations + 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn gram_properties() {
        let x = data(40, 2, 3);
        let g = KernelGram::median_heuristic(&x, 500).unwrap();
        for i in 0..40 {
            assert_eq!(g.matrix[(i, i)], 1.0);
            for j in 0..40 {
                assert!((g.matrix[(i, j)] - g.matrix[(j, i)]).abs() < 1e-9);
            }
        }
        let eig = g.matrix.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > -1e-9));
    }

    #[test]
    fn bandwidth_is_median_distance() {
        let x = super::super::column(&[0.0, 1.0, 3.0]);
        // distances 1, 2, 3
        assert_eq!(median_bandwidth(&x, 500).unwrap(), 2.0);
        let c = super::super::column(&[2.0; 6]);
        assert!(matches!(median_bandwidth(&c, 500), Err(Error::ZeroVariance)));
        // mostly tied values still give a usable bandwidth
        let t = super::super::column(&[1.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(median_bandwidth(&t, 500).unwrap(), 1.0);
    }

    #[test]
    fn centering_zeroes_row_sums() {
        let k = KernelGram::median_heuristic(&data(15, 1, 9), 500).unwrap();
        let c = k.centered();
        for i in 0..15 {
            assert!(c.row(i).sum().abs() < 1e-12);
            assert!(c.column(i).sum().abs() < 1e-12);
        }
        let ones = DMatrix::from_element(15, 15, 1.0);
        assert!(frobenius(&c, &center(&ones)).abs() < 1e-12);
    }

    #[test]
    fn permutation_p_value_independent_of_thread_count() {
        let x = data(30, 1, 1);
        let y = data(30, 1, 2);
        let a = KernelGram::median_heuristic(&x, 500).unwrap().centered();
        let b = KernelGram::median_heuristic(&y, 500).unwrap().matrix;
        let null = PermutationNull::new(&a, &b);
        let obs = null.observed();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let p1 = one.install(|| null.p_value(obs, 200, 5));
        let p3 = three.install(|| null.p_value(obs, 200, 5));
        assert_eq!(p1, p3);
        assert!(p1 > 0.0 && p1 <= 1.0);
    }

    proptest! {
        #[test]
        fn centred_trace_is_nonnegative(seed in 0u64..500) {
            let x = data(12, 1, seed);
            let y = data(12, 2, seed + 1000);
            let k = KernelGram::median_heuristic(&x, 500).unwrap().centered();
            let l = KernelGram::median_heuristic(&y, 500).unwrap().centered();
            prop_assert!(frobenius(&k, &l) >= -1e-12);
        }
    }
}
