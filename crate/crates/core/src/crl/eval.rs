use serde::{Deserialize, Serialize};

use super::tape::Mat;
use crate::error::{Error, Result};

/// Maximum-weight assignment of rows to columns (`rows <= cols`), by the
/// O(n^3) shortest augmenting path method. Returns the column of each row.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let m = weights[0].len();
    assert!(n <= m, "more rows than columns");
    let cost = |i: usize, j: usize| -weights[i][j];
    // 1-based potentials; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn centred_columns(m: &Mat, label_offset: usize) -> Result<Vec<Vec<f64>>> {
    let n = m.nrows() as f64;
    m.column_iter()
        .enumerate()
        .map(|(j, c)| {
            let mean = c.sum() / n;
            let v: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let ss: f64 = v.iter().map(|x| x * x).sum();
            if ss <= 1e-24 * n {
                return Err(Error::ZeroVarianceLatent(label_offset + j));
            }
            let norm = ss.sqrt();
            Ok(v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// `|corr|` between every true column (rows of the result) and every
/// learned column.
pub fn abs_correlations(truth: &Mat, learned: &Mat) -> Result<Vec<Vec<f64>>> {
    if truth.nrows() != learned.nrows() {
        return Err(Error::LengthMismatch {
            left: truth.nrows(),
            right: learned.nrows(),
        });
    }
    let t = centred_columns(truth, 0)?;
    let l = centred_columns(learned, 0)?;
    Ok(t.iter()
        .map(|a| {
            l.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs())
                .collect()
        })
        .collect())
}

/// Mean |corr| under the best one-to-one matching, and the learned column
/// matched to each true column.
pub fn mcc(truth: &Mat, learned: &Mat) -> Result<(f64, Vec<usize>)> {
    if learned.ncols() < truth.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} learned columns for {} true columns",
            learned.ncols(),
            truth.ncols()
        )));
    }
    let c = abs_correlations(truth, learned)?;
    let assign = max_weight_assignment(&c);
    let score = assign.iter().enumerate().map(|(i, &j)| c[i][j]).sum::<f64>() / c.len() as f64;
    Ok((score, assign))
}

/// R^2 of the least-squares fit of each true column on all learned columns
/// plus an intercept.
pub fn r2_per_latent(truth: &Mat, learned: &Mat) -> Result<Vec<f64>> {
    if truth.nrows() != learned.nrows() {
        return Err(Error::LengthMismatch {
            left: truth.nrows(),
            right: learned.nrows(),
        });
    }
    let n = learned.nrows();
    let mut design = Mat::from_element(n, learned.ncols() + 1, 1.0);
    design.columns_mut(0, learned.ncols()).copy_from(learned);
    let svd = design.clone().svd(true, true);
    truth
        .column_iter()
        .enumerate()
        .map(|(j, y)| {
            let y = y.into_owned();
            let mean = y.sum() / n as f64;
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            if sst <= 1e-24 * n as f64 {
                return Err(Error::ZeroVarianceLatent(j));
            }
            let beta = svd
                .solve(&y, 1e-12)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let resid = &y - &design * beta;
            Ok(1.0 - resid.norm_squared() / sst)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub threshold: f64,
    /// `edges[i][j] = 1` for `z_j -> z_i`, in true latent indices.
    pub edges: Vec<Vec<u8>>,
    pub edge_count: usize,
    pub reference_edge_count: usize,
    pub shd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcc: f64,
    pub r2_mean: f64,
    /// Per true latent, in `[s, z]` column order.
    pub r2: Vec<f64>,
    /// Learned column matched to each true column, over `[s, z]`.
    pub permutation: Vec<usize>,
    /// Learned `z` index matched to each true `z`, matching only among the
    /// `z` columns; used to read the learned graph in true indices.
    pub z_assignment: Vec<usize>,
    pub graph: Option<GraphReport>,
}

impl EvalReport {
    pub fn shd(&self) -> Option<usize> {
        self.graph.as_ref().map(|g| g.shd)
    }
}

/// Recovery metrics for learned latents `[s_hat, z_hat]` against true
/// `[s, z]`; the first `d_s` columns of both are shared latents.
pub fn eval_recovery(learned: &Mat, truth: &Mat, d_s: usize) -> Result<EvalReport> {
    if learned.nrows() != truth.nrows() {
        return Err(Error::LengthMismatch {
            left: learned.nrows(),
            right: truth.nrows(),
        });
    }
    if d_s > truth.ncols() || d_s > learned.ncols() {
        return Err(Error::ShapeMismatch("d_s exceeds the latent width".into()));
    }
    let (score, permutation) = mcc(truth, learned)?;
    let r2 = r2_per_latent(truth, learned)?;
    let zt = truth.columns(d_s, truth.ncols() - d_s).into_owned();
    let zl = learned.columns(d_s, learned.ncols() - d_s).into_owned();
    let (_, z_assignment) = mcc(&zt, &zl)?;
    Ok(EvalReport {
        mcc: score,
        r2_mean: r2.iter().sum::<f64>() / r2.len() as f64,
        r2,
        permutation,
        z_assignment,
        graph: None,
    })
}

/// Structural Hamming distance: one per unordered pair whose edge status
/// (absent, `i -> j`, `j -> i`) differs.
pub fn shd(a: &[Vec<u8>], b: &[Vec<u8>]) -> usize {
    let n = a.len();
    let mut d = 0;
    for i in 0..n {
        for j in 0..i {
            if (a[i][j], a[j][i]) != (b[i][j], b[j][i]) {
                d += 1;
            }
        }
    }
    d
}

/// Thresholds `|adjacency|` and re-indexes it through `assignment` (learned
/// index of each true latent) before comparing with `reference`.
pub fn extract_graph(
    adjacency: &Mat,
    threshold: f64,
    assignment: Option<&[usize]>,
    reference: &[Vec<u8>],
) -> Result<GraphReport> {
    let assignment = assignment.ok_or(Error::NoAssignment)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must be positive")));
    }
    let l = reference.len();
    if assignment.len() != l || adjacency.nrows() != l || adjacency.ncols() != l {
        return Err(Error::ShapeMismatch(format!(
            "adjacency {:?}, assignment {}, reference {l}",
            adjacency.shape(),
            assignment.len()
        )));
    }
    let edges: Vec<Vec<u8>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| u8::from(i != j && adjacency[(assignment[i], assignment[j])].abs() > threshold))
                .collect()
        })
        .collect();
    let edge_count = edges.iter().flatten().filter(|&&e| e == 1).count();
    Ok(GraphReport {
        threshold,
        shd: shd(&edges, reference),
        edge_count,
        reference_edge_count: reference.iter().flatten().filter(|&&e| e == 1).count(),
        edges,
    })
}

/// Threshold with the smallest SHD among those keeping at most as many edges
/// as `reference`; ties go to the larger threshold. Candidates sit midway
/// between consecutive distinct `|adjacency|` values.
pub fn select_threshold(
    adjacency: &Mat,
    assignment: &[usize],
    reference: &[Vec<u8>],
) -> Result<f64> {
    let mut mags: Vec<f64> = adjacency.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.dedup();
    let top = mags.first().copied().unwrap_or(1.0);
    let mut candidates = vec![top * 1.5 + 1e-12];
    for w in mags.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    if let Some(&last) = mags.last() {
        candidates.push(0.5 * last);
    }
    let limit = reference.iter().flatten().filter(|&&e| e == 1).count();
    let mut best: Option<(usize, f64)> = None;
    for t in candidates {
        let g = extract_graph(adjacency, t, Some(assignment), reference)?;
        if g.edge_count > limit {
            continue;
        }
        if best.is_none_or(|(s, _)| g.shd < s) {
            best = Some((g.shd, t));
        }
    }
    Ok(best.map_or(top * 1.5 + 1e-12, |(_, t)| t))
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

    /// Best assignment by trying every permutation.
    fn brute(weights: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.len() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..w[0].len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[row][j] + go(w, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(weights, 0, &mut vec![false; weights[0].len()])
    }

    #[test]
    fn assignment_matches_brute_force() {
        for seed in 0..30 {
            let (r, c) = (3 + seed as usize % 3, 5);
            let m = randm(r, c, seed);
            let w: Vec<Vec<f64>> = (0..r).map(|i| (0..c).map(|j| m[(i, j)]).collect()).collect();
            let a = max_weight_assignment(&w);
            let mut seen = a.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), r);
            let got: f64 = a.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
            assert!((got - brute(&w)).abs() < 1e-9);
        }
    }

    #[test]
    fn perfect_and_permuted_recovery() {
        let t = randm(300, 5, 1);
        let r = eval_recovery(&t, &t, 1).unwrap();
        assert!((r.mcc - 1.0).abs() < 1e-12);
        assert!((r.r2_mean - 1.0).abs() < 1e-9);
        assert_eq!(r.permutation, vec![0, 1, 2, 3, 4]);

        let order = [3, 0, 4, 1, 2];
        let mut learned = Mat::zeros(300, 5);
        for (k, &c) in order.iter().enumerate() {
            let sign = if k % 2 == 0 { -2.0 } else { 0.5 };
            learned.set_column(k, &(t.column(c) * sign));
        }
        let r = eval_recovery(&learned, &t, 1).unwrap();
        assert!((r.mcc - 1.0).abs() < 1e-12);
        for (k, &c) in order.iter().enumerate() {
            assert_eq!(r.permutation[c], k);
        }
    }

    #[test]
    fn independent_latents_score_low() {
        let r = eval_recovery(&randm(1000, 4, 2), &randm(1000, 4, 3), 0).unwrap();
        assert!(r.mcc <= 0.15, "{}", r.mcc);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let mut t = randm(50, 3, 4);
        t.set_column(1, &Mat::from_element(50, 1, 2.0).column(0));
        assert!(matches!(
            eval_recovery(&randm(50, 3, 5), &t, 0),
            Err(Error::ZeroVarianceLatent(1))
        ));
    }

    fn truth() -> Vec<Vec<u8>> {
        let mut g = vec![vec![0; 4]; 4];
        g[1][0] = 1;
        g[2][0] = 1;
        g[3][2] = 1;
        g
    }

    #[test]
    fn graph_extraction() {
        let id = [0, 1, 2, 3];
        let mut w = Mat::zeros(4, 4);
        w[(1, 0)] = 1.2;
        w[(2, 0)] = -0.7;
        w[(3, 2)] = 0.9;
        let g = extract_graph(&w, 0.1, Some(&id), &truth()).unwrap();
        assert_eq!(g.shd, 0);
        assert_eq!(g.edge_count, 3);
        let g = extract_graph(&Mat::zeros(4, 4), 0.1, Some(&id), &truth()).unwrap();
        assert_eq!(g.shd, 3);
        assert!(matches!(
            extract_graph(&w, 0.1, None, &truth()),
            Err(Error::NoAssignment)
        ));
        assert!(extract_graph(&w, 0.0, Some(&id), &truth()).is_err());

        // learned latents 0 and 1 swapped relative to the truth: the edge
        // comes out reversed
        let mut v = Mat::zeros(4, 4);
        v[(1, 0)] = 1.0;
        let g = extract_graph(&v, 0.1, Some(&[1, 0, 2, 3]), &truth()).unwrap();
        assert_eq!(g.edges[0][1], 1);
        assert_eq!(g.shd, 3);
    }

    #[test]
    fn threshold_respects_edge_bound() {
        let id = [0, 1, 2, 3];
        let mut w = Mat::zeros(4, 4);
        w[(1, 0)] = 1.0;
        w[(2, 0)] = 0.8;
        w[(3, 2)] = 0.6;
        w[(3, 1)] = 0.05;
        let t = select_threshold(&w, &id, &truth()).unwrap();
        let g = extract_graph(&w, t, Some(&id), &truth()).unwrap();
        assert_eq!(g.shd, 0);
        // a spurious edge stronger than a true one
        w[(3, 0)] = 0.7;
        let t = select_threshold(&w, &id, &truth()).unwrap();
        let g = extract_graph(&w, t, Some(&id), &truth()).unwrap();
        assert!(g.edge_count <= 3);
    }
}
