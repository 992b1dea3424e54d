use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use super::{Method, NullKind, TestResult};
use crate::error::{Error, Result};

/// Counts of `(x, y)` category pairs with empty rows and columns removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl ContingencyTable {
    /// Cross-tabulate two equally long categorical series. Labels are
    /// sorted, so relabelling only permutes rows and columns.
    pub fn from_series<A, B>(x: &[A], y: &[B]) -> Result<Self>
    where
        A: Ord + Clone + ToString,
        B: Ord + Clone + ToString,
    {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        let rows: Vec<A> = x.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let cols: Vec<B> = y.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (a, b) in x.iter().zip(y) {
            let i = rows.binary_search(a).expect("label collected above");
            let j = cols.binary_search(b).expect("label collected above");
            counts[i][j] += 1;
        }
        Self::from_counts(
            counts,
            rows.iter().map(ToString::to_string).collect(),
            cols.iter().map(ToString::to_string).collect(),
        )
    }

    /// Build from raw counts, pruning all-zero rows and columns.
    pub fn from_counts(
        counts: Vec<Vec<u64>>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        let c = col_labels.len();
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch("contingency counts vs labels".into()));
        }
        let keep_rows: Vec<usize> = (0..counts.len())
            .filter(|&i| counts[i].iter().any(|&v| v > 0))
            .collect();
        let keep_cols: Vec<usize> = (0..c)
            .filter(|&j| counts.iter().any(|r| r[j] > 0))
            .collect();
        if keep_rows.len() < 2 || keep_cols.len() < 2 {
            return Err(Error::DegenerateTable {
                rows: keep_rows.len(),
                cols: keep_cols.len(),
            });
        }
        Ok(ContingencyTable {
            counts: keep_rows
                .iter()
                .map(|&i| keep_cols.iter().map(|&j| counts[i][j]).collect())
                .collect(),
            row_labels: keep_rows.iter().map(|&i| row_labels[i].clone()).collect(),
            col_labels: keep_cols.iter().map(|&j| col_labels[j].clone()).collect(),
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn dof(&self) -> usize {
        (self.counts.len() - 1) * (self.col_labels.len() - 1)
    }

    /// Expected counts under independence, `row_total * col_total / n`.
    pub fn expected(&self) -> Vec<Vec<f64>> {
        let n = self.total() as f64;
        let row_tot: Vec<f64> = self.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
        let col_tot: Vec<f64> = (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum::<u64>() as f64)
            .collect();
        row_tot
            .iter()
            .map(|&r| col_tot.iter().map(|&c| r * c / n).collect())
            .collect()
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let e = self.expected();
        self.counts
            .iter()
            .zip(e)
            .flat_map(|(o_row, e_row)| {
                o_row
                    .iter()
                    .zip(e_row)
                    .map(|(&o, e)| (o as f64, e))
                    .collect::<Vec<_>>()
            })
    }

    /// Pearson chi-square statistic.
    pub fn chi_square(&self) -> TestResult {
        let stat: f64 = self.cells().map(|(o, e)| (o - e).powi(2) / e).sum();
        self.result(Method::Csq, stat)
    }

    /// Likelihood-ratio statistic; empty cells contribute nothing.
    pub fn g_square(&self) -> TestResult {
        let stat: f64 = 2.0
            * self
                .cells()
                .filter(|(o, _)| *o > 0.0)
                .map(|(o, e)| o * (o / e).ln())
                .sum::<f64>();
        // Rounding can leave tiny negative sums when O == E everywhere.
        self.result(Method::Gsq, stat.max(0.0))
    }

    fn result(&self, method: Method, statistic: f64) -> TestResult {
        let dof = self.dof();
        TestResult {
            method,
            statistic,
            p_value: chi_square_sf(statistic, dof),
            dof: Some(dof),
            null_kind: NullKind::Analytic,
        }
    }
}

/// Upper tail of the chi-square distribution, `Q(k/2, x/2)`.
pub(crate) fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

pub fn chi_square_test<A, B>(x: &[A], y: &[B]) -> Result<TestResult>
where
    A: Ord + Clone + ToString,
    B: Ord + Clone + ToString,
{
    Ok(ContingencyTable::from_series(x, y)?.chi_square())
}

pub fn g_square_test<A, B>(x: &[A], y: &[B]) -> Result<TestResult>
where
    A: Ord + Clone + ToString,
    B: Ord + Clone + ToString,
{
    Ok(ContingencyTable::from_series(x, y)?.g_square())
}

/// Assign each value to one of `bins` quantile bins (0-based). Cut points
/// are the empirical `k/bins` quantiles; a value equal to a cut point goes
/// to the lower bin, so heavy ties can leave bins empty.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<u32> {
    if values.is_empty() || bins < 2 {
        return vec![0; values.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cuts: Vec<f64> = (1..bins)
        .map(|k| {
            let pos = k as f64 * (n - 1) as f64 / bins as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo + 1 < n {
                sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
            } else {
                sorted[lo]
            }
        })
        .collect();
    values
        .iter()
        .map(|v| cuts.iter().filter(|&&c| *v > c).count() as u32)
        .collect()
}
