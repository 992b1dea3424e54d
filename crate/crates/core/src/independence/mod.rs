//! Pairwise independence tests between a trait-score column and a feature
//! column, and the count-of-rejections consensus matrix built from them.
//!
//! Two discrete tests work on contingency tables ([`chi_square_test`],
//! [`g_square_test`]); three kernel tests work on real-valued samples
//! ([`hsic_test`], [`rcit_test`], [`kci_test`]). All kernel tests are pure
//! functions of `(data, seed)`: permutation and Monte Carlo draws use
//! counter-derived streams, so results do not depend on the rayon pool size.

mod consensus;
mod contingency;
mod hsic;
mod kci;
pub mod kernel;
mod rcit;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub(crate) use crate::rng::mix_seed;

pub use consensus::{
    consensus, CellReport, ConsensusConfig, ConsensusMatrix, ConsensusReport, MethodOutcome,
};
pub use contingency::{chi_square_test, g_square_test, quantile_bins, ContingencyTable};
pub use hsic::hsic_test;
pub use kci::kci_test;
pub use rcit::rcit_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Csq,
    Gsq,
    Hsic,
    Rcit,
    Kci,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Csq, Method::Gsq, Method::Hsic, Method::Rcit, Method::Kci];

    pub fn name(self) -> &'static str {
        match self {
            Method::Csq => "CSQ",
            Method::Gsq => "GSQ",
            Method::Hsic => "HSIC",
            Method::Rcit => "RCIT",
            Method::Kci => "KCI",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csq" | "chisq" | "chi-square" => Some(Method::Csq),
            "gsq" | "g-square" => Some(Method::Gsq),
            "hsic" => Some(Method::Hsic),
            "rcit" => Some(Method::Rcit),
            "kci" => Some(Method::Kci),
            _ => None,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Method::Csq | Method::Gsq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullKind {
    Analytic,
    Permutation,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom, discrete tests only.
    pub dof: Option<usize>,
    pub null_kind: NullKind,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HsicNull {
    #[default]
    Permutation,
    /// Two-moment gamma fit to the null distribution of `n * HSIC`.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KciNull {
    #[default]
    Spectral,
    Permutation,
}

/// Knobs shared by the three kernel tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelOptions {
    pub seed: u64,
    pub permutations: usize,
    pub hsic_null: HsicNull,
    pub kci_null: KciNull,
    /// Random Fourier features per variable for RCIT.
    pub rff_features: usize,
    /// Monte Carlo draws from the KCI spectral null.
    pub spectral_draws: usize,
    /// Fraction of each centred Gram trace the retained eigenvalues cover.
    pub spectral_mass: f64,
    /// Points used by the median-distance bandwidth heuristic.
    pub bandwidth_subsample: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            seed: 0,
            permutations: 1000,
            hsic_null: HsicNull::Permutation,
            kci_null: KciNull::Spectral,
            rff_features: 100,
            spectral_draws: 5000,
            spectral_mass: 0.99,
            bandwidth_subsample: 500,
        }
    }
}

impl KernelOptions {
    pub fn with_seed(seed: u64) -> Self {
        KernelOptions {
            seed,
            ..Default::default()
        }
    }
}

/// Column vector from a series.
pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

pub(crate) const MIN_KERNEL_SAMPLES: usize = 5;

pub(crate) fn check_kernel_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<usize> {
    if x.nrows() != y.nrows() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.nrows(),
        });
    }
    let n = x.nrows();
    if n < MIN_KERNEL_SAMPLES {
        return Err(Error::TooFewSamples {
            n,
            min: MIN_KERNEL_SAMPLES,
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(n)
}
