use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    chi_square_test, column, g_square_test, hsic_test, kci_test, mix_seed, quantile_bins,
    rcit_test, KernelOptions, Method, TestResult,
};
use crate::error::{Error, Result};
use crate::tabular::{ColumnKind, FeatureValue, Table, Trait};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub tests: Vec<Method>,
    pub alpha: f64,
    /// Quantile bins for continuous features fed to CSQ/GSQ.
    pub bins: usize,
    pub kernel: KernelOptions,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            tests: Method::ALL.to_vec(),
            alpha: 0.05,
            bins: 3,
            kernel: KernelOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum MethodOutcome {
    Applied {
        #[serde(flatten)]
        result: TestResult,
        significant: bool,
    },
    /// The test could not run on this pair, e.g. a single observed category.
    Skipped { method: Method, reason: String },
}

impl MethodOutcome {
    pub fn method(&self) -> Method {
        match self {
            MethodOutcome::Applied { result, .. } => result.method,
            MethodOutcome::Skipped { method, .. } => *method,
        }
    }
}

/// `(significant, applied)` over the outcomes of one cell.
pub fn tally(outcomes: &[MethodOutcome]) -> (usize, usize) {
    outcomes.iter().fold((0, 0), |(s, a), o| match o {
        MethodOutcome::Applied { significant, .. } => (s + usize::from(*significant), a + 1),
        MethodOutcome::Skipped { .. } => (s, a),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub feature: String,
    pub n: usize,
    pub outcomes: Vec<MethodOutcome>,
}

/// Count of rejecting tests per (trait, feature) cell; `cells[t][f]` is
/// `(significant, applied)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    pub alpha: f64,
    pub traits: Vec<String>,
    pub features: Vec<String>,
    pub cells: Vec<Vec<(usize, usize)>>,
}

impl ConsensusMatrix {
    pub fn get(&self, trait_name: &str, feature: &str) -> Option<(usize, usize)> {
        let t = self.traits.iter().position(|x| x == trait_name)?;
        let f = self.features.iter().position(|x| x == feature)?;
        Some(self.cells[t][f])
    }

    /// Rows are traits, columns features, cells `"significant/applied"`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["trait".to_string()];
        header.extend(self.features.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.traits.iter().zip(&self.cells) {
            let mut rec = vec![t.clone()];
            rec.extend(row.iter().map(|(s, a)| format!("{s}/{a}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub matrix: ConsensusMatrix,
    pub pairs: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Real(f64),
    Label(String),
}

struct FeatureColumn {
    categorical: bool,
    cells: Vec<Option<Cell>>,
}

fn feature_column(table: &Table, name: &str) -> Result<FeatureColumn> {
    let real = |f: &dyn Fn(&crate::tabular::PersonRecord) -> Option<f64>| FeatureColumn {
        categorical: false,
        cells: table.records.iter().map(|r| f(r).map(Cell::Real)).collect(),
    };
    let col = match name {
        "height" => real(&|r| r.height),
        "weight" => real(&|r| r.weight),
        "latitude" => real(&|r| r.latitude),
        "longitude" => real(&|r| r.longitude),
        "birth_year" => real(&|r| r.birth_year.map(f64::from)),
        "birth_month" => real(&|r| r.birth_month.map(f64::from)),
        "birth_day" => real(&|r| r.birth_day.map(f64::from)),
        "category" => FeatureColumn {
            categorical: true,
            cells: table
                .records
                .iter()
                .map(|r| r.category.clone().map(Cell::Label))
                .collect(),
        },
        _ => {
            if let Some(attr) = name.strip_prefix("face:") {
                let known = table.kinds.contains_key(name)
                    || table.records.iter().any(|r| r.facial_attributes.contains_key(attr));
                if !known {
                    return Err(Error::UnknownColumn(name.to_string()));
                }
                // 0 marks an indeterminate attribute and is treated as missing.
                FeatureColumn {
                    categorical: true,
                    cells: table
                        .records
                        .iter()
                        .map(|r| {
                            r.facial_attributes
                                .get(attr)
                                .filter(|v| v.0 != 0)
                                .map(|v| Cell::Label(v.0.to_string()))
                        })
                        .collect(),
                }
            } else {
                let known = table.kinds.get(name).is_some_and(|k| *k != ColumnKind::Score)
                    || table.records.iter().any(|r| r.features.contains_key(name));
                if !known {
                    return Err(Error::UnknownColumn(name.to_string()));
                }
                let labels = table.labels.get(name);
                let mut categorical = table.kinds.get(name) == Some(&ColumnKind::Categorical);
                let cells = table
                    .records
                    .iter()
                    .map(|r| match r.features.get(name).copied().flatten() {
                        Some(FeatureValue::Continuous(v)) => Some(Cell::Real(v)),
                        Some(FeatureValue::Categorical(i)) => {
                            categorical = true;
                            let label = labels
                                .and_then(|l| l.label(i))
                                .map(str::to_string)
                                .unwrap_or_else(|| i.to_string());
                            Some(Cell::Label(label))
                        }
                        None => None,
                    })
                    .collect();
                FeatureColumn { categorical, cells }
            }
        }
    };
    Ok(col)
}

/// Deterministic 64-bit label for a column name, so per-pair seeds do not
/// depend on column order.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn method_label(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).expect("listed") as u64
}

/// Runs the configured tests on every (trait, feature) pair.
///
/// Rows enter a pair when the aggregated trait score is non-zero and the
/// feature cell is present; fewer than five such rows is an error. CSQ/GSQ
/// see the score as a category and continuous features as quantile bins;
/// kernel tests see the score as a real number and categorical features as
/// one-hot vectors. A test that cannot run (e.g. a single observed category)
/// is reported as skipped and left out of the denominator.
pub fn consensus(
    table: &Table,
    traits: &[Trait],
    features: &[String],
    config: &ConsensusConfig,
) -> Result<ConsensusReport> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", config.alpha)));
    }
    if config.bins < 2 {
        return Err(Error::InvalidConfig("bins must be at least 2".into()));
    }
    let columns: Vec<FeatureColumn> = features
        .iter()
        .map(|f| feature_column(table, f))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    let mut cells = vec![vec![(0, 0); features.len()]; traits.len()];
    for (ti, &t) in traits.iter().enumerate() {
        for (fi, (fname, col)) in features.iter().zip(&columns).enumerate() {
            let mut scores = Vec::new();
            let mut values = Vec::new();
            for (rec, cell) in table.records.iter().zip(&col.cells) {
                let Some(score) = rec.final_scores.map(|b| b.get(t).value()) else {
                    continue;
                };
                if score == 0 {
                    continue;
                }
                if let Some(c) = cell {
                    scores.push(score);
                    values.push(c.clone());
                }
            }
            if scores.len() < super::MIN_KERNEL_SAMPLES {
                return Err(Error::TooFewSamples {
                    n: scores.len(),
                    min: super::MIN_KERNEL_SAMPLES,
                });
            }
            let seed = mix_seed(config.kernel.seed, &[t.index() as u64, name_hash(fname)]);
            let outcomes: Vec<MethodOutcome> = config
                .tests
                .iter()
                .map(|&m| run_method(m, &scores, &values, col.categorical, seed, config))
                .collect::<Result<_>>()?;
            cells[ti][fi] = tally(&outcomes);
            pairs.push(CellReport {
                trait_name: t.letter().to_string(),
                feature: fname.clone(),
                n: scores.len(),
                outcomes,
            });
        }
    }
    Ok(ConsensusReport {
        matrix: ConsensusMatrix {
            alpha: config.alpha,
            traits: traits.iter().map(|t| t.letter().to_string()).collect(),
            features: features.to_vec(),
            cells,
        },
        pairs,
    })
}

fn run_method(
    method: Method,
    scores: &[u8],
    values: &[Cell],
    categorical: bool,
    seed: u64,
    config: &ConsensusConfig,
) -> Result<MethodOutcome> {
    let result = if method.is_discrete() {
        let y: Vec<String> = if categorical {
            values
                .iter()
                .map(|c| match c {
                    Cell::Label(s) => s.clone(),
                    Cell::Real(v) => v.to_string(),
                })
                .collect()
        } else {
            let reals: Vec<f64> = values.iter().map(real_of).collect();
            quantile_bins(&reals, config.bins)
                .into_iter()
                .map(|b| b.to_string())
                .collect()
        };
        if method == Method::Csq {
            chi_square_test(scores, &y)
        } else {
            g_square_test(scores, &y)
        }
    } else {
        let x = column(&scores.iter().map(|&s| f64::from(s)).collect::<Vec<_>>());
        let y = if categorical {
            one_hot(values)
        } else {
            column(&values.iter().map(real_of).collect::<Vec<_>>())
        };
        let opts = KernelOptions {
            seed: mix_seed(seed, &[method_label(method)]),
            ..config.kernel.clone()
        };
        match method {
            Method::Hsic => hsic_test(&x, &y, &opts),
            Method::Rcit => rcit_test(&x, &y, None, &opts),
            _ => kci_test(&x, &y, &opts),
        }
    };
    match result {
        Ok(r) => Ok(MethodOutcome::Applied {
            significant: r.rejects(config.alpha),
            result: r,
        }),
        Err(e @ (Error::DegenerateTable { .. } | Error::ZeroVariance)) => Ok(MethodOutcome::Skipped {
            method,
            reason: e.to_string(),
        }),
        Err(e) => Err(e),
    }
}

fn real_of(c: &Cell) -> f64 {
    match c {
        Cell::Real(v) => *v,
        Cell::Label(_) => unreachable!("continuous column holds labels"),
    }
}

fn one_hot(values: &[Cell]) -> DMatrix<f64> {
    let mut levels: BTreeMap<String, usize> = BTreeMap::new();
    let keys: Vec<String> = values
        .iter()
        .map(|c| match c {
            Cell::Label(s) => s.clone(),
            Cell::Real(v) => v.to_string(),
        })
        .collect();
    for k in &keys {
        let next = levels.len();
        levels.entry(k.clone()).or_insert(next);
    }
    let mut m = DMatrix::zeros(values.len(), levels.len());
    for (i, k) in keys.iter().enumerate() {
        m[(i, levels[k])] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::super::NullKind;
    use super::*;
    use crate::tabular::{BigFive, FacialAttributeValue, PersonRecord};

    fn outcome(method: Method, p: f64) -> MethodOutcome {
        MethodOutcome::Applied {
            result: TestResult {
                method,
                statistic: 1.0,
                p_value: p,
                dof: None,
                null_kind: NullKind::Permutation,
            },
            significant: p < 0.05,
        }
    }

    #[test]
    fn tally_counts() {
        let all = |p| Method::ALL.iter().map(|&m| outcome(m, p)).collect::<Vec<_>>();
        assert_eq!(tally(&all(0.01)), (5, 5));
        assert_eq!(tally(&all(0.5)), (0, 5));
        let mut partial = all(0.01);
        partial[0] = MethodOutcome::Skipped {
            method: Method::Csq,
            reason: "degenerate".into(),
        };
        partial.remove(1);
        assert_eq!(tally(&partial), (3, 3));
    }

    fn table(n: usize) -> Table {
        let mut t = Table::default();
        for i in 0..n {
            let mut r = PersonRecord::new(format!("p{i}"));
            let o = (i % 3 + 1) as u8;
            r.final_scores = Some(BigFive::new(o, 2, (i % 2 + 1) as u8, 0, 1));
            r.height = Some(150.0 + 10.0 * o as f64 + (i % 7) as f64);
            r.category = Some(if i % 2 == 0 { "a" } else { "b" }.into());
            r.facial_attributes
                .insert("smile".into(), FacialAttributeValue((i % 3) as i8 - 1));
            t.records.push(r);
        }
        t
    }

    #[test]
    fn dependent_pair_is_flagged() {
        let t = table(90);
        let config = ConsensusConfig {
            kernel: KernelOptions {
                permutations: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = consensus(&t, &[Trait::O], &["height".into()], &config).unwrap();
        assert_eq!(rep.matrix.get("O", "height"), Some((5, 5)));
        assert_eq!(rep.pairs[0].n, 90);
    }

    #[test]
    fn skipped_tests_leave_the_denominator() {
        let t = table(30);
        let config = ConsensusConfig {
            tests: vec![Method::Csq, Method::Hsic],
            kernel: KernelOptions {
                permutations: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        // C is constant: both tests are inapplicable
        let rep = consensus(&t, &[Trait::C, Trait::E], &["category".into()], &config).unwrap();
        assert_eq!(rep.matrix.get("C", "category"), Some((0, 0)));
        assert_eq!(rep.matrix.get("E", "category").unwrap().1, 2);
        assert!(rep.matrix.to_csv().unwrap().starts_with("trait,category\nC,0/0\nE,"));
    }

    #[test]
    fn zero_scores_and_unknown_attributes_are_dropped() {
        let t = table(30);
        let config = ConsensusConfig {
            tests: vec![Method::Csq],
            ..Default::default()
        };
        // A is 0 for everyone
        assert!(matches!(
            consensus(&t, &[Trait::A], &["height".into()], &config),
            Err(Error::TooFewSamples { n: 0, .. })
        ));
        let rep = consensus(&t, &[Trait::O], &["face:smile".into()], &config).unwrap();
        assert_eq!(rep.pairs[0].n, 20);
    }

    #[test]
    fn unknown_column() {
        let t = table(10);
        assert!(matches!(
            consensus(&t, &[Trait::O], &["shoe_size".into()], &ConsensusConfig::default()),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn seeds_do_not_depend_on_column_order() {
        let t = table(40);
        let config = ConsensusConfig {
            tests: vec![Method::Hsic],
            kernel: KernelOptions {
                permutations: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = consensus(&t, &[Trait::O], &["height".into(), "category".into()], &config).unwrap();
        let b = consensus(&t, &[Trait::O], &["category".into(), "height".into()], &config).unwrap();
        assert_eq!(a.pairs[0], b.pairs[1]);
    }
}
