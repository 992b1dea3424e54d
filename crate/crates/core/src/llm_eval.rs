//! Scores used to pick the trait-generating language model: the overall
//! score over the six quality rates, and run-to-run consistency statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One model's quality rates on one dataset. `gt` is the mean generation
/// time in seconds; every other field is a rate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvalRecord {
    pub model_id: String,
    #[serde(default)]
    pub dataset: Option<String>,
    pub gt: f64,
    pub mr: f64,
    pub ir: f64,
    pub pp: f64,
    pub of: f64,
    pub cc: f64,
    pub fa: f64,
}

impl ModelEvalRecord {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.gt.is_finite() && self.gt >= 0.0) {
            bad.push(format!("gt {} must be a non-negative number of seconds", self.gt));
        }
        for (name, v) in [
            ("mr", self.mr),
            ("ir", self.ir),
            ("pp", self.pp),
            ("of", self.of),
            ("cc", self.cc),
            ("fa", self.fa),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} {v} outside [0, 1]"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidRecord {
                id: self.model_id.clone(),
                violations: bad,
            })
        }
    }
}

/// Mean of the six rates with the two error rates flipped. Generation time
/// does not enter.
pub fn overall_score(rec: &ModelEvalRecord) -> Result<f64> {
    rec.validate()?;
    Ok((rec.pp + rec.of + rec.cc + rec.fa + (1.0 - rec.mr) + (1.0 - rec.ir)) / 6.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub rank: usize,
    #[serde(flatten)]
    pub record: ModelEvalRecord,
    pub os: f64,
}

/// Records sorted by descending overall score; ties keep input order.
pub fn rank_models(records: &[ModelEvalRecord]) -> Result<Vec<RankedModel>> {
    let mut scored: Vec<(f64, &ModelEvalRecord)> = records
        .iter()
        .map(|r| overall_score(r).map(|os| (os, r)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (os, r))| RankedModel {
            rank: i + 1,
            record: r.clone(),
            os,
        })
        .collect())
}

pub fn load_eval_records(path: &Path) -> Result<Vec<ModelEvalRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let rec: ModelEvalRecord = row?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Repeated runs of one prompt: `runs[r][t]` is run `r`'s score for trait `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRunSet {
    pub prompt_id: String,
    pub runs: Vec<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSpread {
    pub per_trait: [f64; 5],
    /// Average of the five standard deviations.
    pub mean: f64,
}

/// Per-trait sample standard deviation across runs (divisor `runs - 1`).
pub fn intra_prompt_std(runs: &PromptRunSet) -> Result<TraitSpread> {
    let n = runs.runs.len();
    if n < 2 {
        return Err(Error::TooFewSamples { n, min: 2 });
    }
    let mut per_trait = [0.0; 5];
    for (t, out) in per_trait.iter_mut().enumerate() {
        let mean = runs.runs.iter().map(|r| r[t]).sum::<f64>() / n as f64;
        let ss: f64 = runs.runs.iter().map(|r| (r[t] - mean).powi(2)).sum();
        *out = (ss / (n - 1) as f64).sqrt();
    }
    let mean = per_trait.iter().sum::<f64>() / 5.0;
    Ok(TraitSpread { per_trait, mean })
}

/// Per-trait mean score of a prompt, the input to [`manhattan_between_prompts`].
pub fn mean_scores(runs: &PromptRunSet) -> Result<[f64; 5]> {
    let n = runs.runs.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut m = [0.0; 5];
    for r in &runs.runs {
        for t in 0..5 {
            m[t] += r[t] / n as f64;
        }
    }
    Ok(m)
}

/// L1 distance between two per-trait mean vectors; both must have length 5.
pub fn manhattan_between_prompts(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != 5 || b.len() != 5 {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(mr: f64, ir: f64, pp: f64, of: f64, cc: f64, fa: f64) -> ModelEvalRecord {
        ModelEvalRecord {
            model_id: "m".into(),
            dataset: None,
            gt: 1.0,
            mr,
            ir,
            pp,
            of,
            cc,
            fa,
        }
    }

    #[test]
    fn overall_score_examples() {
        let os = overall_score(&rec(0.03, 0.17, 0.99, 1.0, 1.0, 1.0)).unwrap();
        assert!((os - 0.965).abs() < 1e-12);
        let os = overall_score(&rec(0.30, 0.43, 1.0, 1.0, 0.95, 1.0)).unwrap();
        assert!((os - 0.87).abs() < 1e-12);
        assert_eq!(overall_score(&rec(0.0, 0.0, 1.0, 1.0, 1.0, 1.0)).unwrap(), 1.0);
        assert!(overall_score(&rec(1.2, 0.0, 1.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn std_examples() {
        let same = PromptRunSet {
            prompt_id: "p".into(),
            runs: vec![[1.0, 2.0, 3.0, 1.0, 2.0]; 4],
        };
        assert_eq!(intra_prompt_std(&same).unwrap().per_trait, [0.0; 5]);

        let two = PromptRunSet {
            prompt_id: "p".into(),
            runs: vec![[1.0; 5], [3.0; 5]],
        };
        let s = intra_prompt_std(&two).unwrap();
        assert!((s.per_trait[0] - 2f64.sqrt()).abs() < 1e-12);

        // mean 2.25, squared deviations 3 * 0.0625 + 0.5625 = 0.75, / 3 = 0.25
        let four = PromptRunSet {
            prompt_id: "p".into(),
            runs: [2.0, 2.0, 2.0, 3.0].iter().map(|&v| [v; 5]).collect(),
        };
        let s = intra_prompt_std(&four).unwrap();
        assert!((s.per_trait[2] - 0.5).abs() < 1e-12);
        assert!((s.mean - 0.5).abs() < 1e-12);

        let one = PromptRunSet {
            prompt_id: "p".into(),
            runs: vec![[1.0; 5]],
        };
        assert!(matches!(intra_prompt_std(&one), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn manhattan_examples() {
        let a = [1.0, 2.0, 3.0, 1.0, 2.0];
        assert_eq!(manhattan_between_prompts(&a, &a).unwrap(), 0.0);
        assert_eq!(
            manhattan_between_prompts(&a, &[2.0, 2.0, 3.0, 1.0, 2.0]).unwrap(),
            1.0
        );
        assert!(matches!(
            manhattan_between_prompts(&[1.0, 2.0], &a),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ranking_orders_by_score() {
        let mut a = rec(0.5, 0.5, 1.0, 1.0, 1.0, 1.0);
        a.model_id = "low".into();
        let mut b = rec(0.0, 0.0, 1.0, 1.0, 1.0, 1.0);
        b.model_id = "high".into();
        let ranked = rank_models(&[a, b]).unwrap();
        assert_eq!(ranked[0].record.model_id, "high");
        assert_eq!(ranked[1].rank, 2);
    }

    fn rate() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    proptest! {
        #[test]
        fn monotone_in_every_rate(
            base in prop::array::uniform6(rate()), which in 0usize..6, bump in 0.0f64..0.5
        ) {
            let mk = |v: [f64; 6]| rec(v[0], v[1], v[2], v[3], v[4], v[5]);
            let mut up = base;
            up[which] = (up[which] + bump).min(1.0);
            let before = overall_score(&mk(base)).unwrap();
            let after = overall_score(&mk(up)).unwrap();
            if which < 2 {
                prop_assert!(after <= before + 1e-15);
            } else {
                prop_assert!(after >= before - 1e-15);
            }
        }

        #[test]
        fn triangle_inequality(
            a in prop::array::uniform5(0.0f64..3.0),
            b in prop::array::uniform5(0.0f64..3.0),
            c in prop::array::uniform5(0.0f64..3.0),
        ) {
            let d = |x: &[f64; 5], y: &[f64; 5]| manhattan_between_prompts(x, y).unwrap();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }
    }
}
