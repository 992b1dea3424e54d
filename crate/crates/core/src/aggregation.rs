//! Voting rules that collapse several model or image judgements into one
//! value per person.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tabular::{BigFive, FacialAttributeValue, PersonRecord, Trait, TraitScore};

/// Trait votes, one per model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreVotes(Vec<TraitScore>);

impl ScoreVotes {
    pub fn new(votes: Vec<TraitScore>) -> Result<Self> {
        if votes.is_empty() {
            return Err(Error::EmptyVotes);
        }
        if let Some(bad) = votes.iter().find(|v| !v.in_domain()) {
            return Err(Error::VoteOutOfDomain(bad.0 as i64));
        }
        Ok(ScoreVotes(votes))
    }

    pub fn from_values(values: &[i64]) -> Result<Self> {
        let votes = values
            .iter()
            .map(|&v| TraitScore::checked(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(votes)
    }

    pub fn votes(&self) -> &[TraitScore] {
        &self.0
    }
}

/// Attribute votes, one per image. May be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeVotes(Vec<FacialAttributeValue>);

impl AttributeVotes {
    pub fn new(votes: Vec<FacialAttributeValue>) -> Result<Self> {
        if let Some(bad) = votes.iter().find(|v| !v.in_domain()) {
            return Err(Error::VoteOutOfDomain(bad.0 as i64));
        }
        Ok(AttributeVotes(votes))
    }

    pub fn from_values(values: &[i64]) -> Result<Self> {
        let votes = values
            .iter()
            .map(|&v| {
                i8::try_from(v)
                    .ok()
                    .map(FacialAttributeValue)
                    .filter(|a| a.in_domain())
                    .ok_or(Error::VoteOutOfDomain(v))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttributeVotes(votes))
    }
}

/// Drop "insufficient information" votes, then take the median of the rest
/// rounded up. An even count uses the mean of the two central values. If
/// every vote is 0 the result is 0.
pub fn aggregate_trait(votes: &ScoreVotes) -> TraitScore {
    let mut kept: Vec<u8> = votes.0.iter().map(|v| v.0).filter(|&v| v != 0).collect();
    if kept.is_empty() {
        return TraitScore::INSUFFICIENT;
    }
    kept.sort_unstable();
    let n = kept.len();
    // ceil((a + b) / 2) on integers, with a == b for odd counts
    let (lo, hi) = if n % 2 == 1 {
        (kept[n / 2], kept[n / 2])
    } else {
        (kept[n / 2 - 1], kept[n / 2])
    };
    TraitScore((lo + hi).div_ceil(2))
}

/// Majority of present (+1) versus absent (-1); unknown (0) votes are
/// ignored and an exact tie, including no votes at all, gives 0.
pub fn aggregate_attribute(votes: &AttributeVotes) -> FacialAttributeValue {
    let present = votes.0.iter().filter(|v| v.0 == 1).count();
    let absent = votes.0.iter().filter(|v| v.0 == -1).count();
    match present.cmp(&absent) {
        std::cmp::Ordering::Greater => FacialAttributeValue::PRESENT,
        std::cmp::Ordering::Less => FacialAttributeValue::ABSENT,
        std::cmp::Ordering::Equal => FacialAttributeValue::UNKNOWN,
    }
}

/// Per-image facial attribute annotations for one person.
pub type ImageAttributes = BTreeMap<String, Vec<FacialAttributeValue>>;

/// Fill `final_scores` for every record from its per-model scores.
///
/// `image_attributes`, when given, maps a record id to its per-image
/// attribute votes; the aggregated values replace `facial_attributes`.
/// Records already carrying person-level attributes and no per-image votes
/// are left alone, so the operation is idempotent.
pub fn aggregate_dataset(
    records: &[PersonRecord],
    image_attributes: Option<&BTreeMap<String, ImageAttributes>>,
) -> Result<Vec<PersonRecord>> {
    records
        .iter()
        .map(|r| {
            if r.per_model_scores.is_empty() {
                return Err(Error::NoModelScores(r.id.clone()));
            }
            let mut out = r.clone();
            let mut finals = BigFive([TraitScore(0); 5]);
            for t in Trait::ALL {
                let votes = ScoreVotes::new(r.per_model_scores.values().map(|b| b.get(t)).collect())?;
                finals.set(t, aggregate_trait(&votes));
            }
            out.final_scores = Some(finals);
            if let Some(per_image) = image_attributes.and_then(|m| m.get(&r.id)) {
                for (attr, votes) in per_image {
                    let votes = AttributeVotes::new(votes.clone())?;
                    out.facial_attributes
                        .insert(attr.clone(), aggregate_attribute(&votes));
                }
            }
            Ok(out)
        })
        .collect()
}
