//! Aggregating annotator votes: median-rounded-up trait scores and
//! majority facial attributes.

use persona::aggregation::{aggregate_attribute, aggregate_trait, AttributeVotes, ScoreVotes};

fn main() -> persona::error::Result<()> {
    let trait_votes: [&[i64]; 5] = [&[2, 3, 0], &[1, 2, 3, 3], &[0, 0, 0], &[3], &[1, 1, 2, 3, 0]];
    for v in trait_votes {
        let score = aggregate_trait(&ScoreVotes::from_values(v)?);
        println!("trait votes {v:?} -> {}", score.value());
    }

    let attr_votes: [&[i64]; 4] = [&[1, 1, -1], &[1, -1], &[0, 0, -1], &[]];
    for v in attr_votes {
        let a = aggregate_attribute(&AttributeVotes::from_values(v)?);
        println!("attribute votes {v:?} -> {}", a.0);
    }

    // out-of-domain votes are rejected up front
    match ScoreVotes::from_values(&[2, 7]) {
        Ok(_) => println!("unexpected: 7 accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
