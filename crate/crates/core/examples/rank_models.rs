//! Ranks caption models by overall score and measures prompt stability.

use persona::llm_eval::{
    intra_prompt_std, manhattan_between_prompts, mean_scores, rank_models, ModelEvalRecord,
    PromptRunSet,
};

fn rec(id: &str, gt: f64, rates: [f64; 6]) -> ModelEvalRecord {
    let [mr, ir, pp, of, cc, fa] = rates;
    ModelEvalRecord {
        model_id: id.into(),
        dataset: Some("demo".into()),
        gt,
        mr,
        ir,
        pp,
        of,
        cc,
        fa,
    }
}

fn main() -> persona::error::Result<()> {
    let records = [
        rec("model-a", 4.1, [0.02, 0.01, 0.97, 0.99, 0.95, 0.90]),
        rec("model-b", 2.3, [0.10, 0.04, 0.90, 0.93, 0.88, 0.81]),
        rec("model-c", 7.9, [0.00, 0.00, 0.99, 1.00, 0.97, 0.93]),
    ];
    for r in rank_models(&records)? {
        println!("{}. {:<8} OS {:.3}", r.rank, r.record.model_id, r.os);
    }

    let a = PromptRunSet {
        prompt_id: "terse".into(),
        runs: vec![[2.0, 3.0, 2.0, 2.0, 1.0], [2.0, 3.0, 3.0, 2.0, 1.0], [2.0, 2.0, 2.0, 2.0, 1.0]],
    };
    let b = PromptRunSet {
        prompt_id: "detailed".into(),
        runs: vec![[3.0, 3.0, 2.0, 3.0, 1.0], [3.0, 3.0, 2.0, 2.0, 2.0], [3.0, 3.0, 2.0, 3.0, 1.0]],
    };
    for p in [&a, &b] {
        let s = intra_prompt_std(p)?;
        println!("{:<9} per-trait std {:?}  mean {:.3}", p.prompt_id, s.per_trait, s.mean);
    }
    let d = manhattan_between_prompts(&mean_scores(&a)?, &mean_scores(&b)?)?;
    println!("manhattan distance between prompts {d:.3}");
    Ok(())
}
