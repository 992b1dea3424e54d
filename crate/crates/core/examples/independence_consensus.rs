//! Runs the five independence tests on one dependent and one independent
//! pair, then builds a trait x feature consensus matrix over a small
//! in-memory table.

use persona::independence::{
    chi_square_test, column, consensus, g_square_test, hsic_test, kci_test, quantile_bins,
    rcit_test, ConsensusConfig, KernelOptions,
};
use persona::tabular::{BigFive, PersonRecord, Table, Trait};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn battery(label: &str, x: &[f64], y: &[f64]) -> persona::error::Result<()> {
    let opts = KernelOptions {
        permutations: 300,
        ..KernelOptions::with_seed(1)
    };
    let (xb, yb) = (quantile_bins(x, 3), quantile_bins(y, 3));
    let (cx, cy) = (column(x), column(y));
    let results = [
        chi_square_test(&xb, &yb)?,
        g_square_test(&xb, &yb)?,
        hsic_test(&cx, &cy, &opts)?,
        rcit_test(&cx, &cy, None, &opts)?,
        kci_test(&cx, &cy, &opts)?,
    ];
    println!("{label}");
    for r in results {
        println!("  {:<4} stat {:>10.4}  p {:.4}", r.method.name(), r.statistic, r.p_value);
    }
    Ok(())
}

fn main() -> persona::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 300;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y_dep: Vec<f64> = x.iter().map(|v| v * v + 0.3 * rng.random_range(-1.0..1.0)).collect();
    let y_ind: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    battery("y = x^2 + noise", &x, &y_dep)?;
    battery("y independent of x", &x, &y_ind)?;

    // extraversion tracks height, the other traits are noise
    let mut table = Table::default();
    for i in 0..200 {
        let mut r = PersonRecord::new(format!("p{i}"));
        let h: f64 = rng.random_range(150.0..200.0);
        r.height = Some(h);
        r.weight = Some(rng.random_range(50.0..100.0));
        let e = if h < 167.0 { 1 } else if h < 184.0 { 2 } else { 3 };
        let mut s = || rng.random_range(1..=3u8);
        r.final_scores = Some(BigFive::new(s(), s(), e, s(), s()));
        table.records.push(r);
    }
    let config = ConsensusConfig {
        kernel: KernelOptions {
            permutations: 200,
            ..KernelOptions::with_seed(5)
        },
        ..ConsensusConfig::default()
    };
    let features = vec!["height".to_string(), "weight".to_string()];
    let report = consensus(&table, &Trait::ALL, &features, &config)?;
    print!("{}", report.matrix.to_csv()?);
    Ok(())
}
