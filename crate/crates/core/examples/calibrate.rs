//! Measures the built-in estimator on independent uniform 1024-bit pairs and
//! prints the thresholds pinned in `sources::THETA_INDEP` / `THETA_SYM`.
//!
//! cargo run --release --example calibrate > calibration/estimator.txt

use kextract::sources::{dep_estimate, gen_planted_pair, LzEstimator, PlantedPairSpec};
use kextract::Rational;

const FIRST_SEED: u64 = 1_000_000;
const PAIRS: u64 = 10_000;
const QUANTILE: f64 = 0.99;

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() as f64 * q).ceil() as usize).min(v.len()) - 1]
}

fn main() -> kextract::Result<()> {
    let est = LzEstimator;
    let mut indep = Vec::new();
    let mut sym = Vec::new();
    for seed in FIRST_SEED..FIRST_SEED + PAIRS {
        let spec = PlantedPairSpec::new(1024, Rational::integer(1), Rational::integer(0), seed)?;
        let (x, y) = gen_planted_pair(&spec)?;
        let xy = dep_estimate(&x, &y, &est)?;
        let yx = dep_estimate(&y, &x, &est)?;
        indep.push(xy.abs());
        sym.push((xy - yx).abs());
    }
    let mean = indep.iter().sum::<f64>() / indep.len() as f64;
    println!(
        "pairs: {PAIRS} (seeds {FIRST_SEED}..{})",
        FIRST_SEED + PAIRS
    );
    println!("estimator: lz-bits, n = 1024, sigma = 1, alpha = 0");
    println!("mean |dep_hat(x,y)|: {mean:.3}");
    println!("max |dep_hat(x,y)|: {}", quantile(indep.clone(), 1.0));
    println!(
        "max |dep_hat(x,y) - dep_hat(y,x)|: {}",
        quantile(sym.clone(), 1.0)
    );
    println!("theta_indep (q{QUANTILE}): {}", quantile(indep, QUANTILE));
    println!("theta_sym (q{QUANTILE}): {}", quantile(sym, QUANTILE));
    Ok(())
}
