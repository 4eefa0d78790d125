//! Runs both experiments on the seeded synthetic corpus and writes the
//! report files.
//!
//!     cargo run --release --example loso_experiment -- [out_dir]

use std::time::Instant;

use emocolor::experiment::{self, ExperimentConfig, SyntheticConfig};

fn main() -> emocolor::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/loso_experiment".into());
    let data = experiment::make_synthetic_benchmark(&SyntheticConfig::default())?;
    let config = ExperimentConfig::synthetic();

    let t = Instant::now();
    let exp1 = experiment::run_experiment1(&data.features, &data.labels, &data.metas, &config)?;
    println!("experiment 1 ({:.1?})\n{}", t.elapsed(), experiment::render_table(&exp1));
    experiment::emit_reports(&exp1, &data.labels, &data.metas, format!("{out}/exp1").as_ref())?;

    let t = Instant::now();
    let exp2 = experiment::run_experiment2(&data.features, &data.labels, &data.metas, &config)?;
    println!("experiment 2 ({:.1?})\n{}", t.elapsed(), experiment::render_table(&exp2));
    experiment::emit_reports(&exp2, &data.labels, &data.metas, format!("{out}/exp2").as_ref())?;
    println!("reports written under {out}");
    Ok(())
}
