//! Teacher-student conv1d regression: float training, PTQ of the float
//! model, and 1.58-bit QAT, over five seeds.
//!
//! cargo run --release --example qat_vs_ptq [steps]

use ternq::qat::{run_experiment, ExperimentConfig};

fn main() -> ternq::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(steps) = std::env::args().nth(1) {
        cfg.steps = steps.parse().expect("steps must be an integer");
    }
    let start = std::time::Instant::now();
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_csv());
    println!("float {}", report.float_summary());
    println!("ptq   {}", report.ptq_summary());
    println!("qat   {}", report.qat_summary());
    println!("qat beats ptq: {} ({:.1?})", report.qat_beats_ptq(), start.elapsed());
    Ok(())
}
