//! Recovering a bimodal mixing distribution: scores concentrated on
//! [0.10, 0.25] and [0.50, 0.75], estimated with the true basis and with the
//! reconstructed one.
//!
//!     cargo run --release --example score_distribution

use lls::scores::HistogramBin;
use lls::sim::{run_bimodal_experiment, ExperimentConfig, ExperimentKind};

fn main() -> lls::error::Result<()> {
    let cfg = ExperimentConfig {
        bins: 25,
        ..ExperimentConfig::new(ExperimentKind::Bimodal)
    };
    let r = run_bimodal_experiment(&cfg)?;
    println!("J = {}, I = {}, subspace distance {:.4}", cfg.j, cfg.i, r.subspace_distance);
    println!("mass on the two bands: true basis {:.3}, reconstructed {:.3}\n", r.true_mass, r.reconstructed_mass);
    println!("{:>11}  {:<30} {:<30}", "g1", "true basis", "reconstructed");
    for (t, c) in r.true_histogram.iter().zip(&r.reconstructed_histogram) {
        println!("{:>5.2}-{:<5.2}  {:<30} {:<30}", t.lo, t.hi, bar(t), bar(c));
    }
    Ok(())
}

fn bar(b: &HistogramBin) -> String {
    "#".repeat((b.mass * 150.0).round() as usize)
}
