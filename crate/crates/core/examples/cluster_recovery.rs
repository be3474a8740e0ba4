//! Individuals drawn from five score points: clustering the reconstructed
//! scores against clustering the raw answers.
//!
//!     cargo run --release --example cluster_recovery

use lls::sim::{run_cluster_experiment, ExperimentConfig, ExperimentKind};

fn main() -> lls::error::Result<()> {
    println!("{:>4} {:>14} {:>14}", "J", "scores", "raw answers");
    for j in [60, 200, 500] {
        let cfg = ExperimentConfig {
            j,
            replications: 5,
            ..ExperimentConfig::new(ExperimentKind::Cluster)
        };
        let r = run_cluster_experiment(&cfg)?;
        println!("{j:>4} {:>13.1}% {:>13.1}%", 100.0 * r.mean_score_rate, 100.0 * r.mean_raw_rate);
    }
    Ok(())
}
