//! Distance between simulated and reconstructed supporting planes, over
//! seeded replications, for a few sample sizes.
//!
//!     cargo run --release --example subspace_recovery

use lls::sim::{run_recovery_experiment, ExperimentConfig, ExperimentKind};

fn main() -> lls::error::Result<()> {
    println!("{:>3} {:>4} {:>6} {:>10} {:>10}", "K", "J", "I", "median d", "fit ms");
    for (k, i) in [(2, 1430), (2, 14300), (3, 1430), (3, 14300)] {
        let cfg = ExperimentConfig {
            k,
            j: 60,
            i,
            ..ExperimentConfig::new(ExperimentKind::Recovery)
        };
        let r = run_recovery_experiment(&cfg)?;
        let ms = 1e3 * r.fit_seconds.iter().sum::<f64>() / r.fit_seconds.len() as f64;
        println!("{k:>3} {:>4} {i:>6} {:>10.4} {ms:>10.1}", cfg.j, r.median_distance);
    }
    Ok(())
}
