//! Estimating the number of pure types from the singular values of the
//! frequency matrix.
//!
//!     cargo run --release --example rank_estimation

use lls::moments::{build_frequency_matrix, BuildOptions};
use lls::sim::{make_block_basis, sample_scores, simulate_responses, ScoreDesign};
use lls::subspace::{estimate_rank, rank_from_singular_values};

fn main() -> lls::error::Result<()> {
    // leading singular values reported for a large disability survey
    let reference = [39.112, 3.217, 1.464, 0.652, 0.363, 0.310, 0.243, 0.220, 0.198, 0.148];
    println!("reference values, threshold 0.584 -> K = {}", rank_from_singular_values(&reference, 0.584));

    for k in [2, 3, 4] {
        let basis = make_block_basis(k, 60)?;
        let scores = sample_scores(&ScoreDesign::SimplexGrid, 5000, k, 0)?;
        let data = simulate_responses(&basis, &scores.scores, 11)?;
        let (fm, se) = build_frequency_matrix(&data, &BuildOptions::default())?;
        let est = estimate_rank(&fm, &se, 2.0)?;
        let head: Vec<String> = est.singular_values.iter().take(6).map(|s| format!("{s:.3}")).collect();
        println!(
            "simulated K = {k}: estimated {} (threshold {:.3}; leading values {})",
            est.k,
            est.threshold,
            head.join(", ")
        );
    }
    Ok(())
}
