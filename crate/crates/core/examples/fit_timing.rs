//! How plane fitting scales: nearly flat in the number of individuals,
//! superlinear in the number of questions.
//!
//!     cargo run --release --example fit_timing

use lls::sim::time_fit;

fn main() -> lls::error::Result<()> {
    for (j, i) in [(50, 4000), (50, 8000), (50, 16000), (100, 8000), (200, 8000)] {
        let t = time_fit(3, j, i, 1, 5)?;
        println!("J = {j:>3}, I = {i:>5}: {:>8.1} ms", 1e3 * t);
    }
    Ok(())
}
