//! Survey data with unanswered questions: loading, block renormalization,
//! fitting, scoring incomplete records and imputing the missing answers.
//!
//!     cargo run --release --example missing_data

use std::io::Cursor;

use lls::dataset::{load_dataset, LoadOptions};
use lls::moments::{build_frequency_matrix, BuildOptions};
use lls::scores::{estimate_all_scores, impute_cell, ScoreOptions};
use lls::sim::{make_block_basis, sample_scores, simulate_responses, ScoreDesign};
use lls::subspace::{find_subspace, subspace_distance, FitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lls::error::Result<()> {
    let truth = make_block_basis(3, 30)?;
    let scores = sample_scores(&ScoreDesign::Uniform, 4000, 3, 2)?;
    let full = simulate_responses(&truth, &scores.scores, 3)?;

    // drop 10% of the answers at random and write the survey out as text
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut text = String::new();
    for r in full.records() {
        let row: Vec<String> = r
            .iter()
            .map(|c| if rng.random::<f64>() < 0.1 { ".".to_string() } else { c.to_string() })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let data = load_dataset(Cursor::new(text), Some(full.design().clone()), &LoadOptions::default())?;

    let (fm, _) = build_frequency_matrix(&data, &BuildOptions::default())?;
    println!("{} records; {} question-pair blocks rescaled to common margins", data.len(), fm.adjusted_blocks());
    let fit = find_subspace(&fm, 3, &FitOptions::default())?;
    println!("distance to the true plane: {:.4}", subspace_distance(&fit.basis, &truth));

    let me = estimate_all_scores(&data, &fit.basis, &ScoreOptions::default())?;
    let per_record = me.record_scores(&data);
    let (i, rec) = data.records().enumerate().find(|(_, r)| r.contains(&0)).expect("some record has a gap");
    let j = rec.iter().position(|&c| c == 0).unwrap();
    let g = per_record[i].as_ref().expect("scored");
    let (p, clipped) = impute_cell(g, &fit.basis, j);
    println!(
        "record {} skipped question {}: imputed P(answer) = {:?}{}; the record's true answer was {}",
        i + 1,
        j + 1,
        p.iter().map(|x| (x * 1e3).round() / 1e3).collect::<Vec<_>>(),
        if clipped { " (clipped)" } else { "" },
        full.record(i)[j]
    );
    Ok(())
}
