//! The fitted plane has no preferred basis. Two ways to pick an interpretable
//! one: project hand-built ideal respondents onto the plane, or take the
//! means of score clusters. Scores and model probabilities move with the
//! basis; the fitted distribution does not.
//!
//!     cargo run --release --example pure_type_basis

use lls::basis_select::{cluster_mean_basis, project_pure_type, pure_type_basis, rebase, ClusterMethod, PureTypeSpec};
use lls::dataset::ResponsePattern;
use lls::moments::{build_frequency_matrix, BuildOptions};
use lls::scores::{estimate_all_scores, model_probability, ScoreOptions};
use lls::sim::{make_block_basis, sample_scores, simulate_responses, ScoreDesign};
use lls::subspace::{find_subspace, subspace_distance, FitOptions};

fn main() -> lls::error::Result<()> {
    let truth = make_block_basis(2, 40)?;
    let scores = sample_scores(&ScoreDesign::TwoInterval, 3000, 2, 0)?;
    let data = simulate_responses(&truth, &scores.scores, 5)?;
    let (fm, _) = build_frequency_matrix(&data, &BuildOptions::default())?;
    let fit = find_subspace(&fm, 2, &FitOptions::default())?;
    println!("fitted basis: min entry {:.3}, distance to truth {:.4}", fit.basis.min_entry(), subspace_distance(&fit.basis, &truth));

    // "always answers 1" and "always answers 2"
    let design = data.design();
    let yes: Vec<f64> = (0..design.total_cells()).map(|c| if c % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let no: Vec<f64> = yes.iter().map(|x| 1.0 - x).collect();
    let specs = vec![PureTypeSpec::new(design, yes)?, PureTypeSpec::new(design, no)?];
    for (n, s) in specs.iter().enumerate() {
        let p = project_pure_type(s, &fit.basis)?;
        println!("ideal type {}: distance to plane {:.3}", n + 1, p.distance);
    }
    let ideal = pure_type_basis(&specs, &fit.basis)?;

    let me = estimate_all_scores(&data, &fit.basis, &ScoreOptions::default())?;
    let means = cluster_mean_basis(&me, &fit.basis, 2, ClusterMethod::KMeans { seed: 1 })?;

    let first = me.points[0].score.as_ref().expect("scored").g.clone();
    println!("\nscore of the first pattern in each basis:");
    println!("  fitted        {:?}", rounded(&first));
    println!("  ideal types   {:?}", rounded(&rebase(&first, &fit.basis, &ideal)?));
    println!("  cluster means {:?}", rounded(&rebase(&first, &fit.basis, &means)?));

    let pattern = ResponsePattern::new(vec![1; design.question_count()]);
    let me_ideal = estimate_all_scores(&data, &ideal, &ScoreOptions::default())?;
    println!(
        "\nP(all answers 1): fitted basis {:.3e}, ideal basis {:.3e}",
        model_probability(&me, &fit.basis, &pattern),
        model_probability(&me_ideal, &ideal, &pattern)
    );
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
