//! The two three-question models with a known mixing distribution: exact
//! moments, Bayes scores, and scores recovered from the main system.
//!
//!     cargo run --example worked_examples

use lls::dataset::{ResponsePattern, SurveyDesign};
use lls::moments::{exact_frequency_matrix, exact_moment, MixingModel, MixingSupport};
use lls::scores::{bayes_score, estimate_score, ScoreOptions};
use lls::subspace::Basis;

fn main() -> lls::error::Result<()> {
    let design = SurveyDesign::uniform(3, 2)?;
    let basis = Basis::from_vectors(
        &design,
        &[vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], vec![0.5, 0.5, 0.0, 1.0, 0.0, 1.0]],
    )?;
    let models = [
        (
            "g uniform on the segment",
            MixingModel::new(
                basis.clone(),
                MixingSupport::Segment {
                    from: vec![0.0, 1.0],
                    to: vec![1.0, 0.0],
                },
            )?,
        ),
        (
            "two points (0.1, 0.9), (0.4, 0.6)",
            MixingModel::uniform_points(basis.clone(), vec![vec![0.1, 0.9], vec![0.4, 0.6]])?,
        ),
    ];

    for (name, model) in &models {
        println!("== {name}");
        for pat in [[1, 0, 0], [0, 0, 1], [1, 0, 1], [1, 0, 2]] {
            let m = exact_moment(model, &ResponsePattern::new(pat.to_vec()))?;
            println!("  M{pat:?} = {m:.6}");
        }
        let fm = exact_frequency_matrix(model);
        println!("  question-1 block: [{:.6} {:.6}; {:.6} {:.6}]", 
            fm.second_order()[(0, 0)], fm.second_order()[(0, 1)],
            fm.second_order()[(1, 0)], fm.second_order()[(1, 1)]);

        let target = ResponsePattern::new(vec![0, 0, 1]);
        let exact = bayes_score(model, &target)?;
        let est = estimate_score(model, &basis, &target, &ScoreOptions::default())?;
        println!("  E(G | X = (0,0,1)): Bayes {:?}", rounded(&exact));
        println!("                      main system {:?} (residual {:.1e})", rounded(&est.g), est.residual);
        // one row of the main system: λ¹₁₁ g₁ + λ²₁₁ g₂ = M(1,0,1) / M(0,0,1)
        let lhs = exact[0] * basis.vector(0)[0] + exact[1] * basis.vector(1)[0];
        let rhs = exact_moment(model, &ResponsePattern::new(vec![1, 0, 1]))? / exact_moment(model, &target)?;
        println!("  row check: {lhs:.6} = {rhs:.6}");
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e9).round() / 1e9).collect()
}
