//! The active-set QP solver on its own: projecting a point onto the
//! probability simplex, with a KKT certificate.
//!
//!     cargo run --example qp_solver

use lls::qpsolve::{kkt_check, solve_qp, QpOptions, QuadraticProgram};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), lls::qpsolve::QpError> {
    let target = DVector::from_vec(vec![0.9, 0.6, -0.2, 0.1]);
    let n = target.len();
    // min ‖x − t‖²  s.t.  Σx = 1, x ≥ 0
    let qp = QuadraticProgram::least_squares(&DMatrix::identity(n, n), &target)?
        .with_equalities(DMatrix::from_element(1, n, 1.0), DVector::from_element(1, 1.0))?
        .with_inequalities(DMatrix::identity(n, n), DVector::zeros(n))?;
    let start = qp.feasible_point(None)?;
    let sol = solve_qp(&qp, &start, &QpOptions::default())?;
    println!("projection of {:?}", target.as_slice());
    println!("  x = {:?}", sol.x.iter().map(|v| (v * 1e9).round() / 1e9).collect::<Vec<_>>());
    println!("  active bounds {:?}, {} iterations", sol.active_set, sol.iterations);
    let report = kkt_check(&qp, &sol.x, &sol.eq_multipliers, &sol.ineq_multipliers, 1e-8);
    println!("  KKT residual {:.2e}", report.residual());
    Ok(())
}
