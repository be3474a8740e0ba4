//! Dense convex quadratic programming by antigradient projection with an
//! active set.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx + const
//! subject to  A x = b
//!             G x ≥ h
//! ```
//!
//! The working set holds all equalities plus the inequalities that are
//! tight at the current point. Each iteration projects onto the null space
//! of the working rows. A nonzero projection moves the point toward the
//! minimum of the objective on the current face, stopping early at the
//! closest blocking boundary. A zero projection triggers the multiplier
//! check, and the inequality with the most negative multiplier is released.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{lstsq, row_space_and_complement, sorted_eigen};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("malformed problem: {0}")]
    Shape(String),

    #[error("starting point violates constraints by {violation:e}")]
    InfeasibleStart { violation: f64 },

    #[error("constraints are infeasible (violation {violation:e})")]
    Infeasible { violation: f64 },

    #[error("objective is unbounded below on the feasible set")]
    Unbounded,

    #[error("no convergence after {iterations} iterations (KKT residual {residual:e})")]
    MaxIterations {
        iterations: usize,
        best: DVector<f64>,
        residual: f64,
    },
}

#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    q: DMatrix<f64>,
    c: DVector<f64>,
    constant: f64,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    ineq_g: DMatrix<f64>,
    ineq_h: DVector<f64>,
}

impl QuadraticProgram {
    /// Explicit form `½ xᵀQx + cᵀx`. `Q` must be square and symmetric.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(QpError::Shape(format!(
                "Q is {}x{} but c has length {}",
                q.nrows(),
                q.ncols(),
                n
            )));
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-9 * (1.0 + q.amax()) {
            return Err(QpError::Shape(format!("Q is not symmetric (deviation {asym:e})")));
        }
        Ok(QuadraticProgram {
            q,
            c,
            constant: 0.0,
            eq_a: DMatrix::zeros(0, n),
            eq_b: DVector::zeros(0),
            ineq_g: DMatrix::zeros(0, n),
            ineq_h: DVector::zeros(0),
        })
    }

    /// Residual form `‖R x − r‖²`.
    pub fn least_squares(r: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self, QpError> {
        if r.nrows() != rhs.len() {
            return Err(QpError::Shape(format!(
                "R has {} rows but r has length {}",
                r.nrows(),
                rhs.len()
            )));
        }
        let rt = r.transpose();
        let mut q = &rt * r * 2.0;
        // exact symmetry
        q = (&q + q.transpose()) * 0.5;
        let c = -(&rt * rhs) * 2.0;
        let mut p = Self::new(q, c)?;
        p.constant = rhs.norm_squared();
        Ok(p)
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, QpError> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(QpError::Shape(format!(
                "equality block is {}x{} with {} right-hand sides for dimension {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim()
            )));
        }
        self.eq_a = a;
        self.eq_b = b;
        Ok(self)
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self, QpError> {
        if g.ncols() != self.dim() || g.nrows() != h.len() {
            return Err(QpError::Shape(format!(
                "inequality block is {}x{} with {} right-hand sides for dimension {}",
                g.nrows(),
                g.ncols(),
                h.len(),
                self.dim()
            )));
        }
        self.ineq_g = g;
        self.ineq_h = h;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn equality_count(&self) -> usize {
        self.eq_b.len()
    }

    pub fn inequality_count(&self) -> usize {
        self.ineq_h.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }

    /// Largest constraint violation at `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let eq = if self.eq_b.is_empty() {
            0.0
        } else {
            (&self.eq_a * x - &self.eq_b).amax()
        };
        let ineq = (0..self.inequality_count())
            .map(|i| self.ineq_h[i] - self.ineq_g.row(i).dot(&x.transpose()))
            .fold(0.0_f64, f64::max);
        eq.max(ineq)
    }

    fn activity_tol(&self) -> f64 {
        1e-10 * (1.0 + self.ineq_h.norm())
    }

    fn feasibility_tol(&self) -> f64 {
        1e-8 * (1.0 + self.ineq_h.amax().max(self.eq_b.amax()))
    }

    /// A point satisfying all constraints, found by a slack-variable phase-one
    /// problem when `hint` itself is infeasible.
    pub fn feasible_point(&self, hint: Option<&DVector<f64>>) -> Result<DVector<f64>, QpError> {
        let n = self.dim();
        let start = hint.cloned().unwrap_or_else(|| DVector::zeros(n));
        if start.len() != n {
            return Err(QpError::Shape("hint has wrong dimension".into()));
        }
        if self.violation(&start) <= self.feasibility_tol() {
            return Ok(start);
        }
        let x_eq = if self.equality_count() > 0 {
            let resid = &self.eq_b - &self.eq_a * &start;
            let x = &start + lstsq(&self.eq_a, &resid);
            let v = (&self.eq_a * &x - &self.eq_b).amax();
            if v > self.feasibility_tol() {
                return Err(QpError::Infeasible { violation: v });
            }
            x
        } else {
            start
        };
        let m = self.inequality_count();
        let slack0 = (0..m)
            .map(|i| self.ineq_h[i] - self.ineq_g.row(i).dot(&x_eq.transpose()))
            .fold(0.0_f64, f64::max);
        if slack0 <= self.feasibility_tol() {
            return Ok(x_eq);
        }

        // minimize t + ε/2 ‖x − x_eq‖²  s.t.  A x = b,  G x + t ≥ h,  t ≥ 0
        let eps = 1e-6;
        let mut q = DMatrix::zeros(n + 1, n + 1);
        let mut c = DVector::zeros(n + 1);
        for i in 0..n {
            q[(i, i)] = eps;
            c[i] = -eps * x_eq[i];
        }
        c[n] = 1.0;
        let mut a = DMatrix::zeros(self.equality_count(), n + 1);
        a.view_mut((0, 0), (self.equality_count(), n)).copy_from(&self.eq_a);
        let mut g = DMatrix::zeros(m + 1, n + 1);
        g.view_mut((0, 0), (m, n)).copy_from(&self.ineq_g);
        let mut h = DVector::zeros(m + 1);
        for i in 0..m {
            g[(i, n)] = 1.0;
            h[i] = self.ineq_h[i];
        }
        g[(m, n)] = 1.0;
        let aux = QuadraticProgram::new(q, c)?
            .with_equalities(a, self.eq_b.clone())?
            .with_inequalities(g, h)?;
        let mut y0 = DVector::zeros(n + 1);
        y0.rows_mut(0, n).copy_from(&x_eq);
        y0[n] = slack0;
        let sol = solve_qp(&aux, &y0, &QpOptions::default())?;
        let x = sol.x.rows(0, n).into_owned();
        let v = self.violation(&x);
        if v > self.feasibility_tol() {
            return Err(QpError::Infeasible { violation: v });
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct QpOptions {
    /// Stationarity and multiplier-sign tolerance, scaled by problem magnitude.
    pub tol: f64,
    /// Defaults to `10 · (n + number of constraints)`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of inequalities tight at the solution.
    pub active_set: Vec<usize>,
    pub eq_multipliers: DVector<f64>,
    /// One entry per inequality; zero for inactive ones.
    pub ineq_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    /// Objective value at the start and after every step.
    pub objective_trace: Vec<f64>,
}

/// Minimizes `prob` starting from the feasible point `x0`.
pub fn solve_qp(prob: &QuadraticProgram, x0: &DVector<f64>, opts: &QpOptions) -> Result<QpSolution, QpError> {
    let n = prob.dim();
    if x0.len() != n {
        return Err(QpError::Shape(format!("x0 has length {} for dimension {}", x0.len(), n)));
    }
    let violation = prob.violation(x0);
    if violation > prob.feasibility_tol() {
        return Err(QpError::InfeasibleStart { violation });
    }
    let m_eq = prob.equality_count();
    let m_in = prob.inequality_count();
    let max_iter = opts.max_iter.unwrap_or(10 * (n + m_eq + m_in)).max(10);
    let scale = 1.0 + prob.q.amax() + prob.c.amax();
    let stat_tol = opts.tol * scale;
    let act_tol = prob.activity_tol();

    let eq_rows: Vec<DVector<f64>> = (0..m_eq).map(|i| prob.eq_a.row(i).transpose()).collect();
    let g_rows: Vec<DVector<f64>> = (0..m_in).map(|i| prob.ineq_g.row(i).transpose()).collect();

    let mut x = x0.clone();
    let mut active: Vec<usize> = (0..m_in)
        .filter(|&i| (g_rows[i].dot(&x) - prob.ineq_h[i]).abs() <= act_tol)
        .collect();
    let mut last_dropped: Option<usize> = None;
    let mut trace = vec![prob.objective(&x)];

    for iter in 0..max_iter {
        let grad = prob.gradient(&x);
        let working: Vec<DVector<f64>> = eq_rows
            .iter()
            .cloned()
            .chain(active.iter().map(|&i| g_rows[i].clone()))
            .collect();
        let (_, z) = row_space_and_complement(&working, n);
        let gz = z.transpose() * &grad;

        if gz.norm() <= stat_tol {
            let (eq_mult, act_mult) = working_multipliers(&working, m_eq, &grad);
            let worst = act_mult
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < -stat_tol)
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)));
            match worst {
                None => {
                    let mut ineq_mult = DVector::zeros(m_in);
                    for (k, &i) in active.iter().enumerate() {
                        ineq_mult[i] = act_mult[k].max(0.0);
                    }
                    let report = kkt_check(prob, &x, &eq_mult, &ineq_mult, f64::INFINITY);
                    return Ok(QpSolution {
                        objective: prob.objective(&x),
                        x,
                        active_set: active,
                        eq_multipliers: eq_mult,
                        ineq_multipliers: ineq_mult,
                        kkt_residual: report.residual(),
                        iterations: iter + 1,
                        objective_trace: trace,
                    });
                }
                Some((k, _)) => {
                    last_dropped = Some(active.remove(k));
                    continue;
                }
            }
        }

        // Step direction within the face: Newton on the reduced quadratic,
        // plus the antigradient component along zero-curvature directions.
        let h = z.transpose() * &prob.q * &z;
        let (vals, vecs) = sorted_eigen(h);
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        let mut dz = DVector::zeros(z.ncols());
        for (k, &lam) in vals.iter().enumerate() {
            let v = vecs.column(k);
            let coef = v.dot(&gz);
            if lam > 1e-10 * top.max(1e-300) && lam > 0.0 {
                dz.axpy(-coef / lam, &v, 1.0);
            } else {
                dz.axpy(-coef, &v, 1.0);
            }
        }
        let mut d = &z * dz;
        let mut slope = grad.dot(&d);
        if slope >= 0.0 {
            d = -(&z * &gz);
            slope = grad.dot(&d);
        }
        let curvature = d.dot(&(&prob.q * &d));
        let mut step = if curvature > 1e-14 * scale * d.norm_squared() {
            -slope / curvature
        } else {
            f64::INFINITY
        };
        let mut blocking: Option<usize> = None;
        for i in 0..m_in {
            if active.contains(&i) {
                continue;
            }
            let gd = g_rows[i].dot(&d);
            if gd >= -1e-14 * g_rows[i].norm() * d.norm() {
                continue;
            }
            let room = (g_rows[i].dot(&x) - prob.ineq_h[i]).max(0.0);
            let s = room / -gd;
            if Some(i) == last_dropped && room <= act_tol {
                continue;
            }
            if s < step {
                step = s;
                blocking = Some(i);
            }
        }
        if !step.is_finite() {
            return Err(QpError::Unbounded);
        }
        x.axpy(step, &d, 1.0);
        if let Some(i) = blocking {
            let pos = active.partition_point(|&a| a < i);
            active.insert(pos, i);
        }
        last_dropped = None;
        trace.push(prob.objective(&x));
    }

    let grad = prob.gradient(&x);
    let working: Vec<DVector<f64>> = eq_rows
        .iter()
        .cloned()
        .chain(active.iter().map(|&i| g_rows[i].clone()))
        .collect();
    let (eq_mult, act_mult) = working_multipliers(&working, m_eq, &grad);
    let mut ineq_mult = DVector::zeros(m_in);
    for (k, &i) in active.iter().enumerate() {
        ineq_mult[i] = act_mult[k];
    }
    let residual = kkt_check(prob, &x, &eq_mult, &ineq_mult, f64::INFINITY).residual();
    Err(QpError::MaxIterations {
        iterations: max_iter,
        best: x,
        residual,
    })
}

fn working_multipliers(working: &[DVector<f64>], m_eq: usize, grad: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if working.is_empty() {
        return (DVector::zeros(0), DVector::zeros(0));
    }
    let wt = DMatrix::from_columns(working);
    let mu = lstsq(&wt, grad);
    let eq = mu.rows(0, m_eq).into_owned();
    let act = mu.rows(m_eq, working.len() - m_eq).into_owned();
    (eq, act)
}

/// Per-condition breakdown of the Karush-Kuhn-Tucker conditions.
#[derive(Clone, Copy, Debug)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub ok: bool,
}

impl KktReport {
    pub fn residual(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

/// Checks `Qx + c = Aᵀμ + Gᵀν`, feasibility, `ν ≥ 0` and `ν ∘ (Gx − h) = 0`,
/// each to `tol` (infinity norms).
pub fn kkt_check(
    prob: &QuadraticProgram,
    x: &DVector<f64>,
    eq_multipliers: &DVector<f64>,
    ineq_multipliers: &DVector<f64>,
    tol: f64,
) -> KktReport {
    let mut r = prob.gradient(x);
    if prob.equality_count() > 0 {
        r -= prob.eq_a.transpose() * eq_multipliers;
    }
    if prob.inequality_count() > 0 {
        r -= prob.ineq_g.transpose() * ineq_multipliers;
    }
    let stationarity = r.amax();
    let primal = prob.violation(x);
    let dual = ineq_multipliers.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    let complementarity = (0..prob.inequality_count())
        .map(|i| (ineq_multipliers[i] * (prob.ineq_g.row(i).dot(&x.transpose()) - prob.ineq_h[i])).abs())
        .fold(0.0, f64::max);
    KktReport {
        stationarity,
        primal,
        dual,
        complementarity,
        ok: stationarity <= tol && primal <= tol && dual <= tol && complementarity <= tol,
    }
}
