//! Computational rank, simplex rotation, plane fitting and the iterative
//! completion loop that recovers a basis of the supporting plane.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SurveyDesign;
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_frame, singular_values, sorted_eigen};
use crate::moments::{FrequencyMatrix, StdErrMatrix};
use crate::qpsolve::{solve_qp, QpOptions, QuadraticProgram};

/// Tolerance for per-question sums when a basis is constructed from outside
/// data (files, user vectors).
const SUM_TOL: f64 = 1e-9;

/// K vectors in `R^|L|`, each summing to one within every question block.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    design: SurveyDesign,
    vectors: Vec<DVector<f64>>,
}

impl Basis {
    pub fn new(design: SurveyDesign, vectors: Vec<DVector<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Basis("no vectors".into()));
        }
        let n = design.total_cells();
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(Error::Basis(format!("vector {} has {} entries, design has {}", k + 1, v.len(), n)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Basis(format!("vector {} has non-finite entries", k + 1)));
            }
            for j in 0..design.question_count() {
                let s: f64 = design.block(j).map(|c| v[c]).sum();
                if (s - 1.0).abs() > SUM_TOL {
                    return Err(Error::Basis(format!(
                        "vector {} sums to {} on question {}",
                        k + 1,
                        s,
                        j + 1
                    )));
                }
            }
        }
        let basis = Basis { design, vectors };
        if basis.vectors.len() > 1 {
            let sv = singular_values(&basis.matrix());
            let smin = sv.last().copied().unwrap_or(0.0);
            if smin <= 1e-9 {
                return Err(Error::Basis(format!("vectors are linearly dependent (smallest singular value {smin:e})")));
            }
        }
        Ok(basis)
    }

    pub fn from_vectors(design: &SurveyDesign, vectors: &[Vec<f64>]) -> Result<Self> {
        Self::new(design.clone(), vectors.iter().map(|v| DVector::from_vec(v.clone())).collect())
    }

    /// Standard simplex vertices: `λ^k` puts all mass on outcome `k` of every
    /// question (requires `K ≤ min L_j`).
    pub fn vertices(design: &SurveyDesign, k: usize) -> Result<Self> {
        if design.levels().iter().any(|&l| l < k) {
            return Err(Error::Basis(format!("K={k} exceeds the smallest number of outcomes")));
        }
        let vectors = (0..k)
            .map(|kk| {
                let mut v = DVector::zeros(design.total_cells());
                for j in 0..design.question_count() {
                    v[design.cell(j, kk + 1)] = 1.0;
                }
                v
            })
            .collect();
        Self::new(design.clone(), vectors)
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn vector(&self, k: usize) -> &DVector<f64> {
        &self.vectors[k]
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// `|L| × K` matrix with the basis vectors as columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vectors)
    }

    /// Mixed probabilities `β = Σ_k g_k λ^k`.
    pub fn beta(&self, g: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.design.total_cells());
        for (v, &w) in self.vectors.iter().zip(g) {
            out.axpy(w, v, 1.0);
        }
        out
    }

    pub fn min_entry(&self) -> f64 {
        self.vectors.iter().map(|v| v.min()).fold(f64::INFINITY, f64::min)
    }

    /// True for pure-type bases whose vectors are probability vectors.
    pub fn is_nonnegative(&self) -> bool {
        self.min_entry() >= -1e-12
    }

    /// Largest deviation of a per-question sum from one.
    pub fn sum_deviation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for v in &self.vectors {
            for j in 0..self.design.question_count() {
                let s: f64 = self.design.block(j).map(|c| v[c]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Basis with vectors reordered: output vector `i` is input `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Basis {
        Basis {
            design: self.design.clone(),
            vectors: order.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }

    /// CSV with one row per basis vector.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.vectors {
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, design: &SurveyDesign) -> Result<Self> {
        let mut vectors = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .enumerate()
                .map(|(c, s)| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        row: i + 1,
                        column: c + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            vectors.push(DVector::from_vec(row));
        }
        Self::new(design.clone(), vectors)
    }
}

/// Per-question isometry from the simplex `{x ≥ 0, Σx = 1} ⊂ R^{L_j}` onto
/// `R^{L_j − 1}`, dropping one coordinate per question.
#[derive(Clone, Debug)]
pub struct RotationMap {
    design: SurveyDesign,
    coef: Vec<f64>,
}

impl RotationMap {
    pub fn new(design: &SurveyDesign) -> Self {
        let coef = design
            .levels()
            .iter()
            .map(|&l| {
                let l = l as f64;
                (l.sqrt() - 1.0) / (l - 1.0)
            })
            .collect();
        RotationMap {
            design: design.clone(),
            coef,
        }
    }

    /// Dimension of rotated points, `|L| − J`.
    pub fn rotated_dim(&self) -> usize {
        self.design.total_cells() - self.design.question_count()
    }

    /// Forward map. Every question block must sum to one within 1e-8.
    pub fn rotate(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        if point.len() != self.design.total_cells() {
            return Err(Error::Dimension(format!(
                "point has {} entries, design has {}",
                point.len(),
                self.design.total_cells()
            )));
        }
        for j in 0..self.design.question_count() {
            let s: f64 = self.design.block(j).map(|c| point[c]).sum();
            if (s - 1.0).abs() > 1e-8 {
                return Err(Error::NotOnSimplex {
                    question: j + 1,
                    deviation: s - 1.0,
                });
            }
        }
        Ok(self.rotate_unchecked(point))
    }

    pub(crate) fn rotate_unchecked(&self, point: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rotated_dim());
        let mut o = 0;
        for j in 0..self.design.question_count() {
            let b = self.design.block(j);
            let first = point[b.start];
            for c in b.start + 1..b.end {
                out[o] = point[c] - self.coef[j] * first;
                o += 1;
            }
        }
        out
    }

    /// Inverse map; the result sums to one in every question block.
    pub fn unrotate(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        if point.len() != self.rotated_dim() {
            return Err(Error::Dimension(format!(
                "rotated point has {} entries, expected {}",
                point.len(),
                self.rotated_dim()
            )));
        }
        let mut out = DVector::zeros(self.design.total_cells());
        let mut o = 0;
        for (j, &lj) in self.design.levels().iter().enumerate() {
            let b = self.design.block(j);
            let tail: f64 = point.rows(o, lj - 1).sum();
            let first = (1.0 - tail) / (lj as f64).sqrt();
            out[b.start] = first;
            for (i, c) in (b.start + 1..b.end).enumerate() {
                out[c] = point[o + i] + self.coef[j] * first;
            }
            // force the block sum to one exactly up to rounding
            let s: f64 = b.clone().map(|c| out[c]).sum();
            out[b.start] += 1.0 - s;
            o += lj - 1;
        }
        Ok(out)
    }
}

/// Affine plane of best fit through a weighted set of points.
#[derive(Clone, Debug)]
pub struct PlaneFit {
    pub center: DVector<f64>,
    /// Orthonormal directions spanning the plane.
    pub directions: Vec<DVector<f64>>,
    /// All eigenvalues of the scatter matrix, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Sum of squared distances from the points to the plane.
    pub residual: f64,
    /// Set when fewer than `K − 1` eigenvalues were positive and the plane
    /// was completed with arbitrary orthonormal directions.
    pub padded: bool,
}

/// Fits a `(K − 1)`-dimensional affine plane to equally weighted columns.
pub fn fit_plane(columns: &[DVector<f64>], k: usize) -> Result<PlaneFit> {
    let w = vec![1.0; columns.len()];
    fit_plane_weighted(columns, &w, k)
}

/// Weighted variant of [`fit_plane`]: the center is the weighted mean and
/// the scatter matrix is `Σ w c̄ c̄ᵀ`.
pub fn fit_plane_weighted(columns: &[DVector<f64>], weights: &[f64], k: usize) -> Result<PlaneFit> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if columns.len() < k || columns.len() != weights.len() {
        return Err(Error::Dimension(format!("{} columns for a plane of dimension K={}", columns.len(), k)));
    }
    let m = columns[0].len();
    if k - 1 > m {
        return Err(Error::Dimension(format!("K={k} exceeds rotated dimension {m}")));
    }
    let total: f64 = weights.iter().sum();
    let mut center = DVector::zeros(m);
    for (c, &w) in columns.iter().zip(weights) {
        center.axpy(w / total, c, 1.0);
    }
    let mut scatter = DMatrix::zeros(m, m);
    for (c, &w) in columns.iter().zip(weights) {
        let d = c - &center;
        scatter.ger(w, &d, &d, 1.0);
    }
    let trace = scatter.trace();
    let (eigenvalues, vectors) = sorted_eigen(scatter);
    let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let positive = eigenvalues.iter().filter(|&&g| g > 1e-12 * top.max(1e-300)).count();
    let padded = positive < k - 1;
    if padded {
        log::warn!("plane fit: only {positive} positive eigenvalues for K-1={}; padding", k - 1);
    }
    let directions = (0..k - 1).map(|i| vectors.column(i).into_owned()).collect();
    let kept: f64 = eigenvalues.iter().take(k - 1).sum();
    Ok(PlaneFit {
        center,
        directions,
        eigenvalues,
        residual: (trace - kept).max(0.0),
        padded,
    })
}

/// Outcome of the rank threshold rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankEstimate {
    pub k: usize,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// Cells used as rows and columns of the minor.
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Number of singular values strictly above `threshold`.
pub fn rank_from_singular_values(sv: &[f64], threshold: f64) -> usize {
    sv.iter().filter(|&&s| s > threshold).count()
}

/// Estimates K from the singular values of a question-mark-free minor of
/// the second-order block. Rows come from even-numbered questions, columns
/// from odd-numbered ones; the threshold is `multiplier` times the square
/// root of the summed squared standard errors of the minor's cells.
pub fn estimate_rank(fm: &FrequencyMatrix, se: &StdErrMatrix, multiplier: f64) -> Result<RankEstimate> {
    let design = fm.design();
    let nq = design.question_count();
    let mut row_q: Vec<usize> = (0..nq).step_by(2).collect();
    let col_q: Vec<usize> = (1..nq).step_by(2).collect();
    let cells = |qs: &[usize]| -> Vec<usize> { qs.iter().flat_map(|&j| design.block(j)).collect() };

    // drop row questions that have inestimable cells against the column half
    let mut cols = cells(&col_q);
    loop {
        let bad = row_q
            .iter()
            .map(|&j| {
                let n = design.block(j).flat_map(|r| cols.iter().map(move |&c| (r, c))).filter(|&(r, c)| !fm.is_estimable(r, c)).count();
                (j, n)
            })
            .max_by_key(|&(j, n)| (n, std::cmp::Reverse(j)));
        match bad {
            Some((j, n)) if n > 0 => row_q.retain(|&q| q != j),
            _ => break,
        }
    }
    let rows = cells(&row_q);
    cols.retain(|&c| rows.iter().all(|&r| fm.is_estimable(r, c)));
    if rows.len() < 2 || cols.len() < 2 {
        return Err(Error::NoCompleteMinor);
    }
    let minor = DMatrix::from_fn(rows.len(), cols.len(), |a, b| fm.second_order()[(rows[a], cols[b])]);
    let mut sum_sq = 0.0;
    for &r in &rows {
        for &c in &cols {
            let s = se.standard_error(r, c);
            sum_sq += s * s;
        }
    }
    let threshold = multiplier * sum_sq.sqrt();
    let sv = singular_values(&minor);
    Ok(RankEstimate {
        k: rank_from_singular_values(&sv, threshold),
        singular_values: sv,
        threshold,
        rows,
        cols,
    })
}

/// A completed matrix together with bookkeeping from the per-question QPs.
#[derive(Clone, Debug)]
pub struct Completion {
    pub matrix: FrequencyMatrix,
    /// Questions whose block came from the least-squares fallback.
    pub fallbacks: Vec<usize>,
    /// Largest KKT residual among successful QP solves.
    pub max_kkt_residual: f64,
}

/// Fills every inestimable same-question block from the low-rank structure
/// implied by `basis`.
///
/// For question `j̄` and outcome `l̄`, column `l̄` of the second-order block is
/// modelled as `M_{j̄l̄} Σ_k C_k^{l̄} λ^k` with `Σ_k C_k^{l̄} = 1`. The
/// coefficients are fitted to the known cells subject to symmetry and
/// nonnegativity of the filled block.
pub fn complete_matrix(fm: &FrequencyMatrix, basis: &Basis) -> Result<Completion> {
    if basis.design() != fm.design() {
        return Err(Error::Dimension("basis and matrix designs differ".into()));
    }
    let design = fm.design();
    let todo: Vec<usize> = (0..design.question_count())
        .filter(|&j| design.block(j).any(|r| design.block(j).any(|c| !fm.is_estimable(r, c))))
        .collect();
    let solved: Vec<(usize, DMatrix<f64>, Option<f64>)> = todo
        .par_iter()
        .map(|&j| complete_block(fm, basis, j).map(|(b, kkt)| (j, b, kkt)))
        .collect::<Result<_>>()?;
    let mut matrix = fm.clone();
    let mut fallbacks = Vec::new();
    let mut max_kkt = 0.0_f64;
    for (j, block, kkt) in solved {
        match kkt {
            Some(r) => max_kkt = max_kkt.max(r),
            None => fallbacks.push(j),
        }
        matrix.set_block(j, &block);
    }
    if !fallbacks.is_empty() {
        log::warn!("completion fell back to least squares for {} question(s)", fallbacks.len());
    }
    Ok(Completion {
        matrix,
        fallbacks,
        max_kkt_residual: max_kkt,
    })
}

/// Returns the filled block and the KKT residual, or `None` for the residual
/// when the fallback was used.
fn complete_block(fm: &FrequencyMatrix, basis: &Basis, j: usize) -> Result<(DMatrix<f64>, Option<f64>)> {
    let design = fm.design();
    let k = basis.k();
    let block = design.block(j);
    let lj = block.len();
    let m = fm.first_order();
    let active: Vec<usize> = (0..lj).filter(|&l| m[block.start + l] > 1e-15).collect();
    let na = active.len();
    let nvar = k * na;
    let lam = |kk: usize, cell: usize| basis.vector(kk)[cell];

    let mut out = DMatrix::zeros(lj, lj);
    if na == 0 {
        return Ok((out, Some(0.0)));
    }

    // residual rows: M_l̄ Σ_k C_k λ^k_r − M_{r, l̄} for known cells r outside j
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (a, &l) in active.iter().enumerate() {
        let c = block.start + l;
        for r in 0..design.total_cells() {
            if !block.contains(&r) && fm.is_estimable(r, c) {
                rows.push((a, r));
            }
        }
    }
    let mut rmat = DMatrix::zeros(rows.len(), nvar);
    let mut rhs = DVector::zeros(rows.len());
    for (i, &(a, r)) in rows.iter().enumerate() {
        let c = block.start + active[a];
        for kk in 0..k {
            rmat[(i, a * k + kk)] = m[c] * lam(kk, r);
        }
        rhs[i] = fm.second_order()[(r, c)];
    }

    let mut eq = Vec::new();
    let mut eq_b = Vec::new();
    for a in 0..na {
        let mut row = DVector::zeros(nvar);
        row.rows_mut(a * k, k).fill(1.0);
        eq.push(row);
        eq_b.push(1.0);
    }
    let sum_only = eq.len();
    for a in 0..na {
        for b in a + 1..na {
            let (ca, cb) = (block.start + active[a], block.start + active[b]);
            let mut row = DVector::zeros(nvar);
            for kk in 0..k {
                row[a * k + kk] = m[ca] * lam(kk, cb);
                row[b * k + kk] = -m[cb] * lam(kk, ca);
            }
            eq.push(row);
            eq_b.push(0.0);
        }
    }
    let mut ineq = Vec::new();
    for a in 0..na {
        for l in block.clone() {
            let mut row = DVector::zeros(nvar);
            for kk in 0..k {
                row[a * k + kk] = lam(kk, l);
            }
            ineq.push(row);
        }
    }
    let to_mat = |rs: &[DVector<f64>]| DMatrix::from_fn(rs.len(), nvar, |i, c| rs[i][c]);

    let lsq = QuadraticProgram::least_squares(&rmat, &rhs)?;
    let full = lsq
        .clone()
        .with_equalities(to_mat(&eq), DVector::from_vec(eq_b.clone()))?
        .with_inequalities(to_mat(&ineq), DVector::zeros(ineq.len()))?;
    let start = DVector::from_element(nvar, 1.0 / k as f64);
    let attempt = full
        .feasible_point(Some(&start))
        .and_then(|x0| solve_qp(&full, &x0, &QpOptions::default()));

    let fill = |coef: &DVector<f64>, out: &mut DMatrix<f64>| {
        for (a, &l) in active.iter().enumerate() {
            let c = block.start + l;
            for lp in 0..lj {
                out[(lp, l)] = m[c] * (0..k).map(|kk| coef[a * k + kk] * lam(kk, block.start + lp)).sum::<f64>();
            }
        }
    };
    match attempt {
        Ok(sol) => {
            fill(&sol.x, &mut out);
            let sym = (&out + out.transpose()) * 0.5;
            Ok((sym.map(|v| v.max(0.0)), Some(sol.kkt_residual)))
        }
        Err(e) => {
            log::debug!("completion QP for question {} failed: {e}", j + 1);
            let eq_sum = to_mat(&eq[..sum_only]);
            let plain = lsq.with_equalities(eq_sum, DVector::from_vec(eq_b[..sum_only].to_vec()))?;
            let x0 = plain.feasible_point(Some(&start))?;
            let sol = solve_qp(&plain, &x0, &QpOptions::default())?;
            fill(&sol.x, &mut out);
            let sym = (&out + out.transpose()) * 0.5;
            Ok((sym.map(|v| v.max(0.0)), None))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// `f_{jl;jl'} = f_{jl} f_{jl'}`.
    #[default]
    Product,
    /// Diagonal `f_{jl}`, zero elsewhere in the block.
    Identity,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub n_iter: usize,
    pub tol: f64,
    pub init: Init,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_iter: 5,
            tol: 1e-6,
            init: Init::Product,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Distance to the previous iterate's subspace (`None` on the first).
    pub distance_to_previous: Option<f64>,
    pub plane_residual: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug)]
pub struct SubspaceFit {
    pub basis: Basis,
    pub iterations: Vec<IterationRecord>,
    pub completed: FrequencyMatrix,
    pub plane: PlaneFit,
    pub max_kkt_residual: f64,
}

/// Iterates completion and plane fitting to find a K-dimensional basis of the
/// supporting plane.
pub fn find_subspace(fm: &FrequencyMatrix, k: usize, opts: &FitOptions) -> Result<SubspaceFit> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let design = fm.design().clone();
    let rot = RotationMap::new(&design);
    if k - 1 > rot.rotated_dim() {
        return Err(Error::Config(format!("K={k} exceeds |L|-J+1={}", rot.rotated_dim() + 1)));
    }
    let needs_completion = !fm.is_complete();
    let mut current = if needs_completion { initial_completion(fm, opts.init) } else { fm.clone() };
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut previous: Option<Basis> = None;
    let mut max_kkt = 0.0_f64;
    let mut fallbacks = 0;
    let rounds = if needs_completion { opts.n_iter.max(1) } else { 1 };
    for _ in 0..rounds {
        let (basis, plane) = basis_from_matrix(&current, &rot, k)?;
        let distance_to_previous = previous.as_ref().map(|p| subspace_distance(p, &basis));
        iterations.push(IterationRecord {
            distance_to_previous,
            plane_residual: plane.residual,
            fallbacks,
        });
        let converged = distance_to_previous.is_some_and(|d| d < opts.tol);
        let done = converged || iterations.len() == rounds || !needs_completion;
        if done {
            return Ok(SubspaceFit {
                basis,
                iterations,
                completed: current,
                plane,
                max_kkt_residual: max_kkt,
            });
        }
        let completion = complete_matrix(fm, &basis)?;
        max_kkt = max_kkt.max(completion.max_kkt_residual);
        fallbacks = completion.fallbacks.len();
        current = completion.matrix;
        previous = Some(basis);
    }
    unreachable!("loop always returns on its last round")
}

fn initial_completion(fm: &FrequencyMatrix, init: Init) -> FrequencyMatrix {
    let design = fm.design();
    let mut out = fm.clone();
    let m = fm.first_order();
    for j in 0..design.question_count() {
        let b = design.block(j);
        let block = DMatrix::from_fn(b.len(), b.len(), |x, y| {
            let (fx, fy) = (m[b.start + x], m[b.start + y]);
            match init {
                Init::Product => fx * fy,
                Init::Identity => {
                    if x == y {
                        fx
                    } else {
                        0.0
                    }
                }
            }
        });
        out.set_block(j, &block);
    }
    out
}

/// Columns used for the plane fit: the first-order column and every
/// second-order column divided by its first-order moment, each projected
/// onto the per-question sum-to-one set.
fn plane_columns(fm: &FrequencyMatrix) -> Vec<DVector<f64>> {
    let design = fm.design();
    let m = fm.first_order();
    let mut cols = vec![m.clone()];
    for c in 0..fm.size() {
        if m[c] > 1e-15 {
            cols.push(fm.second_order().column(c) / m[c]);
        }
    }
    for col in &mut cols {
        for j in 0..design.question_count() {
            let b = design.block(j);
            let s: f64 = b.clone().map(|r| col[r]).sum();
            let shift = (1.0 - s) / b.len() as f64;
            for r in b {
                col[r] += shift;
            }
        }
    }
    cols
}

fn basis_from_matrix(fm: &FrequencyMatrix, rot: &RotationMap, k: usize) -> Result<(Basis, PlaneFit)> {
    let rotated: Vec<DVector<f64>> = plane_columns(fm).iter().map(|c| rot.rotate_unchecked(c)).collect();
    let plane = fit_plane(&rotated, k)?;
    let mut vectors = vec![rot.unrotate(&plane.center)?];
    for z in &plane.directions {
        vectors.push(rot.unrotate(&(&plane.center + z))?);
    }
    let basis = Basis::new(fm.design().clone(), vectors).map_err(|e| Error::RankCollapse(e.to_string()))?;
    if !basis.is_nonnegative() {
        log::debug!("fitted basis has negative entries (min {:.3e})", basis.min_entry());
    }
    Ok((basis, plane))
}

/// Sine of the largest principal angle between the spans of two bases.
/// Bases of different dimension are compared over the smaller one.
pub fn subspace_distance(a: &Basis, b: &Basis) -> f64 {
    subspace_distance_matrices(&a.matrix(), &b.matrix())
}

/// [`subspace_distance`] for the column spans of two matrices.
pub fn subspace_distance_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        log::debug!("subspace distance between dimensions {} and {}", a.ncols(), b.ncols());
    }
    // sin of the largest principal angle equals the largest singular value of
    // the part of the smaller frame orthogonal to the larger one; this avoids
    // the cancellation in sqrt(1 - cos^2) for nearly equal subspaces
    let (big, small) = if a.ncols() >= b.ncols() { (a, b) } else { (b, a) };
    let pa = orthonormal_frame(big);
    let pb = orthonormal_frame(small);
    let resid = &pb - &pa * (pa.transpose() * &pb);
    singular_values(&resid).first().copied().unwrap_or(0.0).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{exact_frequency_matrix, MixingModel, MixingSupport};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_basis() -> Basis {
        let design = SurveyDesign::uniform(3, 2).unwrap();
        Basis::from_vectors(
            &design,
            &[vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], vec![0.5, 0.5, 0.0, 1.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    fn example_one() -> MixingModel {
        MixingModel::new(
            example_basis(),
            MixingSupport::Segment {
                from: vec![0.0, 1.0],
                to: vec![1.0, 0.0],
            },
        )
        .unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let e: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn random_point(rng: &mut ChaCha8Rng, design: &SurveyDesign) -> DVector<f64> {
        let mut v = Vec::new();
        for &l in design.levels() {
            v.extend(random_simplex(rng, l));
        }
        DVector::from_vec(v)
    }

    /// Random model: K Dirichlet basis vectors, a few random support points.
    fn random_model(rng: &mut ChaCha8Rng, design: &SurveyDesign, k: usize, points: usize) -> MixingModel {
        let vectors: Vec<DVector<f64>> = (0..k).map(|_| random_point(rng, design)).collect();
        let basis = Basis::new(design.clone(), vectors).unwrap();
        let pts = (0..points).map(|_| random_simplex(rng, k)).collect();
        MixingModel::uniform_points(basis, pts).unwrap()
    }

    #[test]
    fn basis_validation() {
        let design = SurveyDesign::uniform(2, 2).unwrap();
        assert!(Basis::from_vectors(&design, &[vec![0.5, 0.6, 1.0, 0.0]]).is_err());
        assert!(Basis::from_vectors(&design, &[vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]]).is_err());
        let b = Basis::vertices(&design, 2).unwrap();
        assert!(b.is_nonnegative());
        assert_eq!(b.beta(&[0.25, 0.75]).as_slice(), &[0.25, 0.75, 0.25, 0.75]);
    }

    #[test]
    fn basis_csv_round_trip() {
        let b = example_basis();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let back = Basis::read_csv(&buf[..], b.design()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn binary_rotation_closed_form() {
        let design = SurveyDesign::uniform(1, 2).unwrap();
        let rot = RotationMap::new(&design);
        for (a, b) in [(0.2, 0.7), (0.0, 1.0), (0.5, 0.45)] {
            let ra = rot.rotate(&DVector::from_vec(vec![a, 1.0 - a])).unwrap();
            let rb = rot.rotate(&DVector::from_vec(vec![b, 1.0 - b])).unwrap();
            assert_abs_diff_eq!(ra[0], 1.0 - 2f64.sqrt() * a, epsilon = 1e-15);
            assert_abs_diff_eq!((ra[0] - rb[0]).abs(), 2f64.sqrt() * (a - b).abs(), epsilon = 1e-15);
        }
    }

    #[test]
    fn rotation_rejects_points_off_simplex() {
        let design = SurveyDesign::uniform(2, 2).unwrap();
        let rot = RotationMap::new(&design);
        let err = rot.rotate(&DVector::from_vec(vec![0.5, 0.5, 0.5, 0.6])).unwrap_err();
        assert!(matches!(err, Error::NotOnSimplex { question: 2, .. }));
    }

    #[test]
    fn rotation_round_trip_and_isometry() {
        let design = SurveyDesign::new(vec![4, 4, 3, 2, 5]).unwrap();
        let rot = RotationMap::new(&design);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<DVector<f64>> = (0..100).map(|_| random_point(&mut rng, &design)).collect();
        let rotated: Vec<DVector<f64>> = pts.iter().map(|p| rot.rotate(p).unwrap()).collect();
        for (p, r) in pts.iter().zip(&rotated) {
            assert!((rot.unrotate(r).unwrap() - p).amax() <= 1e-12);
        }
        for a in 0..pts.len() {
            for b in 0..a {
                let before = (&pts[a] - &pts[b]).norm();
                let after = (&rotated[a] - &rotated[b]).norm();
                assert!((before - after).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unrotate_restores_sums_for_arbitrary_points() {
        let design = SurveyDesign::new(vec![3, 2]).unwrap();
        let rot = RotationMap::new(&design);
        let v = rot.unrotate(&DVector::from_vec(vec![0.3, -2.0, 7.0])).unwrap();
        assert_abs_diff_eq!(v[0] + v[1] + v[2], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[3] + v[4], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn plane_through_collinear_points() {
        let cols: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_vec(vec![1.0 + i as f64, 2.0 - 0.5 * i as f64, 0.3 * i as f64]))
            .collect();
        let fit = fit_plane(&cols, 2).unwrap();
        assert!(fit.residual < 1e-12);
        assert!(!fit.padded);
        assert_abs_diff_eq!(fit.directions[0].norm(), 1.0, epsilon = 1e-12);
        assert!(fit.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn duplicated_column_equals_weighted_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(4, |_, _| rng.random::<f64>())).collect();
        let mut dup = cols.clone();
        dup.extend(std::iter::repeat_n(cols[2].clone(), 3));
        let mut w = vec![1.0; 6];
        w[2] = 4.0;
        let a = fit_plane(&dup, 3).unwrap();
        let b = fit_plane_weighted(&cols, &w, 3).unwrap();
        assert!((a.center - b.center).amax() < 1e-12);
        assert!((a.residual - b.residual).abs() < 1e-12);
        let da = DMatrix::from_columns(&a.directions);
        let db = DMatrix::from_columns(&b.directions);
        assert!(subspace_distance_matrices(&da, &db) < 1e-9);
    }

    #[test]
    fn plane_padding_is_flagged() {
        let cols = vec![DVector::from_vec(vec![1.0, 1.0, 1.0]); 4];
        let fit = fit_plane(&cols, 3).unwrap();
        assert!(fit.padded);
        assert_eq!(fit.directions.len(), 2);
    }

    #[test]
    fn exact_example_plane_contains_basis() {
        let fm = exact_frequency_matrix(&example_one());
        let rot = RotationMap::new(fm.design());
        let (found, plane) = basis_from_matrix(&fm, &rot, 2).unwrap();
        assert!(plane.residual < 1e-20);
        for v in example_basis().vectors() {
            let r = rot.rotate(v).unwrap() - &plane.center;
            let z = &plane.directions[0];
            let off = &r - z * z.dot(&r);
            assert!(off.norm() < 1e-9);
        }
        assert!(subspace_distance(&found, &example_basis()) < 1e-6);
    }

    #[test]
    fn distance_closed_forms() {
        let e = |i: usize| DVector::from_fn(3, |r, _| if r == i { 1.0 } else { 0.0 });
        let m1 = DMatrix::from_columns(&[e(0), e(1)]);
        assert!(subspace_distance_matrices(&m1, &m1) < 1e-12);
        let o1 = DMatrix::from_columns(&[e(0)]);
        let o2 = DMatrix::from_columns(&[e(1)]);
        assert_abs_diff_eq!(subspace_distance_matrices(&o1, &o2), 1.0, epsilon = 1e-12);
        for theta in [0.1f64, 0.7, 1.3] {
            let m2 = DMatrix::from_columns(&[e(0), e(1) * theta.cos() + e(2) * theta.sin()]);
            assert_abs_diff_eq!(subspace_distance_matrices(&m1, &m2), theta.sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_is_basis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() - 0.5);
        let t = DMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { rng.random::<f64>() });
        let d = subspace_distance_matrices(&a, &b);
        assert_abs_diff_eq!(d, subspace_distance_matrices(&(&a * &t), &b), epsilon = 1e-12);
        assert_abs_diff_eq!(d, subspace_distance_matrices(&b, &a), epsilon = 1e-12);
    }

    #[test]
    fn table_four_rank() {
        let sv = [39.112, 3.217, 1.464, 0.652, 0.363, 0.310, 0.243, 0.220, 0.198, 0.148];
        assert_eq!(rank_from_singular_values(&sv, 0.584), 4);
    }

    #[test]
    fn noiseless_rank_one() {
        let m = MixingModel::uniform_points(example_basis(), vec![vec![0.3, 0.7]]).unwrap();
        let fm = exact_frequency_matrix(&m).blank_diagonal_blocks();
        let se = StdErrMatrix {
            alpha: 0.05,
            z: 1.96,
            first: DVector::zeros(6),
            second: DMatrix::zeros(6, 6),
        };
        let est = estimate_rank(&fm, &se, 2.0).unwrap();
        let top = est.singular_values[0];
        assert_eq!(rank_from_singular_values(&est.singular_values, 1e-9 * top), 1);
    }

    #[test]
    fn rank_needs_two_questions() {
        let design = SurveyDesign::uniform(1, 3).unwrap();
        let basis = Basis::vertices(&design, 1).unwrap();
        let m = MixingModel::uniform_points(basis, vec![vec![1.0]]).unwrap();
        let fm = exact_frequency_matrix(&m).blank_diagonal_blocks();
        let se = StdErrMatrix {
            alpha: 0.05,
            z: 1.96,
            first: DVector::zeros(3),
            second: DMatrix::zeros(3, 3),
        };
        assert!(matches!(estimate_rank(&fm, &se, 2.0), Err(Error::NoCompleteMinor)));
    }

    #[test]
    fn completion_recovers_example_block() {
        let exact = exact_frequency_matrix(&example_one());
        let blank = exact.blank_diagonal_blocks();
        let done = complete_matrix(&blank, &example_basis()).unwrap();
        assert!(done.fallbacks.is_empty());
        let s = done.matrix.second_order();
        assert_abs_diff_eq!(s[(0, 0)], 7.0 / 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s[(0, 1)], 1.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s[(1, 0)], 1.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s[(1, 1)], 1.0 / 12.0, epsilon = 1e-9);
        assert!(done.matrix.is_complete());
        assert!(done.max_kkt_residual <= 1e-8);
    }

    #[test]
    fn completion_single_question_rank_one() {
        let design = SurveyDesign::new(vec![3]).unwrap();
        let lam = vec![0.2, 0.5, 0.3];
        let basis = Basis::from_vectors(&design, std::slice::from_ref(&lam)).unwrap();
        let m = MixingModel::uniform_points(basis.clone(), vec![vec![1.0]]).unwrap();
        let fm = exact_frequency_matrix(&m).blank_diagonal_blocks();
        let done = complete_matrix(&fm, &basis).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(done.matrix.second_order()[(r, c)], lam[r] * lam[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn completion_matches_random_exact_models() {
        let design = SurveyDesign::new(vec![2, 3, 2, 4, 3, 2, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let model = random_model(&mut rng, &design, 3, 6);
            let exact = exact_frequency_matrix(&model);
            let done = complete_matrix(&exact.blank_diagonal_blocks(), model.basis()).unwrap();
            assert!((done.matrix.second_order() - exact.second_order()).amax() < 1e-6);
            assert!(done.max_kkt_residual <= 1e-8);
            // idempotence on exact data
            let again = complete_matrix(&done.matrix.blank_diagonal_blocks(), model.basis()).unwrap();
            assert!((again.matrix.second_order() - exact.second_order()).amax() < 1e-9);
        }
    }

    #[test]
    fn exact_second_order_rank_equals_k() {
        let design = SurveyDesign::new(vec![3, 2, 4, 2, 3, 2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let k = 1 + i % 4;
            let model = random_model(&mut rng, &design, k, k + 3);
            let fm = exact_frequency_matrix(&model);
            assert_eq!(crate::linalg::rank(fm.second_order(), 1e-9), k);
        }
    }

    #[test]
    fn find_subspace_on_complete_exact_matrix() {
        let fm = exact_frequency_matrix(&example_one());
        let fit = find_subspace(&fm, 2, &FitOptions::default()).unwrap();
        assert_eq!(fit.iterations.len(), 1);
        assert!(subspace_distance(&fit.basis, &example_basis()) <= 1e-6);
        assert!(fit.basis.sum_deviation() <= 1e-12);
    }

    #[test]
    fn find_subspace_from_blanked_exact_matrix() {
        let design = SurveyDesign::uniform(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, &design, 3, 12);
        let fm = exact_frequency_matrix(&model).blank_diagonal_blocks();
        for init in [Init::Product, Init::Identity] {
            let opts = FitOptions {
                n_iter: 60,
                tol: 1e-12,
                init,
            };
            let fit = find_subspace(&fm, 3, &opts).unwrap();
            let d = subspace_distance(&fit.basis, model.basis());
            assert!(d < 1e-4, "{init:?}: d = {d}");
            assert!(fit.basis.sum_deviation() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rotation_isometry_prop(seed in any::<u64>()) {
            let design = SurveyDesign::new(vec![2, 3, 4, 6]).unwrap();
            let rot = RotationMap::new(&design);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_point(&mut rng, &design);
            let b = random_point(&mut rng, &design);
            let (ra, rb) = (rot.rotate(&a).unwrap(), rot.rotate(&b).unwrap());
            prop_assert!(((&a - &b).norm() - (&ra - &rb).norm()).abs() <= 1e-12);
            prop_assert!((rot.unrotate(&ra).unwrap() - &a).amax() <= 1e-12);
        }
    }
}
