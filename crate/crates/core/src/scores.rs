//! Conditional-expectation scores from the main system of equations, the
//! exact posterior for a known model, empirical mixing distributions, model
//! probabilities and imputation.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Code, Dataset, Frequency, FrequencySource, ResponsePattern};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::moments::MixingModel;
use crate::qpsolve::{solve_qp, QpOptions, QuadraticProgram};
use crate::subspace::Basis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Constrained least squares: `Σg = 1` and nonnegative mixed probabilities.
    #[default]
    Qp,
    /// Eliminate `g_K` and solve the reduced least squares by SVD.
    Svd,
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Qp => "qp",
            ScoreMode::Svd => "svd",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ScoreOptions {
    pub mode: ScoreMode,
    /// Rows whose denominator pattern has fewer eligible respondents are
    /// dropped.
    pub min_available: usize,
    /// For complete patterns, average the per-question solutions instead of
    /// solving the joint system.
    pub mean_of_solutions: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            mode: ScoreMode::Qp,
            min_available: 5,
            mean_of_solutions: false,
        }
    }
}

/// Estimated score vector with solver diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreEstimate {
    pub g: Vec<f64>,
    /// Euclidean norm of the system residual.
    pub residual: f64,
    /// Mode that produced `g`.
    pub mode: ScoreMode,
    /// Set when the QP failed and the SVD solution was used instead.
    pub fallback: bool,
    pub rows: usize,
    /// KKT residual of the QP solve, when one succeeded.
    pub kkt_residual: Option<f64>,
}

/// Posterior mean `E(G | X = ℓ)` under a known mixing model.
pub fn bayes_score(model: &MixingModel, pattern: &ResponsePattern) -> Result<Vec<f64>> {
    let design = model.basis().design();
    pattern.validate(design)?;
    let cells: Vec<usize> = pattern.support().map(|(j, c)| design.cell(j, c as usize)).collect();
    let prod = |beta: &DVector<f64>| cells.iter().map(|&c| beta[c]).product::<f64>();
    let m = model.integrate(cells.len(), |_, beta| prod(beta));
    if m <= 1e-300 {
        return Err(Error::ZeroProbabilityPattern(pattern.entries().to_vec()));
    }
    Ok((0..model.basis().k())
        .map(|n| model.integrate(cells.len() + 1, |g, beta| g[n] * prod(beta)) / m)
        .collect())
}

/// One equation `Σ_k λ^k_cell g_k = target`.
#[derive(Clone, Copy, Debug)]
struct Row {
    cell: usize,
    target: f64,
}

/// Rows of the exact system for a pattern with at least one zero: for every
/// unanswered question `j`, the conditional distribution of `X_j` given `ℓ`.
/// `ext[j][l-1]` holds `f_{ℓ+l_j}`; targets are normalized by their sum over
/// `l`, which equals `f_ℓ` for complete data and exact moments.
fn exact_rows(basis: &Basis, pattern: &ResponsePattern, ext: &[Vec<Option<f64>>]) -> Vec<Row> {
    let design = basis.design();
    let mut rows = Vec::new();
    for (j, cells) in ext.iter().enumerate() {
        if pattern.entries()[j] != 0 || cells.is_empty() || cells.iter().any(|c| c.is_none()) {
            continue;
        }
        let total: f64 = cells.iter().map(|c| c.unwrap()).sum();
        if total <= 0.0 {
            continue;
        }
        for (l, c) in cells.iter().enumerate() {
            rows.push(Row {
                cell: design.cell(j, l + 1),
                target: c.unwrap() / total,
            });
        }
    }
    rows
}

/// Per-question rows of the approximate system for a complete pattern:
/// `f_ℓ / f_{ℓ^[j]}` where `ℓ^[j]` zeroes question `j`.
fn approximate_rows(basis: &Basis, pattern: &ResponsePattern, f: f64, reduced: &[Option<f64>]) -> Vec<Row> {
    let design = basis.design();
    reduced
        .iter()
        .enumerate()
        .filter_map(|(j, fr)| match fr {
            Some(d) if *d > 0.0 => Some(Row {
                cell: design.cell(j, pattern.entries()[j] as usize),
                target: f / d,
            }),
            _ => None,
        })
        .collect()
}

/// Solves the main system for `pattern` with frequencies from `source`.
pub fn estimate_score<S: FrequencySource + ?Sized>(
    source: &S,
    basis: &Basis,
    pattern: &ResponsePattern,
    opts: &ScoreOptions,
) -> Result<ScoreEstimate> {
    if source.design() != basis.design() {
        return Err(Error::Dimension("basis and data designs differ".into()));
    }
    pattern.validate(basis.design())?;
    let enough = |avail: Option<usize>| avail.is_none_or(|a| a >= opts.min_available);
    let exact = if pattern.is_complete() {
        let insufficient = || Error::InsufficientData(pattern.entries().to_vec());
        let f = source.frequency(pattern).ok_or_else(insufficient)?;
        let reduced: Vec<Option<f64>> = (0..pattern.len())
            .map(|j| {
                source
                    .frequency(&pattern.with(j, 0))
                    .filter(|fr| enough(fr.available))
                    .map(|fr| fr.value)
            })
            .collect();
        let rows = approximate_rows(basis, pattern, f.value, &reduced);
        if opts.mean_of_solutions {
            mean_of_solutions(basis, pattern, &rows, opts)
        } else {
            solve_rows(basis, &rows, opts.mode).map_err(|_| insufficient())
        }
    } else if !source.frequency(pattern).is_some_and(|b| enough(b.available)) {
        Err(Error::InsufficientData(pattern.entries().to_vec()))
    } else {
        let ext: Vec<Vec<Option<f64>>> = source
            .extensions(pattern)
            .into_iter()
            .map(|cells| {
                // respondents matching the pattern who answered this question
                let behind = cells.iter().try_fold(0.0, |n, c| match c {
                    Some(Frequency { value, available: Some(a) }) => Some(n + value * *a as f64),
                    _ => None,
                });
                if behind.is_some_and(|n| n.round() < opts.min_available as f64) {
                    vec![None; cells.len()]
                } else {
                    cells.into_iter().map(|c| c.map(|c| c.value)).collect()
                }
            })
            .collect();
        let rows = exact_rows(basis, pattern, &ext);
        solve_rows(basis, &rows, opts.mode).map_err(|_| Error::InsufficientData(pattern.entries().to_vec()))
    };
    if pattern.is_complete() || !matches!(exact, Err(Error::InsufficientData(_))) {
        return exact;
    }
    // too few respondents share the answered part: fall back to the
    // approximate system over the answered questions
    let insufficient = || Error::InsufficientData(pattern.entries().to_vec());
    let f = source.frequency(pattern).ok_or_else(insufficient)?;
    let reduced: Vec<Option<f64>> = (0..pattern.len())
        .map(|j| {
            if pattern.entries()[j] == 0 {
                return None;
            }
            source
                .frequency(&pattern.with(j, 0))
                .filter(|fr| enough(fr.available))
                .map(|fr| fr.value)
        })
        .collect();
    let rows = approximate_rows(basis, pattern, f.value, &reduced);
    solve_rows(basis, &rows, opts.mode).map_err(|_| insufficient())
}

/// Averages the single-question solutions `E(G | X^[j] = ℓ^[j])`-style rows.
fn mean_of_solutions(basis: &Basis, pattern: &ResponsePattern, rows: &[Row], opts: &ScoreOptions) -> Result<ScoreEstimate> {
    let k = basis.k();
    let mut sum = vec![0.0; k];
    let mut n = 0usize;
    let mut fallback = false;
    for row in rows {
        if let Ok(est) = solve_rows(basis, std::slice::from_ref(row), opts.mode) {
            for (s, g) in sum.iter_mut().zip(&est.g) {
                *s += g;
            }
            fallback |= est.fallback;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(pattern.entries().to_vec()));
    }
    let g: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let residual = residual_norm(basis, rows, &g);
    Ok(ScoreEstimate {
        g,
        residual,
        mode: if fallback { ScoreMode::Svd } else { opts.mode },
        fallback,
        rows: rows.len(),
        kkt_residual: None,
    })
}

fn residual_norm(basis: &Basis, rows: &[Row], g: &[f64]) -> f64 {
    rows.iter()
        .map(|r| {
            let fit: f64 = (0..basis.k()).map(|k| basis.vector(k)[r.cell] * g[k]).sum();
            (fit - r.target).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn solve_rows(basis: &Basis, rows: &[Row], mode: ScoreMode) -> Result<ScoreEstimate> {
    if rows.is_empty() {
        return Err(Error::InsufficientData(Vec::new()));
    }
    let k = basis.k();
    if k == 1 {
        return Ok(ScoreEstimate {
            g: vec![1.0],
            residual: residual_norm(basis, rows, &[1.0]),
            mode,
            fallback: false,
            rows: rows.len(),
            kkt_residual: None,
        });
    }
    if mode == ScoreMode::Qp {
        match solve_rows_qp(basis, rows) {
            Ok((g, kkt)) => {
                return Ok(ScoreEstimate {
                    residual: residual_norm(basis, rows, &g),
                    g,
                    mode: ScoreMode::Qp,
                    fallback: false,
                    rows: rows.len(),
                    kkt_residual: Some(kkt),
                })
            }
            Err(e) => log::debug!("score QP failed ({e}); using SVD solution"),
        }
    }
    let g = solve_rows_svd(basis, rows);
    Ok(ScoreEstimate {
        residual: residual_norm(basis, rows, &g),
        g,
        mode: ScoreMode::Svd,
        fallback: mode == ScoreMode::Qp,
        rows: rows.len(),
        kkt_residual: None,
    })
}

fn solve_rows_svd(basis: &Basis, rows: &[Row]) -> Vec<f64> {
    let k = basis.k();
    let last = basis.vector(k - 1);
    let a = DMatrix::from_fn(rows.len(), k - 1, |i, kk| basis.vector(kk)[rows[i].cell] - last[rows[i].cell]);
    let b = DVector::from_fn(rows.len(), |i, _| rows[i].target - last[rows[i].cell]);
    let x = lstsq(&a, &b);
    let mut g: Vec<f64> = x.iter().copied().collect();
    g.push(1.0 - x.sum());
    g
}

/// Distinct rows of the mixed-probability constraints `Σ_k g_k λ^k_c ≥ 0`.
fn nonnegativity_rows(basis: &Basis) -> DMatrix<f64> {
    let k = basis.k();
    let mut seen = std::collections::HashSet::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in 0..basis.design().total_cells() {
        let row: Vec<f64> = (0..k).map(|kk| basis.vector(kk)[c]).collect();
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            rows.push(row);
        }
    }
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}

fn solve_rows_qp(basis: &Basis, rows: &[Row]) -> Result<(Vec<f64>, f64)> {
    let k = basis.k();
    let r = DMatrix::from_fn(rows.len(), k, |i, kk| basis.vector(kk)[rows[i].cell]);
    let t = DVector::from_fn(rows.len(), |i, _| rows[i].target);
    let g = nonnegativity_rows(basis);
    let prob = QuadraticProgram::least_squares(&r, &t)?
        .with_equalities(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, 1.0))?
        .with_inequalities(g.clone(), DVector::zeros(g.nrows()))?;
    let start = DVector::from_element(k, 1.0 / k as f64);
    let x0 = prob.feasible_point(Some(&start))?;
    let sol = solve_qp(&prob, &x0, &QpOptions::default())?;
    let mut x: Vec<f64> = sol.x.iter().copied().collect();
    // restore Σg = 1 to rounding
    let s: f64 = x.iter().sum();
    x[k - 1] += 1.0 - s;
    Ok((x, sol.kkt_residual))
}

/// A unique observed pattern with its weight and estimated score.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredPattern {
    pub pattern: Vec<Code>,
    pub count: usize,
    pub weight: f64,
    pub score: Option<ScoreEstimate>,
    pub error: Option<String>,
}

/// Empirical mixing distribution: scores of unique observed patterns
/// weighted by their frequencies.
#[derive(Clone, Debug)]
pub struct MixingEstimate {
    pub basis: Basis,
    pub points: Vec<ScoredPattern>,
}

impl MixingEstimate {
    /// Points with a score, as `(g, weight)`.
    pub fn scored(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.score.as_ref().map(|s| (s.g.as_slice(), p.weight)))
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.score.is_none()).count()
    }

    pub fn fallbacks(&self) -> usize {
        self.points.iter().filter(|p| p.score.as_ref().is_some_and(|s| s.fallback)).count()
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.points
            .iter()
            .filter_map(|p| p.score.as_ref().and_then(|s| s.kkt_residual))
            .fold(0.0, f64::max)
    }

    /// Scores of every record in the original order, by pattern lookup.
    pub fn record_scores(&self, data: &Dataset) -> Vec<Option<Vec<f64>>> {
        let index: HashMap<&[Code], usize> =
            self.points.iter().enumerate().map(|(i, p)| (p.pattern.as_slice(), i)).collect();
        data.records()
            .map(|r| index.get(r).and_then(|&i| self.points[i].score.as_ref().map(|s| s.g.clone())))
            .collect()
    }

    /// Weighted histogram of score component `k` over `[lo, hi]`; values
    /// outside are clamped into the end bins.
    pub fn histogram(&self, k: usize, bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
        histogram(self.scored().map(|(g, w)| (g[k], w)), bins, lo, hi)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let k = self.basis.k();
        let mut header = vec!["pattern".to_string(), "count".into(), "weight".into()];
        header.extend((1..=k).map(|i| format!("g{i}")));
        header.extend(["residual".into(), "mode".into(), "status".into()]);
        writeln!(out, "{}", header.join(","))?;
        for p in &self.points {
            let pat: Vec<String> = p.pattern.iter().map(|c| c.to_string()).collect();
            write!(out, "{},{},{}", pat.join(" "), p.count, p.weight)?;
            match &p.score {
                Some(s) => {
                    for g in &s.g {
                        write!(out, ",{g}")?;
                    }
                    let status = if s.fallback { "fallback" } else { "ok" };
                    writeln!(out, ",{},{},{}", s.residual, s.mode, status)?;
                }
                None => {
                    for _ in 0..k {
                        write!(out, ",")?;
                    }
                    let msg = p.error.as_deref().unwrap_or("failed").replace(',', ";");
                    writeln!(out, ",,,error: {msg}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Weighted histogram with `bins` equal bins on `[lo, hi]`.
pub fn histogram<I: IntoIterator<Item = (f64, f64)>>(values: I, bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut mass = vec![0.0; bins];
    let mut total = 0.0;
    for (v, w) in values {
        let i = ((v - lo) / width).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(bins - 1) };
        mass[i] += w;
        total += w;
    }
    mass.iter()
        .enumerate()
        .map(|(i, &m)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            mass: if total > 0.0 { m / total } else { 0.0 },
        })
        .collect()
}

/// Zobrist-style hashes of records with one question masked, used to count
/// `ℓ^[j]` for every complete pattern in a single pass.
struct MaskedCounts {
    keys: Vec<Vec<u64>>,
    counts: Vec<HashMap<u64, usize>>,
    available: Vec<usize>,
    complete: usize,
}

impl MaskedCounts {
    fn new(data: &Dataset) -> Self {
        let design = data.design();
        let nq = design.question_count();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1e55);
        let keys: Vec<Vec<u64>> = (0..nq).map(|j| (0..=design.level(j)).map(|_| rng.random()).collect()).collect();
        let mut counts = vec![HashMap::new(); nq];
        let mut available = vec![0usize; nq];
        let mut complete = 0;
        for r in data.records() {
            let missing: Vec<usize> = (0..nq).filter(|&j| r[j] == 0).take(2).collect();
            let h = Self::hash_with(&keys, r);
            match missing.as_slice() {
                [] => {
                    complete += 1;
                    for j in 0..nq {
                        *counts[j].entry(h ^ keys[j][r[j] as usize]).or_insert(0) += 1;
                    }
                }
                [j] => {
                    available[*j] += 1;
                    *counts[*j].entry(h).or_insert(0) += 1;
                }
                _ => {}
            }
        }
        MaskedCounts {
            keys,
            counts,
            available,
            complete,
        }
    }

    fn hash_with(keys: &[Vec<u64>], r: &[Code]) -> u64 {
        r.iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .fold(0u64, |h, (j, &c)| h ^ keys[j][c as usize])
    }

    /// `(f_{ℓ^[j]}, eligible respondents)` for a complete pattern.
    fn reduced(&self, pattern: &[Code], j: usize) -> (f64, usize) {
        let h = Self::hash_with(&self.keys, pattern) ^ self.keys[j][pattern[j] as usize];
        let avail = self.complete + self.available[j];
        let n = self.counts[j].get(&h).copied().unwrap_or(0);
        (if avail > 0 { n as f64 / avail as f64 } else { 0.0 }, avail)
    }
}

/// For a pattern with gaps: `f_ℓ` and, for every answered question `j`,
/// `f_{ℓ^[j]}` when at least `min_available` respondents answered the rest
/// of `ℓ`. One pass over the records.
fn partial_reduced(data: &Dataset, p: &[Code], min_available: usize) -> (f64, Vec<Option<f64>>) {
    let support: Vec<usize> = (0..p.len()).filter(|&j| p[j] != 0).collect();
    let n = p.len();
    let (mut eligible_all, mut match_all) = (0usize, 0usize);
    let mut eligible = vec![0usize; n];
    let mut matched = vec![0usize; n];
    for r in data.records() {
        let mut missing = Vec::with_capacity(2);
        let (mut differ, mut first_diff) = (0usize, 0usize);
        for &j in &support {
            if r[j] == 0 {
                missing.push(j);
                if missing.len() > 1 {
                    break;
                }
            } else if r[j] != p[j] {
                if differ == 0 {
                    first_diff = j;
                }
                differ += 1;
            }
        }
        match missing.as_slice() {
            [] => {
                eligible_all += 1;
                for &j in &support {
                    eligible[j] += 1;
                }
                match differ {
                    0 => {
                        match_all += 1;
                        for &j in &support {
                            matched[j] += 1;
                        }
                    }
                    1 => matched[first_diff] += 1,
                    _ => {}
                }
            }
            [j] => {
                eligible[*j] += 1;
                if differ == 0 {
                    matched[*j] += 1;
                }
            }
            _ => {}
        }
    }
    let f = if eligible_all > 0 { match_all as f64 / eligible_all as f64 } else { 0.0 };
    let reduced = (0..n)
        .map(|j| {
            (p[j] != 0 && eligible[j] >= min_available.max(1)).then(|| matched[j] as f64 / eligible[j] as f64)
        })
        .collect();
    (f, reduced)
}

/// Scores every unique observed pattern (first-occurrence order). Failures
/// are recorded per pattern and never abort the batch.
pub fn estimate_all_scores(data: &Dataset, basis: &Basis, opts: &ScoreOptions) -> Result<MixingEstimate> {
    if data.is_empty() {
        return Err(Error::NoRecords);
    }
    if data.design() != basis.design() {
        return Err(Error::Dimension("basis and data designs differ".into()));
    }
    let mut index: HashMap<&[Code], usize> = HashMap::new();
    let mut unique: Vec<(&[Code], usize)> = Vec::new();
    for r in data.records() {
        match index.get(r) {
            Some(&i) => unique[i].1 += 1,
            None => {
                index.insert(r, unique.len());
                unique.push((r, 1));
            }
        }
    }
    let masked = unique.iter().any(|(p, _)| p.iter().all(|&c| c != 0)).then(|| MaskedCounts::new(data));
    let total = data.len() as f64;
    let points = unique
        .par_iter()
        .map(|&(p, count)| {
            let pattern = ResponsePattern::new(p.to_vec());
            let result = if pattern.is_complete() {
                let mc = masked.as_ref().expect("built when complete patterns exist");
                let f = count as f64 / mc.complete as f64;
                let reduced: Vec<Option<f64>> = (0..p.len())
                    .map(|j| {
                        let (fr, avail) = mc.reduced(p, j);
                        (avail >= opts.min_available).then_some(fr)
                    })
                    .collect();
                let rows = approximate_rows(basis, &pattern, f, &reduced);
                if opts.mean_of_solutions {
                    mean_of_solutions(basis, &pattern, &rows, opts)
                } else {
                    solve_rows(basis, &rows, opts.mode)
                }
            } else {
                let (base, ext) = data.extension_counts(&pattern);
                let exact = if base.available < opts.min_available.max(1) {
                    Err(Error::InsufficientData(p.to_vec()))
                } else {
                    let ext: Vec<Vec<Option<f64>>> = ext
                        .into_iter()
                        .map(|cells| {
                            if cells.iter().map(|c| c.matches).sum::<usize>() < opts.min_available {
                                vec![None; cells.len()]
                            } else {
                                cells.into_iter().map(|c| c.frequency()).collect()
                            }
                        })
                        .collect();
                    let rows = exact_rows(basis, &pattern, &ext);
                    solve_rows(basis, &rows, opts.mode)
                };
                match exact {
                    Err(Error::InsufficientData(_)) => {
                        let (f, reduced) = partial_reduced(data, p, opts.min_available);
                        solve_rows(basis, &approximate_rows(basis, &pattern, f, &reduced), opts.mode)
                    }
                    other => other,
                }
            };
            let (score, error) = match result {
                Ok(s) => (Some(s), None),
                Err(Error::InsufficientData(_)) => (None, Some(format!("insufficient data for pattern {pattern}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            ScoredPattern {
                pattern: p.to_vec(),
                count,
                weight: count as f64 / total,
                score,
                error,
            }
        })
        .collect::<Vec<_>>();
    let est = MixingEstimate {
        basis: basis.clone(),
        points,
    };
    if est.failures() > 0 {
        log::warn!("{} of {} patterns could not be scored", est.failures(), est.points.len());
    }
    if est.fallbacks() > 0 {
        log::warn!("{} score QPs fell back to the SVD solution", est.fallbacks());
    }
    Ok(est)
}

/// `p*_ℓ = Σ_{ℓ'} f_{ℓ'} Π_{j: ℓ_j ≠ 0} β_{jℓ_j}(g_{ℓ'})`.
pub fn model_probability(me: &MixingEstimate, basis: &Basis, pattern: &ResponsePattern) -> f64 {
    let design = basis.design();
    let cells: Vec<usize> = pattern.support().map(|(j, c)| design.cell(j, c as usize)).collect();
    me.scored()
        .map(|(g, w)| {
            let beta = basis.beta(g);
            w * cells.iter().map(|&c| beta[c]).product::<f64>()
        })
        .sum()
}

/// Outcome probabilities of question `j` for an individual with score `g`.
/// Returns the vector and whether clipping to `[0, 1]` was needed.
pub fn impute_cell(g: &[f64], basis: &Basis, question: usize) -> (Vec<f64>, bool) {
    let block = basis.design().block(question);
    let raw: Vec<f64> = block
        .map(|c| (0..basis.k()).map(|k| g[k] * basis.vector(k)[c]).sum())
        .collect();
    if raw.iter().all(|&v| (0.0..=1.0).contains(&v)) {
        return (raw, false);
    }
    let clipped: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let s: f64 = clipped.iter().sum();
    let out = if s > 0.0 {
        clipped.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / clipped.len() as f64; clipped.len()]
    };
    (out, true)
}
