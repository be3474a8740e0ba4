//! Order-0/1/2 frequency (moment) matrices with estimability masks, Wilson
//! standard errors, and exact moments of known mixing distributions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Dataset, Frequency, FrequencySource, ResponsePattern, SurveyDesign};
use crate::error::{Error, Result};
use crate::subspace::Basis;

/// First-order column and |L|×|L| second-order block of the moment matrix.
/// Same-question cells are inestimable from data unless filled by completion
/// or computed from a known model.
#[derive(Clone, Debug)]
pub struct FrequencyMatrix {
    design: SurveyDesign,
    first: DVector<f64>,
    second: DMatrix<f64>,
    estimable: Vec<bool>,
    question_available: Vec<usize>,
    pair_available: Vec<usize>,
    records: usize,
    renormalized: bool,
    adjusted_blocks: usize,
}

/// Wilson half-widths for every cell of a [`FrequencyMatrix`].
#[derive(Clone, Debug)]
pub struct StdErrMatrix {
    pub alpha: f64,
    pub z: f64,
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl StdErrMatrix {
    /// Half-width divided by `z`, i.e. the one-sigma error of a cell.
    pub fn standard_error(&self, row: usize, col: usize) -> f64 {
        self.second[(row, col)] / self.z
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Rescale second-order blocks to the first-order margins.
    pub renormalize: bool,
    /// Confidence level of the Wilson intervals.
    pub alpha: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            renormalize: true,
            alpha: 0.05,
        }
    }
}

/// Sidecar description of a dumped matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixMetadata {
    pub design: SurveyDesign,
    pub records: usize,
    pub renormalized: bool,
    pub adjusted_blocks: usize,
    pub inestimable_cells: usize,
}

impl FrequencyMatrix {
    pub(crate) fn from_parts(design: SurveyDesign, first: DVector<f64>, second: DMatrix<f64>, estimable: Vec<bool>) -> Self {
        let j = design.question_count();
        FrequencyMatrix {
            design,
            first,
            second,
            estimable,
            question_available: vec![0; j],
            pair_available: vec![0; j * j],
            records: 0,
            renormalized: false,
            adjusted_blocks: 0,
        }
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn size(&self) -> usize {
        self.design.total_cells()
    }

    pub fn first_order(&self) -> &DVector<f64> {
        &self.first
    }

    /// Raw second-order values; inestimable cells hold 0 unless completed.
    pub fn second_order(&self) -> &DMatrix<f64> {
        &self.second
    }

    pub fn second(&self, row: usize, col: usize) -> Option<f64> {
        self.is_estimable(row, col).then(|| self.second[(row, col)])
    }

    pub fn is_estimable(&self, row: usize, col: usize) -> bool {
        self.estimable[row * self.size() + col]
    }

    /// True when no cell is flagged inestimable.
    pub fn is_complete(&self) -> bool {
        self.estimable.iter().all(|&e| e)
    }

    pub fn inestimable_count(&self) -> usize {
        self.estimable.iter().filter(|&&e| !e).count()
    }

    pub fn records(&self) -> usize {
        self.records
    }

    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    /// Number of question-pair blocks whose margins were rescaled.
    pub fn adjusted_blocks(&self) -> usize {
        self.adjusted_blocks
    }

    /// Respondents behind cell `(row, col)`; 0 for exact matrices.
    pub fn available(&self, row: usize, col: usize) -> usize {
        let qs = self.design.cell_questions();
        let (a, b) = (qs[row], qs[col]);
        if a == b {
            self.question_available[a]
        } else {
            self.pair_available[a * self.design.question_count() + b]
        }
    }

    /// Replaces the same-question block of question `j` (marking it
    /// estimable).
    pub(crate) fn set_block(&mut self, question: usize, block: &DMatrix<f64>) {
        let r = self.design.block(question);
        let n = self.size();
        for (a, row) in r.clone().enumerate() {
            for (b, col) in r.clone().enumerate() {
                self.second[(row, col)] = block[(a, b)];
                self.estimable[row * n + col] = true;
            }
        }
    }

    /// Copy with every same-question block flagged inestimable and zeroed.
    pub fn blank_diagonal_blocks(&self) -> FrequencyMatrix {
        let mut out = self.clone();
        let n = self.size();
        for j in 0..self.design.question_count() {
            for r in self.design.block(j) {
                for c in self.design.block(j) {
                    out.second[(r, c)] = 0.0;
                    out.estimable[r * n + c] = false;
                }
            }
        }
        out
    }

    /// Largest deviation of `Σ_{l'} M_{jl;j'l'}` from `M_{jl}` over estimable
    /// off-diagonal blocks.
    pub fn margin_deviation(&self) -> f64 {
        let design = &self.design;
        let mut worst = 0.0_f64;
        for a in 0..design.question_count() {
            for b in 0..design.question_count() {
                if a == b {
                    continue;
                }
                for r in design.block(a) {
                    if !design.block(b).all(|c| self.is_estimable(r, c)) {
                        continue;
                    }
                    let s: f64 = design.block(b).map(|c| self.second[(r, c)]).sum();
                    worst = worst.max((s - self.first[r]).abs());
                }
            }
        }
        worst
    }

    pub fn metadata(&self) -> MatrixMetadata {
        MatrixMetadata {
            design: self.design.clone(),
            records: self.records,
            renormalized: self.renormalized,
            adjusted_blocks: self.adjusted_blocks,
            inestimable_cells: self.inestimable_count(),
        }
    }

    /// CSV dump: one row per cell, first-order value then |L| second-order
    /// values, `?` for inestimable cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.size();
        let mut header = vec!["cell".to_string(), "first".to_string()];
        for c in 0..n {
            let (j, l) = self.design.cell_position(c);
            header.push(format!("q{}_{}", j + 1, l));
        }
        writeln!(out, "{}", header.join(","))?;
        for r in 0..n {
            let (j, l) = self.design.cell_position(r);
            write!(out, "q{}_{},{}", j + 1, l, self.first[r])?;
            for c in 0..n {
                match self.second(r, c) {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",?")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Standard normal quantile `z_{α/2} = Φ⁻¹(1 − α/2)`.
pub fn z_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

fn wilson_parts(f: f64, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let z2 = z * z;
    let center = (n * f + 0.5 * z2) / (n + z2);
    let half = z * n.sqrt() / (n + z2) * (f * (1.0 - f) + z2 / (4.0 * n)).sqrt();
    (center, half)
}

/// Wilson score interval for frequency `f` from `n` respondents, clipped to
/// `[0, 1]`. `n = 0` gives the degenerate interval `[0, 1]`.
pub fn wilson_interval(f: f64, n: usize, alpha: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (center, half) = wilson_parts(f, n, z_value(alpha));
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Unclipped Wilson half-width.
pub fn wilson_half_width(f: f64, n: usize, z: f64) -> f64 {
    if n == 0 {
        return 0.5;
    }
    wilson_parts(f, n, z).1
}

/// Counts first- and second-order frequencies over `data`.
pub fn build_frequency_matrix(data: &Dataset, opts: &BuildOptions) -> Result<(FrequencyMatrix, StdErrMatrix)> {
    if data.is_empty() {
        return Err(Error::NoRecords);
    }
    let design = data.design().clone();
    let nq = design.question_count();
    let n = design.total_cells();
    let mut first_counts = vec![0u64; n];
    let mut question_available = vec![0usize; nq];
    let mut pair_counts = vec![0u32; n * n];
    let mut pair_available = vec![0usize; nq * nq];
    let complete = !data.has_missing();

    let mut answered: Vec<(usize, usize)> = Vec::with_capacity(nq);
    for rec in data.records() {
        answered.clear();
        for (j, &code) in rec.iter().enumerate() {
            if code != 0 {
                answered.push((j, design.cell(j, code as usize)));
            }
        }
        for &(j, c) in &answered {
            first_counts[c] += 1;
            question_available[j] += 1;
        }
        for (a, &(ja, ca)) in answered.iter().enumerate() {
            let row = &mut pair_counts[ca * n..(ca + 1) * n];
            for &(_, cb) in &answered[a + 1..] {
                row[cb] += 1;
            }
            if !complete {
                for &(jb, _) in &answered[a + 1..] {
                    pair_available[ja * nq + jb] += 1;
                }
            }
        }
    }
    if let Some(j) = question_available.iter().position(|&a| a == 0) {
        return Err(Error::EmptyQuestion(j + 1));
    }
    if complete {
        pair_available.iter_mut().for_each(|a| *a = data.len());
    } else {
        for a in 0..nq {
            for b in a + 1..nq {
                pair_available[b * nq + a] = pair_available[a * nq + b];
            }
        }
    }

    let qs = design.cell_questions();
    let mut first = DVector::zeros(n);
    for c in 0..n {
        first[c] = first_counts[c] as f64 / question_available[qs[c]] as f64;
    }
    let mut second = DMatrix::zeros(n, n);
    let mut estimable = vec![false; n * n];
    for r in 0..n {
        for c in r + 1..n {
            let (a, b) = (qs[r], qs[c]);
            if a == b {
                continue;
            }
            let avail = pair_available[a * nq + b];
            if avail == 0 {
                continue;
            }
            let v = pair_counts[r * n + c] as f64 / avail as f64;
            second[(r, c)] = v;
            second[(c, r)] = v;
            estimable[r * n + c] = true;
            estimable[c * n + r] = true;
        }
    }

    let mut fm = FrequencyMatrix {
        design,
        first,
        second,
        estimable,
        question_available,
        pair_available,
        records: data.len(),
        renormalized: false,
        adjusted_blocks: 0,
    };
    if opts.renormalize {
        fm.renormalize();
    }
    let se = std_err_matrix(&fm, opts.alpha);
    Ok((fm, se))
}

impl FrequencyMatrix {
    /// Iterative proportional fitting of each question-pair block to the
    /// first-order margins of both questions, keeping the matrix symmetric.
    fn renormalize(&mut self) {
        let design = self.design.clone();
        let nq = design.question_count();
        let mut adjusted = 0;
        for a in 0..nq {
            for b in a + 1..nq {
                let (ra, rb) = (design.block(a), design.block(b));
                if !ra.clone().all(|r| rb.clone().all(|c| self.is_estimable(r, c))) {
                    continue;
                }
                let mut block = self.second.view((ra.start, rb.start), (ra.len(), rb.len())).into_owned();
                let rows_target: Vec<f64> = ra.clone().map(|r| self.first[r]).collect();
                let cols_target: Vec<f64> = rb.clone().map(|c| self.first[c]).collect();
                let dev = |m: &DMatrix<f64>| {
                    let rd = (0..m.nrows()).map(|i| (m.row(i).sum() - rows_target[i]).abs()).fold(0.0, f64::max);
                    let cd = (0..m.ncols()).map(|k| (m.column(k).sum() - cols_target[k]).abs()).fold(0.0, f64::max);
                    rd.max(cd)
                };
                if dev(&block) <= 1e-12 {
                    continue;
                }
                for _ in 0..200 {
                    for i in 0..block.nrows() {
                        let s = block.row(i).sum();
                        if s > 0.0 {
                            block.row_mut(i).scale_mut(rows_target[i] / s);
                        }
                    }
                    for k in 0..block.ncols() {
                        let s = block.column(k).sum();
                        if s > 0.0 {
                            block.column_mut(k).scale_mut(cols_target[k] / s);
                        }
                    }
                    if dev(&block) <= 1e-13 {
                        break;
                    }
                }
                if dev(&block) > 1e-9 {
                    log::warn!(
                        "renormalization of questions {} and {} left margin error {:e}",
                        a + 1,
                        b + 1,
                        dev(&block)
                    );
                }
                self.second.view_mut((ra.start, rb.start), (ra.len(), rb.len())).copy_from(&block);
                self.second
                    .view_mut((rb.start, ra.start), (rb.len(), ra.len()))
                    .copy_from(&block.transpose());
                adjusted += 1;
            }
        }
        self.renormalized = true;
        self.adjusted_blocks = adjusted;
        if adjusted > 0 {
            log::info!("renormalized {adjusted} question-pair blocks (missing data assumed random)");
        }
    }
}

fn std_err_matrix(fm: &FrequencyMatrix, alpha: f64) -> StdErrMatrix {
    let z = z_value(alpha);
    let n = fm.size();
    let qs = fm.design.cell_questions();
    let first = DVector::from_fn(n, |c, _| wilson_half_width(fm.first[c], fm.question_available[qs[c]], z));
    let nq = fm.design.question_count();
    let second = DMatrix::from_fn(n, n, |r, c| {
        if !fm.is_estimable(r, c) {
            return 0.0;
        }
        let avail = fm.pair_available[qs[r] * nq + qs[c]];
        wilson_half_width(fm.second[(r, c)], avail, z)
    });
    StdErrMatrix { alpha, z, first, second }
}

/// A mass point of a discrete mixing distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub weight: f64,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MixingSupport {
    /// Finitely many weighted score vectors.
    Points(Vec<SupportPoint>),
    /// Uniform distribution on the segment between two score vectors.
    Segment { from: Vec<f64>, to: Vec<f64> },
}

/// A mixing distribution supported by the plane of `basis`, given in score
/// coordinates.
#[derive(Clone, Debug)]
pub struct MixingModel {
    basis: Basis,
    support: MixingSupport,
}

impl MixingModel {
    pub fn new(basis: Basis, support: MixingSupport) -> Result<Self> {
        let k = basis.k();
        let check = |g: &[f64]| -> Result<()> {
            if g.len() != k {
                return Err(Error::Model(format!("score vector of length {} for K={}", g.len(), k)));
            }
            let s: f64 = g.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!("scores sum to {s}, not 1")));
            }
            let beta = basis.beta(g);
            if let Some(min) = beta.iter().copied().reduce(f64::min) {
                if min < -1e-9 {
                    return Err(Error::Model(format!("mixed probability {min} is negative")));
                }
            }
            Ok(())
        };
        match &support {
            MixingSupport::Points(points) => {
                if points.is_empty() {
                    return Err(Error::Model("empty support".into()));
                }
                let mut total = 0.0;
                for p in points {
                    if p.weight < 0.0 {
                        return Err(Error::Model(format!("negative weight {}", p.weight)));
                    }
                    total += p.weight;
                    check(&p.g)?;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Model(format!("weights sum to {total}, not 1")));
                }
            }
            MixingSupport::Segment { from, to } => {
                check(from)?;
                check(to)?;
            }
        }
        Ok(MixingModel { basis, support })
    }

    /// Point masses with equal weights.
    pub fn uniform_points(basis: Basis, points: Vec<Vec<f64>>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let support = points.into_iter().map(|g| SupportPoint { weight: w, g }).collect();
        Self::new(basis, MixingSupport::Points(support))
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn support(&self) -> &MixingSupport {
        &self.support
    }

    /// Weighted evaluation nodes exact for polynomial integrands of the given
    /// degree in `g`.
    pub(crate) fn nodes(&self, degree: usize) -> Vec<(f64, Vec<f64>)> {
        match &self.support {
            MixingSupport::Points(points) => points.iter().map(|p| (p.weight, p.g.clone())).collect(),
            MixingSupport::Segment { from, to } => gauss_legendre_unit(degree / 2 + 1)
                .into_iter()
                .map(|(t, w)| {
                    let g = from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect();
                    (w, g)
                })
                .collect(),
        }
    }

    /// `∫ dF(g) · integrand(g, β(g))` where the integrand is a polynomial of
    /// degree at most `degree` in `g`.
    pub(crate) fn integrate<F: Fn(&[f64], &DVector<f64>) -> f64>(&self, degree: usize, integrand: F) -> f64 {
        self.nodes(degree)
            .into_iter()
            .map(|(w, g)| {
                let beta = self.basis.beta(&g);
                w * integrand(&g, &beta)
            })
            .sum()
    }
}

/// `M_ℓ = ∫ dF(g) Π_{j: ℓ_j ≠ 0} Σ_k g_k λ^k_{jℓ_j}`.
pub fn exact_moment(model: &MixingModel, pattern: &ResponsePattern) -> Result<f64> {
    let design = model.basis.design();
    pattern.validate(design)?;
    let cells: Vec<usize> = pattern.support().map(|(j, c)| design.cell(j, c as usize)).collect();
    Ok(model.integrate(cells.len(), |_, beta| cells.iter().map(|&c| beta[c]).product()))
}

/// Every order-≤2 cell of the moment matrix computed from the model,
/// including the same-question blocks.
pub fn exact_frequency_matrix(model: &MixingModel) -> FrequencyMatrix {
    let design = model.basis.design().clone();
    let n = design.total_cells();
    let mut first = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    for (w, g) in model.nodes(2) {
        let beta = model.basis.beta(&g);
        first.axpy(w, &beta, 1.0);
        second.ger(w, &beta, &beta, 1.0);
    }
    FrequencyMatrix::from_parts(design, first, second, vec![true; n * n])
}

impl FrequencySource for MixingModel {
    fn design(&self) -> &SurveyDesign {
        self.basis.design()
    }

    fn frequency(&self, pattern: &ResponsePattern) -> Option<Frequency> {
        exact_moment(self, pattern).ok().map(|value| Frequency { value, available: None })
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]` (weights sum to 1).
pub(crate) fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let n = n.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((1.0 - x) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Code;

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

    fn example_two() -> MixingModel {
        MixingModel::uniform_points(example_basis(), vec![vec![0.1, 0.9], vec![0.4, 0.6]]).unwrap()
    }

    fn p(v: &[Code]) -> ResponsePattern {
        ResponsePattern::new(v.to_vec())
    }

    #[test]
    fn example_one_moments() {
        let m = example_one();
        for (pat, want) in [
            (&[1, 0, 0][..], 3.0 / 4.0),
            (&[0, 0, 1], 1.0 / 2.0),
            (&[1, 0, 1], 5.0 / 12.0),
            (&[1, 0, 2], 1.0 / 3.0),
            (&[0, 0, 0], 1.0),
        ] {
            assert!((exact_moment(&m, &p(pat)).unwrap() - want).abs() < 1e-12, "{pat:?}");
        }
        let fm = exact_frequency_matrix(&m);
        assert!((fm.second_order()[(0, 0)] - 7.0 / 12.0).abs() < 1e-12);
        assert!((fm.second_order()[(0, 1)] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn example_two_moments() {
        let m = example_two();
        assert!((exact_moment(&m, &p(&[1, 0, 0])).unwrap() - 5.0 / 8.0).abs() < 1e-12);
        assert!((exact_moment(&m, &p(&[0, 0, 1])).unwrap() - 1.0 / 4.0).abs() < 1e-12);
        assert!((exact_moment(&m, &p(&[1, 0, 1])).unwrap() - 67.0 / 400.0).abs() < 1e-12);
    }

    #[test]
    fn exact_matrices_have_rank_two() {
        for m in [example_one(), example_two()] {
            let fm = exact_frequency_matrix(&m);
            assert_eq!(crate::linalg::rank(fm.second_order(), 1e-9), 2);
        }
    }

    #[test]
    fn single_point_mixture_is_product() {
        let m = MixingModel::uniform_points(example_basis(), vec![vec![1.0, 0.0]]).unwrap();
        let fm = exact_frequency_matrix(&m);
        let l1 = m.basis().vector(0);
        for r in 0..6 {
            assert!((fm.first_order()[r] - l1[r]).abs() < 1e-15);
            for c in 0..6 {
                assert!((fm.second_order()[(r, c)] - l1[r] * l1[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            let nodes = gauss_legendre_unit(n);
            for deg in 0..2 * n {
                let got: f64 = nodes.iter().map(|(t, w)| w * t.powi(deg as i32)).sum();
                assert!((got - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn build_from_records() {
        let design = SurveyDesign::uniform(2, 2).unwrap();
        let data = Dataset::new(design, vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![1, 1]]).unwrap();
        let (fm, se) = build_frequency_matrix(&data, &BuildOptions::default()).unwrap();
        assert_eq!(fm.first_order()[0], 0.75);
        assert_eq!(fm.second(0, 2), Some(0.5));
        assert_eq!(fm.second(0, 1), None);
        assert_eq!(fm.second(0, 0), None);
        assert!(fm.margin_deviation() < 1e-15);
        assert_eq!(fm.adjusted_blocks(), 0);
        assert!(se.second[(0, 2)] > 0.0);
        // complete data: counting identity holds exactly
        let s: f64 = (2..4).map(|c| fm.second(0, c).unwrap()).sum();
        assert_eq!(s, fm.first_order()[0]);
    }

    #[test]
    fn renormalization_restores_margins_and_symmetry() {
        let design = SurveyDesign::uniform(3, 2).unwrap();
        let recs = vec![
            vec![1, 1, 0],
            vec![1, 0, 2],
            vec![2, 1, 1],
            vec![0, 2, 1],
            vec![1, 2, 2],
            vec![2, 2, 0],
            vec![1, 1, 1],
        ];
        let data = Dataset::new(design, recs).unwrap();
        let raw = build_frequency_matrix(&data, &BuildOptions { renormalize: false, alpha: 0.05 }).unwrap().0;
        assert!(raw.margin_deviation() > 1e-3);
        let (fm, _) = build_frequency_matrix(&data, &BuildOptions::default()).unwrap();
        assert!(fm.margin_deviation() < 1e-9);
        assert!(fm.adjusted_blocks() > 0);
        let s = fm.second_order();
        assert!((s - s.transpose()).amax() < 1e-15);
    }

    #[test]
    fn empty_question_is_an_error() {
        let design = SurveyDesign::uniform(2, 2).unwrap();
        let data = Dataset::new(design, vec![vec![1, 0], vec![2, 0]]).unwrap();
        assert!(matches!(
            build_frequency_matrix(&data, &BuildOptions::default()),
            Err(Error::EmptyQuestion(2))
        ));
    }

    #[test]
    fn wilson_at_zero_frequency() {
        let z = z_value(0.05);
        for n in [1usize, 7, 100, 5000] {
            let (lo, hi) = wilson_interval(0.0, n, 0.05);
            assert!(lo.abs() < 1e-15);
            let want = z * z / (n as f64 + z * z);
            assert!((hi - want).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn wilson_matches_quadratic_roots() {
        // The Wilson bounds are the roots p of (f - p)^2 = z^2 p (1 - p) / n.
        let z: f64 = 1.959_963_984_540_054;
        assert!((z_value(0.05) - z).abs() < 1e-9);
        let (f, n) = (0.5_f64, 100.0_f64);
        let a = 1.0 + z * z / n;
        let b = -(2.0 * f + z * z / n);
        let c = f * f;
        let disc = (b * b - 4.0 * a * c).sqrt();
        let (lo_oracle, hi_oracle) = ((-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a));
        let (lo, hi) = wilson_interval(0.5, 100, 0.05);
        assert!((lo - lo_oracle).abs() < 1e-10, "{lo} vs {lo_oracle}");
        assert!((hi - hi_oracle).abs() < 1e-10, "{hi} vs {hi_oracle}");
    }

    #[test]
    fn wilson_wald_limit() {
        let f = 0.3;
        let z = z_value(0.05);
        let mut prev = f64::INFINITY;
        for n in [1_000usize, 100_000, 10_000_000] {
            let (lo, hi) = wilson_interval(f, n, 0.05);
            let wald = z * (f * (1.0 - f) / n as f64).sqrt();
            let rel = ((lo - (f - wald)).abs()).max((hi - (f + wald)).abs()) / wald;
            assert!(rel < prev);
            prev = rel;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn wilson_degenerate_count() {
        assert_eq!(wilson_interval(0.3, 0, 0.05), (0.0, 1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wilson_contains_center_and_shrinks(f in 0.0f64..=1.0, n in 1usize..10_000) {
                let z = z_value(0.05);
                let (lo, hi) = wilson_interval(f, n, 0.05);
                let center = (n as f64 * f + z * z / 2.0) / (n as f64 + z * z);
                prop_assert!(lo <= center && center <= hi);
                prop_assert!(wilson_half_width(f, 2 * n, z) < wilson_half_width(f, n, z));
                prop_assert!(wilson_half_width(f, n, z) >= 0.0);
            }

            #[test]
            fn moments_are_linear_in_weights(w in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0,
                                            pat in prop::collection::vec(0u16..=2, 3)) {
                let basis = example_basis();
                let pa = MixingModel::uniform_points(basis.clone(), vec![vec![a, 1.0 - a]]).unwrap();
                let pb = MixingModel::uniform_points(basis.clone(), vec![vec![b, 1.0 - b]]).unwrap();
                let mix = MixingModel::new(basis, MixingSupport::Points(vec![
                    SupportPoint { weight: w, g: vec![a, 1.0 - a] },
                    SupportPoint { weight: 1.0 - w, g: vec![b, 1.0 - b] },
                ])).unwrap();
                let pat = ResponsePattern::new(pat);
                let lhs = exact_moment(&mix, &pat).unwrap();
                let rhs = w * exact_moment(&pa, &pat).unwrap() + (1.0 - w) * exact_moment(&pb, &pat).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
                prop_assert!((exact_moment(&mix, &ResponsePattern::empty(3)).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
