//! Seeded generators for bases, score distributions and response data, and
//! drivers for the recovery, clustering, score-distribution, rank and timing
//! experiments.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis_select::express_in_basis;
use crate::cluster::{hierarchical, misclassification_rate, Linkage, Stop};
use crate::dataset::{Code, Dataset, SurveyDesign};
use crate::error::{Error, Result};
use crate::moments::{build_frequency_matrix, BuildOptions};
use crate::scores::{estimate_all_scores, histogram, HistogramBin, ScoreOptions};
use crate::subspace::{estimate_rank, find_subspace, subspace_distance, Basis, FitOptions};

/// Binary-question basis with 0/1 entries: `λ¹` answers outcome 1 everywhere
/// and `λ^k` (k ≥ 2) answers outcome 2 exactly on the `(k−1)`-th block of
/// `J/(K−1)` consecutive questions.
pub fn make_block_basis(k: usize, j: usize) -> Result<Basis> {
    if k == 0 || j == 0 {
        return Err(Error::Config("K and J must be positive".into()));
    }
    let design = SurveyDesign::uniform(j, 2)?;
    if k == 1 {
        return Basis::vertices(&design, 1);
    }
    if !j.is_multiple_of(k - 1) {
        return Err(Error::Config(format!("K-1={} does not divide J={j}", k - 1)));
    }
    let block = j / (k - 1);
    let vectors = (0..k)
        .map(|kk| {
            let mut v = DVector::zeros(2 * j);
            for q in 0..j {
                let zero = kk >= 1 && (kk - 1) * block <= q && q < kk * block;
                let first = if zero { 0.0 } else { 1.0 };
                v[2 * q] = first;
                v[2 * q + 1] = 1.0 - first;
            }
            v
        })
        .collect();
    Basis::new(design, vectors)
}

/// Share of each random pure type spread evenly over the outcomes, which
/// keeps the supporting plane clear of the faces of the probability cube.
pub const RANDOM_BASIS_SHRINK: f64 = 0.2;

/// Random basis: for every question each vector favours a uniformly drawn
/// outcome, `λ = (1−s)·e_l + s/L_j`. Redrawn until linearly independent.
pub fn random_basis(design: &SurveyDesign, k: usize, seed: u64) -> Result<Basis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let vectors = (0..k)
            .map(|_| {
                let mut v = DVector::zeros(design.total_cells());
                for j in 0..design.question_count() {
                    let lj = design.level(j);
                    for c in design.block(j) {
                        v[c] = RANDOM_BASIS_SHRINK / lj as f64;
                    }
                    v[design.cell(j, rng.random_range(1..=lj))] += 1.0 - RANDOM_BASIS_SHRINK;
                }
                v
            })
            .collect();
        if let Ok(b) = Basis::new(design.clone(), vectors) {
            return Ok(b);
        }
    }
    Err(Error::Config(format!("could not draw {k} independent vectors for this design")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreDesign {
    /// Lattice of the unit simplex at the finest resolution with at most I
    /// points, cycled to length I.
    SimplexGrid,
    /// K = 2; g₁ equally spaced, half on [0.10, 0.25] and half on [0.50, 0.75].
    TwoInterval,
    /// K = 3; equal mass on five fixed points, labelled.
    FivePoint,
    /// Uniform random draws from the simplex.
    Uniform,
    /// Equal mass on the given points, labelled.
    Points(Vec<Vec<f64>>),
}

/// The five cluster centers used by [`ScoreDesign::FivePoint`].
pub const FIVE_POINTS: [[f64; 3]; 5] = [
    [0.8, 0.1, 0.1],
    [0.1, 0.8, 0.1],
    [0.1, 0.1, 0.8],
    [0.1, 0.45, 0.45],
    [0.45, 0.45, 0.1],
];

#[derive(Clone, Debug)]
pub struct SampledScores {
    pub scores: Vec<Vec<f64>>,
    /// Generating point of each individual, for point-mass designs.
    pub labels: Option<Vec<usize>>,
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All compositions of `n` into `k` nonnegative parts, lexicographic.
fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(n - first, k - 1) {
            let mut v = vec![first];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Draws `i` score vectors of dimension `k` from `design`.
pub fn sample_scores(design: &ScoreDesign, i: usize, k: usize, seed: u64) -> Result<SampledScores> {
    let labelled = |points: &[Vec<f64>]| -> Result<SampledScores> {
        if points.is_empty() || points.iter().any(|p| p.len() != k) {
            return Err(Error::Config(format!("score points must have {k} components")));
        }
        let m = points.len();
        let labels: Vec<usize> = (0..i).map(|n| n * m / i.max(1)).collect();
        Ok(SampledScores {
            scores: labels.iter().map(|&l| points[l].clone()).collect(),
            labels: Some(labels),
        })
    };
    match design {
        ScoreDesign::SimplexGrid => {
            let mut n = 0;
            while binomial(n + 1 + k - 1, k - 1) <= i as f64 && n < i {
                n += 1;
            }
            let lattice: Vec<Vec<f64>> = compositions(n, k)
                .into_iter()
                .map(|c| c.iter().map(|&a| if n == 0 { 1.0 / k as f64 } else { a as f64 / n as f64 }).collect())
                .collect();
            Ok(SampledScores {
                scores: (0..i).map(|x| lattice[x % lattice.len()].clone()).collect(),
                labels: None,
            })
        }
        ScoreDesign::TwoInterval => {
            if k != 2 {
                return Err(Error::Config("the two-interval design needs K=2".into()));
            }
            let half = i / 2;
            let g1 = linspace(0.10, 0.25, half).into_iter().chain(linspace(0.50, 0.75, i - half));
            Ok(SampledScores {
                scores: g1.map(|g| vec![g, 1.0 - g]).collect(),
                labels: None,
            })
        }
        ScoreDesign::FivePoint => {
            if k != 3 {
                return Err(Error::Config("the five-point design needs K=3".into()));
            }
            labelled(&FIVE_POINTS.iter().map(|p| p.to_vec()).collect::<Vec<_>>())
        }
        ScoreDesign::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores = (0..i)
                .map(|_| {
                    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|x| x / s).collect()
                })
                .collect();
            Ok(SampledScores { scores, labels: None })
        }
        ScoreDesign::Points(points) => labelled(points),
    }
}

/// Draws one answer per question from `β = Σ_k g_k λ^k` for every score.
pub fn simulate_responses(basis: &Basis, scores: &[Vec<f64>], seed: u64) -> Result<Dataset> {
    let design = basis.design().clone();
    let nq = design.question_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes: Vec<Code> = Vec::with_capacity(scores.len() * nq);
    for (i, g) in scores.iter().enumerate() {
        if g.len() != basis.k() {
            return Err(Error::Dimension(format!("score {} has {} components for K={}", i + 1, g.len(), basis.k())));
        }
        let beta = basis.beta(g);
        if let Some(min) = beta.iter().copied().reduce(f64::min) {
            if min < -1e-9 {
                return Err(Error::Model(format!("individual {} has mixed probability {min}", i + 1)));
            }
        }
        for j in 0..nq {
            let u: f64 = rng.random();
            let block = design.block(j);
            let mut acc = 0.0;
            let mut pick = block.len();
            for (l, c) in block.clone().enumerate() {
                acc += beta[c].max(0.0);
                if u < acc {
                    pick = l + 1;
                    break;
                }
            }
            // rounding can leave u just above the last cumulative sum
            if pick == block.len() {
                pick = (1..=block.len()).rev().find(|&l| beta[block.start + l - 1] > 0.0).unwrap_or(block.len());
            }
            codes.push(pick as Code);
        }
    }
    Ok(Dataset::from_flat(design, codes))
}

/// Independent, order-free seed for replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Recovery,
    Cluster,
    Bimodal,
    Rank,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Block,
    Random,
}

/// Parameters of one experiment, read from a `key = value` file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub k: usize,
    pub j: usize,
    pub i: usize,
    pub basis: BasisKind,
    pub scores: ScoreDesign,
    pub replications: usize,
    pub seed: u64,
    pub iters: usize,
    pub tol: f64,
    pub linkage: Linkage,
    pub bins: usize,
    pub rank_multiplier: f64,
    /// Named pass/fail limits, e.g. `max_median_distance`.
    pub thresholds: Vec<(String, f64)>,
}

const THRESHOLD_KEYS: [&str; 7] = [
    "max_median_distance",
    "max_score_rate",
    "min_raw_ratio",
    "min_true_mass",
    "min_reconstructed_mass",
    "min_correct_fraction",
    "max_mean_score_rate",
];

impl ExperimentConfig {
    /// Defaults for `kind`, sized to run in seconds.
    pub fn new(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            k: 2,
            j: 60,
            i: 1430,
            basis: BasisKind::Block,
            scores: ScoreDesign::SimplexGrid,
            replications: 10,
            seed: 1,
            iters: 5,
            tol: 1e-6,
            linkage: Linkage::Complete,
            bins: 50,
            rank_multiplier: 2.0,
            thresholds: Vec::new(),
        };
        match kind {
            ExperimentKind::Recovery => base,
            ExperimentKind::Cluster => ExperimentConfig {
                k: 3,
                j: 200,
                i: 1000,
                scores: ScoreDesign::FivePoint,
                ..base
            },
            ExperimentKind::Bimodal => ExperimentConfig {
                k: 2,
                j: 300,
                i: 2000,
                basis: BasisKind::Random,
                scores: ScoreDesign::TwoInterval,
                replications: 1,
                ..base
            },
            ExperimentKind::Rank => ExperimentConfig { i: 5000, ..base },
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            entries.push((n + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let kind = entries
            .iter()
            .find(|(_, k, _)| k == "experiment")
            .map(|(n, _, v)| parse_kind(v).map_err(|e| Error::Config(format!("line {n}: {e}"))))
            .transpose()?
            .ok_or_else(|| Error::Config("missing key 'experiment'".into()))?;
        let mut cfg = ExperimentConfig::new(kind);
        for (n, key, value) in entries {
            cfg.set(&key, &value).map_err(|e| Error::Config(format!("line {n}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        match key {
            "experiment" => {}
            "k" => self.k = num(key, value)?,
            "j" => self.j = num(key, value)?,
            "i" => self.i = num(key, value)?,
            "replications" => self.replications = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            "rank_multiplier" => self.rank_multiplier = num(key, value)?,
            "linkage" => self.linkage = value.parse().map_err(|e: Error| e.to_string())?,
            "basis" => self.basis = value.parse().map_err(|e: Error| e.to_string())?,
            "scores" => self.scores = value.parse().map_err(|e: Error| e.to_string())?,
            k if THRESHOLD_KEYS.contains(&k) => {
                let v = num(key, value)?;
                self.thresholds.retain(|(name, _)| name != k);
                self.thresholds.push((k.to_string(), v));
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn threshold(&self, name: &str) -> Option<f64> {
        self.thresholds.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn with_threshold(mut self, name: &str, value: f64) -> Self {
        self.thresholds.retain(|(n, _)| n != name);
        self.thresholds.push((name.to_string(), value));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.j == 0 || self.i == 0 || self.replications == 0 {
            return Err(Error::Config("k, j, i and replications must be positive".into()));
        }
        if self.basis == BasisKind::Block && self.k > 1 && !self.j.is_multiple_of(self.k - 1) {
            return Err(Error::Config(format!("K-1={} does not divide J={}", self.k - 1, self.j)));
        }
        if self.experiment == ExperimentKind::Cluster && self.scores.point_count().is_none() {
            return Err(Error::Config("cluster experiments need a point-mass score design".into()));
        }
        Ok(())
    }

    fn true_basis(&self, seed: u64) -> Result<Basis> {
        match self.basis {
            BasisKind::Block => make_block_basis(self.k, self.j),
            BasisKind::Random => random_basis(&SurveyDesign::uniform(self.j, 2)?, self.k, seed),
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            n_iter: self.iters,
            tol: self.tol,
            ..Default::default()
        }
    }
}

impl ScoreDesign {
    fn point_count(&self) -> Option<usize> {
        match self {
            ScoreDesign::FivePoint => Some(5),
            ScoreDesign::Points(p) => Some(p.len()),
            _ => None,
        }
    }
}

impl std::str::FromStr for ScoreDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" | "simplex-grid" => Ok(ScoreDesign::SimplexGrid),
            "two-interval" => Ok(ScoreDesign::TwoInterval),
            "five-point" => Ok(ScoreDesign::FivePoint),
            "uniform" => Ok(ScoreDesign::Uniform),
            other => Err(Error::Config(format!("unknown score design '{other}'"))),
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(BasisKind::Block),
            "random" => Ok(BasisKind::Random),
            other => Err(Error::Config(format!("unknown basis '{other}'"))),
        }
    }
}

fn parse_kind(v: &str) -> Result<ExperimentKind> {
    match v {
        "recovery" => Ok(ExperimentKind::Recovery),
        "cluster" => Ok(ExperimentKind::Cluster),
        "bimodal" => Ok(ExperimentKind::Bimodal),
        "rank" => Ok(ExperimentKind::Rank),
        other => Err(Error::Config(format!("unknown experiment '{other}'"))),
    }
}

/// Data and true model for one replication.
struct Replica {
    basis: Basis,
    labels: Option<Vec<usize>>,
    data: Dataset,
}

fn replicate(cfg: &ExperimentConfig, r: usize) -> Result<Replica> {
    let seed = replication_seed(cfg.seed, r);
    let basis = cfg.true_basis(seed ^ 0xB45E)?;
    let sampled = sample_scores(&cfg.scores, cfg.i, cfg.k, seed ^ 0x5C0E)?;
    let data = simulate_responses(&basis, &sampled.scores, seed)?;
    Ok(Replica {
        basis,
        labels: sampled.labels,
        data,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub distances: Vec<f64>,
    pub median_distance: f64,
    pub fit_seconds: Vec<f64>,
    pub max_kkt_residual: f64,
}

/// Simulates, fits and measures the distance to the true subspace for every
/// replication.
pub fn run_recovery_experiment(cfg: &ExperimentConfig) -> Result<RecoveryReport> {
    let runs: Vec<(f64, f64, f64)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(cfg, r)?;
            let (fm, _) = build_frequency_matrix(&rep.data, &BuildOptions::default())?;
            let start = Instant::now();
            let fit = find_subspace(&fm, cfg.k, &cfg.fit_options())?;
            let secs = start.elapsed().as_secs_f64();
            Ok((subspace_distance(&fit.basis, &rep.basis), secs, fit.max_kkt_residual))
        })
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = runs.iter().map(|r| r.0).collect();
    Ok(RecoveryReport {
        median_distance: median(&distances),
        distances,
        fit_seconds: runs.iter().map(|r| r.1).collect(),
        max_kkt_residual: runs.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    pub score_rates: Vec<f64>,
    pub raw_rates: Vec<f64>,
    pub mean_score_rate: f64,
    pub mean_raw_rate: f64,
    pub max_kkt_residual: f64,
}

/// Unique records with counts and the index of each record's pattern.
fn unique_patterns(data: &Dataset) -> (Vec<Vec<Code>>, Vec<f64>, Vec<usize>) {
    let mut index: HashMap<&[Code], usize> = HashMap::new();
    let mut patterns: Vec<Vec<Code>> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    let mut of_record = Vec::with_capacity(data.len());
    for r in data.records() {
        let i = *index.entry(r).or_insert_with(|| {
            patterns.push(r.to_vec());
            counts.push(0.0);
            patterns.len() - 1
        });
        counts[i] += 1.0;
        of_record.push(i);
    }
    (patterns, counts, of_record)
}

/// Clusters reconstructed scores and raw response indicators into as many
/// classes as the design has points and compares both with the truth.
pub fn run_cluster_experiment(cfg: &ExperimentConfig) -> Result<ClusterReport> {
    let classes = cfg
        .scores
        .point_count()
        .ok_or_else(|| Error::Config("cluster experiments need a point-mass score design".into()))?;
    let runs: Vec<(f64, f64, f64)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(cfg, r)?;
            let truth = rep.labels.as_ref().expect("point designs are labelled");
            let (fm, _) = build_frequency_matrix(&rep.data, &BuildOptions::default())?;
            let fit = find_subspace(&fm, cfg.k, &cfg.fit_options())?;
            let me = estimate_all_scores(&rep.data, &fit.basis, &ScoreOptions::default())?;

            let (patterns, counts, of_record) = unique_patterns(&rep.data);
            let by_pattern: HashMap<&[Code], &[f64]> = me
                .points
                .iter()
                .filter_map(|p| p.score.as_ref().map(|s| (p.pattern.as_slice(), s.g.as_slice())))
                .collect();
            // patterns without a score fall back to the mean of the scored ones
            let mean: Vec<f64> = {
                let mut m = vec![0.0; cfg.k];
                let mut tot = 0.0;
                for (g, w) in me.scored() {
                    for (a, b) in m.iter_mut().zip(g) {
                        *a += w * b;
                    }
                    tot += w;
                }
                m.iter().map(|x| x / tot.max(f64::MIN_POSITIVE)).collect()
            };
            // distances between β = Bg, independent of the basis chosen in the plane
            let r_factor = fit.basis.matrix().qr().r();
            let score_points: Vec<Vec<f64>> = patterns
                .iter()
                .map(|p| {
                    let g = by_pattern.get(p.as_slice()).map_or_else(|| mean.clone(), |g| g.to_vec());
                    (&r_factor * DVector::from_vec(g)).iter().copied().collect()
                })
                .collect();
            let sc = hierarchical(&score_points, &counts, Stop::Clusters(classes), cfg.linkage)?;
            let score_assign: Vec<usize> = of_record.iter().map(|&i| sc.assignments[i]).collect();

            let design = rep.data.design();
            let raw_points: Vec<Vec<f64>> = patterns
                .iter()
                .map(|p| {
                    let mut v = vec![0.0; design.total_cells()];
                    for (j, &c) in p.iter().enumerate() {
                        if c != 0 {
                            v[design.cell(j, c as usize)] = 1.0;
                        }
                    }
                    v
                })
                .collect();
            let rc = hierarchical(&raw_points, &counts, Stop::Clusters(classes), cfg.linkage)?;
            let raw_assign: Vec<usize> = of_record.iter().map(|&i| rc.assignments[i]).collect();
            Ok((
                misclassification_rate(&score_assign, truth)?,
                misclassification_rate(&raw_assign, truth)?,
                fit.max_kkt_residual.max(me.max_kkt_residual()),
            ))
        })
        .collect::<Result<_>>()?;
    let score_rates: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let raw_rates: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ClusterReport {
        mean_score_rate: mean(&score_rates),
        mean_raw_rate: mean(&raw_rates),
        score_rates,
        raw_rates,
        max_kkt_residual: runs.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BimodalReport {
    /// Mass of individuals in the two score bands using the true basis.
    pub true_mass: f64,
    /// Same with the reconstructed basis, scores mapped to true coordinates.
    pub reconstructed_mass: f64,
    pub true_histogram: Vec<HistogramBin>,
    pub reconstructed_histogram: Vec<HistogramBin>,
    pub generating_histogram: Vec<HistogramBin>,
    pub subspace_distance: f64,
    pub max_kkt_residual: f64,
}

/// Bands around the two score intervals used by the mass criterion.
pub const BIMODAL_BANDS: [(f64, f64); 2] = [(0.05, 0.30), (0.45, 0.80)];

fn band_mass(values: &[(f64, f64)]) -> f64 {
    let total: f64 = values.iter().map(|v| v.1).sum();
    let inside: f64 = values
        .iter()
        .filter(|(g, _)| BIMODAL_BANDS.iter().any(|(lo, hi)| (*lo..=*hi).contains(g)))
        .map(|v| v.1)
        .sum();
    inside / total
}

/// Recovers the distribution of g₁ with the true and with the reconstructed
/// basis (first replication only).
pub fn run_bimodal_experiment(cfg: &ExperimentConfig) -> Result<BimodalReport> {
    let sampled = sample_scores(&cfg.scores, cfg.i, cfg.k, replication_seed(cfg.seed, 0) ^ 0x5C0E)?;
    let rep = replicate(cfg, 0)?;
    let opts = ScoreOptions::default();
    let true_me = estimate_all_scores(&rep.data, &rep.basis, &opts)?;
    let true_vals: Vec<(f64, f64)> = true_me.scored().map(|(g, w)| (g[0], w)).collect();

    let (fm, _) = build_frequency_matrix(&rep.data, &BuildOptions::default())?;
    let fit = find_subspace(&fm, cfg.k, &cfg.fit_options())?;
    let rec_me = estimate_all_scores(&rep.data, &fit.basis, &opts)?;
    let rec_vals: Vec<(f64, f64)> = rec_me
        .scored()
        .map(|(g, w)| (express_in_basis(&fit.basis.beta(g), &rep.basis)[0], w))
        .collect();
    let gen_vals: Vec<(f64, f64)> = sampled.scores.iter().map(|g| (g[0], 1.0)).collect();
    Ok(BimodalReport {
        true_mass: band_mass(&true_vals),
        reconstructed_mass: band_mass(&rec_vals),
        true_histogram: histogram(true_vals, cfg.bins, 0.0, 1.0),
        reconstructed_histogram: histogram(rec_vals, cfg.bins, 0.0, 1.0),
        generating_histogram: histogram(gen_vals, cfg.bins, 0.0, 1.0),
        subspace_distance: subspace_distance(&fit.basis, &rep.basis),
        max_kkt_residual: fit.max_kkt_residual.max(true_me.max_kkt_residual()).max(rec_me.max_kkt_residual()),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankReport {
    pub estimates: Vec<usize>,
    pub correct_fraction: f64,
}

/// Estimates K on independent simulated datasets.
pub fn run_rank_experiment(cfg: &ExperimentConfig) -> Result<RankReport> {
    let estimates: Vec<usize> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(cfg, r)?;
            let (fm, se) = build_frequency_matrix(&rep.data, &BuildOptions::default())?;
            Ok(estimate_rank(&fm, &se, cfg.rank_multiplier)?.k)
        })
        .collect::<Result<_>>()?;
    let correct = estimates.iter().filter(|&&k| k == cfg.k).count();
    Ok(RankReport {
        correct_fraction: correct as f64 / estimates.len() as f64,
        estimates,
    })
}

/// Median wall time of [`find_subspace`] over `repeats` runs on one simulated
/// dataset (frequency counting excluded).
pub fn time_fit(k: usize, j: usize, i: usize, seed: u64, repeats: usize) -> Result<f64> {
    let cfg = ExperimentConfig {
        k,
        j,
        i,
        seed,
        ..ExperimentConfig::new(ExperimentKind::Recovery)
    };
    let rep = replicate(&cfg, 0)?;
    let (fm, _) = build_frequency_matrix(&rep.data, &BuildOptions::default())?;
    let opts = cfg.fit_options();
    let times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            find_subspace(&fm, k, &opts).map(|_| start.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    Ok(median(&times))
}

/// Report of any experiment kind, with pass/fail against configured limits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub recovery: Option<RecoveryReport>,
    pub cluster: Option<ClusterReport>,
    pub bimodal: Option<BimodalReport>,
    pub rank: Option<RankReport>,
    /// `(threshold name, limit, measured, passed)`.
    pub checks: Vec<(String, f64, f64, bool)>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.3)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport {
        config: cfg.clone(),
        recovery: None,
        cluster: None,
        bimodal: None,
        rank: None,
        checks: Vec::new(),
    };
    let mut measured: Vec<(&str, f64)> = Vec::new();
    match cfg.experiment {
        ExperimentKind::Recovery => {
            let r = run_recovery_experiment(cfg)?;
            measured.push(("max_median_distance", r.median_distance));
            report.recovery = Some(r);
        }
        ExperimentKind::Cluster => {
            let r = run_cluster_experiment(cfg)?;
            measured.push(("max_score_rate", r.mean_score_rate));
            measured.push(("max_mean_score_rate", r.mean_score_rate));
            let ratio = if r.mean_score_rate > 0.0 {
                r.mean_raw_rate / r.mean_score_rate
            } else if r.mean_raw_rate > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            measured.push(("min_raw_ratio", ratio));
            report.cluster = Some(r);
        }
        ExperimentKind::Bimodal => {
            let r = run_bimodal_experiment(cfg)?;
            measured.push(("min_true_mass", r.true_mass));
            measured.push(("min_reconstructed_mass", r.reconstructed_mass));
            report.bimodal = Some(r);
        }
        ExperimentKind::Rank => {
            let r = run_rank_experiment(cfg)?;
            measured.push(("min_correct_fraction", r.correct_fraction));
            report.rank = Some(r);
        }
    }
    for (name, limit) in &cfg.thresholds {
        if let Some(&(_, value)) = measured.iter().find(|(n, _)| n == name) {
            let ok = if name.starts_with("max_") { value <= *limit } else { value >= *limit };
            report.checks.push((name.clone(), *limit, value, ok));
        }
    }
    Ok(report)
}
