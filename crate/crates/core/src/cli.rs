//! Command-line front end: `lls <subcommand>`. Exit code 0 on success, 1 on
//! numerical failure, 2 on bad input.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::basis_select::{cluster_mean_basis, pure_type_basis, ClusterMethod, PureTypeSpec};
use crate::cluster::{hierarchical, kmeans, Linkage, Stop};
use crate::dataset::{load_dataset, Dataset, LoadOptions, SurveyDesign};
use crate::error::{Error, Result};
use crate::moments::{build_frequency_matrix, BuildOptions};
use crate::scores::{estimate_all_scores, impute_cell, HistogramBin, MixingEstimate, ScoreMode, ScoreOptions};
use crate::sim::{
    make_block_basis, random_basis, run_experiment, sample_scores, simulate_responses, BasisKind, ExperimentConfig,
    ExperimentKind, ExperimentReport, ScoreDesign,
};
use crate::subspace::{complete_matrix, estimate_rank, find_subspace, rank_from_singular_values, Basis, FitOptions, Init};

#[derive(Parser, Debug)]
#[command(name = "lls", version, about = "Linear latent structure analysis of categorical survey data")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the number of pure types K from the frequency matrix.
    Rank(RankArgs),
    /// Find a basis of the supporting plane.
    Fit(FitArgs),
    /// Estimate LLS scores of every observed pattern.
    Scores(ScoresArgs),
    /// Fill inestimable cells of the frequency matrix, and optionally impute missing answers.
    Complete(CompleteArgs),
    /// Choose an interpretable basis in the fitted plane.
    Basis(BasisArgs),
    /// Cluster individuals by their scores.
    Cluster(ClusterArgs),
    /// Simulate a dataset with known truth.
    Simulate(SimulateArgs),
    /// Run a simulation experiment from a key = value config file.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Response CSV: one record per line, codes 1..L_j.
    pub data: PathBuf,
    /// Design file with one line `L_1 L_2 ... L_J` (inferred when absent).
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Token marking a missing answer.
    #[arg(long, default_value = ".")]
    pub missing_token: String,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Skip the first non-empty line.
    #[arg(long)]
    pub header: bool,
    /// Treat a missing answer as one more outcome of its question.
    #[arg(long)]
    pub missing_as_category: bool,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub data: Option<DataArgs>,
    /// Confidence level parameter of the Wilson intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Threshold multiplier on the aggregated standard error.
    #[arg(long, default_value_t = 2.0)]
    pub multiplier: f64,
    /// Read singular values from this file instead of data (needs --threshold).
    #[arg(long, conflicts_with = "data")]
    pub sv_file: Option<PathBuf>,
    #[arg(long, requires = "sv_file")]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of pure types; estimated with `rank` when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Product)]
    pub init: InitArg,
    #[arg(long, default_value_t = 2.0)]
    pub multiplier: f64,
    /// Basis CSV (a `.design` sidecar is written next to it).
    #[arg(short, long, default_value = "basis.csv")]
    pub output: PathBuf,
    /// Also write the completed frequency matrix.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    Product,
    Identity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Qp,
    Svd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Kmeans,
    Hier,
}

#[derive(Args, Debug)]
pub struct ScoresArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Basis CSV written by `fit` or `basis`.
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Qp)]
    pub mode: ModeArg,
    /// Average per-question solutions for complete patterns.
    #[arg(long)]
    pub mean_of_solutions: bool,
    /// Minimum eligible respondents behind a ratio row.
    #[arg(long, default_value_t = 5)]
    pub min_available: usize,
    #[arg(short, long, default_value = "scores.csv")]
    pub output: PathBuf,
    /// Histogram CSV of one score component.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// 1-based score component for the histogram.
    #[arg(long, default_value_t = 1)]
    pub component: usize,
}

#[derive(Args, Debug)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub basis: PathBuf,
    /// Completed frequency matrix CSV (metadata JSON written alongside).
    #[arg(short, long, default_value = "completed.csv")]
    pub output: PathBuf,
    /// Write imputed outcome probabilities for every missing answer.
    #[arg(long)]
    pub impute: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BasisArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Current basis of the plane.
    #[arg(long)]
    pub basis: PathBuf,
    /// CSV of hand-built pure types, one per line.
    #[arg(long, conflicts_with = "cluster_means", required_unless_present = "cluster_means")]
    pub pure_types: Option<PathBuf>,
    /// Use means of score clusters as the new basis.
    #[arg(long)]
    pub cluster_means: bool,
    #[arg(long, requires = "cluster_means")]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Kmeans)]
    pub method: MethodArg,
    #[arg(long, default_value = "centroid")]
    pub linkage: Linkage,
    #[arg(short, long, default_value = "basis.new.csv")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Kmeans)]
    pub method: MethodArg,
    #[arg(long, default_value = "centroid")]
    pub linkage: Linkage,
    /// CSV of pattern -> cluster.
    #[arg(short, long, default_value = "clusters.csv")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 60)]
    pub j: usize,
    #[arg(long, default_value_t = 1430)]
    pub i: usize,
    /// grid, two-interval, five-point or uniform.
    #[arg(long, default_value = "grid")]
    pub scores: String,
    /// block or random.
    #[arg(long, default_value = "block")]
    pub basis: String,
    /// Dataset CSV; `<output>.truth.json` and `<output>.basis.csv` go alongside.
    #[arg(short, long, default_value = "simulated.csv")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    /// Full-size bimodal run (J=1500, I=10000).
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Directory for report.json and CSV tables.
    #[arg(long, default_value = "experiment-out")]
    pub output_dir: PathBuf,
}

/// Provenance of one CLI run, written next to its outputs.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub seed: Option<u64>,
    pub version: String,
    /// `(stage, seconds)`.
    pub timings: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    fn set<V: Serialize>(&mut self, key: &str, value: V) {
        self.config
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            eprintln!("warning: {w}");
            self.warnings.push(w);
        }
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn write(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(path.display().to_string());
        let file = create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load(args: &DataArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    let design = args
        .design
        .as_ref()
        .map(|p| std::fs::read_to_string(p).map_err(Error::from).and_then(|t| SurveyDesign::parse(&t)))
        .transpose()?;
    let opts = LoadOptions {
        delimiter: args.delimiter,
        missing_token: args.missing_token.clone(),
        has_header: args.header,
        missing_as_category: args.missing_as_category,
    };
    manifest.inputs.push(args.data.display().to_string());
    manifest.set("missing_token", &args.missing_token);
    manifest.stage("load", || load_dataset(open(&args.data)?, design, &opts))
}

/// Reads a basis CSV using its `.design` sidecar when present, else `fallback`.
pub fn read_basis(path: &Path, fallback: &SurveyDesign) -> Result<Basis> {
    let side = sidecar(path, ".design");
    let design = if side.exists() {
        SurveyDesign::parse(&std::fs::read_to_string(&side)?)?
    } else {
        fallback.clone()
    };
    if &design != fallback {
        return Err(Error::Basis(format!(
            "basis design [{}] does not match data design [{}]",
            design.to_line(),
            fallback.to_line()
        )));
    }
    Basis::read_csv(open(path)?, &design)
}

pub fn write_basis(basis: &Basis, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    basis.write_csv(&mut out)?;
    out.flush()?;
    std::fs::write(sidecar(path, ".design"), basis.design().to_line() + "\n")?;
    Ok(())
}

fn write_histogram(bins: &[HistogramBin], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "lo,hi,mass")?;
    for b in bins {
        writeln!(out, "{},{},{}", b.lo, b.hi, b.mass)?;
    }
    out.flush()?;
    Ok(())
}

fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for r in data.records() {
        let row: Vec<String> = r.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn score_warnings(me: &MixingEstimate, manifest: &mut RunManifest) {
    if me.failures() > 0 {
        manifest.warn(format!("{} of {} patterns could not be scored", me.failures(), me.points.len()));
    }
    if me.fallbacks() > 0 {
        manifest.warn(format!("{} score QPs fell back to the SVD solution", me.fallbacks()));
    }
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| {
            t.parse().map_err(|_| Error::Parse {
                row: 1,
                column: i + 1,
                message: format!("expected a number, found {t:?}"),
            })
        })
        .collect()
}

fn cmd_rank(args: &RankArgs, seed: Option<u64>) -> Result<usize> {
    let mut manifest = RunManifest::new("rank", seed);
    let (k, sv, threshold) = if let Some(path) = &args.sv_file {
        let threshold = args
            .threshold
            .ok_or_else(|| Error::Config("--sv-file needs --threshold".into()))?;
        let mut sv = read_numbers(path)?;
        sv.sort_by(|a, b| b.total_cmp(a));
        (rank_from_singular_values(&sv, threshold), sv, threshold)
    } else {
        let data_args = args
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("give a data file or --sv-file".into()))?;
        let data = load(data_args, &mut manifest)?;
        let (fm, se) = build_frequency_matrix(
            &data,
            &BuildOptions {
                alpha: args.alpha,
                ..Default::default()
            },
        )?;
        let est = estimate_rank(&fm, &se, args.multiplier)?;
        (est.k, est.singular_values, est.threshold)
    };
    let mut text = format!("K = {k}\nthreshold = {threshold}\nindex,singular_value,above\n");
    for (i, s) in sv.iter().enumerate() {
        text += &format!("{},{s},{}\n", i + 1, *s > threshold);
    }
    // A closed pipe (for example `| head`) is not an error worth reporting.
    let _ = io::stdout().lock().write_all(text.as_bytes());
    Ok(k)
}

fn cmd_fit(args: &FitArgs, seed: Option<u64>) -> Result<()> {
    let mut manifest = RunManifest::new("fit", seed);
    let data = load(&args.data, &mut manifest)?;
    let (fm, se) = manifest.stage("frequencies", || build_frequency_matrix(&data, &BuildOptions::default()))?;
    if fm.adjusted_blocks() > 0 {
        manifest.warn(format!(
            "renormalized {} question-pair blocks (missing data assumed random)",
            fm.adjusted_blocks()
        ));
    }
    let k = match args.k {
        Some(k) => k,
        None => {
            let est = manifest.stage("rank", || estimate_rank(&fm, &se, args.multiplier))?;
            eprintln!("estimated K = {}", est.k);
            manifest.set("estimated_k", est.k);
            est.k
        }
    };
    let opts = FitOptions {
        n_iter: args.iters,
        tol: args.tol,
        init: match args.init {
            InitArg::Product => Init::Product,
            InitArg::Identity => Init::Identity,
        },
    };
    manifest.set("k", k);
    manifest.set("iters", args.iters);
    manifest.set("tol", args.tol);
    manifest.set("init", opts.init);
    let fit = manifest.stage("fit", || find_subspace(&fm, k, &opts))?;
    manifest.set("iterations", &fit.iterations);
    manifest.set("max_kkt_residual", fit.max_kkt_residual);
    let fallbacks: usize = fit.iterations.iter().map(|r| r.fallbacks).sum();
    if fallbacks > 0 {
        manifest.warn(format!("completion fell back to least squares {fallbacks} time(s)"));
    }
    if fit.plane.padded {
        manifest.warn("plane fit had fewer positive eigenvalues than K-1".into());
    }
    write_basis(&fit.basis, &args.output)?;
    manifest.outputs.push(args.output.display().to_string());
    if let Some(path) = &args.matrix {
        let mut out = create(path)?;
        fit.completed.write_csv(&mut out)?;
        out.flush()?;
        manifest.outputs.push(path.display().to_string());
    }
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("K = {k}; basis written to {}", args.output.display());
    Ok(())
}

fn cmd_scores(args: &ScoresArgs, seed: Option<u64>) -> Result<()> {
    let mut manifest = RunManifest::new("scores", seed);
    let data = load(&args.data, &mut manifest)?;
    let basis = read_basis(&args.basis, data.design())?;
    manifest.inputs.push(args.basis.display().to_string());
    let opts = ScoreOptions {
        mode: match args.mode {
            ModeArg::Qp => ScoreMode::Qp,
            ModeArg::Svd => ScoreMode::Svd,
        },
        min_available: args.min_available,
        mean_of_solutions: args.mean_of_solutions,
    };
    manifest.set("mode", opts.mode);
    manifest.set("min_available", opts.min_available);
    manifest.set("mean_of_solutions", opts.mean_of_solutions);
    let me = manifest.stage("scores", || estimate_all_scores(&data, &basis, &opts))?;
    score_warnings(&me, &mut manifest);
    let mut out = create(&args.output)?;
    me.write_csv(&mut out)?;
    out.flush()?;
    manifest.outputs.push(args.output.display().to_string());
    if let Some(path) = &args.histogram {
        if args.component == 0 || args.component > basis.k() {
            return Err(Error::Config(format!("--component must be in 1..={}", basis.k())));
        }
        write_histogram(&me.histogram(args.component - 1, args.bins, 0.0, 1.0), path)?;
        manifest.set("bins", args.bins);
        manifest.outputs.push(path.display().to_string());
    }
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("{} patterns scored", me.points.len() - me.failures());
    Ok(())
}

fn cmd_complete(args: &CompleteArgs, seed: Option<u64>) -> Result<()> {
    let mut manifest = RunManifest::new("complete", seed);
    let data = load(&args.data, &mut manifest)?;
    let basis = read_basis(&args.basis, data.design())?;
    manifest.inputs.push(args.basis.display().to_string());
    let (fm, _) = manifest.stage("frequencies", || build_frequency_matrix(&data, &BuildOptions::default()))?;
    if fm.adjusted_blocks() > 0 {
        manifest.warn(format!(
            "renormalized {} question-pair blocks (missing data assumed random)",
            fm.adjusted_blocks()
        ));
    }
    let completion = manifest.stage("complete", || complete_matrix(&fm, &basis))?;
    if !completion.fallbacks.is_empty() {
        manifest.warn(format!(
            "completion fell back to least squares for questions {:?}",
            completion.fallbacks.iter().map(|q| q + 1).collect::<Vec<_>>()
        ));
    }
    let mut out = create(&args.output)?;
    completion.matrix.write_csv(&mut out)?;
    out.flush()?;
    serde_json::to_writer_pretty(create(&sidecar(&args.output, ".json"))?, &completion.matrix.metadata())?;
    manifest.outputs.push(args.output.display().to_string());

    if let Some(path) = &args.impute {
        let me = manifest.stage("scores", || estimate_all_scores(&data, &basis, &ScoreOptions::default()))?;
        score_warnings(&me, &mut manifest);
        let scores = me.record_scores(&data);
        let mut out = create(path)?;
        writeln!(out, "record,question,probabilities,clipped")?;
        let mut clipped = 0;
        for (i, rec) in data.records().enumerate() {
            for (j, &c) in rec.iter().enumerate() {
                if c != 0 {
                    continue;
                }
                match &scores[i] {
                    Some(g) => {
                        let (p, clip) = impute_cell(g, &basis, j);
                        clipped += clip as usize;
                        let p: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                        writeln!(out, "{},{},{},{}", i + 1, j + 1, p.join(" "), clip)?;
                    }
                    None => writeln!(out, "{},{},,", i + 1, j + 1)?,
                }
            }
        }
        out.flush()?;
        if clipped > 0 {
            manifest.warn(format!("{clipped} imputed probability vectors had negative entries clipped"));
        }
        manifest.outputs.push(path.display().to_string());
    }
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("completed matrix written to {}", args.output.display());
    Ok(())
}

fn cmd_basis(args: &BasisArgs, seed: Option<u64>) -> Result<()> {
    let mut manifest = RunManifest::new("basis", seed);
    let data = load(&args.data, &mut manifest)?;
    let basis = read_basis(&args.basis, data.design())?;
    manifest.inputs.push(args.basis.display().to_string());
    let new = if let Some(path) = &args.pure_types {
        manifest.inputs.push(path.display().to_string());
        let specs = PureTypeSpec::read_csv(open(path)?, data.design())?;
        pure_type_basis(&specs, &basis)?
    } else {
        let k = args.k.unwrap_or(basis.k());
        let me = manifest.stage("scores", || estimate_all_scores(&data, &basis, &ScoreOptions::default()))?;
        score_warnings(&me, &mut manifest);
        let method = match args.method {
            MethodArg::Kmeans => ClusterMethod::KMeans { seed: seed.unwrap_or(1) },
            MethodArg::Hier => ClusterMethod::Hierarchical(args.linkage),
        };
        manifest.set("k", k);
        manifest.stage("cluster", || cluster_mean_basis(&me, &basis, k, method))?
    };
    if !new.is_nonnegative() {
        manifest.warn(format!("new basis has negative entries (min {:.3e})", new.min_entry()));
    }
    write_basis(&new, &args.output)?;
    manifest.outputs.push(args.output.display().to_string());
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("basis with K = {} written to {}", new.k(), args.output.display());
    Ok(())
}

fn cmd_cluster(args: &ClusterArgs, seed: Option<u64>) -> Result<()> {
    let mut manifest = RunManifest::new("cluster", seed);
    let data = load(&args.data, &mut manifest)?;
    let basis = read_basis(&args.basis, data.design())?;
    manifest.inputs.push(args.basis.display().to_string());
    let me = manifest.stage("scores", || estimate_all_scores(&data, &basis, &ScoreOptions::default()))?;
    score_warnings(&me, &mut manifest);
    let scored: Vec<_> = me.points.iter().filter(|p| p.score.is_some()).collect();
    let points: Vec<Vec<f64>> = scored.iter().map(|p| p.score.as_ref().unwrap().g.clone()).collect();
    let weights: Vec<f64> = scored.iter().map(|p| p.weight).collect();
    let result = manifest.stage("cluster", || match args.method {
        MethodArg::Kmeans => kmeans(&points, &weights, args.k, seed.unwrap_or(1)),
        MethodArg::Hier => hierarchical(&points, &weights, Stop::Clusters(args.k), args.linkage),
    })?;
    let mut out = create(&args.output)?;
    writeln!(out, "pattern,count,cluster")?;
    for (p, c) in scored.iter().zip(&result.assignments) {
        let pat: Vec<String> = p.pattern.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{},{}", pat.join(" "), p.count, c + 1)?;
    }
    out.flush()?;
    manifest.set("k", args.k);
    manifest.set("centers", &result.centers);
    manifest.outputs.push(args.output.display().to_string());
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("{} patterns in {} clusters", scored.len(), result.cluster_count());
    Ok(())
}

#[derive(Serialize)]
struct Truth<'a> {
    design: &'a SurveyDesign,
    basis: Vec<Vec<f64>>,
    scores: &'a [Vec<f64>],
    labels: &'a Option<Vec<usize>>,
}

fn cmd_simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(1);
    let mut manifest = RunManifest::new("simulate", Some(seed));
    let score_design: ScoreDesign = args.scores.parse()?;
    let basis_kind: BasisKind = args.basis.parse()?;
    let basis = match basis_kind {
        BasisKind::Block => make_block_basis(args.k, args.j)?,
        BasisKind::Random => random_basis(&SurveyDesign::uniform(args.j, 2)?, args.k, seed ^ 0xB45E)?,
    };
    let sampled = sample_scores(&score_design, args.i, args.k, seed ^ 0x5C0E)?;
    let data = manifest.stage("simulate", || simulate_responses(&basis, &sampled.scores, seed))?;
    write_dataset(&data, &args.output)?;
    std::fs::write(sidecar(&args.output, ".design"), basis.design().to_line() + "\n")?;
    write_basis(&basis, &sidecar(&args.output, ".basis.csv"))?;
    let truth = Truth {
        design: basis.design(),
        basis: basis.vectors().iter().map(|v| v.iter().copied().collect()).collect(),
        scores: &sampled.scores,
        labels: &sampled.labels,
    };
    serde_json::to_writer(create(&sidecar(&args.output, ".truth.json"))?, &truth)?;
    manifest.set("k", args.k);
    manifest.set("j", args.j);
    manifest.set("i", args.i);
    manifest.set("scores", &score_design);
    manifest.set("basis", basis_kind);
    manifest.outputs.push(args.output.display().to_string());
    manifest.write(&sidecar(&args.output, ".manifest.json"))?;
    println!("{} records written to {}", data.len(), args.output.display());
    Ok(())
}

fn write_tables(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut table = |name: &str, header: &str, rows: Vec<String>| -> Result<()> {
        let path = dir.join(name);
        let mut out = create(&path)?;
        writeln!(out, "{header}")?;
        for r in rows {
            writeln!(out, "{r}")?;
        }
        out.flush()?;
        written.push(path);
        Ok(())
    };
    if let Some(r) = &report.recovery {
        let rows = r
            .distances
            .iter()
            .zip(&r.fit_seconds)
            .enumerate()
            .map(|(i, (d, t))| format!("{},{d},{t}", i + 1))
            .collect();
        table("recovery.csv", "replication,distance,fit_seconds", rows)?;
    }
    if let Some(r) = &report.cluster {
        let rows = r
            .score_rates
            .iter()
            .zip(&r.raw_rates)
            .enumerate()
            .map(|(i, (s, w))| format!("{},{s},{w}", i + 1))
            .collect();
        table("cluster.csv", "replication,score_rate,raw_rate", rows)?;
    }
    if let Some(r) = &report.bimodal {
        let rows = r
            .generating_histogram
            .iter()
            .zip(&r.true_histogram)
            .zip(&r.reconstructed_histogram)
            .map(|((g, t), c)| format!("{},{},{},{},{}", g.lo, g.hi, g.mass, t.mass, c.mass))
            .collect();
        table("histogram.csv", "lo,hi,generating,true_basis,reconstructed_basis", rows)?;
    }
    if let Some(r) = &report.rank {
        let rows = r.estimates.iter().enumerate().map(|(i, k)| format!("{},{k}", i + 1)).collect();
        table("rank.csv", "replication,estimated_k", rows)?;
    }
    Ok(written)
}

/// Returns whether every configured threshold was met.
fn cmd_experiment(args: &ExperimentArgs, seed: Option<u64>) -> Result<bool> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", args.config.display()))))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.bins = args.bins;
    if args.full && cfg.experiment == ExperimentKind::Bimodal {
        cfg.j = 1500;
        cfg.i = 10_000;
    }
    let mut manifest = RunManifest::new("experiment", Some(cfg.seed));
    manifest.inputs.push(args.config.display().to_string());
    let report = manifest.stage("experiment", || run_experiment(&cfg))?;
    std::fs::create_dir_all(&args.output_dir)?;
    let report_path = args.output_dir.join("report.json");
    serde_json::to_writer_pretty(create(&report_path)?, &report)?;
    manifest.outputs.push(report_path.display().to_string());
    for p in write_tables(&report, &args.output_dir)? {
        manifest.outputs.push(p.display().to_string());
    }
    manifest.set("config", &cfg);
    manifest.write(&args.output_dir.join("manifest.json"))?;
    for (name, limit, value, ok) in &report.checks {
        println!("{} {name}: {value:.4} (limit {limit})", if *ok { "PASS" } else { "FAIL" });
    }
    Ok(report.passed())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let seed = cli.seed;
    match &cli.command {
        Command::Rank(a) => cmd_rank(a, seed).map(|_| 0),
        Command::Fit(a) => cmd_fit(a, seed).map(|_| 0),
        Command::Scores(a) => cmd_scores(a, seed).map(|_| 0),
        Command::Complete(a) => cmd_complete(a, seed).map(|_| 0),
        Command::Basis(a) => cmd_basis(a, seed).map(|_| 0),
        Command::Cluster(a) => cmd_cluster(a, seed).map(|_| 0),
        Command::Simulate(a) => cmd_simulate(a, seed).map(|_| 0),
        Command::Experiment(a) => cmd_experiment(a, seed).map(|ok| if ok { 0 } else { 1 }),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Info).try_init();
    } else {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Error).try_init();
    }
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}
