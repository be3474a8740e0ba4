use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lls::dataset::SurveyDesign;
use lls::subspace::{subspace_distance, Basis};

fn lls(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lls"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_basis(path: &Path, design: &SurveyDesign) -> Basis {
    Basis::read_csv(fs::File::open(path).map(std::io::BufReader::new).unwrap(), design).unwrap()
}

#[test]
fn rank_from_reference_singular_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(&["rank", "--sv-file", &fixture("singular_values.txt"), "--threshold", "0.584"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("K = 4\n"));
}

#[test]
fn rank_of_simulated_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(&["simulate", "--k", "2", "--j", "60", "--i", "5000", "-o", "sim.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lls(&["rank", "sim.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("K = 2\n"));
}

#[test]
fn empty_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = lls(&["rank", "empty.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no records"));
}

#[test]
fn bad_codes_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "1,2\n1,x\n").unwrap();
    let o = lls(&["fit", "bad.csv", "--k", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2, column 2"));
}

#[test]
fn fit_recovers_the_exact_plane() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(
        &[
            "fit",
            &fixture("segment.csv"),
            "--design",
            &fixture("segment.design"),
            "--k",
            "2",
            "--iters",
            "500",
            "--tol",
            "1e-14",
            "-o",
            "b.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let design = SurveyDesign::uniform(3, 2).unwrap();
    let fitted = read_basis(&dir.path().join("b.csv"), &design);
    let truth = read_basis(Path::new(&fixture("segment_truth.csv")), &design);
    let d = subspace_distance(&fitted, &truth);
    assert!(d <= 1e-6, "d = {d}");
    assert_eq!(fs::read_to_string(dir.path().join("b.csv.design")).unwrap().trim(), "2 2 2");
}

#[test]
fn fit_without_k_estimates_it() {
    let dir = tempfile::tempdir().unwrap();
    lls(&["simulate", "--k", "3", "--j", "60", "--i", "5000", "-o", "sim.csv"], dir.path());
    let o = lls(&["fit", "sim.csv", "-o", "b.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("estimated K = 3"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["estimated_k"], 3);
}

#[test]
fn manifest_records_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    lls(&["simulate", "--k", "2", "--j", "20", "--i", "2000", "-o", "sim.csv"], dir.path());
    let iterations = |n: &str| {
        let out = format!("b{n}.csv");
        let o = lls(&["fit", "sim.csv", "--k", "2", "--iters", n, "--tol", "0", "-o", &out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{out}.manifest.json"))).unwrap())
                .unwrap();
        m["config"]["iterations"].as_array().unwrap().clone()
    };
    let one = iterations("1");
    let five = iterations("5");
    assert_eq!(one.len(), 1);
    assert_eq!(five.len(), 5);
    assert!(five[0]["distance_to_previous"].is_null());
    assert!(five[1..].iter().all(|r| r["distance_to_previous"].is_number()));
}

#[test]
fn scores_histogram_is_bimodal() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(
        &["simulate", "--k", "2", "--j", "100", "--i", "2000", "--scores", "two-interval", "-o", "sim.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lls(
        &["scores", "sim.csv", "--basis", "sim.csv.basis.csv", "--histogram", "h.csv", "--bins", "20"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<(f64, f64)> = fs::read_to_string(dir.path().join("h.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (0.5 * (v[0] + v[1]), v[2])
        })
        .collect();
    assert_eq!(rows.len(), 20);
    let mass = |lo: f64, hi: f64| rows.iter().filter(|(c, _)| *c > lo && *c < hi).map(|r| r.1).sum::<f64>();
    assert!(mass(0.0, 0.35) > 0.35, "low mode {}", mass(0.0, 0.35));
    assert!(mass(0.45, 0.85) > 0.35, "high mode {}", mass(0.45, 0.85));
    assert!(mass(0.35, 0.45) < 0.05, "gap {}", mass(0.35, 0.45));
    let header = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert!(header.starts_with("pattern,count,weight,g1,g2,residual,mode,status"));
}

#[test]
fn invalid_basis_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    lls(&["simulate", "--k", "2", "--j", "10", "--i", "200", "-o", "sim.csv"], dir.path());
    fs::write(dir.path().join("b.csv"), "0.5,0.5\n").unwrap();
    let o = lls(&["scores", "sim.csv", "--basis", "b.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    fs::write(dir.path().join("c.csv"), "1,0\n0,1\n").unwrap();
    fs::write(dir.path().join("c.csv.design"), "2\n").unwrap();
    let o = lls(&["scores", "sim.csv", "--basis", "c.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match"));
}

#[test]
fn basis_cluster_complete_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    lls(&["simulate", "--k", "3", "--j", "30", "--i", "1500", "--scores", "five-point", "-o", "sim.csv"], dir.path());
    let o = lls(&["fit", "sim.csv", "--k", "3", "-o", "b.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lls(&["basis", "sim.csv", "--basis", "b.csv", "--cluster-means", "--k", "3", "-o", "nb.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lls(&["scores", "sim.csv", "--basis", "nb.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lls(
        &["cluster", "sim.csv", "--basis", "nb.csv", "--k", "5", "--method", "hier", "--linkage", "complete"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let clusters = fs::read_to_string(dir.path().join("clusters.csv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = clusters.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 5);

    let pure = "1,0,".repeat(30);
    let other = "0,1,".repeat(30);
    fs::write(
        dir.path().join("pure.csv"),
        format!("{}\n{}\n", pure.trim_end_matches(','), other.trim_end_matches(',')),
    )
    .unwrap();
    let o = lls(&["basis", "sim.csv", "--basis", "b.csv", "--pure-types", "pure.csv", "-o", "pb.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = lls(&["complete", "sim.csv", "--basis", "b.csv", "-o", "m.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let matrix = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(!matrix.contains('?'));
    assert!(dir.path().join("m.csv.json").exists());
}

#[test]
fn complete_imputes_missing_answers() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..400 {
        let row: Vec<String> = (0..8)
            .map(|j| {
                if (i + j) % 13 == 0 {
                    ".".to_string()
                } else if (i * 7 + j * 3) % 5 < 2 + (i % 2) {
                    "1".to_string()
                } else {
                    "2".to_string()
                }
            })
            .collect();
        text += &row.join(",");
        text.push('\n');
    }
    fs::write(dir.path().join("gaps.csv"), text).unwrap();
    let o = lls(&["fit", "gaps.csv", "--k", "2", "-o", "b.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("b.csv.manifest.json")).unwrap();
    assert!(manifest.contains("renormalized"));
    let o = lls(&["complete", "gaps.csv", "--basis", "b.csv", "--impute", "imp.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let imp = fs::read_to_string(dir.path().join("imp.csv")).unwrap();
    let missing = (0..400).map(|i| (0..8).filter(|j| (i + j) % 13 == 0).count()).sum::<usize>();
    assert_eq!(imp.lines().count(), missing + 1);
}

#[test]
fn simulate_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let o = lls(&["--seed", seed, "simulate", "--j", "12", "--i", "300", "--scores", "uniform", "-o", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
        fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("5", "a.csv"), run("5", "b.csv"));
    assert_ne!(run("5", "a.csv"), run("6", "c.csv"));
}

#[test]
fn results_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    lls(&["simulate", "--k", "3", "--j", "30", "--i", "1500", "-o", "sim.csv"], dir.path());
    for jobs in ["1", "4"] {
        let o = lls(&["--jobs", jobs, "fit", "sim.csv", "--k", "3", "-o", &format!("b{jobs}.csv")], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = lls(
            &["--jobs", jobs, "scores", "sim.csv", "--basis", &format!("b{jobs}.csv"), "-o", &format!("s{jobs}.csv")],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("b1.csv"), read("b4.csv"));
    assert_eq!(read("s1.csv"), read("s4.csv"));
}

#[test]
fn malformed_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(&["experiment", &fixture("malformed.conf")], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
    let o = lls(&["experiment", "missing.conf"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_experiment_configs_pass() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["recovery_k2.conf", "recovery_k3.conf", "cluster_j200.conf"] {
        let out = name.trim_end_matches(".conf");
        let o = lls(&["experiment", &fixture(name), "--output-dir", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{name}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("PASS"));
        assert!(!stdout(&o).contains("FAIL"));
        assert!(dir.path().join(out).join("report.json").exists());
    }
}

#[test]
fn seed_override_changes_experiment_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let table = |seed: &str, out: &str| {
        let o = lls(&["--seed", seed, "experiment", &fixture("recovery_k2.conf"), "--output-dir", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let csv = fs::read_to_string(dir.path().join(out).join("recovery.csv")).unwrap();
        csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(table("3", "a"), table("3", "b"));
    assert_ne!(table("3", "a"), table("4", "c"));
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = lls(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["rank", "fit", "scores", "complete", "basis", "cluster", "simulate", "experiment"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let o = lls(&["fit"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
