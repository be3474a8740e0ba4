//! Weighted k-means and agglomerative clustering of score vectors, and the
//! label-matching misclassification rate.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    /// Distance between weighted centers of mass.
    #[default]
    Centroid,
    /// Closest pair of members.
    Single,
    /// Most distant pair of members.
    Complete,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(Linkage::Centroid),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(Error::Config(format!("unknown linkage '{other}'"))),
        }
    }
}

/// When agglomeration stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stop {
    Clusters(usize),
    /// Stop before the first merge at a distance above the threshold.
    Distance(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster index of every point, in `0..centers.len()`.
    pub assignments: Vec<usize>,
    /// Weighted mean of each cluster's members.
    pub centers: Vec<Vec<f64>>,
    pub linkage: Option<Linkage>,
    /// Weighted within-cluster sum of squares after each k-means iteration.
    pub objective_trace: Vec<f64>,
}

impl ClusterResult {
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>], weights: &[f64]) -> Result<usize> {
    if points.len() != weights.len() {
        return Err(Error::Cluster(format!("{} points but {} weights", points.len(), weights.len())));
    }
    let dim = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Cluster("points have different dimensions".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Cluster("weights must be finite and nonnegative".into()));
    }
    Ok(dim)
}

fn weighted_centers(points: &[Vec<f64>], weights: &[f64], assignments: &[usize], k: usize, dim: usize) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut totals = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for ((p, &w), &a) in points.iter().zip(weights).zip(assignments) {
        counts[a] += 1;
        totals[a] += w;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += w * x;
        }
    }
    (0..k)
        .map(|c| {
            if counts[c] == 0 {
                None
            } else if totals[c] > 0.0 {
                Some(sums[c].iter().map(|s| s / totals[c]).collect())
            } else {
                // zero total weight: plain mean
                let members: Vec<&Vec<f64>> = points.iter().zip(assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                Some((0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect())
            }
        })
        .collect()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn objective(points: &[Vec<f64>], weights: &[f64], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(assignments)
        .map(|((p, &w), &a)| w * sq_dist(p, &centers[a]))
        .sum()
}

/// Weighted Lloyd iteration from farthest-point seeding. The first center is
/// drawn with probability proportional to weight using `seed`.
pub fn kmeans(points: &[Vec<f64>], weights: &[f64], k: usize, seed: u64) -> Result<ClusterResult> {
    let dim = check_points(points, weights)?;
    if k == 0 {
        return Err(Error::Cluster("number of clusters must be positive".into()));
    }
    let distinct = points.iter().map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).unique().count();
    if distinct < k {
        return Err(Error::Cluster(format!("{k} clusters requested but only {distinct} distinct points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = weights.iter().sum();
    let first = if total > 0.0 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        pick
    } else {
        rng.random_range(0..points.len())
    };
    let mut centers = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let (idx, _) = min_d
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        centers.push(points[idx].clone());
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    let mut trace = vec![objective(points, weights, &assignments, &centers)];
    for _ in 0..1000 {
        for (c, new) in weighted_centers(points, weights, &assignments, k, dim).into_iter().enumerate() {
            if let Some(new) = new {
                centers[c] = new;
            }
        }
        trace.push(objective(points, weights, &assignments, &centers));
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
        trace.push(objective(points, weights, &assignments, &centers));
    }
    Ok(ClusterResult {
        assignments,
        centers,
        linkage: None,
        objective_trace: trace,
    })
}

/// Agglomerative clustering: starts from singletons and repeatedly merges the
/// closest pair under `linkage` (ties go to the lowest index pair).
pub fn hierarchical(points: &[Vec<f64>], weights: &[f64], stop: Stop, linkage: Linkage) -> Result<ClusterResult> {
    let dim = check_points(points, weights)?;
    let n = points.len();
    if n == 0 {
        return Err(Error::Cluster("no points".into()));
    }
    if let Stop::Clusters(0) = stop {
        return Err(Error::Cluster("number of clusters must be positive".into()));
    }
    // member weights for centroids; zero-weight points count as tiny mass
    let w: Vec<f64> = weights.iter().map(|&x| if x > 0.0 { x } else { 1e-300 }).collect();
    let mut centroid: Vec<Vec<f64>> = points.to_vec();
    let mut mass = w.clone();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&points[i], &points[j]).sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut alive = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    let row_min = |i: usize, dist: &[f64], alive: &[bool]| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j != i && alive[j] && dist[i * n + j] < best.0 {
                best = (dist[i * n + j], j);
            }
        }
        best
    };
    let mut nn: Vec<(f64, usize)> = (0..n).map(|i| row_min(i, &dist, &alive)).collect();

    loop {
        if let Stop::Clusters(k) = stop {
            if clusters <= k {
                break;
            }
        }
        if clusters == 1 {
            break;
        }
        // closest pair; lowest (i, j) on ties
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let (d, j) = nn[i];
            let (a, b) = (i.min(j), i.max(j));
            if d < best.0 || (d == best.0 && (a, b) < (best.1, best.2)) {
                best = (d, a, b);
            }
        }
        let (d, a, b) = best;
        if let Stop::Distance(t) = stop {
            if d > t {
                break;
            }
        }
        if a == usize::MAX {
            break;
        }
        // merge b into a
        let ma = mass[a];
        let mb = mass[b];
        for x in 0..dim {
            centroid[a][x] = (ma * centroid[a][x] + mb * centroid[b][x]) / (ma + mb);
        }
        mass[a] = ma + mb;
        alive[b] = false;
        parent[b] = a;
        clusters -= 1;
        for k in 0..n {
            if !alive[k] || k == a {
                continue;
            }
            let new = match linkage {
                Linkage::Single => dist[a * n + k].min(dist[b * n + k]),
                Linkage::Complete => dist[a * n + k].max(dist[b * n + k]),
                Linkage::Centroid => sq_dist(&centroid[a], &centroid[k]).sqrt(),
            };
            dist[a * n + k] = new;
            dist[k * n + a] = new;
        }
        nn[a] = row_min(a, &dist, &alive);
        for k in 0..n {
            if !alive[k] || k == a {
                continue;
            }
            let (dk, jk) = nn[k];
            let da = dist[k * n + a];
            if jk == a || jk == b {
                nn[k] = row_min(k, &dist, &alive);
            } else if da < dk || (da == dk && a < jk) {
                nn[k] = (da, a);
            }
        }
    }

    let find = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let roots: Vec<usize> = (0..n).map(find).collect();
    let mut label_of = std::collections::HashMap::new();
    let assignments: Vec<usize> = roots
        .iter()
        .map(|&r| {
            let next = label_of.len();
            *label_of.entry(r).or_insert(next)
        })
        .collect();
    let k = label_of.len();
    let centers = weighted_centers(points, weights, &assignments, k, dim)
        .into_iter()
        .map(|c| c.expect("every label has members"))
        .collect();
    Ok(ClusterResult {
        assignments,
        centers,
        linkage: Some(linkage),
        objective_trace: Vec::new(),
    })
}

/// Fraction of items whose cluster disagrees with the truth under the best
/// one-to-one matching of labels (exhaustive over permutations).
pub fn misclassification_rate(assignments: &[usize], truth: &[usize]) -> Result<f64> {
    if assignments.len() != truth.len() {
        return Err(Error::Cluster(format!(
            "{} assignments but {} truth labels",
            assignments.len(),
            truth.len()
        )));
    }
    if assignments.is_empty() {
        return Ok(0.0);
    }
    let compact = |v: &[usize]| -> (Vec<usize>, usize) {
        let mut map = std::collections::HashMap::new();
        let out = v
            .iter()
            .map(|x| {
                let next = map.len();
                *map.entry(*x).or_insert(next)
            })
            .collect();
        (out, map.len())
    };
    let (a, na) = compact(assignments);
    let (t, nt) = compact(truth);
    let m = na.max(nt);
    if m > 8 {
        return Err(Error::Cluster(format!("{m} labels exceed the exhaustive matching limit of 8")));
    }
    let mut confusion = vec![vec![0usize; m]; m];
    for (&x, &y) in a.iter().zip(&t) {
        confusion[x][y] += 1;
    }
    let best = (0..m)
        .permutations(m)
        .map(|perm| (0..m).map(|x| confusion[x][perm[x]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(1.0 - best as f64 / a.len() as f64)
}
