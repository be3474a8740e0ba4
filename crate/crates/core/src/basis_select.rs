//! Interpretable bases inside a fitted plane: projected pure types and
//! cluster means, plus conversion of scores between bases of the same plane.

use std::io::BufRead;

use nalgebra::{DMatrix, DVector};

use crate::cluster::{hierarchical, kmeans, Linkage, Stop};
use crate::dataset::SurveyDesign;
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::qpsolve::{solve_qp, QpOptions, QuadraticProgram};
use crate::scores::MixingEstimate;
use crate::subspace::{subspace_distance, Basis};

/// Probability vector of a hand-built ideal respondent.
#[derive(Clone, Debug, PartialEq)]
pub struct PureTypeSpec {
    target: DVector<f64>,
}

impl PureTypeSpec {
    /// Rejects vectors with entries outside `[0, 1]` or per-question sums
    /// other than one.
    pub fn new(design: &SurveyDesign, target: Vec<f64>) -> Result<Self> {
        if target.len() != design.total_cells() {
            return Err(Error::Dimension(format!(
                "pure type has {} entries, design has {}",
                target.len(),
                design.total_cells()
            )));
        }
        if let Some(bad) = target.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Basis(format!("pure type entry {bad} is not a probability")));
        }
        for j in 0..design.question_count() {
            let s: f64 = design.block(j).map(|c| target[c]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Basis(format!("pure type sums to {s} on question {}", j + 1)));
            }
        }
        Ok(PureTypeSpec {
            target: DVector::from_vec(target),
        })
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    /// One pure type per non-empty CSV line.
    pub fn read_csv<R: BufRead>(input: R, design: &SurveyDesign) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .enumerate()
                .map(|(c, s)| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        row: i + 1,
                        column: c + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(Self::new(design, row)?);
        }
        Ok(out)
    }
}

/// Projection of a pure type onto the polyhedron of the plane.
#[derive(Clone, Debug)]
pub struct Projection {
    pub g: Vec<f64>,
    /// Euclidean distance from the target to its projection.
    pub distance: f64,
    pub kkt_residual: f64,
}

/// Point of the plane closest to `spec` among those with nonnegative mixed
/// probabilities, in the coordinates of `basis`.
pub fn project_pure_type(spec: &PureTypeSpec, basis: &Basis) -> Result<Projection> {
    if spec.target.len() != basis.design().total_cells() {
        return Err(Error::Dimension("pure type and basis sizes differ".into()));
    }
    let k = basis.k();
    let b = basis.matrix();
    let prob = QuadraticProgram::least_squares(&b, &spec.target)?
        .with_equalities(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, 1.0))?
        .with_inequalities(b.clone(), DVector::zeros(b.nrows()))?;
    let x0 = prob.feasible_point(Some(&DVector::from_element(k, 1.0 / k as f64)))?;
    let sol = solve_qp(&prob, &x0, &QpOptions::default())?;
    let mut g: Vec<f64> = sol.x.iter().copied().collect();
    let s: f64 = g.iter().sum();
    g[k - 1] += 1.0 - s;
    let distance = (basis.beta(&g) - &spec.target).norm();
    Ok(Projection {
        g,
        distance,
        kkt_residual: sol.kkt_residual,
    })
}

/// Basis whose vectors are the projections of the given pure types.
pub fn pure_type_basis(specs: &[PureTypeSpec], basis: &Basis) -> Result<Basis> {
    let vectors = specs
        .iter()
        .map(|s| project_pure_type(s, basis).map(|p| clean_beta(basis, &p.g)))
        .collect::<Result<Vec<_>>>()?;
    Basis::new(basis.design().clone(), vectors)
}

/// `β(g)` with roundoff-level negatives set to zero and sums restored.
fn clean_beta(basis: &Basis, g: &[f64]) -> DVector<f64> {
    let design = basis.design();
    let mut v = basis.beta(g);
    for j in 0..design.question_count() {
        let b = design.block(j);
        for c in b.clone() {
            if v[c] < 0.0 && v[c] > -1e-8 {
                v[c] = 0.0;
            }
        }
        let s: f64 = b.clone().map(|c| v[c]).sum();
        let last = b.end - 1;
        v[last] += 1.0 - s;
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClusterMethod {
    KMeans { seed: u64 },
    Hierarchical(Linkage),
}

/// Clusters the scored patterns into `k` groups and returns the weighted mean
/// probability vector of each group as a new basis.
pub fn cluster_mean_basis(me: &MixingEstimate, basis: &Basis, k: usize, method: ClusterMethod) -> Result<Basis> {
    let (points, weights): (Vec<Vec<f64>>, Vec<f64>) = me.scored().map(|(g, w)| (g.to_vec(), w)).unzip();
    if points.len() < k {
        return Err(Error::Cluster(format!("{} scored patterns for {k} clusters", points.len())));
    }
    let result = match method {
        ClusterMethod::KMeans { seed } => kmeans(&points, &weights, k, seed)?,
        ClusterMethod::Hierarchical(linkage) => hierarchical(&points, &weights, Stop::Clusters(k), linkage)?,
    };
    let n = basis.design().total_cells();
    let mut sums = vec![DVector::zeros(n); k];
    let mut totals = vec![0.0; k];
    for ((g, &w), &a) in points.iter().zip(&weights).zip(&result.assignments) {
        sums[a].axpy(w, &basis.beta(g), 1.0);
        totals[a] += w;
    }
    if let Some(empty) = totals.iter().position(|&t| t <= 0.0) {
        return Err(Error::Cluster(format!(
            "cluster {} has no weight; try fewer clusters",
            empty + 1
        )));
    }
    let vectors = sums.into_iter().zip(totals).map(|(s, t)| s / t).collect();
    Basis::new(basis.design().clone(), vectors)
}

/// Coordinates `h` with `Σh = 1` minimizing `‖Σ_k h_k ν^k − β‖` for the
/// vectors `ν` of `basis`.
pub fn express_in_basis(beta: &DVector<f64>, basis: &Basis) -> Vec<f64> {
    let k = basis.k();
    let last = basis.vector(k - 1);
    // h = e_K + Σ_{i<K} z_i (e_i − e_K) keeps Σh = 1 exactly; solving for z by
    // SVD avoids squaring the conditioning of B as normal equations would.
    let diffs = DMatrix::from_fn(last.len(), k - 1, |r, i| basis.vector(i)[r] - last[r]);
    let z = lstsq(&diffs, &(beta - last));
    let mut h: Vec<f64> = z.iter().copied().collect();
    h.push(1.0 - z.sum());
    h
}

/// Converts a score from `old` coordinates to `new` coordinates. Both bases
/// must span the same subspace.
pub fn rebase(g: &[f64], old: &Basis, new: &Basis) -> Result<Vec<f64>> {
    if old.design() != new.design() {
        return Err(Error::Dimension("bases have different designs".into()));
    }
    let d = subspace_distance(old, new);
    if d > 1e-6 || old.k() != new.k() {
        return Err(Error::SpanMismatch(d));
    }
    Ok(express_in_basis(&old.beta(g), new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Code, Dataset};
    use crate::scores::{estimate_all_scores, model_probability, ScoreEstimate, ScoreMode, ScoredPattern};
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

    fn estimate(basis: &Basis, pts: &[(Vec<f64>, f64)]) -> MixingEstimate {
        MixingEstimate {
            basis: basis.clone(),
            points: pts
                .iter()
                .enumerate()
                .map(|(i, (g, w))| ScoredPattern {
                    pattern: vec![i as Code],
                    count: 1,
                    weight: *w,
                    score: Some(ScoreEstimate {
                        g: g.clone(),
                        residual: 0.0,
                        mode: ScoreMode::Qp,
                        fallback: false,
                        rows: 0,
                        kkt_residual: None,
                    }),
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn pure_type_already_in_polyhedron() {
        let basis = example_basis();
        let spec = PureTypeSpec::new(basis.design(), basis.vector(0).iter().copied().collect()).unwrap();
        let p = project_pure_type(&spec, &basis).unwrap();
        assert_abs_diff_eq!(p.g[0], 1.0, epsilon = 1e-9);
        let mid: Vec<f64> = ((basis.vector(0) + basis.vector(1)) * 0.5).iter().copied().collect();
        let p = project_pure_type(&PureTypeSpec::new(basis.design(), mid).unwrap(), &basis).unwrap();
        assert_abs_diff_eq!(p.g[0], 0.5, epsilon = 1e-9);
        assert!(p.distance < 1e-9);
    }

    #[test]
    fn pure_type_outside_matches_grid() {
        let basis = example_basis();
        let target = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let spec = PureTypeSpec::new(basis.design(), target.clone()).unwrap();
        let p = project_pure_type(&spec, &basis).unwrap();
        // feasible segment: β(g) ≥ 0 for g = (t, 1 − t)
        let mut best = (f64::INFINITY, 0.0);
        let mut t = -2.0;
        while t <= 3.0 {
            let beta = basis.beta(&[t, 1.0 - t]);
            if beta.min() >= 0.0 {
                let d: f64 = beta.iter().zip(&target).map(|(b, x)| (b - x).powi(2)).sum();
                if d < best.0 {
                    best = (d, t);
                }
            }
            t += 1e-4;
        }
        assert!((p.g[0] - best.1).abs() <= 1e-3, "{} vs {}", p.g[0], best.1);
        assert!(basis.beta(&p.g).min() >= -1e-8);
        assert_abs_diff_eq!(p.g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_type_validation() {
        let design = SurveyDesign::uniform(2, 2).unwrap();
        assert!(PureTypeSpec::new(&design, vec![0.6, 0.6, 1.0, 0.0]).is_err());
        assert!(PureTypeSpec::new(&design, vec![1.2, -0.2, 1.0, 0.0]).is_err());
        let csv = "1,0,0.5,0.5\n\n0,1,1,0\n";
        assert_eq!(PureTypeSpec::read_csv(csv.as_bytes(), &design).unwrap().len(), 2);
    }

    #[test]
    fn cluster_means_at_vertices_recover_basis() {
        let basis = example_basis();
        let me = estimate(&basis, &[(vec![1.0, 0.0], 0.25), (vec![0.0, 1.0], 0.5), (vec![1.0, 0.0], 0.25)]);
        let found = cluster_mean_basis(&me, &basis, 2, ClusterMethod::KMeans { seed: 1 }).unwrap();
        let matches = |v: &DVector<f64>| basis.vectors().iter().any(|b| (b - v).amax() < 1e-12);
        assert!(found.vectors().iter().all(matches));
    }

    #[test]
    fn single_cluster_mean() {
        let basis = example_basis();
        let me = estimate(&basis, &[(vec![1.0, 0.0], 0.25), (vec![0.0, 1.0], 0.75)]);
        let found = cluster_mean_basis(&me, &basis, 1, ClusterMethod::Hierarchical(Linkage::Centroid)).unwrap();
        let want = basis.beta(&[0.25, 0.75]);
        assert!((found.vector(0) - want).amax() < 1e-12);
    }

    #[test]
    fn rebase_identity_and_permutation() {
        let basis = example_basis();
        let g = [0.3, 0.7];
        let same = rebase(&g, &basis, &basis).unwrap();
        assert_abs_diff_eq!(same[0], 0.3, epsilon = 1e-12);
        let swapped = rebase(&g, &basis, &basis.permuted(&[1, 0])).unwrap();
        assert_abs_diff_eq!(swapped[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(swapped[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn rebase_rejects_other_planes() {
        let basis = example_basis();
        let other = Basis::vertices(basis.design(), 2).unwrap();
        assert!(matches!(rebase(&[0.5, 0.5], &basis, &other), Err(Error::SpanMismatch(_))));
    }

    /// Random recombination `ν^i = Σ_k T_ik λ^k` with rows of `T` summing to one.
    fn recombine(basis: &Basis, rng: &mut ChaCha8Rng) -> Basis {
        loop {
            let k = basis.k();
            let t: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let mut row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
                    let s: f64 = row.iter().sum();
                    row[k - 1] += 1.0 - s;
                    row
                })
                .collect();
            let vectors: Vec<DVector<f64>> = t.iter().map(|row| basis.beta(row)).collect();
            if let Ok(b) = Basis::new(basis.design().clone(), vectors) {
                return b;
            }
        }
    }

    #[test]
    fn model_probabilities_invariant_under_rebase() {
        let basis = example_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let new = recombine(&basis, &mut rng);
        let pts = vec![(vec![0.2, 0.8], 0.5), (vec![0.9, 0.1], 0.5)];
        let old_me = estimate(&basis, &pts);
        let moved: Vec<(Vec<f64>, f64)> = pts.iter().map(|(g, w)| (rebase(g, &basis, &new).unwrap(), *w)).collect();
        let new_me = estimate(&new, &moved);
        for pat in [[1u16, 1, 1], [2, 1, 2], [0, 2, 1]] {
            let pat = crate::dataset::ResponsePattern::new(pat.to_vec());
            assert_abs_diff_eq!(
                model_probability(&old_me, &basis, &pat),
                model_probability(&new_me, &new, &pat),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn cluster_mean_basis_stays_in_plane() {
        let design = SurveyDesign::uniform(12, 2).unwrap();
        let basis = Basis::vertices(&design, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let records: Vec<Vec<Code>> = (0..300)
            .map(|i| {
                let p = if i % 2 == 0 { 0.85 } else { 0.2 };
                (0..12).map(|_| if rng.random::<f64>() < p { 1 } else { 2 }).collect()
            })
            .collect();
        let data = Dataset::new(design, records).unwrap();
        let me = estimate_all_scores(&data, &basis, &Default::default()).unwrap();
        let found = cluster_mean_basis(&me, &basis, 2, ClusterMethod::KMeans { seed: 4 }).unwrap();
        assert!(subspace_distance(&found, &basis) <= 1e-6);
    }

    proptest! {
        #[test]
        fn rebase_preserves_beta(seed in 0u64..1000, t in -0.5f64..1.5) {
            let basis = example_basis();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let new = recombine(&basis, &mut rng);
            let g = [t, 1.0 - t];
            let h = rebase(&g, &basis, &new).unwrap();
            prop_assert!((basis.beta(&g) - new.beta(&h)).amax() <= 1e-9);
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
