//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Orthonormal bases of the row space of `rows` and of its orthogonal
/// complement in `R^n`, by modified Gram-Schmidt with reorthogonalization.
/// Rows that are (numerically) dependent on earlier ones are skipped.
pub(crate) fn row_space_and_complement(rows: &[DVector<f64>], n: usize) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let norm0 = r.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = r.clone();
        for _ in 0..2 {
            for u in &basis {
                let p = u.dot(&v);
                v.axpy(-p, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * norm0 {
            basis.push(v / norm);
        }
    }
    let want = n - basis.len();
    let mut complement: Vec<DVector<f64>> = Vec::with_capacity(want);
    let mut i = 0;
    while complement.len() < want && i < n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for _ in 0..2 {
            for u in basis.iter().chain(complement.iter()) {
                let p = u.dot(&v);
                v.axpy(-p, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            complement.push(v / norm);
        }
        i += 1;
    }
    let z = if complement.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&complement)
    };
    (basis, z)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Singular values in non-increasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = SVD::new(m.clone(), false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with threshold `tol * sigma_max`.
#[cfg(test)]
pub(crate) fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

/// Eigenpairs of a symmetric matrix sorted by non-increasing eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Orthonormal frame for the column span of `m` (assumed full column rank).
pub(crate) fn orthonormal_frame(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal() {
        let rows = vec![DVector::from_vec(vec![1.0, 1.0, 0.0]), DVector::from_vec(vec![2.0, 2.0, 0.0])];
        let (basis, z) = row_space_and_complement(&rows, 3);
        assert_eq!(basis.len(), 1);
        assert_eq!(z.ncols(), 2);
        let ztz = z.transpose() * &z;
        assert!((ztz - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((z.transpose() * &basis[0]).norm() < 1e-12);
    }

    #[test]
    fn lstsq_min_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq(&a, &DVector::from_vec(vec![2.0]));
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
