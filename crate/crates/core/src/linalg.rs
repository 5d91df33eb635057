//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the null space of `c` (r × m with r < m), as an
/// m × (m − rank) matrix.
///
/// Householder QR of `cᵀ` is accumulated into the full orthogonal factor;
/// the trailing columns of that factor span `ker(c)`.
pub fn null_space(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, m) = c.shape();
    let mut a = c.transpose(); // m × r
    let mut q = DMatrix::<f64>::identity(m, m);
    let steps = r.min(m);
    for k in 0..steps {
        let mut v: DVector<f64> = a.view((k, k), (m - k, 1)).column(0).into_owned();
        let alpha = v.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        // a <- H a on rows k..m
        for j in k..r {
            let dot: f64 = (0..m - k).map(|i| v[i] * a[(k + i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..m - k {
                a[(k + i, j)] -= f * v[i];
            }
        }
        // q <- q H (H acts on columns k..m)
        for row in 0..m {
            let dot: f64 = (0..m - k).map(|i| q[(row, k + i)] * v[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..m - k {
                q[(row, k + i)] -= f * v[i];
            }
        }
    }
    q.columns(steps, m - steps).into_owned()
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns preceding them, found by modified Gram–Schmidt with one
/// reorthogonalisation pass on unit-normalised columns.
pub fn dependent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let p = x.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let col = x.column(j);
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            dependent.push(j);
            continue;
        }
        let mut v: DVector<f64> = col.into_owned() / norm;
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let rn = v.norm();
        if rn < tol {
            dependent.push(j);
        } else {
            basis.push(v / rn);
        }
    }
    dependent
}

/// Least-squares residuals of `y` on the columns of `x` (via QR).
pub fn lstsq_residuals(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    let beta = qr.r().solve_upper_triangular(&qty)?;
    Some(y - x * beta)
}

/// Type-7 (linear interpolation) sample quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
