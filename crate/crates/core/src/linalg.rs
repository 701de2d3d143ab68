//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{PdmmError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Thin SVD with singular triplets sorted by decreasing singular value.
pub struct SortedSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// The factorization is always taken of the tall orientation: nalgebra's
/// wide-matrix path has returned inaccurate factors on some rank-deficient
/// inputs. The other orientation is tried when the reconstruction is off.
pub fn svd_sorted(m: &Mat) -> SortedSvd {
    let tall = m.nrows() >= m.ncols();
    let first = factor(m, tall);
    if reconstruction_error(m, &first) <= 1e-10 * (1.0 + m.amax()) * (m.nrows().max(m.ncols()) as f64) {
        return first;
    }
    let second = factor(m, !tall);
    if reconstruction_error(m, &second) < reconstruction_error(m, &first) {
        second
    } else {
        first
    }
}

fn factor(m: &Mat, transpose: bool) -> SortedSvd {
    let target = if transpose { m.transpose() } else { m.clone() };
    let svd = target.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let right = Mat::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    // m = u s vᵀ, so mᵀ = v s uᵀ swaps the factors
    if transpose {
        SortedSvd { u: right, s, v: left }
    } else {
        SortedSvd { u: left, s, v: right }
    }
}

fn reconstruction_error(m: &Mat, svd: &SortedSvd) -> f64 {
    let mut scaled = svd.u.clone();
    for (k, &s) in svd.s.iter().enumerate() {
        scaled.column_mut(k).scale_mut(s);
    }
    (scaled * svd.v.transpose() - m).amax()
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    svd_sorted(m).s
}

/// Orthonormal basis of the column space, dropping singular values at or
/// below `rel_tol * sigma_max`.
pub fn range_basis(m: &Mat, rel_tol: f64) -> Mat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let svd = svd_sorted(m);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let rank = svd.s.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count();
    svd.u.columns(0, rank).into_owned()
}

/// Orthogonal projector onto the complement of `span(basis)`, where `basis`
/// has orthonormal columns.
pub fn complement_projector(basis: &Mat) -> Mat {
    let n = basis.nrows();
    Mat::identity(n, n) - basis * basis.transpose()
}

/// Minimum-norm least-squares solution of `a x = b` using a pseudo-inverse
/// with relative singular-value cutoff. Returns the solution and the residual
/// norm `‖a x − b‖`.
pub fn min_norm_lstsq(a: &Mat, b: &Vector, rel_cutoff: f64) -> (Vector, f64) {
    let svd = svd_sorted(a);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let utb = svd.u.transpose() * b;
    let mut coef = Vector::zeros(svd.s.len());
    for (k, &s) in svd.s.iter().enumerate() {
        if s > rel_cutoff * smax && s > 0.0 {
            coef[k] = utb[k] / s;
        }
    }
    let x = &svd.v * coef;
    let resid = (a * &x - b).norm();
    (x, resid)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Solves `a x = b` for symmetric positive definite `a`, falling back to LU.
pub fn solve_spd(a: &Mat, b: &Vector) -> Option<Vector> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Row-by-row dense product with a fixed left-to-right summation order.
///
/// Both the matrix-form engine and the per-node simulator use this so their
/// iterates agree bit for bit.
pub fn matvec(m: &Mat, x: &Vector) -> Vector {
    assert_eq!(m.ncols(), x.len(), "matvec dimension mismatch");
    Vector::from_fn(m.nrows(), |r, _| {
        let mut acc = 0.0;
        for c in 0..m.ncols() {
            acc += m[(r, c)] * x[c];
        }
        acc
    })
}

pub fn dist_sq(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm_squared()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PdmmError::Assembly(format!("{what}: ragged rows")));
    }
    Ok(Mat::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_picks_minimum_norm() {
        // x1 + x2 = 2 has min-norm solution (1, 1)
        let a = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        let (x, r) = min_norm_lstsq(&a, &Vector::from_vec(vec![2.0]), 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(r < 1e-14);
    }

    #[test]
    fn range_and_complement() {
        let m = Mat::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = range_basis(&m, 1e-10);
        assert_eq!(b.ncols(), 1);
        let p = complement_projector(&b);
        let e1 = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((p * e1).norm() < 1e-14);
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let m = Mat::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 5.0, 0.0, 1.0, 0.0, 3.0]);
        let svd = svd_sorted(&m);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = &svd.u * Mat::from_diagonal(&Vector::from_vec(svd.s.clone())) * svd.v.transpose();
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn wide_and_tall_svd_reconstruct() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for (r, c) in [(4, 9), (9, 4), (96, 120)] {
            let m = Mat::from_fn(r, c, |_, _| next());
            let svd = svd_sorted(&m);
            let rec = &svd.u * Mat::from_diagonal(&Vector::from_vec(svd.s.clone())) * svd.v.transpose();
            assert!((rec - &m).norm() < 1e-10, "{r}x{c}");
            let basis = range_basis(&m, 1e-10);
            let col = m.column(0).into_owned();
            assert!((&col - &basis * (basis.transpose() * &col)).norm() < 1e-10, "{r}x{c} range");
        }
    }
}
