//! Dense linear-algebra helpers shared by the occupancy and dual-value solvers.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.dim();
    DMatrix::from_fn(rows, cols, |i, j| a[[i, j]])
}

pub(crate) fn to_dvector(v: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

pub(crate) fn from_dvector(v: &DVector<f64>) -> Array1<f64> {
    Array1::from_iter(v.iter().copied())
}

/// Solves `a x = b` for square non-singular `a` by LU with partial pivoting.
pub(crate) fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let lu = to_dmatrix(a).lu();
    lu.solve(&to_dvector(b)).map(|x| from_dvector(&x))
}

/// Result of a pseudo-inverse solve of a symmetric PSD normal system.
pub(crate) struct PinvSolve {
    pub solution: Array1<f64>,
    /// Number of singular values kept.
    pub rank: usize,
    /// Number of singular values dropped by the relative tolerance.
    pub dropped: usize,
}

/// Solves `a x = b` as `x = a⁺ b`, dropping singular values below
/// `rel_tol * sigma_max`.
pub(crate) fn pinv_solve(a: &Array2<f64>, b: &Array1<f64>, rel_tol: f64) -> PinvSolve {
    let m = to_dmatrix(a);
    let svd = m.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cut = rel_tol * sigma_max;

    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let ub = u.transpose() * to_dvector(b);
    let mut rank = 0;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            scaled[i] = ub[i] / s;
            rank += 1;
        }
    }
    let x = v_t.transpose() * scaled;
    PinvSolve {
        solution: from_dvector(&x),
        rank,
        dropped: svd.singular_values.len() - rank,
    }
}

/// Max-row-sum norm of the pseudo-inverse of `a` (used for diagnostics only).
pub(crate) fn pinv_inf_norm(a: &Array2<f64>, rel_tol: f64) -> f64 {
    let m = to_dmatrix(a);
    let svd = m.clone().svd(true, true);
    let cut = rel_tol * svd.singular_values.max();
    match m.pseudo_inverse(cut) {
        Ok(p) => (0..p.nrows())
            .map(|i| p.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max),
        Err(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let b = array![2.0, 8.0];
        let x = lu_solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_drops_null_directions() {
        // Rank-1 symmetric matrix; the solve must project onto its range.
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![3.0, 5.0];
        let out = pinv_solve(&a, &b, 1e-10);
        assert_eq!(out.rank, 1);
        assert_eq!(out.dropped, 1);
        assert!((out.solution[0] - 3.0).abs() < 1e-12);
        assert!(out.solution[1].abs() < 1e-12);
    }

    #[test]
    fn pinv_inf_norm_of_identity() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        assert!((pinv_inf_norm(&a, 1e-10) - 1.0).abs() < 1e-12);
    }
}
