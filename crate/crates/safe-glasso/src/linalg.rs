//! Dense linear-algebra kernels used across the crate: blocked Cholesky,
//! triangular solves, power iteration, and a small Jacobi eigensolver.
//!
//! Everything here operates on `f64` ndarray types. The Cholesky update is
//! blocked so the trailing update runs through the GEMM kernel, which is
//! where essentially all time is spent for the problem sizes in this crate.

use crate::error::{Error, Result};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

const CHOL_BLOCK: usize = 64;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::numerical("cholesky: matrix is not square"));
    }
    let mut l = a.to_owned();
    let mut k = 0;
    while k < n {
        let b = CHOL_BLOCK.min(n - k);
        factor_diag_block(l.slice_mut(s![k..k + b, k..k + b]))
            .map_err(|_| Error::numerical("cholesky: matrix is not positive definite"))?;
        if k + b < n {
            // Panel solve: L21 = A21 * L11^{-T}, column by column.
            let (diag, panel) = {
                let v = l.slice_mut(s![k.., k..k + b]);
                v.split_at(Axis(0), b)
            };
            let mut panel = panel;
            for j in 0..b {
                let (done, mut col_j) = panel.view_mut().split_at(Axis(1), j);
                let mut col_j = col_j.column_mut(0);
                for t in 0..j {
                    let c = diag[[j, t]];
                    if c != 0.0 {
                        col_j.scaled_add(-c, &done.column(t));
                    }
                }
                col_j.mapv_inplace(|v| v / diag[[j, j]]);
            }
            // Trailing update: A22 -= L21 * L21^T.
            let (left, mut right) = l.view_mut().split_at(Axis(1), k + b);
            let x21 = left.slice(s![k + b.., k..k + b]);
            let mut a22 = right.slice_mut(s![k + b.., ..]);
            general_mat_mul(-1.0, &x21, &x21.t(), 1.0, &mut a22);
        }
        k += b;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            l[[i, j]] = 0.0;
        }
    }
    Ok(l)
}

fn factor_diag_block(mut blk: ArrayViewMut2<f64>) -> std::result::Result<(), ()> {
    let b = blk.nrows();
    for j in 0..b {
        let mut d = blk[[j, j]];
        for t in 0..j {
            d -= blk[[j, t]] * blk[[j, t]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(());
        }
        let dj = d.sqrt();
        blk[[j, j]] = dj;
        for i in (j + 1)..b {
            let mut v = blk[[i, j]];
            for t in 0..j {
                v -= blk[[i, t]] * blk[[j, t]];
            }
            blk[[i, j]] = v / dj;
        }
    }
    Ok(())
}

/// Solve `L x = b` in place (forward substitution), `L` lower triangular.
pub fn solve_lower_vec(l: &ArrayView2<f64>, b: &mut Array1<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for t in 0..i {
            v -= l[[i, t]] * b[t];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Solve `L^T x = b` in place (backward substitution), `L` lower triangular.
pub fn solve_lower_t_vec(l: &ArrayView2<f64>, b: &mut Array1<f64>) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut v = b[i];
        for t in (i + 1)..n {
            v -= l[[t, i]] * b[t];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Solve `A x = b` given the lower Cholesky factor of `A`.
pub fn spd_solve_vec(chol_l: &ArrayView2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut x = b.clone();
    solve_lower_vec(chol_l, &mut x);
    solve_lower_t_vec(chol_l, &mut x);
    x
}

/// Solve `L X = B` in place for a matrix right-hand side.
pub fn solve_lower_mat(l: &ArrayView2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let (done, mut rest) = b.view_mut().split_at(Axis(0), i);
        let mut row_i = rest.row_mut(0);
        for t in 0..i {
            let c = l[[i, t]];
            if c != 0.0 {
                row_i.scaled_add(-c, &done.row(t));
            }
        }
        let d = l[[i, i]];
        row_i.mapv_inplace(|v| v / d);
    }
}

/// Solve `L^T X = B` in place for a matrix right-hand side.
pub fn solve_lower_t_mat(l: &ArrayView2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let (mut head, tail) = b.view_mut().split_at(Axis(0), i + 1);
        let mut row_i = head.row_mut(i);
        for t in (i + 1)..n {
            let c = l[[t, i]];
            if c != 0.0 {
                row_i.scaled_add(-c, &tail.row(t - i - 1));
            }
        }
        let d = l[[i, i]];
        row_i.mapv_inplace(|v| v / d);
    }
}

/// Solve `A X = B` given the lower Cholesky factor of `A`.
pub fn spd_solve_mat(chol_l: &ArrayView2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut x = b.clone();
    solve_lower_mat(chol_l, &mut x);
    solve_lower_t_mat(chol_l, &mut x);
    x
}

/// Explicit inverse of a lower-triangular matrix.
pub fn lower_tri_inverse(l: &ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = Array2::eye(n);
    solve_lower_mat(l, &mut x);
    x
}

/// Replace `m` by its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration. `tol` is the relative change between successive Rayleigh
/// quotients.
pub fn largest_eigenvalue_sym(a: &ArrayView2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start with a mild ramp so it is never orthogonal to the
    // leading eigenvector of the structured matrices we feed in.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 1e-3 * i as f64);
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a.dot(&v);
        let new_lambda = v.dot(&w);
        let wnorm = w.dot(&w).sqrt();
        if wnorm == 0.0 {
            return 0.0;
        }
        v = w / wnorm;
        if (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1.0) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi method,
/// returned in ascending order. Intended for small matrices (diagnostics and
/// test oracles).
pub fn eigenvalues_sym(a: &ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    symmetrize(&mut m);
    let fro = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-15 * fro.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = m.diag().to_vec();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let v = a[[i, j]];
            if v == 0.0 {
                continue;
            }
            let mut blk = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            blk.zip_mut_with(b, |o, &x| *o = v * x);
        }
    }
    out
}
