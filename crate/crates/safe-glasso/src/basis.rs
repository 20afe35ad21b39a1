//! Orthonormal B-spline bases on closed intervals.
//!
//! A [`BasisSystem`] holds a raw B-spline basis (uniform interior knots,
//! fully repeated boundary knots) together with an orthonormalizing rotation:
//! the raw Gram matrix `G` is computed exactly by Gauss–Legendre quadrature,
//! and the stored map is `C^{-1}` where `G = C C^T`. The rotated functions
//! `psi = C^{-1} b` satisfy `∫ psi psi^T = I`, which is what makes the
//! group-penalty algebra downstream collapse to plain Euclidean norms.

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::gauss_legendre_on;
use ndarray::{s, Array2};

/// Shape of a univariate spline basis: domain, dimension, and order
/// (order = polynomial degree + 1; order 4 is cubic).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BasisSpec {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub num_basis: usize,
    pub spline_order: usize,
}

impl BasisSpec {
    pub fn new(domain_lo: f64, domain_hi: f64, num_basis: usize, spline_order: usize) -> Self {
        BasisSpec {
            domain_lo,
            domain_hi,
            num_basis,
            spline_order,
        }
    }

    /// Cubic spline basis (order 4), the default choice throughout.
    pub fn cubic(domain_lo: f64, domain_hi: f64, num_basis: usize) -> Self {
        Self::new(domain_lo, domain_hi, num_basis, 4)
    }

    fn validate(&self) -> Result<()> {
        if !self.domain_lo.is_finite() || !self.domain_hi.is_finite() {
            return Err(Error::config("basis domain must be finite"));
        }
        if self.domain_lo >= self.domain_hi {
            return Err(Error::config(format!(
                "basis domain is degenerate: [{}, {}]",
                self.domain_lo, self.domain_hi
            )));
        }
        if self.spline_order == 0 {
            return Err(Error::config("spline order must be positive"));
        }
        if self.num_basis < self.spline_order {
            return Err(Error::config(format!(
                "num_basis ({}) must be at least the spline order ({})",
                self.num_basis, self.spline_order
            )));
        }
        Ok(())
    }
}

/// An orthonormalized B-spline basis with its Gram matrices.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    spec: BasisSpec,
    knots: Vec<f64>,
    /// Lower-triangular `C^{-1}` with `G_raw = C C^T`; rows map raw basis
    /// evaluations to orthonormal ones.
    ortho_map: Array2<f64>,
    gram: Array2<f64>,
    dd_gram: Array2<f64>,
}

impl BasisSystem {
    /// Build the basis: knots, raw Grams by quadrature, orthonormalization.
    pub fn new(spec: BasisSpec) -> Result<Self> {
        spec.validate()?;
        let knots = uniform_knots(&spec);
        let quad0 = quadrature_design(&spec, &knots, 0);
        let raw = quad0.t().dot(&quad0);
        let chol = linalg::cholesky_lower(&raw.view()).map_err(|_| {
            Error::numerical("raw B-spline Gram matrix is not positive definite")
        })?;
        let ortho_map = linalg::lower_tri_inverse(&chol.view());
        // Grams are assembled as M^T M so they stay positive semidefinite to
        // roundoff; symmetrization is then exact by construction.
        let m0 = quad0.dot(&ortho_map.t());
        let mut gram = m0.t().dot(&m0);
        linalg::symmetrize(&mut gram);
        let m2 = quadrature_design(&spec, &knots, 2).dot(&ortho_map.t());
        let mut dd_gram = m2.t().dot(&m2);
        linalg::symmetrize(&mut dd_gram);
        Ok(BasisSystem {
            spec,
            knots,
            ortho_map,
            gram,
            dd_gram,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn num_basis(&self) -> usize {
        self.spec.num_basis
    }

    pub fn order(&self) -> usize {
        self.spec.spline_order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.spec.domain_lo, self.spec.domain_hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Gram matrix of the orthonormal functions (identity up to quadrature
    /// and factorization roundoff).
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// Gram matrix of second derivatives of the orthonormal functions.
    pub fn dd_gram(&self) -> &Array2<f64> {
        &self.dd_gram
    }

    /// The orthonormalizing rotation applied to raw basis evaluations.
    pub fn ortho_map(&self) -> &Array2<f64> {
        &self.ortho_map
    }

    /// Clamp a point to the closed domain.
    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.spec.domain_lo, self.spec.domain_hi)
    }

    /// Orthonormal basis functions at `points` (rows: points, cols: functions).
    pub fn evaluate(&self, points: &[f64]) -> Result<Array2<f64>> {
        Ok(self.evaluate_raw(points)?.dot(&self.ortho_map.t()))
    }

    /// First derivatives of the orthonormal basis functions.
    pub fn evaluate_d1(&self, points: &[f64]) -> Result<Array2<f64>> {
        Ok(self.eval_raw_deriv(points, 1)?.dot(&self.ortho_map.t()))
    }

    /// Second derivatives of the orthonormal basis functions.
    pub fn evaluate_dd(&self, points: &[f64]) -> Result<Array2<f64>> {
        Ok(self.eval_raw_deriv(points, 2)?.dot(&self.ortho_map.t()))
    }

    /// Raw (pre-orthonormalization) B-spline evaluations; these satisfy the
    /// partition of unity.
    pub fn evaluate_raw(&self, points: &[f64]) -> Result<Array2<f64>> {
        self.eval_raw_deriv(points, 0)
    }

    fn eval_raw_deriv(&self, points: &[f64], deriv: usize) -> Result<Array2<f64>> {
        let nb = self.spec.num_basis;
        let mut out = Array2::zeros((points.len(), nb));
        for (row, &t) in points.iter().enumerate() {
            let t = self.checked_point(t)?;
            let (first, ders) = ders_window(&self.knots, nb, self.spec.spline_order, t, deriv);
            let vals = &ders[deriv];
            out.slice_mut(s![row, first..first + vals.len()])
                .iter_mut()
                .zip(vals)
                .for_each(|(o, &v)| *o = v);
        }
        Ok(out)
    }

    fn checked_point(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        let slack = 1e-10 * (hi - lo);
        if t < lo - slack || t > hi + slack || !t.is_finite() {
            return Err(Error::domain(format!(
                "point {t} lies outside the basis domain [{lo}, {hi}]"
            )));
        }
        Ok(t.clamp(lo, hi))
    }
}

/// Construct a [`BasisSystem`] from a spec.
pub fn make_basis(spec: BasisSpec) -> Result<BasisSystem> {
    BasisSystem::new(spec)
}

/// Knot vector with `spline_order` repeated boundary knots at each end and
/// uniformly spaced interior knots.
fn uniform_knots(spec: &BasisSpec) -> Vec<f64> {
    let k = spec.spline_order;
    let n_interior = spec.num_basis - k;
    let (lo, hi) = (spec.domain_lo, spec.domain_hi);
    let h = (hi - lo) / (n_interior as f64 + 1.0);
    let mut knots = Vec::with_capacity(spec.num_basis + k);
    knots.extend(std::iter::repeat(lo).take(k));
    for j in 1..=n_interior {
        knots.push(lo + j as f64 * h);
    }
    knots.extend(std::iter::repeat(hi).take(k));
    knots
}

/// Square-root-weighted quadrature design matrix `D` with `D^T D` equal to
/// the Gram matrix of the raw basis (deriv 0) or of its `deriv`-th
/// derivatives. One Gauss–Legendre rule with `spline_order` nodes per knot
/// cell: the integrands are piecewise polynomials of degree at most
/// `2(order-1)`, so the quadrature is exact.
fn quadrature_design(spec: &BasisSpec, knots: &[f64], deriv: usize) -> Array2<f64> {
    let nb = spec.num_basis;
    let k = spec.spline_order;
    let cells: Vec<usize> = (k - 1..knots.len() - k)
        .filter(|&j| knots[j + 1] > knots[j])
        .collect();
    let mut d = Array2::zeros((cells.len() * k, nb));
    for (ci, &j) in cells.iter().enumerate() {
        let (nodes, weights) = gauss_legendre_on(k, knots[j], knots[j + 1]);
        for (qi, (t, w)) in nodes.iter().zip(weights.iter()).enumerate() {
            let (first, ders) = ders_window(knots, nb, k, *t, deriv);
            let sw = w.sqrt();
            let mut row = d.row_mut(ci * k + qi);
            for (offset, &v) in ders[deriv].iter().enumerate() {
                row[first + offset] = sw * v;
            }
        }
    }
    d
}

/// Index of the knot span containing `t`.
fn find_span(knots: &[f64], num_basis: usize, order: usize, t: f64) -> usize {
    let p = order - 1;
    if t >= knots[num_basis] {
        return num_basis - 1;
    }
    if t <= knots[p] {
        return p;
    }
    let mut lo = p;
    let mut hi = num_basis;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Values and derivatives (orders `0..=max_deriv`) of the `order` B-spline
/// functions that are nonzero at `t`. Returns the index of the first such
/// function and one row per derivative order. Derivatives of order at or
/// above `order` are identically zero.
///
/// This is the classical derivative extension of the Cox–de Boor recursion.
fn ders_window(
    knots: &[f64],
    num_basis: usize,
    order: usize,
    t: f64,
    max_deriv: usize,
) -> (usize, Vec<Vec<f64>>) {
    let p = order - 1;
    let span = find_span(knots, num_basis, order, t);
    let first = span - p;
    let mut ders = vec![vec![0.0; p + 1]; max_deriv + 1];

    // Triangle of basis values with knot differences kept for reuse.
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    if max_deriv == 0 || p == 0 {
        return (first, ders);
    }

    let n_der = max_deriv.min(p);
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0].iter_mut().for_each(|v| *v = 0.0);
        a[1].iter_mut().for_each(|v| *v = 0.0);
        a[0][0] = 1.0;
        for k in 1..=n_der {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n_der {
        for j in 0..=p {
            ders[k][j] *= factor;
        }
        factor *= (p - k) as f64;
    }
    (first, ders)
}
