//! Adaptive sparse-smooth group penalties and the Cholesky reparametrization
//! that turns the penalized criterion into a plain group LASSO.
//!
//! For orthonormal bases the squared surface norm and the two curvature
//! norms of a coefficient block are quadratic forms in the vectorized
//! coefficients, so the per-group penalty matrix is
//! `Q_k = f_k I + g_k phi1 (S ⊗ I_M) + h_k phi2 (I_L ⊗ Z)` with `S`, `Z` the
//! second-derivative Grams of the two bases. Coefficients are vectorized
//! row-major: entry `(l, m)` sits at `l*M + m`.

use crate::design::GroupedDesign;
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{s, Array1, Array2, ArrayView1};

/// Penalty levels and per-group adaptive weights.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub d_exponent: f64,
}

impl PenaltyConfig {
    /// Unweighted penalty at the given levels for `k` groups.
    pub fn flat(k: usize, lambda: f64, phi1: f64, phi2: f64) -> Self {
        PenaltyConfig {
            lambda,
            phi1,
            phi2,
            f: vec![1.0; k],
            g: vec![1.0; k],
            h: vec![1.0; k],
            d_exponent: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = self.f.iter().chain(&self.g).chain(&self.h);
        for &w in all {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::config(format!(
                    "adaptive weights must be strictly positive and finite, got {w}"
                )));
            }
        }
        if !(self.phi1 >= 0.0 && self.phi2 >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::config("penalty levels must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-group penalty matrices with their Cholesky factors.
#[derive(Debug, Clone)]
pub struct GroupPenalty {
    pub q: Vec<Array2<f64>>,
    /// Lower-triangular `R` with `Q = R R^T`.
    pub r_chol: Vec<Array2<f64>>,
    /// `R^{-1}`, lower triangular.
    pub r_inv: Vec<Array2<f64>>,
}

impl GroupPenalty {
    pub fn num_groups(&self) -> usize {
        self.q.len()
    }
}

/// `S ⊗ I_M` under row-major vectorization of an L x M coefficient block.
pub fn s_curvature_block(dd_s: &Array2<f64>, m: usize) -> Array2<f64> {
    let l = dd_s.nrows();
    let mut out = Array2::zeros((l * m, l * m));
    for a in 0..l {
        for b in 0..l {
            let v = dd_s[[a, b]];
            if v == 0.0 {
                continue;
            }
            for mi in 0..m {
                out[[a * m + mi, b * m + mi]] = v;
            }
        }
    }
    out
}

/// `I_L ⊗ Z` under row-major vectorization of an L x M coefficient block.
pub fn z_curvature_block(l: usize, dd_z: &Array2<f64>) -> Array2<f64> {
    let m = dd_z.nrows();
    let mut out = Array2::zeros((l * m, l * m));
    for li in 0..l {
        let mut blk = out.slice_mut(s![li * m..(li + 1) * m, li * m..(li + 1) * m]);
        blk.assign(dd_z);
    }
    out
}

/// Build `Q_k = f_k I + g_k phi1 (S ⊗ I_M) + h_k phi2 (I_L ⊗ Z)` for every
/// group, with Cholesky factor and inverse factor.
pub fn build_group_penalty(
    cfg: &PenaltyConfig,
    dd_s: &Array2<f64>,
    dd_z: &Array2<f64>,
) -> Result<GroupPenalty> {
    cfg.validate()?;
    let k = cfg.f.len();
    if cfg.g.len() != k || cfg.h.len() != k {
        return Err(Error::config("weight vectors must share length"));
    }
    let l = dd_s.nrows();
    let m = dd_z.nrows();
    let s_block = s_curvature_block(dd_s, m);
    let z_block = z_curvature_block(l, dd_z);
    let mut q = Vec::with_capacity(k);
    let mut r_chol = Vec::with_capacity(k);
    let mut r_inv = Vec::with_capacity(k);
    for ki in 0..k {
        let mut qk = Array2::eye(l * m) * cfg.f[ki];
        qk.scaled_add(cfg.g[ki] * cfg.phi1, &s_block);
        qk.scaled_add(cfg.h[ki] * cfg.phi2, &z_block);
        let chol = linalg::cholesky_lower(&qk.view())
            .map_err(|_| Error::numerical("group penalty matrix is not positive definite"))?;
        r_inv.push(linalg::lower_tri_inverse(&chol.view()));
        r_chol.push(chol);
        q.push(qk);
    }
    Ok(GroupPenalty { q, r_chol, r_inv })
}

/// Transform the design so the penalized criterion becomes a plain group
/// LASSO: each group block becomes `W_k = X_k R_k^{-T}`, and coefficients map
/// back via `beta_k = R_k^{-T} beta_tilde_k`.
pub fn reparametrize(design: &GroupedDesign, penalty: &GroupPenalty) -> Result<GroupedDesign> {
    if penalty.num_groups() != design.num_groups {
        return Err(Error::config("penalty and design group counts disagree"));
    }
    let gs = design.group_size();
    if penalty.q[0].nrows() != gs {
        return Err(Error::config("penalty block size does not match the design"));
    }
    let mut w = design.w.clone();
    for k in 0..design.num_groups {
        let off = k * gs;
        // Rows become R^{-1} x_i, i.e. the block maps to X R^{-T}.
        let transformed = design
            .w
            .slice(s![.., off..off + gs])
            .dot(&penalty.r_inv[k].t());
        w.slice_mut(s![.., off..off + gs]).assign(&transformed);
    }
    Ok(GroupedDesign {
        w,
        num_groups: design.num_groups,
        l_basis: design.l_basis,
        m_basis: design.m_basis,
        riemann: design.riemann.clone(),
    })
}

/// Map reparametrized coefficients back to original coordinates,
/// `beta_k = R_k^{-T} beta_tilde_k`.
pub fn backmap_coefficients(
    beta_tilde: &ArrayView1<f64>,
    penalty: &GroupPenalty,
    group_size: usize,
) -> Array1<f64> {
    let mut beta = Array1::zeros(beta_tilde.len());
    for k in 0..penalty.num_groups() {
        let off = k * group_size;
        let bt = beta_tilde.slice(s![off..off + group_size]);
        let mapped = penalty.r_inv[k].t().dot(&bt);
        beta.slice_mut(s![off..off + group_size]).assign(&mapped);
    }
    beta
}

/// Gram-space version of [`reparametrize`] for the cross-validation hot
/// path: `G'_{kj} = R_k^{-1} G_{kj} R_j^{-T}` and `b'_k = R_k^{-1} b_k`.
/// Only the upper block triangle is computed; the rest is mirrored.
pub(crate) fn reparametrize_gram(
    gram: &Array2<f64>,
    b: &Array1<f64>,
    penalty: &GroupPenalty,
    group_size: usize,
) -> (Array2<f64>, Array1<f64>) {
    let k = penalty.num_groups();
    let gs = group_size;
    let mut g_out = Array2::zeros(gram.dim());
    for ki in 0..k {
        for kj in ki..k {
            let blk = gram.slice(s![ki * gs..(ki + 1) * gs, kj * gs..(kj + 1) * gs]);
            let tmp = penalty.r_inv[ki].dot(&blk);
            let out = tmp.dot(&penalty.r_inv[kj].t());
            g_out
                .slice_mut(s![ki * gs..(ki + 1) * gs, kj * gs..(kj + 1) * gs])
                .assign(&out);
            if kj != ki {
                g_out
                    .slice_mut(s![kj * gs..(kj + 1) * gs, ki * gs..(ki + 1) * gs])
                    .assign(&out.t());
            }
        }
    }
    let mut b_out = Array1::zeros(b.len());
    for ki in 0..k {
        let bk = b.slice(s![ki * gs..(ki + 1) * gs]);
        b_out
            .slice_mut(s![ki * gs..(ki + 1) * gs])
            .assign(&penalty.r_inv[ki].dot(&bk));
    }
    (g_out, b_out)
}

/// Squared norms of the surface and its two curvatures, computed
/// algebraically from a coefficient block: `||gamma||^2 = sum B^2`,
/// `||gamma''_s||^2 = tr(B^T S B)`, `||gamma''_z||^2 = tr(B Z B^T)`.
pub fn surface_norms(b: &Array2<f64>, dd_s: &Array2<f64>, dd_z: &Array2<f64>) -> (f64, f64, f64) {
    let norm2 = b.iter().map(|v| v * v).sum();
    let sb = dd_s.dot(b);
    let s_norm2 = b.iter().zip(sb.iter()).map(|(&x, &y)| x * y).sum();
    let bz = b.dot(dd_z);
    let z_norm2 = b.iter().zip(bz.iter()).map(|(&x, &y)| x * y).sum();
    (norm2, s_norm2, z_norm2)
}

/// Per-group adaptive weights `1 / norm^d`, capped.
#[derive(Debug, Clone)]
pub struct AdaptiveWeights {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl AdaptiveWeights {
    pub fn flat(k: usize) -> Self {
        AdaptiveWeights {
            f: vec![1.0; k],
            g: vec![1.0; k],
            h: vec![1.0; k],
        }
    }
}

/// Weights from initial coefficient estimates: `f_k = 1/||gamma_k||^d` and
/// analogously for the two curvature norms. A vanishing norm maps to `cap`.
pub fn adaptive_weights(
    initial: &[Array2<f64>],
    dd_s: &Array2<f64>,
    dd_z: &Array2<f64>,
    d_exponent: f64,
    cap: f64,
) -> AdaptiveWeights {
    let weight = |norm2: f64| -> f64 {
        if norm2 <= 0.0 {
            return cap;
        }
        let w = norm2.sqrt().powf(-d_exponent);
        if w.is_finite() {
            w.min(cap)
        } else {
            cap
        }
    };
    let mut f = Vec::with_capacity(initial.len());
    let mut g = Vec::with_capacity(initial.len());
    let mut h = Vec::with_capacity(initial.len());
    for b in initial {
        let (n2, s2, z2) = surface_norms(b, dd_s, dd_z);
        f.push(weight(n2));
        g.push(weight(s2));
        h.push(weight(z2));
    }
    AdaptiveWeights { f, g, h }
}
