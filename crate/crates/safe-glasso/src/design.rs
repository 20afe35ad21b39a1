//! Dataset construction and the group-structured design matrix.
//!
//! A [`FunctionalDataset`] holds a scalar response, a scalar varying
//! covariate, and `K` functional predictors sampled on a shared grid.
//! [`assemble_design`] integrates each predictor against the s-basis with
//! left-Riemann weights and crosses the result with the z-basis evaluated at
//! the concurrent covariate, producing one coefficient block per predictor.

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::par;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

/// Response, varying covariate, and functional predictors on a shared grid.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    /// Response vector, length N.
    pub y: Array1<f64>,
    /// Varying covariate, length N.
    pub z: Array1<f64>,
    /// Functional predictors, K x N x R.
    pub x: Array3<f64>,
    /// Strictly increasing sampling grid, length R.
    pub s_grid: Array1<f64>,
    /// Predictor labels, length K.
    pub names: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(y: Array1<f64>, z: Array1<f64>, x: Array3<f64>, s_grid: Array1<f64>) -> Result<Self> {
        let names = (1..=x.dim().0).map(|k| format!("x{k}")).collect();
        Self::with_names(y, z, x, s_grid, names)
    }

    pub fn with_names(
        y: Array1<f64>,
        z: Array1<f64>,
        x: Array3<f64>,
        s_grid: Array1<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let (k, n, r) = x.dim();
        if y.len() != n || z.len() != n {
            return Err(Error::data(format!(
                "y ({}), z ({}) and predictor instances ({n}) disagree",
                y.len(),
                z.len()
            )));
        }
        if s_grid.len() != r {
            return Err(Error::data(format!(
                "s_grid has {} points but predictors are sampled at {r}",
                s_grid.len()
            )));
        }
        if !s_grid.windows(2).into_iter().all(|w| w[1] > w[0]) {
            return Err(Error::data("s_grid must be strictly increasing"));
        }
        if names.len() != k {
            return Err(Error::data("one name per predictor required"));
        }
        Ok(FunctionalDataset { y, z, x, s_grid, names })
    }

    pub fn num_instances(&self) -> usize {
        self.y.len()
    }

    pub fn num_predictors(&self) -> usize {
        self.x.dim().0
    }

    pub fn grid_len(&self) -> usize {
        self.s_grid.len()
    }

    /// Rows at `indices`, in the order given. Callers that need temporal
    /// structure preserved should pass sorted indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (k, _, r) = self.x.dim();
        let n = indices.len();
        let mut x = Array3::zeros((k, n, r));
        for (row, &i) in indices.iter().enumerate() {
            x.slice_mut(s![.., row, ..]).assign(&self.x.slice(s![.., i, ..]));
        }
        FunctionalDataset {
            y: indices.iter().map(|&i| self.y[i]).collect(),
            z: indices.iter().map(|&i| self.z[i]).collect(),
            x,
            s_grid: self.s_grid.clone(),
            names: self.names.clone(),
        }
    }

    /// Keep only the predictors at `keep` (0-based), in the order given.
    pub fn restrict_predictors(&self, keep: &[usize]) -> Self {
        let (_, n, r) = self.x.dim();
        let mut x = Array3::zeros((keep.len(), n, r));
        for (slot, &k) in keep.iter().enumerate() {
            x.slice_mut(s![slot, .., ..]).assign(&self.x.slice(s![k, .., ..]));
        }
        FunctionalDataset {
            y: self.y.clone(),
            z: self.z.clone(),
            x,
            s_grid: self.s_grid.clone(),
            names: keep.iter().map(|&k| self.names[k].clone()).collect(),
        }
    }
}

/// Means removed by [`center`]; kept so predictions can be mapped back to
/// original units.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringStats {
    pub y_mean: f64,
    /// Pointwise predictor means, K x R.
    pub x_means: Array2<f64>,
}

/// Window a multichannel series into a functional dataset: instance `i`
/// carries the `delta + 1` most recent samples of every channel on the
/// rescaled grid `[-delta, 0]`, with the concurrent `z` and `y` values.
pub fn window_history(
    series: ArrayView2<f64>,
    z_series: ArrayView1<f64>,
    y_series: ArrayView1<f64>,
    delta: usize,
) -> Result<FunctionalDataset> {
    let (t, k) = series.dim();
    if z_series.len() != t || y_series.len() != t {
        return Err(Error::data("series, z and y must share length"));
    }
    if t <= delta {
        return Err(Error::data(format!(
            "insufficient data: {t} samples cannot support a window of {} lags",
            delta + 1
        )));
    }
    let n = t - delta;
    let r = delta + 1;
    let mut x = Array3::zeros((k, n, r));
    for ch in 0..k {
        for i in 0..n {
            for j in 0..r {
                x[[ch, i, j]] = series[[i + j, ch]];
            }
        }
    }
    let y = y_series.slice(s![delta..]).to_owned();
    let z = z_series.slice(s![delta..]).to_owned();
    let s_grid = Array1::from_shape_fn(r, |j| j as f64 - delta as f64);
    FunctionalDataset::new(y, z, x, s_grid)
}

/// Left-Riemann integration weights: the first cell reuses the first
/// spacing so all R samples contribute.
pub fn riemann_weights(s_grid: ArrayView1<f64>) -> Result<Array1<f64>> {
    let r = s_grid.len();
    if r < 2 {
        return Err(Error::data("integration grid needs at least two points"));
    }
    let mut w = Array1::zeros(r);
    w[0] = s_grid[1] - s_grid[0];
    for i in 1..r {
        w[i] = s_grid[i] - s_grid[i - 1];
    }
    Ok(w)
}

/// Remove the response mean and the pointwise predictor means.
pub fn center(ds: &FunctionalDataset) -> (FunctionalDataset, CenteringStats) {
    let (k, n, r) = ds.x.dim();
    let y_mean = ds.y.sum() / n as f64;
    let mut x_means = Array2::zeros((k, r));
    for ki in 0..k {
        for ri in 0..r {
            x_means[[ki, ri]] = ds.x.slice(s![ki, .., ri]).sum() / n as f64;
        }
    }
    let mut x = ds.x.clone();
    for ki in 0..k {
        for ri in 0..r {
            let m = x_means[[ki, ri]];
            x.slice_mut(s![ki, .., ri]).mapv_inplace(|v| v - m);
        }
    }
    let centered = FunctionalDataset {
        y: &ds.y - y_mean,
        z: ds.z.clone(),
        x,
        s_grid: ds.s_grid.clone(),
        names: ds.names.clone(),
    };
    (centered, CenteringStats { y_mean, x_means })
}

/// Invert [`center`].
pub fn uncenter(ds: &FunctionalDataset, stats: &CenteringStats) -> FunctionalDataset {
    let (k, _, r) = ds.x.dim();
    let mut x = ds.x.clone();
    for ki in 0..k {
        for ri in 0..r {
            let m = stats.x_means[[ki, ri]];
            x.slice_mut(s![ki, .., ri]).mapv_inplace(|v| v + m);
        }
    }
    FunctionalDataset {
        y: &ds.y + stats.y_mean,
        z: ds.z.clone(),
        x,
        s_grid: ds.s_grid.clone(),
        names: ds.names.clone(),
    }
}

/// The assembled design matrix with its group structure. Group `k` occupies
/// the contiguous column block `k*group_size()..(k+1)*group_size()`; within a
/// block, the coefficient for s-basis `l` and z-basis `m` sits at `l*M + m`
/// (row-major vectorization of the L x M coefficient matrix).
#[derive(Debug, Clone)]
pub struct GroupedDesign {
    pub w: Array2<f64>,
    pub num_groups: usize,
    pub l_basis: usize,
    pub m_basis: usize,
    pub riemann: Array1<f64>,
}

impl GroupedDesign {
    pub fn group_size(&self) -> usize {
        self.l_basis * self.m_basis
    }

    pub fn group_offset(&self, k: usize) -> usize {
        k * self.group_size()
    }

    pub fn block(&self, k: usize) -> ArrayView2<'_, f64> {
        let off = self.group_offset(k);
        self.w.slice(s![.., off..off + self.group_size()])
    }

    pub fn num_instances(&self) -> usize {
        self.w.nrows()
    }
}

/// Assemble the design from a dataset; training-time entry point that
/// rejects out-of-domain covariate values.
pub fn assemble_design(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
) -> Result<GroupedDesign> {
    let (lo, hi) = basis_z.domain();
    let slack = 1e-10 * (hi - lo);
    let offending: Vec<usize> = ds
        .z
        .iter()
        .enumerate()
        .filter(|(_, &z)| z < lo - slack || z > hi + slack)
        .map(|(i, _)| i)
        .collect();
    if !offending.is_empty() {
        let shown: Vec<String> = offending.iter().take(8).map(|i| i.to_string()).collect();
        return Err(Error::domain(format!(
            "{} z value(s) outside the basis domain [{lo}, {hi}] at instance(s) {}{}",
            offending.len(),
            shown.join(", "),
            if offending.len() > 8 { ", ..." } else { "" }
        )));
    }
    let (design, _) = assemble_design_impl(ds, basis_s, basis_z, false)?;
    Ok(design)
}

/// Assemble for prediction: z values outside the training domain are clamped
/// to the boundary and counted instead of rejected.
pub fn assemble_design_clamped(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
) -> Result<(GroupedDesign, usize)> {
    assemble_design_impl(ds, basis_s, basis_z, true)
}

fn assemble_design_impl(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    clamp_z: bool,
) -> Result<(GroupedDesign, usize)> {
    let (k, n, _a) = ds.x.dim();
    let l = basis_s.num_basis();
    let m = basis_z.num_basis();
    let riemann = riemann_weights(ds.s_grid.view())?;

    let e_s = basis_s.evaluate(ds.s_grid.as_slice().unwrap())?;
    let mut clamped = 0usize;
    let z_eval: Vec<f64> = if clamp_z {
        ds.z
            .iter()
            .map(|&z| {
                let c = basis_z.clamp(z);
                if c != z {
                    clamped += 1;
                }
                c
            })
            .collect()
    } else {
        ds.z.to_vec()
    };
    let t_z = basis_z.evaluate(&z_eval)?;

    // Integrated predictor blocks: for each group, (X .* riemann) E_s.
    let weighted_eval = {
        let mut we = e_s.clone();
        for (mut row, &w) in we.rows_mut().into_iter().zip(riemann.iter()) {
            row.mapv_inplace(|v| v * w);
        }
        we
    };
    let x_omega: Vec<Array2<f64>> = par::map_indexed(k, |ki| {
        ds.x.index_axis(Axis(0), ki).dot(&weighted_eval)
    });

    let mut w = Array2::zeros((n, k * l * m));
    for (ki, xw) in x_omega.iter().enumerate() {
        let off = ki * l * m;
        for i in 0..n {
            let zrow = t_z.row(i);
            let xrow = xw.row(i);
            let mut out = w.slice_mut(s![i, off..off + l * m]);
            for li in 0..l {
                let v = xrow[li];
                for mi in 0..m {
                    out[li * m + mi] = v * zrow[mi];
                }
            }
        }
    }
    Ok((
        GroupedDesign {
            w,
            num_groups: k,
            l_basis: l,
            m_basis: m,
            riemann,
        },
        clamped,
    ))
}

/// A penalized-spline smooth of a scalar series with its first derivative.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub fitted: Array1<f64>,
    pub derivative: Array1<f64>,
    pub chosen_smooth: f64,
}

/// Second-derivative-penalized least-squares smooth of `series` observed at
/// `times`; the smoothing level is picked by blocked cross-validation over
/// `smooth_grid`. Used to turn position series into velocity estimates.
pub fn penalized_smooth(
    series: ArrayView1<f64>,
    times: ArrayView1<f64>,
    smooth_grid: &[f64],
    folds: usize,
) -> Result<SmoothFit> {
    let t = series.len();
    if smooth_grid.is_empty() {
        return Err(Error::config("smoothing grid must not be empty"));
    }
    if t < 10 {
        return Err(Error::data("need at least 10 samples to smooth"));
    }
    if times.len() != t {
        return Err(Error::data("series and times must share length"));
    }
    if !times.windows(2).into_iter().all(|w| w[1] > w[0]) {
        return Err(Error::data("times must be strictly increasing"));
    }
    let num_basis = (t / 4).clamp(10, 35);
    let basis = BasisSystem::new(crate::basis::BasisSpec::cubic(
        times[0],
        times[t - 1],
        num_basis,
    ))?;
    let e = basis.evaluate(times.as_slice().unwrap())?;
    let dd = basis.dd_gram();

    let fold_of = crate::selection::block_cv_partition(t, folds)?;
    let mut best = (f64::INFINITY, smooth_grid[0]);
    for &phi in smooth_grid {
        let mut sse = 0.0;
        for fold in 0..folds {
            let train: Vec<usize> = (0..t).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..t).filter(|&i| fold_of[i] == fold).collect();
            let e_tr = e.select(Axis(0), &train);
            let y_tr = Array1::from_iter(train.iter().map(|&i| series[i]));
            let coef = ridge_coef(&e_tr, &y_tr, dd, phi)?;
            for &i in &test {
                let pred = e.row(i).dot(&coef);
                sse += (series[i] - pred).powi(2);
            }
        }
        // Ties keep the larger phi (grid scanned in increasing order).
        if sse <= best.0 {
            best = (sse, phi);
        }
    }
    let coef = ridge_coef(&e, &series.to_owned(), dd, best.1)?;
    let fitted = e.dot(&coef);
    let d1 = basis.evaluate_d1(times.as_slice().unwrap())?;
    let derivative = d1.dot(&coef);
    Ok(SmoothFit {
        fitted,
        derivative,
        chosen_smooth: best.1,
    })
}

fn ridge_coef(
    e: &Array2<f64>,
    y: &Array1<f64>,
    penalty: &Array2<f64>,
    phi: f64,
) -> Result<Array1<f64>> {
    let mut a = e.t().dot(e);
    a.scaled_add(phi, penalty);
    let chol = crate::linalg::cholesky_lower(&a.view())
        .map_err(|_| Error::numerical("singular penalized normal matrix in smoother"))?;
    Ok(crate::linalg::spd_solve_vec(&chol.view(), &e.t().dot(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset(seed: u64, k: usize, n: usize, r: usize) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array3::from_shape_fn((k, n, r), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let z = Array1::from_shape_fn(n, |_| rng.random_range(-0.99..0.99));
        let s_grid = Array1::from_shape_fn(r, |i| i as f64 / (r - 1) as f64);
        FunctionalDataset::new(y, z, x, s_grid).unwrap()
    }

    #[test]
    fn windowing_matches_hand_example() {
        let series = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let z = array![0.1, 0.2, 0.3, 0.4, 0.5];
        let y = array![10.0, 20.0, 30.0, 40.0, 50.0];
        let ds = window_history(series.view(), z.view(), y.view(), 2).unwrap();
        assert_eq!(ds.num_instances(), 3);
        assert_eq!(ds.x.slice(s![0, 0, ..]).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.x.slice(s![0, 1, ..]).to_vec(), vec![2.0, 3.0, 4.0]);
        assert_eq!(ds.x.slice(s![0, 2, ..]).to_vec(), vec![3.0, 4.0, 5.0]);
        assert_eq!(ds.y.to_vec(), vec![30.0, 40.0, 50.0]);
        assert_eq!(ds.z.to_vec(), vec![0.3, 0.4, 0.5]);
        assert_eq!(ds.s_grid.to_vec(), vec![-2.0, -1.0, 0.0]);
    }

    #[test]
    fn windowing_of_constant_series_is_constant() {
        let series = Array2::from_elem((30, 3), 7.5);
        let z = Array1::zeros(30);
        let y = Array1::zeros(30);
        let ds = window_history(series.view(), z.view(), y.view(), 4).unwrap();
        assert!(ds.x.iter().all(|&v| v == 7.5));
    }

    #[test]
    fn window_spans_one_third_second_at_default_rate() {
        // delta = 40 lags at 120 Hz covers 40/120 = 1/3 s.
        let delta = 40usize;
        let rate = 120.0;
        assert_abs_diff_eq!(delta as f64 / rate, 1.0 / 3.0, epsilon = 1e-12);
        let t = 100;
        let series = Array2::zeros((t, 1));
        let ds = window_history(
            series.view(),
            Array1::zeros(t).view(),
            Array1::zeros(t).view(),
            delta,
        )
        .unwrap();
        assert_eq!(ds.grid_len(), delta + 1);
        assert_eq!(ds.s_grid[0], -(delta as f64));
        assert_eq!(ds.s_grid[delta], 0.0);
    }

    #[test]
    fn windowing_rejects_short_series() {
        let series = Array2::zeros((5, 1));
        let z = Array1::zeros(5);
        let y = Array1::zeros(5);
        assert!(window_history(series.view(), z.view(), y.view(), 5).is_err());
    }

    #[test]
    fn riemann_weights_examples() {
        let w = riemann_weights(array![0.0, 0.5, 1.0].view()).unwrap();
        assert_eq!(w.to_vec(), vec![0.5, 0.5, 0.5]);

        let r = 50;
        let grid = Array1::from_shape_fn(r, |i| i as f64 / (r - 1) as f64);
        let w = riemann_weights(grid.view()).unwrap();
        assert_abs_diff_eq!(w.sum(), 1.0 + 1.0 / (r - 1) as f64, epsilon = 1e-12);

        // Integrating s against the weights approximates 1/2.
        let r = 100;
        let grid = Array1::from_shape_fn(r, |i| i as f64 / (r - 1) as f64);
        let w = riemann_weights(grid.view()).unwrap();
        let integral: f64 = grid.iter().zip(w.iter()).map(|(&s, &w)| s * w).sum();
        assert!((integral - 0.5).abs() < 1e-2);

        assert!(riemann_weights(array![1.0].view()).is_err());
    }

    #[test]
    fn centering_examples_and_round_trip() {
        let ds = FunctionalDataset::new(
            array![1.0, 2.0, 3.0],
            array![0.0, 0.5, 1.0],
            Array3::zeros((1, 3, 2)),
            array![0.0, 1.0],
        )
        .unwrap();
        let (c, stats) = center(&ds);
        assert_eq!(c.y.to_vec(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(stats.y_mean, 2.0);

        // Centered input stays put.
        let (c2, stats2) = center(&c);
        assert_eq!(c2.y.to_vec(), c.y.to_vec());
        assert_eq!(stats2.y_mean, 0.0);

        // Round trip on random data.
        let ds = toy_dataset(3, 2, 17, 5);
        let (c, stats) = center(&ds);
        let back = uncenter(&c, &stats);
        for (a, b) in back.y.iter().zip(ds.y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in back.x.iter().zip(ds.x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // Centered slices have mean zero.
        for ki in 0..2 {
            for ri in 0..5 {
                let mean = c.x.slice(s![ki, .., ri]).sum() / 17.0;
                assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_predictor_gives_zero_block() {
        let mut ds = toy_dataset(5, 3, 12, 8);
        ds.x.slice_mut(s![1, .., ..]).fill(0.0);
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
        let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
        let d = assemble_design(&ds, &bs, &bz).unwrap();
        assert!(d.block(1).iter().all(|&v| v == 0.0));
        assert!(d.block(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn constant_scalar_design_oracle() {
        // L = M = 1 constant bases on [0,1] with X identically 1: every design
        // entry is c_omega * c_tau * sum(riemann weights) with both constants 1.
        let n = 6;
        let r = 3;
        let ds = FunctionalDataset::new(
            Array1::zeros(n),
            Array1::from_shape_fn(n, |i| i as f64 / (n - 1) as f64),
            Array3::from_elem((1, n, r), 1.0),
            array![0.0, 0.5, 1.0],
        )
        .unwrap();
        let bs = BasisSystem::new(BasisSpec::new(0.0, 1.0, 1, 1)).unwrap();
        let bz = BasisSystem::new(BasisSpec::new(0.0, 1.0, 1, 1)).unwrap();
        let d = assemble_design(&ds, &bs, &bz).unwrap();
        for &v in d.w.iter() {
            assert_abs_diff_eq!(v, 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn prediction_identity_oracle() {
        // W beta must equal direct Riemann integration of the reconstructed
        // surfaces against the predictors.
        let ds = toy_dataset(11, 3, 20, 12);
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 6)).unwrap();
        let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 5)).unwrap();
        let d = assemble_design(&ds, &bs, &bz).unwrap();
        let (l, m) = (6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta = Array1::from_shape_fn(3 * l * m, |_| rng.random_range(-1.0..1.0));
        let wb = d.w.dot(&beta);

        let e_s = bs.evaluate(ds.s_grid.as_slice().unwrap()).unwrap();
        let weights = riemann_weights(ds.s_grid.view()).unwrap();
        for i in 0..ds.num_instances() {
            let tau = bz.evaluate(&[ds.z[i]]).unwrap();
            let mut direct = 0.0;
            for k in 0..3 {
                let b_k = beta
                    .slice(s![k * l * m..(k + 1) * l * m])
                    .to_shape((l, m))
                    .unwrap()
                    .to_owned();
                for ri in 0..12 {
                    // gamma_k(s_r, z_i) = psi(s_r)^T B_k tau(z_i)
                    let psi = e_s.row(ri);
                    let gamma = psi.dot(&b_k.dot(&tau.row(0)));
                    direct += weights[ri] * ds.x[[k, i, ri]] * gamma;
                }
            }
            assert_abs_diff_eq!(wb[i], direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn design_is_linear_in_predictors() {
        let ds1 = toy_dataset(21, 2, 10, 7);
        let mut ds2 = toy_dataset(22, 2, 10, 7);
        ds2.z = ds1.z.clone();
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
        let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
        let (a, b) = (0.7, -1.3);
        let mut mixed = ds1.clone();
        mixed.x = &ds1.x * a + &ds2.x * b;
        let d1 = assemble_design(&ds1, &bs, &bz).unwrap();
        let d2 = assemble_design(&ds2, &bs, &bz).unwrap();
        let dm = assemble_design(&mixed, &bs, &bz).unwrap();
        let expected = &d1.w * a + &d2.w * b;
        let err = (&dm.w - &expected)
            .mapv(f64::abs)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn predictor_permutation_permutes_blocks() {
        let ds = toy_dataset(31, 3, 9, 6);
        let perm = [2usize, 0, 1];
        let permuted = ds.restrict_predictors(&perm);
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
        let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
        let d = assemble_design(&ds, &bs, &bz).unwrap();
        let dp = assemble_design(&permuted, &bs, &bz).unwrap();
        for (slot, &orig) in perm.iter().enumerate() {
            assert_eq!(
                dp.block(slot).to_owned(),
                d.block(orig).to_owned(),
                "block {orig} should land in slot {slot}"
            );
        }
    }

    #[test]
    fn out_of_domain_z_is_rejected_listing_indices() {
        let mut ds = toy_dataset(41, 1, 8, 5);
        ds.z[3] = 2.0;
        ds.z[6] = -1.7;
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
        let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
        let err = assemble_design(&ds, &bs, &bz).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('6'), "{msg}");

        let (_, clamped) = assemble_design_clamped(&ds, &bs, &bz).unwrap();
        assert_eq!(clamped, 2);
    }

    #[test]
    fn centered_fit_matches_intercept_fit_in_constant_z_mode() {
        // With a constant z-basis the centered design has mean-zero columns,
        // so a no-intercept fit on centered data reproduces the explicit
        // intercept fit on raw data.
        let ds = toy_dataset(51, 2, 40, 9);
        let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 4)).unwrap();
        let bz = BasisSystem::new(BasisSpec::new(-1.0, 1.0, 1, 1)).unwrap();

        let (centered, stats) = center(&ds);
        let dc = assemble_design(&centered, &bs, &bz).unwrap();
        let gram = dc.w.t().dot(&dc.w);
        let chol = crate::linalg::cholesky_lower(&gram.view()).unwrap();
        let beta = crate::linalg::spd_solve_vec(&chol.view(), &dc.w.t().dot(&centered.y));
        let fitted_centered = dc.w.dot(&beta) + stats.y_mean;

        let dr = assemble_design(&ds, &bs, &bz).unwrap();
        let n = ds.num_instances();
        let p = dr.w.ncols();
        let mut design_icpt = Array2::ones((n, p + 1));
        design_icpt.slice_mut(s![.., 1..]).assign(&dr.w);
        let gram = design_icpt.t().dot(&design_icpt);
        let chol = crate::linalg::cholesky_lower(&gram.view()).unwrap();
        let beta_i = crate::linalg::spd_solve_vec(&chol.view(), &design_icpt.t().dot(&ds.y));
        let fitted_raw = design_icpt.dot(&beta_i);

        for i in 0..n {
            assert_abs_diff_eq!(fitted_centered[i], fitted_raw[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn smoother_recovers_linear_derivative() {
        let t = 200;
        let times = Array1::from_shape_fn(t, |i| i as f64 / (t - 1) as f64);
        let series = times.mapv(|x| 2.0 * x);
        let fit = penalized_smooth(series.view(), times.view(), &[1e-4, 1e-2, 1.0], 5).unwrap();
        for i in (t / 10)..(9 * t / 10) {
            assert!((fit.derivative[i] - 2.0).abs() < 1e-3, "i={i} d={}", fit.derivative[i]);
        }
    }

    #[test]
    fn smoother_recovers_sine_derivative() {
        let t = 500;
        let times = Array1::from_shape_fn(t, |i| i as f64 / (t - 1) as f64);
        let series = times.mapv(|x| (2.0 * std::f64::consts::PI * x).sin());
        let grid = [1e-10, 1e-8, 1e-6, 1e-4];
        let fit = penalized_smooth(series.view(), times.view(), &grid, 5).unwrap();
        let mut sq = 0.0;
        let mut count = 0;
        for i in (t / 10)..(9 * t / 10) {
            let truth = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * times[i]).cos();
            sq += (fit.derivative[i] - truth).powi(2);
            count += 1;
        }
        let rms = (sq / count as f64).sqrt();
        assert!(rms < 1e-2, "rms={rms}");
    }

    #[test]
    fn huge_smoothing_tends_to_least_squares_line() {
        let t = 120;
        let times = Array1::from_shape_fn(t, |i| i as f64 / (t - 1) as f64);
        let series = times.mapv(|x| 1.0 + 0.5 * x + 2.0 * x * x);
        let fit = penalized_smooth(series.view(), times.view(), &[1e7], 4).unwrap();
        // Least-squares line through the quadratic.
        let tbar = times.sum() / t as f64;
        let ybar = series.sum() / t as f64;
        let slope = times
            .iter()
            .zip(series.iter())
            .map(|(&x, &y)| (x - tbar) * (y - ybar))
            .sum::<f64>()
            / times.iter().map(|&x| (x - tbar) * (x - tbar)).sum::<f64>();
        for i in 0..t {
            let line = ybar + slope * (times[i] - tbar);
            assert!((fit.fitted[i] - line).abs() < 1e-3, "i={i}");
        }
        assert!(penalized_smooth(series.view(), times.view(), &[], 4).is_err());
    }
}
