//! Two-stage adaptive group-sparse selection with block-CV tuning.
//!
//! The pipeline: center the data, fit an unpenalized (smooth-ridge) model to
//! derive adaptive weights, tune and solve the weighted group LASSO (stage
//! 1), recompute weights from the stage-1 estimates and re-select among the
//! stage-1 survivors (stage 2), then refit the selected groups with a pure
//! curvature penalty. Tuning of `(lambda, phi1, phi2)` minimizes blocked
//! cross-validated prediction error.

use crate::basis::BasisSystem;
use crate::design::{
    assemble_design, center, CenteringStats, FunctionalDataset, GroupedDesign,
};
use crate::error::{Error, Result};
use crate::par;
use crate::penalty::{
    adaptive_weights, backmap_coefficients, build_group_penalty, reparametrize_gram,
    s_curvature_block, z_curvature_block, AdaptiveWeights, PenaltyConfig,
};
use crate::solver::{ridge_beta_gram, GramProblem};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

/// Tuning and algorithm settings for the selection pipeline.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SafeConfig {
    pub folds: usize,
    pub d_exponent: f64,
    pub weight_cap: f64,
    /// Number of sparsity levels per smoothing cell, log-spaced downward
    /// from the cell's critical value.
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
    /// Number of smoothing levels per dimension, log-spaced over
    /// `[phi_lo, phi_hi]` after trace rescaling.
    pub phi_count: usize,
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub one_se: bool,
    pub semi_adaptive: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SafeConfig {
    fn default() -> Self {
        SafeConfig {
            folds: 5,
            d_exponent: 1.0,
            weight_cap: 1e8,
            lambda_count: 100,
            lambda_min_ratio: 1e-4,
            phi_count: 5,
            phi_lo: 1e-4,
            phi_hi: 1e4,
            one_se: false,
            semi_adaptive: false,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// One row of a cross-validation table.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CvRecord {
    pub lambda: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub mean_pe: f64,
    pub sd_pe: f64,
}

/// Chosen tuning levels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tuning {
    pub lambda: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Full output of [`safe_select`]. Group indices are 0-based positions into
/// the dataset's predictor axis.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub stage1_set: Vec<usize>,
    pub stage2_set: Vec<usize>,
    pub stage1_tuning: Tuning,
    pub stage2_tuning: Tuning,
    pub stage1_cv: Vec<CvRecord>,
    pub stage2_cv: Vec<CvRecord>,
    /// Post-selection smoothing levels.
    pub post_phi: (f64, f64),
    /// Final coefficient matrices (L x M) for each stage-2 group.
    pub final_b: Vec<(usize, Array2<f64>)>,
    /// Fitted values in original (uncentered) units.
    pub fitted: Array1<f64>,
    pub sigma2: f64,
    pub edf: f64,
    pub centering: CenteringStats,
    /// False if a stage's final solve exhausted its sweep budget; the
    /// best-effort solution is used in that case.
    pub stage_fits_converged: bool,
}

impl SelectionResult {
    fn intercept_only(n: usize, stats: CenteringStats, stage1_cv: Vec<CvRecord>, t1: Tuning) -> Self {
        SelectionResult {
            stage1_set: Vec::new(),
            stage2_set: Vec::new(),
            stage1_tuning: t1,
            stage2_tuning: Tuning { lambda: 0.0, phi1: 0.0, phi2: 0.0 },
            stage1_cv,
            stage2_cv: Vec::new(),
            post_phi: (0.0, 0.0),
            final_b: Vec::new(),
            fitted: Array1::from_elem(n, stats.y_mean),
            sigma2: 0.0,
            edf: 0.0,
            centering: stats,
            stage_fits_converged: true,
        }
    }
}

/// Per-grid-point sweep cap inside cross-validation paths; warm starts
/// keep typical counts far below this.
const CV_SWEEP_BUDGET: usize = 400;

/// Contiguous blocked cross-validation folds: fold sizes differ by at most
/// one, with earlier folds taking the extra instances.
pub fn block_cv_partition(n: usize, folds: usize) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    if n < folds {
        return Err(Error::config(format!(
            "cannot split {n} instances into {folds} folds"
        )));
    }
    let base = n / folds;
    let rem = n % folds;
    let mut out = Vec::with_capacity(n);
    for f in 0..folds {
        let size = base + usize::from(f < rem);
        out.extend(std::iter::repeat(f).take(size));
    }
    Ok(out)
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Descending sparsity grid anchored at the critical value.
fn lambda_grid(lambda_max: f64, cfg: &SafeConfig) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    let mut grid = log_spaced(lambda_max * cfg.lambda_min_ratio, lambda_max, cfg.lambda_count);
    grid.reverse();
    grid
}

/// Smoothing grid for one dimension, rescaled so its span brackets the size
/// of the data term: values are multiplied by trace(W'W)/trace(penalty).
fn phi_grid(gram_trace: f64, penalty_trace: f64, cfg: &SafeConfig) -> Vec<f64> {
    if penalty_trace <= 0.0 {
        return vec![0.0];
    }
    let scale = gram_trace / penalty_trace;
    log_spaced(cfg.phi_lo * scale, cfg.phi_hi * scale, cfg.phi_count)
}

/// Precomputed per-fold Gram data shared by every tuning cell.
struct CvContext {
    full_g: Array2<f64>,
    full_b: Array1<f64>,
    train_g: Vec<Array2<f64>>,
    train_b: Vec<Array1<f64>>,
    test_w: Vec<Array2<f64>>,
    test_y: Vec<Array1<f64>>,
    folds: usize,
}

impl CvContext {
    fn new(design: &GroupedDesign, y: ArrayView1<f64>, folds: usize) -> Result<Self> {
        let n = design.num_instances();
        let fold_of = block_cv_partition(n, folds)?;
        let full_g = design.w.t().dot(&design.w);
        let full_b = design.w.t().dot(&y);
        let mut train_g = Vec::with_capacity(folds);
        let mut train_b = Vec::with_capacity(folds);
        let mut test_w = Vec::with_capacity(folds);
        let mut test_y = Vec::with_capacity(folds);
        for f in 0..folds {
            let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let wt = design.w.select(Axis(0), &test_rows);
            let yt = Array1::from_iter(test_rows.iter().map(|&i| y[i]));
            let gt = wt.t().dot(&wt);
            let bt = wt.t().dot(&yt);
            train_g.push(&full_g - &gt);
            train_b.push(&full_b - &bt);
            test_w.push(wt);
            test_y.push(yt);
        }
        Ok(CvContext {
            full_g,
            full_b,
            train_g,
            train_b,
            test_w,
            test_y,
            folds,
        })
    }

    fn prediction_error(&self, fold: usize, beta: &Array1<f64>) -> f64 {
        let pred = self.test_w[fold].dot(beta);
        let resid = &self.test_y[fold] - &pred;
        (resid.dot(&resid) / resid.len() as f64).sqrt()
    }
}

/// Initial smooth fit over all groups, smoothing levels by blocked CV.
#[derive(Debug, Clone)]
pub struct InitialFit {
    /// One L x M coefficient matrix per group.
    pub coefficients: Vec<Array2<f64>>,
    pub phi1: f64,
    pub phi2: f64,
}

/// Ridge fit of all groups with the unweighted curvature penalty, smoothing
/// chosen by blocked CV. Expects centered data.
pub fn initial_fit(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    cfg: &SafeConfig,
) -> Result<InitialFit> {
    let design = assemble_design(ds, basis_s, basis_z)?;
    initial_fit_design(&design, ds.y.view(), basis_s, basis_z, cfg)
}

fn initial_fit_design(
    design: &GroupedDesign,
    y: ArrayView1<f64>,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    cfg: &SafeConfig,
) -> Result<InitialFit> {
    let ctx = CvContext::new(design, y, cfg.folds)?;
    let (l, m) = (design.l_basis, design.m_basis);
    let gs = design.group_size();
    let k = design.num_groups;
    let s_block = s_curvature_block(basis_s.dd_gram(), m);
    let z_block = z_curvature_block(l, basis_z.dd_gram());
    let gram_trace = ctx.full_g.diag().sum();
    let phi1s = phi_grid(gram_trace, s_block.diag().sum() * k as f64, cfg);
    let phi2s = phi_grid(gram_trace, z_block.diag().sum() * k as f64, cfg);

    let cells: Vec<(f64, f64)> = phi1s
        .iter()
        .flat_map(|&p1| phi2s.iter().map(move |&p2| (p1, p2)))
        .collect();
    let scores: Vec<Result<f64>> = par::map_slice(&cells, |&(p1, p2)| {
        let mut sum = 0.0;
        for f in 0..ctx.folds {
            let beta = ridge_beta_gram(
                &ctx.train_g[f],
                &ctx.train_b[f],
                &s_block,
                &z_block,
                p1,
                p2,
                gs,
                k,
            )?;
            sum += ctx.prediction_error(f, &beta);
        }
        Ok(sum / ctx.folds as f64)
    });

    // Minimum PE; ties prefer the smoother (larger) cell.
    let mut best: Option<(f64, f64, f64)> = None;
    for (cell, score) in cells.iter().zip(scores) {
        let pe = score?;
        let better = match best {
            None => true,
            Some((bpe, bp1, bp2)) => {
                pe < bpe || (pe == bpe && (cell.0, cell.1) > (bp1, bp2))
            }
        };
        if better {
            best = Some((pe, cell.0, cell.1));
        }
    }
    let (_, phi1, phi2) = best.unwrap();
    let beta = ridge_beta_gram(&ctx.full_g, &ctx.full_b, &s_block, &z_block, phi1, phi2, gs, k)?;
    let coefficients = (0..k)
        .map(|ki| reshape_block(&beta.slice(s![ki * gs..(ki + 1) * gs]), l, m))
        .collect();
    Ok(InitialFit {
        coefficients,
        phi1,
        phi2,
    })
}

fn reshape_block(block: &ArrayView1<f64>, l: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((l, m), |(li, mi)| block[li * m + mi])
}

/// Outcome of a cross-validated tuning run.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub tuning: Tuning,
    pub table: Vec<CvRecord>,
}

/// Tune `(lambda, phi1, phi2)` for the weighted group LASSO by blocked CV.
/// Expects centered data; `weights` stay fixed across folds.
pub fn cv_tune(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    weights: &AdaptiveWeights,
    cfg: &SafeConfig,
) -> Result<TuneOutcome> {
    let design = assemble_design(ds, basis_s, basis_z)?;
    cv_tune_design(&design, ds.y.view(), basis_s, basis_z, weights, cfg)
}

fn cv_tune_design(
    design: &GroupedDesign,
    y: ArrayView1<f64>,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    weights: &AdaptiveWeights,
    cfg: &SafeConfig,
) -> Result<TuneOutcome> {
    let ctx = CvContext::new(design, y, cfg.folds)?;
    let gs = design.group_size();
    let k = design.num_groups;
    let (l, m) = (design.l_basis, design.m_basis);
    let s_block = s_curvature_block(basis_s.dd_gram(), m);
    let z_block = z_curvature_block(l, basis_z.dd_gram());
    let gram_trace = ctx.full_g.diag().sum();
    let phi1s = phi_grid(gram_trace, s_block.diag().sum() * k as f64, cfg);
    let phi2s = phi_grid(gram_trace, z_block.diag().sum() * k as f64, cfg);
    let cells: Vec<(f64, f64)> = phi1s
        .iter()
        .flat_map(|&p1| phi2s.iter().map(move |&p2| (p1, p2)))
        .collect();

    let per_cell: Vec<Result<Vec<CvRecord>>> = par::map_slice(&cells, |&(p1, p2)| {
        let pen_cfg = PenaltyConfig {
            lambda: 0.0,
            phi1: p1,
            phi2: p2,
            f: weights.f.clone(),
            g: weights.g.clone(),
            h: weights.h.clone(),
            d_exponent: cfg.d_exponent,
        };
        let pen = build_group_penalty(&pen_cfg, basis_s.dd_gram(), basis_z.dd_gram())?;

        // Sparsity grid anchored at the full-data critical value of this cell.
        let (_, full_bw) = reparametrize_b_only(&ctx.full_b, &pen, gs, k);
        let lmax = group_norm_max(&full_bw, gs, k) * 2.0;
        let lambdas = lambda_grid(lmax, cfg);

        // Warm-started descent over the sparsity grid. Individual grid
        // points run under a bounded sweep budget: a point that fails to
        // converge is still scored (its prediction error is what it is),
        // which only affects pathologically conditioned cells that lose the
        // tuning comparison anyway.
        let budget = cfg.max_iter.min(CV_SWEEP_BUDGET);
        let mut pe = vec![vec![0.0f64; ctx.folds]; lambdas.len()];
        for f in 0..ctx.folds {
            let (gw, bw) = reparametrize_gram(&ctx.train_g[f], &ctx.train_b[f], &pen, gs);
            let gram = GramProblem {
                g: gw,
                b: bw,
                yty: 0.0, // objective not needed on this path
                group_size: gs,
                num_groups: k,
            };
            let eta = gram.majorizers();
            let mut warm: Option<Array1<f64>> = None;
            for (li, &lambda) in lambdas.iter().enumerate() {
                let (beta_t, _, _) = gram.solve(lambda, cfg.tol, budget, warm.as_ref(), &eta);
                let beta = backmap_coefficients(&beta_t.view(), &pen, gs);
                pe[li][f] = ctx.prediction_error(f, &beta);
                warm = Some(beta_t);
            }
        }
        Ok(lambdas
            .iter()
            .enumerate()
            .map(|(li, &lambda)| {
                let mean = pe[li].iter().sum::<f64>() / ctx.folds as f64;
                let var = pe[li]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / (ctx.folds - 1) as f64;
                CvRecord {
                    lambda,
                    phi1: p1,
                    phi2: p2,
                    mean_pe: mean,
                    sd_pe: var.sqrt(),
                }
            })
            .collect())
    });

    let mut table = Vec::new();
    for rows in per_cell {
        table.extend(rows?);
    }
    let chosen = select_from_table(&table, cfg)?;
    Ok(TuneOutcome {
        tuning: chosen,
        table,
    })
}

fn reparametrize_b_only(
    b: &Array1<f64>,
    pen: &crate::penalty::GroupPenalty,
    gs: usize,
    k: usize,
) -> ((), Array1<f64>) {
    let mut out = Array1::zeros(b.len());
    for ki in 0..k {
        let bk = b.slice(s![ki * gs..(ki + 1) * gs]);
        out.slice_mut(s![ki * gs..(ki + 1) * gs])
            .assign(&pen.r_inv[ki].dot(&bk));
    }
    ((), out)
}

fn group_norm_max(v: &Array1<f64>, gs: usize, k: usize) -> f64 {
    (0..k)
        .map(|ki| {
            let b = v.slice(s![ki * gs..(ki + 1) * gs]);
            b.dot(&b).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Minimum mean PE with ties broken toward the sparser and smoother cell
/// (largest lambda, then phi1, then phi2). With the one-standard-error rule,
/// the largest-lambda configuration within one SE of the minimum is chosen.
fn select_from_table(table: &[CvRecord], cfg: &SafeConfig) -> Result<Tuning> {
    if table.is_empty() {
        return Err(Error::config("empty tuning table"));
    }
    let mut best = &table[0];
    for row in &table[1..] {
        let better = row.mean_pe < best.mean_pe
            || (row.mean_pe == best.mean_pe
                && (row.lambda, row.phi1, row.phi2) > (best.lambda, best.phi1, best.phi2));
        if better {
            best = row;
        }
    }
    if !cfg.one_se {
        return Ok(Tuning {
            lambda: best.lambda,
            phi1: best.phi1,
            phi2: best.phi2,
        });
    }
    let threshold = best.mean_pe + best.sd_pe / (cfg.folds as f64).sqrt();
    let mut chosen = best;
    for row in table {
        if row.mean_pe <= threshold
            && (row.lambda, row.phi1, row.phi2) > (chosen.lambda, chosen.phi1, chosen.phi2)
        {
            chosen = row;
        }
    }
    Ok(Tuning {
        lambda: chosen.lambda,
        phi1: chosen.phi1,
        phi2: chosen.phi2,
    })
}

/// Solve the weighted group LASSO at fixed tuning on the full data and map
/// the solution back to original coordinates. The solve descends a warm-
/// started geometric path from the critical value down to the target, which
/// reaches the target solution in far fewer total sweeps than a cold start
/// on ill-conditioned cells. A final solve that exhausts its budget is used
/// as-is (flagged through the returned bool).
fn penalized_solve(
    design: &GroupedDesign,
    y: ArrayView1<f64>,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    weights: &AdaptiveWeights,
    tuning: Tuning,
    cfg: &SafeConfig,
) -> Result<(Array1<f64>, Vec<usize>, bool)> {
    let pen_cfg = PenaltyConfig {
        lambda: tuning.lambda,
        phi1: tuning.phi1,
        phi2: tuning.phi2,
        f: weights.f.clone(),
        g: weights.g.clone(),
        h: weights.h.clone(),
        d_exponent: cfg.d_exponent,
    };
    let pen = build_group_penalty(&pen_cfg, basis_s.dd_gram(), basis_z.dd_gram())?;
    let gs = design.group_size();
    let base = GramProblem::from_design(design, y);
    let (gw, bw) = reparametrize_gram(&base.g, &base.b, &pen, gs);
    let gram = GramProblem {
        g: gw,
        b: bw,
        yty: base.yty,
        group_size: gs,
        num_groups: design.num_groups,
    };
    let eta = gram.majorizers();
    let lmax = gram.lambda_max();
    let mut warm: Option<Array1<f64>> = None;
    if tuning.lambda > 0.0 && tuning.lambda < lmax {
        let mut level = lmax * 0.65;
        while level > tuning.lambda * 1.0001 {
            let (beta_t, _, _) = gram.solve(level, cfg.tol, CV_SWEEP_BUDGET, warm.as_ref(), &eta);
            warm = Some(beta_t);
            level *= 0.65;
        }
    }
    let (beta_t, _, converged) = gram.solve(tuning.lambda, cfg.tol, cfg.max_iter, warm.as_ref(), &eta);
    let beta = backmap_coefficients(&beta_t.view(), &pen, gs);
    let active: Vec<usize> = (0..design.num_groups)
        .filter(|&ki| {
            let b = beta.slice(s![ki * gs..(ki + 1) * gs]);
            b.iter().any(|&v| v != 0.0)
        })
        .collect();
    Ok((beta, active, converged))
}

/// Post-selection refit: smooth ridge on the given (already selection-
/// restricted) dataset, smoothing levels by blocked CV.
#[derive(Debug, Clone)]
pub struct PostFit {
    pub coefficients: Vec<Array2<f64>>,
    pub phi1: f64,
    pub phi2: f64,
    /// Fitted values in original units.
    pub fitted: Array1<f64>,
    pub sigma2: f64,
    pub edf: f64,
}

pub fn post_fit(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    cfg: &SafeConfig,
) -> Result<PostFit> {
    let (centered, stats) = center(ds);
    let design = assemble_design(&centered, basis_s, basis_z)?;
    let init = initial_fit_design(&design, centered.y.view(), basis_s, basis_z, cfg)?;
    // Final fit at the chosen smoothing, with variance bookkeeping.
    let (l, m) = (design.l_basis, design.m_basis);
    let s_block = s_curvature_block(basis_s.dd_gram(), m);
    let z_block = z_curvature_block(l, basis_z.dd_gram());
    let ridge = crate::solver::smooth_ridge_fit(
        &design,
        &s_block,
        &z_block,
        init.phi1,
        init.phi2,
        centered.y.view(),
    )?;
    let fitted = design.w.dot(&ridge.beta) + stats.y_mean;
    let gs = design.group_size();
    let coefficients = (0..design.num_groups)
        .map(|ki| reshape_block(&ridge.beta.slice(s![ki * gs..(ki + 1) * gs]), l, m))
        .collect();
    Ok(PostFit {
        coefficients,
        phi1: init.phi1,
        phi2: init.phi2,
        fitted,
        sigma2: ridge.sigma2,
        edf: ridge.edf,
    })
}

/// Evaluate a coefficient surface `gamma(s, z) = psi(s)' B tau(z)` on a grid.
pub fn evaluate_surface(
    b: &Array2<f64>,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    s_points: &[f64],
    z_points: &[f64],
) -> Result<Array2<f64>> {
    if b.nrows() != basis_s.num_basis() || b.ncols() != basis_z.num_basis() {
        return Err(Error::config(format!(
            "coefficient matrix is {}x{} but bases are {} and {}",
            b.nrows(),
            b.ncols(),
            basis_s.num_basis(),
            basis_z.num_basis()
        )));
    }
    let es = basis_s.evaluate(s_points)?;
    let ez = basis_z.evaluate(z_points)?;
    Ok(es.dot(b).dot(&ez.t()))
}

/// Run the full two-stage selection on a raw dataset.
pub fn safe_select(
    ds: &FunctionalDataset,
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    cfg: &SafeConfig,
) -> Result<SelectionResult> {
    let n = ds.num_instances();
    let (centered, stats) = center(ds);
    let design = assemble_design(&centered, basis_s, basis_z)?;
    let y = centered.y.view();

    // Stage 1: weights from the smooth initial fit, then tuned selection.
    let init = initial_fit_design(&design, y, basis_s, basis_z, cfg)?;
    let weights1 = stage_weights(&init.coefficients, basis_s, basis_z, cfg);
    let tune1 = cv_tune_design(&design, y, basis_s, basis_z, &weights1, cfg)?;
    let (beta1, stage1_set, converged1) =
        penalized_solve(&design, y, basis_s, basis_z, &weights1, tune1.tuning, cfg)?;
    if stage1_set.is_empty() {
        return Ok(SelectionResult::intercept_only(
            n,
            stats,
            tune1.table,
            tune1.tuning,
        ));
    }

    // Stage 2: weights from the stage-1 estimates, restricted to survivors.
    let gs = design.group_size();
    let (l, m) = (design.l_basis, design.m_basis);
    let b1: Vec<Array2<f64>> = stage1_set
        .iter()
        .map(|&ki| reshape_block(&beta1.slice(s![ki * gs..(ki + 1) * gs]), l, m))
        .collect();
    let weights2 = stage_weights(&b1, basis_s, basis_z, cfg);
    let centered2 = centered.restrict_predictors(&stage1_set);
    let design2 = assemble_design(&centered2, basis_s, basis_z)?;
    let tune2 = cv_tune_design(&design2, y, basis_s, basis_z, &weights2, cfg)?;
    let (_, active2, converged2) =
        penalized_solve(&design2, y, basis_s, basis_z, &weights2, tune2.tuning, cfg)?;
    let stage2_set: Vec<usize> = active2.iter().map(|&slot| stage1_set[slot]).collect();
    if stage2_set.is_empty() {
        let mut result =
            SelectionResult::intercept_only(n, stats, tune1.table, tune1.tuning);
        result.stage1_set = stage1_set;
        result.stage2_tuning = tune2.tuning;
        result.stage2_cv = tune2.table;
        return Ok(result);
    }

    // Post-selection smooth refit on the selected groups.
    let restricted = ds.restrict_predictors(&stage2_set);
    let post = post_fit(&restricted, basis_s, basis_z, cfg)?;
    let final_b = stage2_set
        .iter()
        .zip(post.coefficients.iter())
        .map(|(&ki, b)| (ki, b.clone()))
        .collect();
    Ok(SelectionResult {
        stage1_set,
        stage2_set,
        stage1_tuning: tune1.tuning,
        stage2_tuning: tune2.tuning,
        stage1_cv: tune1.table,
        stage2_cv: tune2.table,
        post_phi: (post.phi1, post.phi2),
        final_b,
        fitted: post.fitted,
        sigma2: post.sigma2,
        edf: post.edf,
        centering: stats,
        stage_fits_converged: converged1 && converged2,
    })
}

fn stage_weights(
    coefficients: &[Array2<f64>],
    basis_s: &BasisSystem,
    basis_z: &BasisSystem,
    cfg: &SafeConfig,
) -> AdaptiveWeights {
    let mut w = adaptive_weights(
        coefficients,
        basis_s.dd_gram(),
        basis_z.dd_gram(),
        cfg.d_exponent,
        cfg.weight_cap,
    );
    if cfg.semi_adaptive {
        w.g.iter_mut().for_each(|v| *v = 1.0);
        w.h.iter_mut().for_each(|v| *v = 1.0);
    }
    w
}
