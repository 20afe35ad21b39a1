use ndarray::{Array1, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use safe_glasso::basis::{BasisSpec, BasisSystem};
use safe_glasso::design::FunctionalDataset;
use safe_glasso::selection::{safe_select, SafeConfig};

fn synthetic_ds(n: usize, k: usize, r: usize, active: usize, noise: f64, seed: u64) -> FunctionalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((k, n, r), |_| rng.random_range(-1.0..1.0));
    let z = Array1::from_shape_fn(n, |_| rng.random_range(-0.95..0.95));
    let s_grid = Array1::from_shape_fn(r, |i| i as f64 / (r - 1) as f64);
    let weights = safe_glasso::design::riemann_weights(s_grid.view()).unwrap();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut mu = 0.0;
        for ki in 0..active {
            let amp = 1.0 + ki as f64;
            for ri in 0..r {
                let sgn = s_grid[ri];
                let gamma = amp * (1.0 + 0.6 * z[i] + (std::f64::consts::PI * sgn).cos());
                mu += weights[ri] * x[[ki, i, ri]] * gamma;
            }
        }
        y[i] = mu + noise * rng.random_range(-1.0..1.0);
    }
    FunctionalDataset::new(y, z, x, s_grid).unwrap()
}

#[test]
fn probe_recover() {
    let ds = synthetic_ds(220, 4, 12, 2, 0.02, 5);
    let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
    let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
    let cfg = SafeConfig { lambda_count: 40, phi_count: 3, ..SafeConfig::default() };
    let t0 = std::time::Instant::now();
    let res = safe_select(&ds, &bs, &bz, &cfg).unwrap();
    println!("recover: elapsed {:?} stage1 {:?} stage2 {:?} t1 {:?} t2 {:?}",
        t0.elapsed(), res.stage1_set, res.stage2_set, res.stage1_tuning, res.stage2_tuning);
}

#[test]
fn probe_noise() {
    let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 4)).unwrap();
    let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
    let cfg = SafeConfig { lambda_count: 30, phi_count: 2, ..SafeConfig::default() };
    for seed in 0..6 {
        let mut ds = synthetic_ds(60, 3, 8, 0, 1.0, 1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        ds.y = Array1::from_shape_fn(60, |_| rng.random_range(-1.0..1.0));
        let t0 = std::time::Instant::now();
        match safe_select(&ds, &bs, &bz, &cfg) {
            Ok(res) => println!("seed {seed}: {:?} stage1 {:?}", t0.elapsed(), res.stage1_set),
            Err(e) => println!("seed {seed}: ERROR {e}"),
        }
    }
}

#[test]
fn probe_path_iters() {
    use safe_glasso::solver::*;
    let (design, y) = synthetic_design(220, 4, 20, 42);
    let problem = GroupProblem::new(&design, y.view()).unwrap();
    let lmax = lambda_max(&problem);
    let grid: Vec<f64> = (0..40).map(|i| lmax * (1e-4f64).powf(i as f64 / 39.0)).collect();
    let t0 = std::time::Instant::now();
    let fits = solution_path(&problem, &grid, 1e-8, 10_000).unwrap();
    println!("path elapsed {:?}", t0.elapsed());
    for (i, f) in fits.iter().enumerate() {
        if i % 4 == 0 || !f.converged || f.iterations > 500 {
            println!("  lambda[{i}]={:.4e} iters={} conv={} active={}",
                grid[i], f.iterations, f.converged,
                f.active.iter().filter(|&&a| a).count());
        }
    }
}

#[test]
fn probe_stage2_by_hand() {
    use safe_glasso::design::*;
    use safe_glasso::penalty::*;
    use safe_glasso::selection::*;
    use safe_glasso::solver::*;
    let ds = synthetic_ds(220, 4, 12, 2, 0.02, 5);
    let bs = BasisSystem::new(BasisSpec::cubic(0.0, 1.0, 5)).unwrap();
    let bz = BasisSystem::new(BasisSpec::cubic(-1.0, 1.0, 4)).unwrap();
    let cfg = SafeConfig { lambda_count: 40, phi_count: 3, ..SafeConfig::default() };
    let (centered, _) = center(&ds);
    let init = initial_fit(&centered, &bs, &bz, &cfg).unwrap();
    let w1 = adaptive_weights(&init.coefficients, bs.dd_gram(), bz.dd_gram(), 1.0, 1e8);
    println!("w1.f {:?}\nw1.g {:?}\nw1.h {:?}", w1.f, w1.g, w1.h);
    let tune1 = cv_tune(&centered, &bs, &bz, &w1, &cfg).unwrap();
    println!("tune1 {:?}", tune1.tuning);
    // final stage-1 style solve via public api
    let pen_cfg = PenaltyConfig { lambda: tune1.tuning.lambda, phi1: tune1.tuning.phi1, phi2: tune1.tuning.phi2,
        f: w1.f.clone(), g: w1.g.clone(), h: w1.h.clone(), d_exponent: 1.0 };
    let pen = build_group_penalty(&pen_cfg, bs.dd_gram(), bz.dd_gram()).unwrap();
    let design = assemble_design(&centered, &bs, &bz).unwrap();
    let tdesign = reparametrize(&design, &pen).unwrap();
    let problem = GroupProblem::new(&tdesign, centered.y.view()).unwrap();
    let lmax = lambda_max(&problem);
    println!("lmax={lmax:.4e} target lambda={:.4e} ratio={:.3e}", tune1.tuning.lambda, tune1.tuning.lambda/lmax);
    let t0 = std::time::Instant::now();
    let fit = group_lasso_gmd(&problem, tune1.tuning.lambda, 1e-8, 10_000, None).unwrap();
    println!("cold solve: {:?} iters={} conv={} active={:?}", t0.elapsed(), fit.iterations, fit.converged, fit.active);
    // warm path approach
    let mut grid: Vec<f64> = Vec::new();
    let mut v = lmax;
    while v > tune1.tuning.lambda * 1.0001 { grid.push(v); v *= 0.7; }
    grid.push(tune1.tuning.lambda);
    let t0 = std::time::Instant::now();
    let path = solution_path(&problem, &grid, 1e-8, 10_000).unwrap();
    let last = path.last().unwrap();
    println!("warm path: {:?} total_iters={} last conv={} ", t0.elapsed(),
        path.iter().map(|f| f.iterations).sum::<usize>(), last.converged);
}
