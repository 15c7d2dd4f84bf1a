use pnprecon::denoiser::{DenoiserHandle, LinearMap};
use pnprecon::forward::Problem;
use pnprecon::image::ComplexImage;
use pnprecon::mask::make_cartesian_mask;
use pnprecon::phantom::{make_phantom, PhantomKind};
use pnprecon::solvers::{solve, Algorithm, SolverConfig, ZetaRule};
use pnprecon::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(side: usize, seed: u64) -> Problem {
    let x0 = make_phantom((side, side), &PhantomKind::Blocks { seed }).unwrap();
    let mask = make_cartesian_mask((side, side), 4.0, 0.08, seed).unwrap();
    Problem::simulate(x0, mask, 40.0, seed + 1000).unwrap()
}

fn max_rel_gap(a: &ComplexImage, b: &ComplexImage) -> f64 {
    a.distance_sqr(b).sqrt() / a.norm().max(f64::MIN_POSITIVE)
}

fn iterates(prob: &Problem, cfg: &SolverConfig) -> Vec<ComplexImage> {
    let mut cfg = cfg.clone();
    cfg.keep_iterates = true;
    solve(prob, &cfg)
        .unwrap()
        .trace
        .records
        .into_iter()
        .map(|r| r.estimate.unwrap())
        .collect()
}

#[test]
fn admm_pr_matches_frozen_vamp_per_iterate() {
    for seed in 0..3 {
        let prob = problem(32, seed);
        let mut pr = SolverConfig::new(Algorithm::AdmmPr, DenoiserHandle::wavelet_soft(1.0));
        pr.max_iters = 10;
        pr.admm_gamma = 30.0;
        let mut frozen = pr.clone();
        frozen.algorithm = Algorithm::DdVamp;
        frozen.freeze_precisions = true;
        frozen.vamp_gamma2_init = 30.0;
        for (a, b) in iterates(&prob, &pr).iter().zip(&iterates(&prob, &frozen)) {
            assert!(max_rel_gap(a, b) <= 1e-10);
        }
    }
}

#[test]
fn switch_at_zero_is_plain_dd_vamp() {
    let prob = problem(32, 4);
    let mut pp = SolverConfig::new(Algorithm::DdVampPp, DenoiserHandle::wavelet_soft(1.0));
    pp.max_iters = 25;
    pp.admm_gamma = 10.0;
    let mut vamp = pp.clone();
    vamp.algorithm = Algorithm::DdVamp;
    vamp.vamp_gamma2_init = 10.0;
    let a = solve(&prob, &pp).unwrap();
    let b = solve(&prob, &vamp).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert!(a.trace.same_values(&b.trace));
    assert_eq!(a.trace.switch_iteration(), None);
}

#[test]
fn switch_at_the_end_is_admm_pr() {
    let prob = problem(32, 5);
    let mut pp = SolverConfig::new(Algorithm::DdVampPp, DenoiserHandle::wavelet_soft(1.0));
    pp.max_iters = 15;
    pp.t_switch = 15;
    pp.admm_gamma = 100.0;
    let mut pr = pp.clone();
    pr.algorithm = Algorithm::AdmmPr;
    for (a, b) in iterates(&prob, &pp).iter().zip(&iterates(&prob, &pr)) {
        assert!(max_rel_gap(a, b) <= 1e-10);
    }
    let out = solve(&prob, &pp).unwrap();
    assert!(out.trace.records.iter().all(|r| r.denoiser_calls == 1));
}

/// Real symmetric `0.05 I + 0.3 G G^T / lambda_max(G G^T)`, eigenvalues in
/// [0.05, 0.35]. A mean eigenvalue below `M/N` lets the precisions settle.
fn psd_map(n: usize, seed: u64) -> LinearMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut ggt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            ggt[i * n + j] = (0..n).map(|k| g[i * n + k] * g[j * n + k]).sum();
        }
    }
    // power iteration for the largest eigenvalue
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ggt[i * n + j] * v[j]).sum()).collect();
        lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / lambda).collect();
    }
    let matrix = (0..n * n)
        .map(|k| 0.3 * ggt[k] / lambda + if k / n == k % n { 0.05 } else { 0.0 })
        .collect();
    LinearMap::Dense { n, matrix }
}

#[test]
fn damping_leaves_the_fixed_point_unchanged() {
    let prob = problem(16, 6);
    let den = DenoiserHandle::linear(psd_map(256, 7));
    let mut fixed_points = Vec::new();
    for zeta in [1.0, 0.5] {
        for theta in [1.0, 0.5] {
            let mut cfg = SolverConfig::new(Algorithm::DdVamp, den.clone());
            cfg.max_iters = 400;
            cfg.vamp_zeta_rule = ZetaRule::Fixed(zeta);
            cfg.vamp_theta = theta;
            fixed_points.push(solve(&prob, &cfg).unwrap().estimate);
        }
    }
    for x in &fixed_points[1..] {
        assert!(
            max_rel_gap(&fixed_points[0], x) <= 1e-6,
            "{}",
            max_rel_gap(&fixed_points[0], x)
        );
    }
}

#[test]
fn runs_are_deterministic() {
    let prob = problem(32, 8);
    for alg in [Algorithm::DAmp, Algorithm::Admm, Algorithm::DdVamp, Algorithm::DdVampPp] {
        let mut cfg = SolverConfig::new(alg, DenoiserHandle::wavelet_soft(1.0));
        cfg.max_iters = 12;
        cfg.t_switch = 4;
        cfg.probes = 2;
        cfg.seed = 99;
        let a = solve(&prob, &cfg);
        let b = solve(&prob, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.estimate, b.estimate);
                assert!(a.trace.same_values(&b.trace));
            }
            (Err(Error::Diverged(a)), Err(Error::Diverged(b))) => {
                assert_eq!(a.iteration, b.iteration);
                assert!(a.trace.same_values(&b.trace));
            }
            (a, b) => panic!("{alg}: {:?} vs {:?}", a.err(), b.err()),
        }
    }
}

#[test]
fn denoiser_calls_per_iteration() {
    let prob = problem(32, 9);
    let expect = [
        (Algorithm::DAmp, 1, 2),
        (Algorithm::Admm, 1, 1),
        (Algorithm::AdmmPr, 1, 1),
        (Algorithm::DdVamp, 1, 2),
        (Algorithm::DdVamp, 4, 5),
    ];
    for (alg, probes, calls) in expect {
        let mut cfg = SolverConfig::new(alg, DenoiserHandle::wavelet_soft(1.0));
        cfg.max_iters = 3;
        cfg.probes = probes;
        let trace = match solve(&prob, &cfg) {
            Ok(r) => r.trace,
            Err(Error::Diverged(d)) => d.trace,
            Err(e) => panic!("{e}"),
        };
        assert!(!trace.is_empty());
        assert!(
            trace.records.iter().all(|r| r.denoiser_calls == calls),
            "{alg} with {probes} probes"
        );
    }
}

#[test]
fn amp_step_scaling_changes_the_run() {
    // beta = N/M is the default for a masked unitary DFT; beta = 1 is the
    // heuristic damped variant
    let prob = problem(32, 10);
    let mut cfg = SolverConfig::new(Algorithm::DAmp, DenoiserHandle::wavelet_soft(1.0));
    cfg.max_iters = 5;
    cfg.amp_beta = Some(1.0);
    let damped = solve(&prob, &cfg).unwrap();
    cfg.amp_beta = None;
    let default = match solve(&prob, &cfg) {
        Ok(r) => r.trace,
        Err(Error::Diverged(d)) => d.trace,
        Err(e) => panic!("{e}"),
    };
    let m = prob.y.len() as f64;
    let y2: f64 = prob.y.iter().map(|c| c.norm_sqr()).sum();
    let ratio = 1024.0 / m;
    assert!((damped.trace.records[0].tau.unwrap() - y2 / m).abs() <= 1e-12 * y2 / m);
    assert!((default.records[0].tau.unwrap() - ratio * ratio * y2 / m).abs() <= 1e-9 * y2 / m);
}
