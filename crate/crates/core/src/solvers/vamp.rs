use std::time::Instant;

use super::{diverged, stream_seed, Algorithm, Recon, SolverConfig, SolverTrace, TraceEvent, TraceRecord, ZetaRule};
use crate::denoiser::{mc_divergence_at, Denoiser};
use crate::error::Result;
use crate::forward::Problem;
use crate::image::ComplexImage;
use crate::linear::{clamp_alpha, linear_estimate, linear_stage};
use crate::metrics::nmse;

const LINEAR_PROBE_STREAM: u64 = 0x6c69_6e65_6172;

/// Damping factor for the VAMP state. The adaptive rule is
/// `2 / (1 + max(gamma1/gamma2_bar, gamma2_bar/gamma1))`; `alpha1` and
/// `alpha2` are accepted for signature symmetry with the `2 min(alpha1, alpha2)`
/// form, which is only reported as a diagnostic.
pub fn compute_zeta(_alpha1: f64, _alpha2: f64, gamma1: f64, gamma2_bar: f64, rule: ZetaRule) -> f64 {
    match rule {
        ZetaRule::Fixed(z) => z,
        ZetaRule::Adaptive => {
            let ratio = gamma1 / gamma2_bar;
            2.0 / (1.0 + ratio.max(1.0 / ratio))
        }
    }
}

/// Damped denoising VAMP from `r2 = cfg.vamp_r2_init` (zero by default) and
/// `gamma2 = cfg.vamp_gamma2_init`.
///
/// With `cfg.freeze_precisions` every iteration runs with
/// `alpha1 = alpha2 = 1/2` and `zeta = 1`, so `gamma1 = gamma2` stay at their
/// initial value and the recursion is ADMM-PR in the variable `r2 = v - u`.
pub fn run_dd_vamp(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    cfg.validate()?;
    let (h, w) = prob.image_shape();
    let r2 = match &cfg.vamp_r2_init {
        Some(r) => {
            r.check_shape((h, w))?;
            r.clone()
        }
        None => ComplexImage::zeros(h, w),
    };
    let frozen = if cfg.freeze_precisions { cfg.max_iters } else { 0 };
    vamp_core(prob, cfg, Algorithm::DdVamp, r2, cfg.vamp_gamma2_init, frozen)
}

/// DD-VAMP warm-started by `cfg.t_switch` frozen (ADMM-PR) iterations at
/// precision `cfg.admm_gamma`, after which the precisions are released. The
/// first released iteration carries [`TraceEvent::Switch`].
pub fn run_dd_vamp_pp(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    cfg.validate()?;
    let (h, w) = prob.image_shape();
    vamp_core(
        prob,
        cfg,
        Algorithm::DdVampPp,
        ComplexImage::zeros(h, w),
        cfg.admm_gamma,
        cfg.t_switch,
    )
}

fn vamp_core(
    prob: &Problem,
    cfg: &SolverConfig,
    algorithm: Algorithm,
    mut r2: ComplexImage,
    mut gamma2: f64,
    frozen_iters: usize,
) -> Result<Recon> {
    let start = Instant::now();
    let den = &cfg.denoiser;
    let guards = cfg.guards;
    let probe_seed = stream_seed(cfg.seed, 0);
    let mut alpha1_prev: Option<f64> = None;
    let mut trace = SolverTrace::default();
    let mut last_x1: Option<ComplexImage> = None;

    for t in 0..cfg.max_iters {
        let iteration = t + 1;
        let frozen = t < frozen_iters;
        let mut clamped = false;

        // linear stage and its Onsager correction
        let (x2, alpha2) = if frozen {
            (linear_estimate(&r2, gamma2, prob)?, 0.5)
        } else {
            let (lin, c) = linear_stage(&r2, gamma2, prob, stream_seed(cfg.seed ^ LINEAR_PROBE_STREAM, t as u64))?;
            clamped |= c;
            (lin.x2, lin.alpha2)
        };
        let r1 = x2.lincomb(1.0 / (1.0 - alpha2), &r2, -alpha2 / (1.0 - alpha2));
        let gamma1 = gamma2 * (1.0 - alpha2) / alpha2;
        if !(gamma1 >= guards.gamma_min && gamma1 <= guards.gamma_max) {
            let reason = format!(
                "gamma1 = {gamma1:.3e} left [{:.0e}, {:.0e}]",
                guards.gamma_min, guards.gamma_max
            );
            return Err(diverged(algorithm, iteration, reason, trace, last_x1));
        }

        // denoising stage
        let tau1 = 1.0 / gamma1;
        let x1 = den.denoise(&r1, tau1)?;
        let mut calls = 1;
        let alpha1 = if frozen {
            0.5
        } else {
            let raw = match den.divergence_at(&r1, tau1, cfg.probe_kind) {
                Some(a) => a,
                None => {
                    let est = mc_divergence_at(den, &r1, &x1, tau1, &cfg.probing(probe_seed))?;
                    calls += cfg.probes;
                    est.alpha_bar
                }
            };
            let (bar, c) = clamp_alpha(raw);
            clamped |= c;
            let damped = match alpha1_prev {
                None => bar,
                Some(prev) => (cfg.vamp_theta * bar.sqrt() + (1.0 - cfg.vamp_theta) * prev.sqrt()).powi(2),
            };
            let (a, c) = clamp_alpha(damped);
            clamped |= c;
            alpha1_prev = Some(a);
            a
        };
        let r2_bar = x1.lincomb(1.0 / (1.0 - alpha1), &r1, -alpha1 / (1.0 - alpha1));
        let gamma2_bar = gamma1 * (1.0 - alpha1) / alpha1;

        // damping
        let zeta = if frozen {
            1.0
        } else {
            compute_zeta(alpha1, alpha2, gamma1, gamma2_bar, cfg.vamp_zeta_rule)
        };
        let gamma2_used = gamma2;
        if zeta == 1.0 {
            r2 = r2_bar;
            gamma2 = gamma2_bar;
        } else {
            r2 = r2_bar.lincomb(zeta, &r2, 1.0 - zeta);
            gamma2 = (zeta / gamma2_bar.sqrt() + (1.0 - zeta) / gamma2.sqrt()).powi(-2);
        }
        if !r2.is_finite() || !gamma2.is_finite() {
            return Err(diverged(
                algorithm,
                iteration,
                "VAMP state is not finite".into(),
                trace,
                Some(x1),
            ));
        }

        trace.records.push(TraceRecord {
            iteration,
            nmse_db: prob.x0.as_ref().map(|x0| nmse(&x1, x0)).transpose()?,
            gamma1: Some(gamma1),
            gamma2: Some(gamma2_used),
            alpha1: Some(alpha1),
            alpha2: Some(alpha2),
            zeta: Some(zeta),
            zeta_alpha_form: Some(2.0 * alpha1.min(alpha2)),
            tau: Some(tau1),
            input_mse: prob.x0.as_ref().map(|x0| r1.distance_sqr(x0) / r1.len() as f64),
            seconds: start.elapsed().as_secs_f64(),
            denoiser_calls: calls,
            alpha_clamped: clamped,
            event: (frozen_iters > 0 && t == frozen_iters).then_some(TraceEvent::Switch),
            estimate: cfg.keep_iterates.then(|| x1.clone()),
        });
        last_x1 = Some(x1);
    }
    let estimate = last_x1.expect("max_iters >= 1");
    Ok(Recon { estimate, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserHandle, LinearMap};
    use crate::mask::make_cartesian_mask;
    use crate::phantom::{make_phantom, PhantomKind};
    use proptest::prelude::*;

    fn instance(seed: u64) -> Problem {
        let x0 = make_phantom((16, 16), &PhantomKind::SheppLogan).unwrap();
        let mask = make_cartesian_mask((16, 16), 4.0, 0.08, seed).unwrap();
        Problem::simulate(x0, mask, 40.0, seed).unwrap()
    }

    #[test]
    fn zeta_reference_values() {
        assert_eq!(compute_zeta(0.3, 0.4, 2.0, 2.0, ZetaRule::Adaptive), 1.0);
        assert!((compute_zeta(0.3, 0.4, 3.0, 1.0, ZetaRule::Adaptive) - 0.5).abs() < 1e-15);
        assert!((compute_zeta(0.3, 0.4, 1.0, 3.0, ZetaRule::Adaptive) - 0.5).abs() < 1e-15);
        assert_eq!(compute_zeta(0.3, 0.4, 1.0, 3.0, ZetaRule::Fixed(0.7)), 0.7);
    }

    proptest! {
        #[test]
        fn adaptive_zeta_in_unit_interval(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let z = compute_zeta(0.5, 0.5, a.exp(), b.exp(), ZetaRule::Adaptive);
            prop_assert!(z > 0.0 && z <= 1.0);
        }
    }

    #[test]
    fn precision_bookkeeping_identities_hold() {
        let prob = instance(1);
        let mut cfg = SolverConfig::new(Algorithm::DdVamp, DenoiserHandle::wavelet_soft(1.0));
        cfg.max_iters = 6;
        cfg.vamp_zeta_rule = ZetaRule::Fixed(1.0);
        let out = run_dd_vamp(&prob, &cfg).unwrap();
        let recs = &out.trace.records;
        for pair in recs.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let (g1, g2, a1, a2) = (
                a.gamma1.unwrap(),
                a.gamma2.unwrap(),
                a.alpha1.unwrap(),
                a.alpha2.unwrap(),
            );
            assert!((g1 * a2 - g2 * (1.0 - a2)).abs() <= 1e-12 * g2);
            // with zeta = 1 the next gamma2 is gamma2_bar
            let g2_next = b.gamma2.unwrap();
            assert!((g2_next * a1 - g1 * (1.0 - a1)).abs() <= 1e-12 * g1);
        }
    }

    #[test]
    fn two_calls_per_iteration_with_one_probe() {
        let prob = instance(2);
        let mut cfg = SolverConfig::new(Algorithm::DdVamp, DenoiserHandle::wavelet_soft(1.0));
        cfg.max_iters = 4;
        let out = run_dd_vamp(&prob, &cfg).unwrap();
        assert!(out.trace.records.iter().all(|r| r.denoiser_calls == 2));
        cfg.probes = 3;
        let out = run_dd_vamp(&prob, &cfg).unwrap();
        assert!(out.trace.records.iter().all(|r| r.denoiser_calls == 4));
    }

    #[test]
    fn switch_is_marked_once() {
        let prob = instance(3);
        let mut cfg = SolverConfig::new(Algorithm::DdVampPp, DenoiserHandle::wavelet_soft(1.0));
        cfg.max_iters = 8;
        cfg.t_switch = 5;
        let out = run_dd_vamp_pp(&prob, &cfg).unwrap();
        assert_eq!(out.trace.switch_iteration(), Some(6));
        let recs = &out.trace.records;
        assert!(recs[..5].iter().all(|r| r.denoiser_calls == 1 && r.alpha1 == Some(0.5)));
        assert!(recs[..5].iter().all(|r| r.gamma1 == Some(1.0) && r.gamma2 == Some(1.0)));
        assert_eq!(recs[5].denoiser_calls, 2);
    }

    #[test]
    fn gamma_guard_reports_partial_trace() {
        let prob = instance(4);
        let mut cfg = SolverConfig::new(Algorithm::DdVamp, DenoiserHandle::linear(LinearMap::Scaled(0.5)));
        cfg.max_iters = 5;
        cfg.vamp_gamma2_init = 1e-20;
        match run_dd_vamp(&prob, &cfg) {
            Err(crate::error::Error::Diverged(d)) => {
                assert_eq!(d.iteration, 1);
                assert!(d.trace.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
