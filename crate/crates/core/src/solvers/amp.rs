use std::time::Instant;

use super::{diverged, stream_seed, Algorithm, Recon, SolverConfig, SolverTrace, TraceRecord};
use crate::denoiser::{mc_divergence_at, Denoiser};
use crate::error::{Error, Result};
use crate::forward::Problem;
use crate::image::ComplexImage;
use crate::metrics::nmse;

/// AMP (`amp`) or denoising AMP (`damp`), started from `x = 0`, `v = 0`.
///
/// Per iteration:
/// `v = beta (y - A x + (N/M) alpha v)`, `tau = ||v||^2 / M`,
/// `r = x + A^H v`, `x = f(r, tau)`, where `alpha` is the divergence of the
/// previous denoiser call (zero on the first iteration). The divergence is
/// taken in closed form when the denoiser has one and by random probing
/// otherwise.
pub fn run_amp(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    cfg.validate()?;
    if !matches!(cfg.algorithm, Algorithm::Amp | Algorithm::DAmp) {
        return Err(Error::invalid(format!("run_amp called with {}", cfg.algorithm)));
    }
    let start = Instant::now();
    let (h, w) = prob.image_shape();
    let n = (h * w) as f64;
    let m = prob.operator.n_measurements();
    if m == 0 {
        return Err(Error::invalid("AMP needs at least one measurement"));
    }
    let beta = match cfg.amp_beta {
        Some(b) => b,
        None => n / prob.operator.frobenius_sqr(),
    };
    let den = &cfg.denoiser;

    let mut x = ComplexImage::zeros(h, w);
    let mut v = vec![num_complex::Complex64::new(0.0, 0.0); m];
    let mut alpha = 0.0;
    let mut tau_first: Option<f64> = None;
    let mut trace = SolverTrace::default();

    for t in 0..cfg.max_iters {
        let iteration = t + 1;
        let onsager = if t == 0 { 0.0 } else { n / m as f64 * alpha };
        let ax = prob.operator.apply(&x)?;
        for ((vi, &yi), &axi) in v.iter_mut().zip(&prob.y).zip(&ax) {
            *vi = (yi - axi + *vi * onsager) * beta;
        }
        let tau = v.iter().map(|c| c.norm_sqr()).sum::<f64>() / m as f64;
        if !tau.is_finite() {
            return Err(diverged(
                cfg.algorithm,
                iteration,
                "tau is not finite".into(),
                trace,
                Some(x),
            ));
        }
        match tau_first {
            None => tau_first = Some(tau),
            Some(t0) if t0 > 0.0 && tau > cfg.guards.tau_growth * t0 => {
                let reason = format!(
                    "tau = {tau:.3e} exceeds {:.0e} times its first value {t0:.3e}",
                    cfg.guards.tau_growth
                );
                return Err(diverged(cfg.algorithm, iteration, reason, trace, Some(x)));
            }
            _ => {}
        }

        let r = x.add(&prob.operator.adjoint(&v)?);
        // an exactly consistent iterate leaves nothing to denoise
        let tau_eff = tau.max(f64::MIN_POSITIVE);
        let input_mse = prob.x0.as_ref().map(|x0| r.distance_sqr(x0) / n);
        let fx = den.denoise(&r, tau_eff)?;
        let mut calls = 1;
        alpha = match den.divergence_at(&r, tau_eff, cfg.probe_kind) {
            Some(a) => a,
            None => {
                let probing = cfg.probing(stream_seed(cfg.seed, t as u64));
                let est = mc_divergence_at(den, &r, &fx, tau_eff, &probing)?;
                calls += cfg.probes;
                est.alpha_bar
            }
        };
        x = fx;

        trace.records.push(TraceRecord {
            iteration,
            nmse_db: prob.x0.as_ref().map(|x0| nmse(&x, x0)).transpose()?,
            alpha1: Some(alpha),
            tau: Some(tau),
            input_mse,
            seconds: start.elapsed().as_secs_f64(),
            denoiser_calls: calls,
            estimate: cfg.keep_iterates.then(|| x.clone()),
            ..Default::default()
        });
    }
    Ok(Recon { estimate: x, trace })
}
