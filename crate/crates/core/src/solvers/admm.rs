use std::time::Instant;

use super::{diverged, Algorithm, Recon, SolverConfig, SolverTrace, TraceRecord};
use crate::denoiser::Denoiser;
use crate::error::Result;
use crate::forward::Problem;
use crate::image::ComplexImage;
use crate::linear::linear_estimate;
use crate::metrics::nmse;

/// ADMM from `v = u = 0` with stepsize `cfg.admm_gamma`:
/// `x = g(v - u; gamma)`, `v = f(x + u, 1/gamma)`, `u += x - v`.
///
/// With a `wavelet_prox` denoiser this is classical ADMM for the
/// l1-wavelet problem; any other denoiser gives plug-and-play ADMM.
/// The reported estimate is `v`.
pub fn run_admm(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    admm_core(prob, cfg, Algorithm::Admm, false)
}

/// Peaceman-Rachford variant: an extra `u += x - v` between the x- and
/// v-updates. Setting `cfg.pr_extra_update = false` falls back to plain ADMM.
pub fn run_admm_pr(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    admm_core(prob, cfg, Algorithm::AdmmPr, cfg.pr_extra_update)
}

fn admm_core(prob: &Problem, cfg: &SolverConfig, algorithm: Algorithm, extra: bool) -> Result<Recon> {
    cfg.validate()?;
    let start = Instant::now();
    let (h, w) = prob.image_shape();
    let gamma = cfg.admm_gamma;
    let mut v = ComplexImage::zeros(h, w);
    let mut u = ComplexImage::zeros(h, w);
    let mut trace = SolverTrace::default();

    for t in 0..cfg.max_iters {
        let x = linear_estimate(&v.sub(&u), gamma, prob)?;
        if extra {
            u = u.add(&x.sub(&v));
        }
        v = cfg.denoiser.denoise(&x.add(&u), 1.0 / gamma)?;
        u = u.add(&x.sub(&v));
        if !u.is_finite() {
            return Err(diverged(
                algorithm,
                t + 1,
                "dual variable is not finite".into(),
                trace,
                Some(v),
            ));
        }
        trace.records.push(TraceRecord {
            iteration: t + 1,
            nmse_db: prob.x0.as_ref().map(|x0| nmse(&v, x0)).transpose()?,
            gamma1: Some(gamma),
            gamma2: Some(gamma),
            seconds: start.elapsed().as_secs_f64(),
            denoiser_calls: 1,
            estimate: cfg.keep_iterates.then(|| v.clone()),
            ..Default::default()
        });
    }
    Ok(Recon { estimate: v, trace })
}
