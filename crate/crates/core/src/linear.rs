//! Linear (likelihood) stage of VAMP and the ADMM x-update:
//!
//! `g(r; gamma) = argmin_x gamma_w/2 ||y - A x||^2 + gamma/2 ||x - r||^2`
//!
//! For `A = M F` the normal matrix is diagonal in k-space, so `g` costs two
//! FFTs and a per-bin division. Other operators go through conjugate gradient.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, Problem};
use crate::fourier::{dft2, idft2};
use crate::image::ComplexImage;

pub const DEFAULT_CG_TOL: f64 = 1e-10;
const ALPHA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LinearStageResult {
    pub x2: ComplexImage,
    pub alpha2: f64,
}

fn check_precisions(gamma: f64, gamma_w: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    if !(gamma_w > 0.0) || gamma_w.is_nan() {
        return Err(Error::invalid(format!("gamma_w must be positive, got {gamma_w}")));
    }
    Ok(())
}

/// `g(r; gamma)` for the problem's operator. Masked Fourier operators use the
/// closed form `F^H (gamma_w M^T M + gamma I)^-1 (gamma F r + gamma_w M^T y)`.
pub fn linear_estimate(r: &ComplexImage, gamma: f64, prob: &Problem) -> Result<ComplexImage> {
    check_precisions(gamma, prob.gamma_w)?;
    r.check_shape(prob.image_shape())?;
    match &prob.operator {
        ForwardOperator::MaskedFourier(mask) => {
            if mask.n_kept() == 0 {
                return Ok(r.clone());
            }
            let mut fr = dft2(r);
            let gw = prob.gamma_w;
            let denom = gw + gamma;
            let bins = fr.data_mut();
            for (&k, &y) in mask.kept().iter().zip(&prob.y) {
                bins[k] = (bins[k] * gamma + y * gw) / denom;
            }
            Ok(idft2(&fr))
        }
        ForwardOperator::Dense(_) => {
            linear_estimate_general(r, gamma, &prob.operator, &prob.y, prob.gamma_w, DEFAULT_CG_TOL)
        }
    }
}

/// Normalized trace `tr{grad g}/N = ((1 - M/N) gamma_w + gamma) / (gamma_w + gamma)`
/// for a masked unitary DFT with `M` of `N` bins kept.
pub fn linear_sensitivity(gamma: f64, gamma_w: f64, m: usize, n: usize) -> f64 {
    let frac = m as f64 / n as f64;
    ((1.0 - frac) * gamma_w + gamma) / (gamma_w + gamma)
}

/// Conjugate-gradient solve of `(gamma_w A^H A + gamma I) x = gamma r + gamma_w A^H y`
/// to relative residual `cg_tol`. Works for any operator.
pub fn linear_estimate_general(
    r: &ComplexImage,
    gamma: f64,
    op: &ForwardOperator,
    y: &[Complex64],
    gamma_w: f64,
    cg_tol: f64,
) -> Result<ComplexImage> {
    check_precisions(gamma, gamma_w)?;
    if !(cg_tol > 0.0) {
        return Err(Error::invalid("cg_tol must be positive"));
    }
    r.check_shape(op.image_shape())?;

    let normal = |x: &ComplexImage| -> Result<ComplexImage> {
        let ax = op.apply(x)?;
        let mut out = op.adjoint(&ax)?.scale(gamma_w);
        out.axpy(gamma, x);
        Ok(out)
    };

    let mut b = op.adjoint(y)?.scale(gamma_w);
    b.axpy(gamma, r);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(ComplexImage::zeros(r.height(), r.width()));
    }

    let mut x = r.clone();
    let mut res = b.sub(&normal(&x)?);
    let mut p = res.clone();
    let mut rs = res.norm_sqr();
    let max_iter = 10 * r.len().max(100);
    for _ in 0..max_iter {
        if rs.sqrt() <= cg_tol * b_norm {
            return Ok(x);
        }
        let ap = normal(&p)?;
        let alpha = rs / p.inner(&ap).re;
        x.axpy(alpha, &p);
        res.axpy(-alpha, &ap);
        let rs_new = res.norm_sqr();
        p = res.lincomb(1.0, &p, rs_new / rs);
        rs = rs_new;
    }
    if rs.sqrt() <= cg_tol * b_norm {
        return Ok(x);
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: rs.sqrt() / b_norm,
    })
}

/// Probe estimate of `tr{grad g}/N` for operators without a closed form.
/// `g` is affine in `r`, so each probe is exact up to the CG tolerance.
pub fn linear_sensitivity_probe(prob: &Problem, gamma: f64, probes: usize, seed: u64) -> Result<f64> {
    let (h, w) = prob.image_shape();
    let n = (h * w) as f64;
    let zero_y = vec![Complex64::new(0.0, 0.0); prob.y.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..probes.max(1) {
        let q = ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.sample(StandardNormal), 0.0));
        let gq = linear_estimate_general(&q, gamma, &prob.operator, &zero_y, prob.gamma_w, DEFAULT_CG_TOL)?;
        total += q.inner(&gq).re / n;
    }
    Ok(total / probes.max(1) as f64)
}

/// Runs the linear stage: estimate plus sensitivity, the latter clamped to
/// `[1e-12, 1 - 1e-12]`. The flag reports whether clamping occurred.
pub fn linear_stage(
    r: &ComplexImage,
    gamma: f64,
    prob: &Problem,
    probe_seed: u64,
) -> Result<(LinearStageResult, bool)> {
    let x2 = linear_estimate(r, gamma, prob)?;
    let raw = match &prob.operator {
        ForwardOperator::MaskedFourier(m) => linear_sensitivity(gamma, prob.gamma_w, m.n_kept(), m.n_pixels()),
        ForwardOperator::Dense(_) => linear_sensitivity_probe(prob, gamma, 4, probe_seed)?,
    };
    let (alpha2, clamped) = clamp_alpha(raw);
    Ok((LinearStageResult { x2, alpha2 }, clamped))
}

/// Clamps a sensitivity into `[1e-12, 1 - 1e-12]`.
pub fn clamp_alpha(alpha: f64) -> (f64, bool) {
    let c = if alpha.is_nan() {
        ALPHA_FLOOR
    } else {
        alpha.clamp(ALPHA_FLOOR, 1.0 - ALPHA_FLOOR)
    };
    (c, c != alpha)
}
