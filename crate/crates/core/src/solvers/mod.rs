//! Reconstruction algorithms.
//!
//! * [`run_amp`]: AMP / denoising AMP with Onsager correction.
//! * [`run_admm`]: ADMM and plug-and-play ADMM.
//! * [`run_admm_pr`]: Peaceman-Rachford ADMM (extra dual update).
//! * [`run_dd_vamp`]: damped denoising VAMP.
//! * [`run_dd_vamp_pp`]: DD-VAMP warm-started by ADMM-PR.
//!
//! Every solver is deterministic given the problem and config (including the
//! seed) and returns the final estimate with a per-iteration trace. A run that
//! trips a divergence guard returns [`Error::Diverged`] carrying the partial
//! trace.

mod admm;
mod amp;
mod trace;
mod vamp;

use std::fmt;
use std::str::FromStr;

pub use admm::{run_admm, run_admm_pr};
pub use amp::run_amp;
pub use trace::{SolverTrace, TraceEvent, TraceRecord, TRACE_CSV_HEADER};
pub use vamp::{compute_zeta, run_dd_vamp, run_dd_vamp_pp};

use crate::denoiser::{DenoiserHandle, ProbeKind, Probing};
use crate::error::{Error, Result};
use crate::forward::Problem;
use crate::image::ComplexImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Amp,
    DAmp,
    Admm,
    AdmmPr,
    DdVamp,
    DdVampPp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Amp => "amp",
            Algorithm::DAmp => "damp",
            Algorithm::Admm => "admm",
            Algorithm::AdmmPr => "admm_pr",
            Algorithm::DdVamp => "dd_vamp",
            Algorithm::DdVampPp => "dd_vamp_pp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "amp" => Algorithm::Amp,
            "damp" => Algorithm::DAmp,
            "admm" => Algorithm::Admm,
            "admm_pr" => Algorithm::AdmmPr,
            "dd_vamp" => Algorithm::DdVamp,
            "dd_vamp_pp" => Algorithm::DdVampPp,
            other => return Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        })
    }
}

/// How the VAMP damping factor is chosen each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZetaRule {
    Fixed(f64),
    /// `2 / (1 + max(gamma1/gamma2_bar, gamma2_bar/gamma1))`.
    Adaptive,
}

impl fmt::Display for ZetaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZetaRule::Fixed(z) => write!(f, "{z}"),
            ZetaRule::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for ZetaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(ZetaRule::Adaptive);
        }
        s.parse()
            .map(ZetaRule::Fixed)
            .map_err(|_| Error::invalid(format!("zeta must be `adaptive` or a number, got `{s}`")))
    }
}

/// Thresholds at which a run is declared divergent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Guards {
    /// AMP aborts when `tau^t` exceeds this multiple of its first value.
    pub tau_growth: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for Guards {
    fn default() -> Self {
        Self {
            tau_growth: 1e6,
            gamma_min: 1e-12,
            gamma_max: 1e12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    pub denoiser: DenoiserHandle,
    /// AMP step scaling; `None` uses `N / ||A||_F^2`.
    pub amp_beta: Option<f64>,
    /// ADMM / ADMM-PR stepsize, also the DD-VAMP++ warm-up precision.
    pub admm_gamma: f64,
    pub vamp_gamma2_init: f64,
    /// Initial `r2`; zero image when `None`.
    pub vamp_r2_init: Option<ComplexImage>,
    pub vamp_theta: f64,
    pub vamp_zeta_rule: ZetaRule,
    /// DD-VAMP++ warm-up length.
    pub t_switch: usize,
    /// Divergence probes per denoiser-sensitivity estimate.
    pub probes: usize,
    /// Finite-difference step; `None` picks a step relative to the input scale.
    pub epsilon: Option<f64>,
    pub probe_kind: ProbeKind,
    /// Holds `gamma1 = gamma2` fixed in DD-VAMP, which makes it ADMM-PR.
    pub freeze_precisions: bool,
    /// Peaceman-Rachford extra dual update; only read by [`run_admm_pr`].
    pub pr_extra_update: bool,
    /// Store the estimate of every iteration in the trace.
    pub keep_iterates: bool,
    pub guards: Guards,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, denoiser: DenoiserHandle) -> Self {
        Self {
            algorithm,
            max_iters: 150,
            denoiser,
            amp_beta: None,
            admm_gamma: 1.0,
            vamp_gamma2_init: 1.0,
            vamp_r2_init: None,
            vamp_theta: 0.5,
            vamp_zeta_rule: ZetaRule::Adaptive,
            t_switch: 0,
            probes: 1,
            epsilon: None,
            probe_kind: ProbeKind::Circular,
            freeze_precisions: false,
            pr_extra_update: true,
            keep_iterates: false,
            guards: Guards::default(),
            seed: 0,
        }
    }

    pub fn probing(&self, seed: u64) -> Probing {
        Probing {
            k: self.probes,
            epsilon: self.epsilon,
            seed,
            kind: self.probe_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.vamp_theta > 0.0 && self.vamp_theta <= 1.0) {
            return bad(format!("theta must lie in (0, 1], got {}", self.vamp_theta));
        }
        if let ZetaRule::Fixed(z) = self.vamp_zeta_rule {
            if !(z > 0.0 && z <= 1.0) {
                return bad(format!("fixed zeta must lie in (0, 1], got {z}"));
            }
        }
        if self.t_switch > self.max_iters {
            return bad(format!(
                "t_switch {} exceeds max_iters {}",
                self.t_switch, self.max_iters
            ));
        }
        if !(self.admm_gamma > 0.0) || !self.admm_gamma.is_finite() {
            return bad(format!("admm gamma must be positive, got {}", self.admm_gamma));
        }
        if !(self.vamp_gamma2_init > 0.0) || !self.vamp_gamma2_init.is_finite() {
            return bad(format!("gamma2_init must be positive, got {}", self.vamp_gamma2_init));
        }
        if let Some(b) = self.amp_beta {
            if !(b > 0.0) || !b.is_finite() {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if self.probes == 0 {
            return bad("probes must be at least 1".into());
        }
        Ok(())
    }
}

/// Final estimate plus the per-iteration record.
#[derive(Clone, Debug)]
pub struct Recon {
    pub estimate: ComplexImage,
    pub trace: SolverTrace,
}

/// Diagnostic for a run stopped by a divergence guard.
#[derive(Clone, Debug)]
pub struct Divergence {
    pub algorithm: Algorithm,
    /// 1-based iteration at which the guard fired.
    pub iteration: usize,
    pub reason: String,
    /// Records of the iterations that completed before the guard fired.
    pub trace: SolverTrace,
    pub last_estimate: Option<ComplexImage>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} diverged at iteration {}: {}",
            self.algorithm, self.iteration, self.reason
        )
    }
}

pub(crate) fn diverged(
    algorithm: Algorithm,
    iteration: usize,
    reason: String,
    trace: SolverTrace,
    last_estimate: Option<ComplexImage>,
) -> Error {
    Error::Diverged(Box::new(Divergence {
        algorithm,
        iteration,
        reason,
        trace,
        last_estimate,
    }))
}

/// Runs the algorithm named in `cfg`.
pub fn solve(prob: &Problem, cfg: &SolverConfig) -> Result<Recon> {
    match cfg.algorithm {
        Algorithm::Amp | Algorithm::DAmp => run_amp(prob, cfg),
        Algorithm::Admm => run_admm(prob, cfg),
        Algorithm::AdmmPr => run_admm_pr(prob, cfg),
        Algorithm::DdVamp => run_dd_vamp(prob, cfg),
        Algorithm::DdVampPp => run_dd_vamp_pp(prob, cfg),
    }
}

/// Mixes a run seed with an iteration index into an independent stream seed.
pub(crate) fn stream_seed(seed: u64, t: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ t.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
