//! Black-box denoisers `f(r, tau)` and Monte-Carlo divergence estimation.
//!
//! `tau` is the per-pixel complex noise variance of `r = x + N(0, tau I)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::external::ExternalDenoiser;
use crate::image::ComplexImage;
use crate::wavelet::Wavelet2d;

/// A denoiser the solvers can call.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, r: &ComplexImage, tau: f64) -> Result<ComplexImage>;

    /// Exact normalized divergence `tr{grad f}/N` when it does not depend on
    /// the input (linear maps); `None` means it must be estimated.
    fn exact_divergence(&self, _shape: (usize, usize)) -> Option<f64> {
        None
    }

    /// Closed-form divergence at a specific input, when one exists: the
    /// value probing with `kind` estimates. Defaults to
    /// [`Denoiser::exact_divergence`].
    fn divergence_at(&self, r: &ComplexImage, _tau: f64, _kind: ProbeKind) -> Option<f64> {
        self.exact_divergence(r.shape())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ComplexPolicy {
    /// Real and imaginary planes are handled independently (complex-aware
    /// kinds shrink complex coefficients directly).
    #[default]
    SplitReIm,
    /// Denoise the magnitude as a real image and re-attach the input phase.
    MagnitudePhase,
}

impl fmt::Display for ComplexPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComplexPolicy::SplitReIm => "split_re_im",
            ComplexPolicy::MagnitudePhase => "magnitude_phase",
        })
    }
}

impl FromStr for ComplexPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split_re_im" => Ok(ComplexPolicy::SplitReIm),
            "magnitude_phase" => Ok(ComplexPolicy::MagnitudePhase),
            other => Err(Error::invalid(format!("unknown complex policy `{other}`"))),
        }
    }
}

/// Real linear map applied to both planes: the `linear_test` kind.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearMap {
    Scaled(f64),
    /// Row-major `n x n` real matrix.
    Dense {
        n: usize,
        matrix: Vec<f64>,
    },
}

impl LinearMap {
    pub fn trace_normalized(&self, n: usize) -> f64 {
        match self {
            LinearMap::Scaled(c) => *c,
            LinearMap::Dense { n: dim, matrix } => (0..*dim).map(|i| matrix[i * dim + i]).sum::<f64>() / n as f64,
        }
    }

    fn apply(&self, r: &ComplexImage) -> Result<ComplexImage> {
        match self {
            LinearMap::Scaled(c) => Ok(r.scale(*c)),
            LinearMap::Dense { n, matrix } => {
                if r.len() != *n {
                    return Err(Error::invalid(format!(
                        "linear map is {n}x{n}, image has {} pixels",
                        r.len()
                    )));
                }
                let data = matrix
                    .chunks_exact(*n)
                    .map(|row| row.iter().zip(r.data()).map(|(a, x)| x * *a).sum())
                    .collect();
                ComplexImage::from_vec(r.height(), r.width(), data)
            }
        }
    }
}

#[derive(Clone)]
pub enum DenoiserKind {
    /// Complex soft-thresholding of orthogonal wavelet coefficients at
    /// threshold `lambda * sqrt(tau)`.
    WaveletSoft {
        lambda: f64,
    },
    /// Exact prox of `lambda * ||Psi x||_1` with step `tau`: threshold `lambda * tau`.
    WaveletProx {
        lambda: f64,
    },
    /// Pixel-domain complex soft-thresholding at `lambda * sqrt(tau)`.
    SoftThreshold {
        lambda: f64,
    },
    /// Circular Gaussian blur with standard deviation `sigma` pixels.
    GaussianSmooth {
        sigma: f64,
    },
    LinearTest(LinearMap),
    External(ExternalDenoiser),
    Custom(Arc<dyn Denoiser>),
}

impl fmt::Debug for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserKind::WaveletSoft { lambda } => write!(f, "WaveletSoft({lambda})"),
            DenoiserKind::WaveletProx { lambda } => write!(f, "WaveletProx({lambda})"),
            DenoiserKind::SoftThreshold { lambda } => write!(f, "SoftThreshold({lambda})"),
            DenoiserKind::GaussianSmooth { sigma } => write!(f, "GaussianSmooth({sigma})"),
            DenoiserKind::LinearTest(m) => write!(f, "LinearTest({m:?})"),
            DenoiserKind::External(e) => write!(f, "External({:?})", e.endpoint()),
            DenoiserKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserHandle {
    pub kind: DenoiserKind,
    pub complex_policy: ComplexPolicy,
}

impl DenoiserHandle {
    pub fn new(kind: DenoiserKind) -> Self {
        Self {
            kind,
            complex_policy: ComplexPolicy::default(),
        }
    }

    pub fn wavelet_soft(lambda: f64) -> Self {
        Self::new(DenoiserKind::WaveletSoft { lambda })
    }

    pub fn wavelet_prox(lambda: f64) -> Self {
        Self::new(DenoiserKind::WaveletProx { lambda })
    }

    pub fn soft_threshold(lambda: f64) -> Self {
        Self::new(DenoiserKind::SoftThreshold { lambda })
    }

    pub fn gaussian_smooth(sigma: f64) -> Self {
        Self::new(DenoiserKind::GaussianSmooth { sigma })
    }

    pub fn linear(map: LinearMap) -> Self {
        Self::new(DenoiserKind::LinearTest(map))
    }

    pub fn identity() -> Self {
        Self::linear(LinearMap::Scaled(1.0))
    }

    pub fn custom(d: Arc<dyn Denoiser>) -> Self {
        Self::new(DenoiserKind::Custom(d))
    }

    pub fn with_policy(mut self, policy: ComplexPolicy) -> Self {
        self.complex_policy = policy;
        self
    }

    fn denoise_native(&self, r: &ComplexImage, tau: f64) -> Result<ComplexImage> {
        match &self.kind {
            DenoiserKind::WaveletSoft { lambda } => Ok(wavelet_shrink(r, lambda * tau.sqrt())),
            DenoiserKind::WaveletProx { lambda } => Ok(wavelet_shrink(r, lambda * tau)),
            DenoiserKind::SoftThreshold { lambda } => {
                let t = lambda * tau.sqrt();
                Ok(r.map(|c| soft_threshold(c, t)))
            }
            DenoiserKind::GaussianSmooth { sigma } => Ok(gaussian_smooth(r, *sigma)),
            DenoiserKind::LinearTest(m) => m.apply(r),
            DenoiserKind::External(e) => e.denoise(r, tau),
            DenoiserKind::Custom(d) => d.denoise(r, tau),
        }
    }
}

impl Denoiser for DenoiserHandle {
    fn denoise(&self, r: &ComplexImage, tau: f64) -> Result<ComplexImage> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("denoiser variance must be positive, got {tau}")));
        }
        let out = match self.complex_policy {
            ComplexPolicy::SplitReIm => self.denoise_native(r, tau)?,
            ComplexPolicy::MagnitudePhase => {
                let mag = ComplexImage::from_real(r.height(), r.width(), &r.magnitude())?;
                let den = self.denoise_native(&mag, tau)?;
                r.zip_map(&den, |c, d| {
                    let n = c.norm();
                    if n > 0.0 {
                        c * (d.re / n)
                    } else {
                        Complex64::new(d.re, 0.0)
                    }
                })
            }
        };
        out.check_shape(r.shape())?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("denoiser {:?}", self.kind)));
        }
        Ok(out)
    }

    fn exact_divergence(&self, shape: (usize, usize)) -> Option<f64> {
        if self.complex_policy != ComplexPolicy::SplitReIm {
            return None;
        }
        match &self.kind {
            DenoiserKind::LinearTest(m) => Some(m.trace_normalized(shape.0 * shape.1)),
            DenoiserKind::Custom(d) => d.exact_divergence(shape),
            _ => None,
        }
    }

    fn divergence_at(&self, r: &ComplexImage, tau: f64, kind: ProbeKind) -> Option<f64> {
        match (&self.kind, self.complex_policy) {
            (DenoiserKind::SoftThreshold { lambda }, ComplexPolicy::SplitReIm) => {
                // real probes see d Re{out}/d Re{in}; circular ones the mean
                // of that and d Im{out}/d Im{in}
                let t = lambda * tau.sqrt();
                let total: f64 = r
                    .data()
                    .iter()
                    .map(|c| {
                        let m = c.norm();
                        if m <= t {
                            0.0
                        } else {
                            match kind {
                                ProbeKind::Real => 1.0 - t / m + t * c.re * c.re / (m * m * m),
                                ProbeKind::Circular => 1.0 - 0.5 * t / m,
                            }
                        }
                    })
                    .sum();
                Some(total / r.len() as f64)
            }
            (DenoiserKind::Custom(d), _) => d.divergence_at(r, tau, kind),
            _ => self.exact_divergence(r.shape()),
        }
    }
}

/// Complex soft-threshold: `sign(c) * max(|c| - t, 0)`.
pub fn soft_threshold(c: Complex64, t: f64) -> Complex64 {
    let m = c.norm();
    if m <= t {
        Complex64::new(0.0, 0.0)
    } else {
        c * ((m - t) / m)
    }
}

fn wavelet_shrink(r: &ComplexImage, threshold: f64) -> ComplexImage {
    if threshold == 0.0 {
        return r.clone();
    }
    let wt = Wavelet2d::default();
    let coeffs = wt.forward(r).map(|c| soft_threshold(c, threshold));
    wt.inverse(&coeffs)
}

/// Exact prox of `lambda_tau * ||Psi x||_1` for the orthogonal wavelet `Psi`.
pub fn prox_l1_wavelet(r: &ComplexImage, lambda_tau: f64) -> Result<ComplexImage> {
    if !(lambda_tau >= 0.0) || !lambda_tau.is_finite() {
        return Err(Error::invalid(format!(
            "threshold must be non-negative, got {lambda_tau}"
        )));
    }
    Ok(wavelet_shrink(r, lambda_tau))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn gaussian_smooth(r: &ComplexImage, sigma: f64) -> ComplexImage {
    if !(sigma > 0.0) {
        return r.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = r.shape();
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;

    let mut tmp = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                acc += r.data()[i * w + wrap(j as isize + k as isize - radius, w)] * kv;
            }
            tmp[i * w + j] = acc;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                acc += tmp[wrap(i as isize + k as isize - radius, h) * w + j] * kv;
            }
            out[i * w + j] = acc;
        }
    }
    ComplexImage::from_vec(h, w, out).expect("shape preserved")
}

/// Normalized divergence `tr{grad f(r)}/N` estimated by random probing.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceEstimate {
    pub alpha_bar: f64,
    pub k: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Per-probe normalized estimates.
    pub samples: Vec<f64>,
}

impl DivergenceEstimate {
    /// Standard error of `alpha_bar`; zero for a single probe.
    pub fn std_error(&self) -> f64 {
        if self.samples.len() < 2 {
            return 0.0;
        }
        let n = self.samples.len() as f64;
        let var = self.samples.iter().map(|s| (s - self.alpha_bar).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Default finite-difference step, relative to the input scale.
pub fn default_epsilon(r: &ComplexImage) -> f64 {
    (r.norm() / (r.len() as f64).sqrt()).max(1e-5) / 1000.0
}

/// Distribution of the divergence probes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProbeKind {
    /// Circular complex normal, unit variance per pixel: measures the
    /// Jacobian trace averaged over the real and imaginary directions.
    #[default]
    Circular,
    /// Real standard normal, perturbing only the real plane.
    Real,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Circular => "circular",
            ProbeKind::Real => "real",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(ProbeKind::Circular),
            "real" => Ok(ProbeKind::Real),
            other => Err(Error::invalid(format!("unknown probe kind `{other}`"))),
        }
    }
}

/// Probe settings for [`mc_divergence`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probing {
    pub k: usize,
    /// Finite-difference step; `None` selects [`default_epsilon`].
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub kind: ProbeKind,
}

impl Probing {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            epsilon: None,
            seed,
            kind: ProbeKind::default(),
        }
    }
}

/// Probe-based divergence: `(1/(K N)) sum_k Re{eps^-1 q_k^H [f(r + eps q_k) - f(r)]}`.
/// Uses exactly `K + 1` denoiser calls.
pub fn mc_divergence(
    denoiser: &dyn Denoiser,
    r: &ComplexImage,
    tau: f64,
    probing: &Probing,
) -> Result<DivergenceEstimate> {
    let fr = denoiser.denoise(r, tau)?;
    mc_divergence_at(denoiser, r, &fr, tau, probing)
}

/// Same as [`mc_divergence`] but reuses an already computed `f(r)`; `K` calls.
pub fn mc_divergence_at(
    denoiser: &dyn Denoiser,
    r: &ComplexImage,
    fr: &ComplexImage,
    tau: f64,
    probing: &Probing,
) -> Result<DivergenceEstimate> {
    let k = probing.k;
    if k == 0 {
        return Err(Error::invalid("probe count must be at least 1"));
    }
    let epsilon = probing.epsilon.unwrap_or_else(|| default_epsilon(r));
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = r.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(probing.seed);
    let mut samples = Vec::with_capacity(k);
    for _ in 0..k {
        let q = probe(r.len(), probing.kind, &mut rng);
        let mut perturbed = r.clone();
        for (p, &qi) in perturbed.data_mut().iter_mut().zip(&q) {
            *p += qi * epsilon;
        }
        let fp = denoiser.denoise(&perturbed, tau)?;
        let dot: f64 = q
            .iter()
            .zip(fp.data().iter().zip(fr.data()))
            .map(|(qi, (a, b))| (qi.conj() * (a - b)).re)
            .sum();
        let s = dot / (epsilon * n);
        if !s.is_finite() {
            return Err(Error::NonFinite("divergence probe".into()));
        }
        samples.push(s);
    }
    let alpha_bar = samples.iter().sum::<f64>() / k as f64;
    Ok(DivergenceEstimate {
        alpha_bar,
        k,
        epsilon,
        seed: probing.seed,
        samples,
    })
}

fn probe(n: usize, kind: ProbeKind, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    match kind {
        ProbeKind::Real => (0..n)
            .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
            .collect(),
        ProbeKind::Circular => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (0..n)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * s, im * s)
                })
                .collect()
        }
    }
}
