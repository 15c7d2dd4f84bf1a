//! Measurement model `y = A x0 + w` with `A = M F`, plus a dense-matrix
//! operator for i.i.d. experiments and operator cross-checks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fourier::{dft2, idft2};
use crate::image::ComplexImage;
use crate::mask::SamplingMask;

/// Noise precision substituted when no noise is injected (`snr_db = inf`).
pub const NOISELESS_GAMMA_W: f64 = 1e12;

/// Measured k-space samples in mask order.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceVector {
    mask: SamplingMask,
    data: Vec<Complex64>,
}

impl KSpaceVector {
    pub fn new(mask: SamplingMask, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != mask.n_kept() {
            return Err(Error::invalid(format!(
                "k-space vector has {} samples but mask keeps {}",
                data.len(),
                mask.n_kept()
            )));
        }
        Ok(Self { mask, data })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Scatters the samples onto a full grid, zeros elsewhere.
    pub fn zero_filled(&self) -> ComplexImage {
        let (h, w) = self.shape();
        let mut grid = ComplexImage::zeros(h, w);
        let g = grid.data_mut();
        for (&k, &v) in self.mask.kept().iter().zip(&self.data) {
            g[k] = v;
        }
        grid
    }

    /// Gathers the kept bins of a full k-space grid.
    /// Full k-space grid with zeros at unsampled bins.
    pub fn to_grid(&self) -> ComplexImage {
        let (h, w) = self.shape();
        let mut grid = ComplexImage::zeros(h, w);
        for (&k, &v) in self.mask.kept().iter().zip(&self.data) {
            grid.data_mut()[k] = v;
        }
        grid
    }

    pub fn from_grid(grid: &ComplexImage, mask: &SamplingMask) -> Result<Self> {
        grid.check_shape(mask.shape())?;
        let data = mask.kept().iter().map(|&k| grid.data()[k]).collect();
        Ok(Self {
            mask: mask.clone(),
            data,
        })
    }
}

/// `A x` for masked unitary DFT: the kept entries of `dft2(x)` in mask order.
pub fn apply_a(x: &ComplexImage, mask: &SamplingMask) -> Result<KSpaceVector> {
    x.check_shape(mask.shape())?;
    KSpaceVector::from_grid(&dft2(x), mask)
}

/// `A^H y`: zero-fill then inverse unitary DFT.
pub fn apply_a_adjoint(y: &KSpaceVector) -> ComplexImage {
    idft2(&y.zero_filled())
}

/// Explicit `rows x cols` complex matrix acting on rasterized images.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    image_shape: (usize, usize),
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, image_shape: (usize, usize), data: Vec<Complex64>) -> Result<Self> {
        let cols = image_shape.0 * image_shape.1;
        if data.len() != rows * cols {
            return Err(Error::invalid("dense matrix data length mismatch"));
        }
        Ok(Self {
            rows,
            image_shape,
            data,
        })
    }

    /// Real i.i.d. `N(0, 1/rows)` entries, so columns have unit expected norm.
    pub fn gaussian(rows: usize, image_shape: (usize, usize), seed: u64) -> Self {
        let cols = image_shape.0 * image_shape.1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| Complex64::new(s * rng.sample::<f64, _>(StandardNormal), 0.0))
            .collect();
        Self {
            rows,
            image_shape,
            data,
        }
    }

    /// The masked unitary DFT written out as an explicit matrix.
    pub fn masked_dft(mask: &SamplingMask) -> Self {
        let (h, w) = mask.shape();
        let n = h * w;
        let s = 1.0 / (n as f64).sqrt();
        let mut data = Vec::with_capacity(mask.n_kept() * n);
        for &k in mask.kept() {
            let (kr, kc) = (k / w, k % w);
            for m in 0..h {
                for l in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((kr * m) as f64 / h as f64 + (kc * l) as f64 / w as f64);
                    data.push(Complex64::from_polar(s, phase));
                }
            }
        }
        Self {
            rows: mask.n_kept(),
            image_shape: (h, w),
            data,
        }
    }

    pub fn identity(image_shape: (usize, usize)) -> Self {
        let n = image_shape.0 * image_shape.1;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Self {
            rows: n,
            image_shape,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.image_shape.0 * self.image_shape.1
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols() + j]
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.cols();
        self.data
            .chunks_exact(n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.cols();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (row, &yi) in self.data.chunks_exact(n).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
        out
    }
}

/// The forward operator `A` of a reconstruction problem.
#[derive(Clone, Debug, PartialEq)]
pub enum ForwardOperator {
    MaskedFourier(SamplingMask),
    Dense(DenseMatrix),
}

impl ForwardOperator {
    pub fn image_shape(&self) -> (usize, usize) {
        match self {
            ForwardOperator::MaskedFourier(m) => m.shape(),
            ForwardOperator::Dense(d) => d.image_shape(),
        }
    }

    /// Number of measurements `M`.
    pub fn n_measurements(&self) -> usize {
        match self {
            ForwardOperator::MaskedFourier(m) => m.n_kept(),
            ForwardOperator::Dense(d) => d.rows(),
        }
    }

    /// Number of unknowns `N`.
    pub fn n_pixels(&self) -> usize {
        let (h, w) = self.image_shape();
        h * w
    }

    /// `||A||_F^2`; equals `M` for a masked unitary DFT.
    pub fn frobenius_sqr(&self) -> f64 {
        match self {
            ForwardOperator::MaskedFourier(m) => m.n_kept() as f64,
            ForwardOperator::Dense(d) => d.frobenius_sqr(),
        }
    }

    pub fn apply(&self, x: &ComplexImage) -> Result<Vec<Complex64>> {
        x.check_shape(self.image_shape())?;
        match self {
            ForwardOperator::MaskedFourier(m) => Ok(apply_a(x, m)?.data),
            ForwardOperator::Dense(d) => Ok(d.apply(x.data())),
        }
    }

    pub fn adjoint(&self, y: &[Complex64]) -> Result<ComplexImage> {
        if y.len() != self.n_measurements() {
            return Err(Error::invalid(format!(
                "measurement vector has {} entries, operator expects {}",
                y.len(),
                self.n_measurements()
            )));
        }
        let (h, w) = self.image_shape();
        match self {
            ForwardOperator::MaskedFourier(m) => Ok(apply_a_adjoint(&KSpaceVector::new(m.clone(), y.to_vec())?)),
            ForwardOperator::Dense(d) => ComplexImage::from_vec(h, w, d.adjoint(y)),
        }
    }
}

/// One reconstruction instance: measurements, operator, noise precision and
/// optionally the ground truth used for NMSE reporting.
#[derive(Clone, Debug)]
pub struct Problem {
    pub operator: ForwardOperator,
    pub y: Vec<Complex64>,
    pub gamma_w: f64,
    pub x0: Option<ComplexImage>,
    pub snr_db: Option<f64>,
}

impl Problem {
    pub fn masked(y: KSpaceVector, gamma_w: f64) -> Result<Self> {
        Self::new(ForwardOperator::MaskedFourier(y.mask.clone()), y.data, gamma_w)
    }

    pub fn new(operator: ForwardOperator, y: Vec<Complex64>, gamma_w: f64) -> Result<Self> {
        if !(gamma_w > 0.0) || gamma_w.is_nan() {
            return Err(Error::invalid(format!("gamma_w must be positive, got {gamma_w}")));
        }
        if y.len() != operator.n_measurements() {
            return Err(Error::invalid("measurement length does not match operator"));
        }
        Ok(Self {
            operator,
            y,
            gamma_w,
            x0: None,
            snr_db: None,
        })
    }

    pub fn with_ground_truth(mut self, x0: ComplexImage) -> Result<Self> {
        x0.check_shape(self.operator.image_shape())?;
        self.x0 = Some(x0);
        Ok(self)
    }

    /// Simulates `y = M F x0 + w` at the given SNR (`f64::INFINITY` for none).
    pub fn simulate(x0: ComplexImage, mask: SamplingMask, snr_db: f64, noise_seed: u64) -> Result<Self> {
        let clean = apply_a(&x0, &mask)?;
        let (y, gamma_w) = add_awgn(&clean, snr_db, noise_seed)?;
        let mut p = Self::masked(y, gamma_w)?.with_ground_truth(x0)?;
        p.snr_db = Some(snr_db);
        Ok(p)
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.operator.image_shape()
    }

    pub fn mask(&self) -> Option<&SamplingMask> {
        match &self.operator {
            ForwardOperator::MaskedFourier(m) => Some(m),
            ForwardOperator::Dense(_) => None,
        }
    }

    pub fn kspace(&self) -> Option<KSpaceVector> {
        self.mask().map(|m| KSpaceVector {
            mask: m.clone(),
            data: self.y.clone(),
        })
    }

    /// The zero-filled (adjoint) reconstruction `A^H y`.
    pub fn zero_filled(&self) -> Result<ComplexImage> {
        self.operator.adjoint(&self.y)
    }
}

/// Adds circularly-symmetric complex Gaussian noise so that
/// `||y_clean||^2 / ||w||^2` equals `10^(snr_db/10)` in expectation.
///
/// Returns the noisy samples and the exact noise precision used
/// (`1/gamma_w` is the per-sample complex variance). `snr_db = inf` returns
/// the input unchanged with `gamma_w = NOISELESS_GAMMA_W`.
pub fn add_awgn(y_clean: &KSpaceVector, snr_db: f64, seed: u64) -> Result<(KSpaceVector, f64)> {
    let energy = y_clean.norm_sqr();
    if !(energy > 0.0) {
        return Err(Error::invalid("cannot calibrate noise against a zero-energy signal"));
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("snr_db is NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok((y_clean.clone(), NOISELESS_GAMMA_W));
    }
    let m = y_clean.data.len() as f64;
    let variance = energy / (m * 10f64.powf(snr_db / 10.0));
    let s = (variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = y_clean
        .data
        .iter()
        .map(|&v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v + Complex64::new(s * re, s * im)
        })
        .collect();
    Ok((
        KSpaceVector {
            mask: y_clean.mask.clone(),
            data,
        },
        1.0 / variance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_random_mask;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_mask_apply_is_dft() {
        let x = ComplexImage::random_normal(6, 6, &mut rng(1));
        let y = apply_a(&x, &SamplingMask::full((6, 6))).unwrap();
        assert_eq!(y.data(), dft2(&x).data());
        let back = apply_a_adjoint(&y);
        assert!(back.distance_sqr(&x).sqrt() < 1e-12 * x.norm());
    }

    #[test]
    fn zero_in_zero_out() {
        let mask = make_random_mask((8, 8), 16, &mut rng(2)).unwrap();
        let y = apply_a(&ComplexImage::zeros(8, 8), &mask).unwrap();
        assert!(y.data().iter().all(|c| c.norm() == 0.0));
        let z = KSpaceVector::new(mask, vec![Complex64::new(0.0, 0.0); 16]).unwrap();
        assert_eq!(apply_a_adjoint(&z), ComplexImage::zeros(8, 8));
    }

    #[test]
    fn matches_selected_rows_of_dense_dft() {
        let mut r = rng(3);
        let mask = make_random_mask((8, 8), 16, &mut r).unwrap();
        let x = ComplexImage::random_normal(8, 8, &mut r);
        let dense = DenseMatrix::masked_dft(&mask);
        let expected = dense.apply(x.data());
        let got = apply_a(&x, &mask).unwrap();
        let err: f64 = got
            .data()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-12 * x.norm());
    }

    #[test]
    fn adjoint_inner_product_identity() {
        let mut r = rng(4);
        let mask = make_random_mask((8, 8), 20, &mut r).unwrap();
        let x = ComplexImage::random_normal(8, 8, &mut r);
        let yv: Vec<Complex64> = ComplexImage::random_normal(1, 20, &mut r).into_vec();
        let y = KSpaceVector::new(mask.clone(), yv.clone()).unwrap();
        let ax = apply_a(&x, &mask).unwrap();
        let lhs: Complex64 = ax.data().iter().zip(&yv).map(|(a, b)| a.conj() * b).sum();
        let rhs = x.inner(&apply_a_adjoint(&y));
        assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mask = SamplingMask::full((4, 4));
        assert!(matches!(
            apply_a(&ComplexImage::zeros(4, 5), &mask),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn noiseless_sentinel_passes_through() {
        let mask = SamplingMask::full((4, 4));
        let x = ComplexImage::random_normal(4, 4, &mut rng(5));
        let y = apply_a(&x, &mask).unwrap();
        let (noisy, gw) = add_awgn(&y, f64::INFINITY, 1).unwrap();
        assert_eq!(noisy, y);
        assert_eq!(gw, NOISELESS_GAMMA_W);
    }

    #[test]
    fn noise_is_deterministic_and_rejects_zero_energy() {
        let mask = SamplingMask::full((4, 4));
        let x = ComplexImage::random_normal(4, 4, &mut rng(6));
        let y = apply_a(&x, &mask).unwrap();
        let a = add_awgn(&y, 40.0, 9).unwrap();
        let b = add_awgn(&y, 40.0, 9).unwrap();
        assert_eq!(a, b);
        let zero = apply_a(&ComplexImage::zeros(4, 4), &mask).unwrap();
        assert!(add_awgn(&zero, 40.0, 9).is_err());
    }

    #[test]
    fn problem_rejects_nonpositive_precision() {
        let mask = SamplingMask::full((2, 2));
        let y = KSpaceVector::new(mask, vec![Complex64::new(0.0, 0.0); 4]).unwrap();
        assert!(Problem::masked(y.clone(), 0.0).is_err());
        assert!(Problem::masked(y, -1.0).is_err());
    }
}
