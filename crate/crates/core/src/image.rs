//! Complex image container, elementwise algebra and the `.cplx` raw format.
//!
//! `.cplx` layout (little-endian): `u32 height`, `u32 width`, then
//! `height * width` interleaved `(re, im)` pairs of `f64`, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Rasterized complex image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: Complex64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_real(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(height, width, data.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    /// Image with i.i.d. circular complex Gaussian entries of unit variance.
    pub fn random_normal<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_fn(height, width, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        })
    }

    /// Real image with i.i.d. standard normal entries.
    pub fn random_real_normal<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        Self::from_fn(height, width, |_, _| Complex64::new(rng.sample(StandardNormal), 0.0))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.width + col] = value;
    }

    pub fn check_shape(&self, expected: (usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: self.shape(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.data.iter().all(|c| c.im == 0.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `<self, other> = sum conj(self_i) * other_i`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn distance_sqr(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|c| c * s)
    }

    /// `a * self + b * other`
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        self.zip_map(other, |x, y| x * a + y * b)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn from_planes(height: usize, width: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::invalid("real and imaginary planes differ in length"));
        }
        Self::from_vec(
            height,
            width,
            re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
        )
    }

    pub fn write_cplx(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_cplx_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_cplx_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for c in &self.data {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cplx(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_cplx_from(&mut r)
    }

    pub fn read_cplx_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word) as usize;
        if height == 0 || width == 0 {
            return Err(Error::Format(format!("bad .cplx header {height}x{width}")));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::Format("image too large".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 16 {
            return Err(Error::Format(format!(
                "expected {} payload bytes for {height}x{width}, found {}",
                n * 16,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Ok(Self { height, width, data })
    }

    /// Writes `|x|` as an 8-bit binary PGM using min-max scaling.
    /// Returns the `(min, max)` used for the scaling.
    pub fn write_magnitude_pgm(&self, path: impl AsRef<Path>) -> Result<(f64, f64)> {
        let mag = self.magnitude();
        let lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let pixels: Vec<u8> = mag
            .iter()
            .map(|&m| (((m - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&pixels)?;
        w.flush()?;
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cplx_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ComplexImage::random_normal(5, 7, &mut rng);
        let mut buf = Vec::new();
        x.write_cplx_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 5 * 7 * 16);
        assert_eq!(&buf[..4], &5u32.to_le_bytes());
        assert_eq!(&buf[4..8], &7u32.to_le_bytes());
        let y = ComplexImage::read_cplx_from(&mut buf.as_slice()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn truncated_cplx_is_rejected() {
        let x = ComplexImage::zeros(4, 4);
        let mut buf = Vec::new();
        x.write_cplx_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            ComplexImage::read_cplx_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(ComplexImage::from_vec(2, 2, vec![Complex64::new(0.0, 0.0); 3]).is_err());
        assert!(ComplexImage::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_argument() {
        let a = ComplexImage::from_vec(1, 1, vec![Complex64::new(0.0, 1.0)]).unwrap();
        let b = ComplexImage::from_vec(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        assert_eq!(a.inner(&b), Complex64::new(0.0, -1.0));
    }
}
