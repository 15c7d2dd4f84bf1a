//! Orthogonal 2D discrete wavelet transform (Daubechies, 4 vanishing
//! moments, periodic extension) in the usual Mallat layout: the coarsest
//! approximation band ends up in the top-left corner.
//!
//! Real orthonormal filters applied to complex data keep the transform
//! unitary, so coefficient-wise shrinkage in this domain is an exact prox.

use crate::image::ComplexImage;
use num_complex::Complex64;

/// Scaling (low-pass) filter, 8 taps.
#[allow(clippy::excessive_precision)]
const DB4: [f64; 8] = [
    0.230_377_813_308_896_500_86,
    0.714_846_570_552_915_647_09,
    0.630_880_767_929_858_907_88,
    -0.027_983_769_416_859_854_211,
    -0.187_034_811_719_093_084_08,
    0.030_841_381_835_560_763_627,
    0.032_883_011_666_885_199_735,
    -0.010_597_401_785_069_032_105,
];

pub const DEFAULT_LEVELS: usize = 4;

#[derive(Clone, Debug)]
pub struct Wavelet2d {
    lo: [f64; 8],
    hi: [f64; 8],
    levels: usize,
}

impl Default for Wavelet2d {
    fn default() -> Self {
        Self::new(DEFAULT_LEVELS)
    }
}

impl Wavelet2d {
    pub fn new(levels: usize) -> Self {
        let lo = DB4;
        let mut hi = [0.0; 8];
        for k in 0..8 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            hi[k] = sign * lo[7 - k];
        }
        Self { lo, hi, levels }
    }

    pub fn low_pass(&self) -> &[f64] {
        &self.lo
    }

    pub fn high_pass(&self) -> &[f64] {
        &self.hi
    }

    /// Number of levels actually applied to an image of this shape: each level
    /// needs both current band dimensions even.
    pub fn effective_levels(&self, shape: (usize, usize)) -> usize {
        let (mut h, mut w) = shape;
        let mut l = 0;
        while l < self.levels && h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2 {
            h /= 2;
            w /= 2;
            l += 1;
        }
        l
    }

    pub fn forward(&self, img: &ComplexImage) -> ComplexImage {
        let (h, w) = img.shape();
        let mut data = img.data().to_vec();
        let (mut ch, mut cw) = (h, w);
        let mut line = Vec::with_capacity(h.max(w));
        let mut out = Vec::with_capacity(h.max(w));
        for _ in 0..self.effective_levels((h, w)) {
            for r in 0..ch {
                line.clear();
                line.extend_from_slice(&data[r * w..r * w + cw]);
                self.analyze(&line, &mut out);
                data[r * w..r * w + cw].copy_from_slice(&out);
            }
            for c in 0..cw {
                line.clear();
                line.extend((0..ch).map(|r| data[r * w + c]));
                self.analyze(&line, &mut out);
                for (r, v) in out.iter().enumerate() {
                    data[r * w + c] = *v;
                }
            }
            ch /= 2;
            cw /= 2;
        }
        ComplexImage::from_vec(h, w, data).expect("shape preserved")
    }

    pub fn inverse(&self, coeffs: &ComplexImage) -> ComplexImage {
        let (h, w) = coeffs.shape();
        let levels = self.effective_levels((h, w));
        let mut data = coeffs.data().to_vec();
        let mut line = Vec::with_capacity(h.max(w));
        let mut out = Vec::with_capacity(h.max(w));
        for l in (0..levels).rev() {
            let ch = h >> l;
            let cw = w >> l;
            for c in 0..cw {
                line.clear();
                line.extend((0..ch).map(|r| data[r * w + c]));
                self.synthesize(&line, &mut out);
                for (r, v) in out.iter().enumerate() {
                    data[r * w + c] = *v;
                }
            }
            for r in 0..ch {
                line.clear();
                line.extend_from_slice(&data[r * w..r * w + cw]);
                self.synthesize(&line, &mut out);
                data[r * w..r * w + cw].copy_from_slice(&out);
            }
        }
        ComplexImage::from_vec(h, w, data).expect("shape preserved")
    }

    fn analyze(&self, x: &[Complex64], out: &mut Vec<Complex64>) {
        let n = x.len();
        let half = n / 2;
        out.clear();
        out.resize(n, Complex64::new(0.0, 0.0));
        for i in 0..half {
            let mut a = Complex64::new(0.0, 0.0);
            let mut d = Complex64::new(0.0, 0.0);
            for k in 0..8 {
                let v = x[(2 * i + k) % n];
                a += v * self.lo[k];
                d += v * self.hi[k];
            }
            out[i] = a;
            out[half + i] = d;
        }
    }

    fn synthesize(&self, c: &[Complex64], out: &mut Vec<Complex64>) {
        let n = c.len();
        let half = n / 2;
        out.clear();
        out.resize(n, Complex64::new(0.0, 0.0));
        for i in 0..half {
            let (a, d) = (c[i], c[half + i]);
            for k in 0..8 {
                out[(2 * i + k) % n] += a * self.lo[k] + d * self.hi[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn filter_is_orthonormal() {
        let h = DB4;
        for shift in 0..4 {
            let s: f64 = (0..8 - 2 * shift).map(|k| h[k] * h[k + 2 * shift]).sum();
            let expected = if shift == 0 { 1.0 } else { 0.0 };
            assert!((s - expected).abs() < 1e-15, "shift {shift}: {s}");
        }
        let sum: f64 = h.iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn level_count_follows_divisibility() {
        let w = Wavelet2d::default();
        assert_eq!(w.effective_levels((64, 64)), 4);
        assert_eq!(w.effective_levels((96, 96)), 4);
        assert_eq!(w.effective_levels((12, 20)), 2);
        assert_eq!(w.effective_levels((7, 8)), 0);
    }

    #[test]
    fn constant_image_has_only_approximation_energy() {
        let w = Wavelet2d::default();
        let x = ComplexImage::constant(32, 32, Complex64::new(1.0, 0.0));
        let c = w.forward(&x);
        for i in 0..32 {
            for j in 0..32 {
                if i >= 2 || j >= 2 {
                    assert!(c.get(i, j).norm() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn transform_is_unitary(seed in any::<u64>(), hi in 1usize..5, wi in 1usize..5, odd in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (hi * 8 + odd as usize, wi * 4);
            let x = ComplexImage::random_normal(h, w, &mut rng);
            let wt = Wavelet2d::default();
            let c = wt.forward(&x);
            prop_assert!((c.norm() - x.norm()).abs() < 1e-12 * x.norm());
            let back = wt.inverse(&c);
            prop_assert!(back.distance_sqr(&x).sqrt() < 1e-12 * x.norm());
        }
    }
}
