//! Unitary 2D discrete Fourier transform.
//!
//! Both directions are scaled by `1/sqrt(height * width)`, so `dft2` preserves
//! the Euclidean norm and `idft2` is its exact adjoint and inverse. Most FFT
//! libraries (rustfft included) return the *unnormalized* transform; every
//! module in this crate assumes the unitary convention used here.
//!
//! The DC bin sits at index `(0, 0)`. Use [`centered_to_internal`] and
//! [`internal_to_centered`] to move between that layout and the
//! `fftshift`-ed layout used for masks and display.

use std::cell::{Cell, RefCell};

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::image::ComplexImage;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static TRANSFORMS: Cell<u64> = const { Cell::new(0) };
}

/// Number of 2D transforms (forward or inverse) issued on the calling thread.
pub fn transform_count() -> u64 {
    TRANSFORMS.with(|c| c.get())
}

pub fn dft2(img: &ComplexImage) -> ComplexImage {
    transform(img, FftDirection::Forward)
}

pub fn idft2(img: &ComplexImage) -> ComplexImage {
    transform(img, FftDirection::Inverse)
}

fn transform(img: &ComplexImage, direction: FftDirection) -> ComplexImage {
    TRANSFORMS.with(|c| c.set(c.get() + 1));
    let (h, w) = img.shape();
    let mut data = img.data().to_vec();

    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(w, direction), p.plan_fft(h, direction))
    });

    let scratch_len = row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

    // rows are contiguous
    row_fft.process_with_scratch(&mut data, &mut scratch);

    // columns through a transposed buffer
    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            cols[j * h + i] = data[i * w + j];
        }
    }
    col_fft.process_with_scratch(&mut cols, &mut scratch);

    let s = 1.0 / ((h * w) as f64).sqrt();
    for i in 0..h {
        for j in 0..w {
            data[i * w + j] = cols[j * h + i] * s;
        }
    }
    ComplexImage::from_vec(h, w, data).expect("shape preserved")
}

/// Maps an index in centered (`fftshift`) coordinates to the DC-at-zero layout.
pub fn centered_to_internal(index: usize, n: usize) -> usize {
    (index + n - n / 2) % n
}

/// Inverse of [`centered_to_internal`].
pub fn internal_to_centered(index: usize, n: usize) -> usize {
    (index + n / 2) % n
}

/// Signed frequency of an internal index, in `[-n/2, n/2)`.
pub fn signed_frequency(index: usize, n: usize) -> i64 {
    internal_to_centered(index, n) as i64 - (n / 2) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Direct O(N^2) unitary DFT-matrix product.
    fn dense_dft(x: &ComplexImage) -> ComplexImage {
        let (h, w) = x.shape();
        let s = 1.0 / ((h * w) as f64).sqrt();
        ComplexImage::from_fn(h, w, |k, l| {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h {
                for n in 0..w {
                    let phase = -2.0 * PI * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                    acc += x.get(m, n) * Complex64::from_polar(1.0, phase);
                }
            }
            acc * s
        })
    }

    fn rel_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
        a.distance_sqr(b).sqrt() / b.norm().max(1e-300)
    }

    #[test]
    fn zero_image_maps_to_zero() {
        let z = ComplexImage::zeros(6, 5);
        assert_eq!(dft2(&z), z);
        assert_eq!(idft2(&z), z);
    }

    #[test]
    fn constant_image_concentrates_at_dc() {
        let c = Complex64::new(0.7, -0.2);
        let y = dft2(&ComplexImage::constant(6, 10, c));
        let expected = c * (60f64).sqrt();
        assert!((y.get(0, 0) - expected).norm() < 1e-12);
        let off_dc: f64 = y.data()[1..].iter().map(|v| v.norm()).sum();
        assert!(off_dc < 1e-12);
    }

    #[test]
    fn dc_spike_inverts_to_constant() {
        let mut k = ComplexImage::zeros(4, 4);
        k.set(0, 0, Complex64::new(4.0, 0.0));
        let x = idft2(&k);
        for v in x.data() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_dft_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w) in &[(8, 8), (6, 10), (7, 5)] {
            let x = ComplexImage::random_normal(h, w, &mut rng);
            assert!(rel_err(&dft2(&x), &dense_dft(&x)) < 1e-12);
        }
    }

    #[test]
    fn parseval_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = ComplexImage::random_normal(8, 8, &mut rng);
        let ratio = dft2(&x).norm() / x.norm();
        assert!((ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_16x16_and_96x96() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [16, 96] {
            let x = ComplexImage::random_normal(n, n, &mut rng);
            assert!(rel_err(&idft2(&dft2(&x)), &x) < 1e-12);
        }
    }

    #[test]
    fn centered_index_helpers_are_inverse() {
        for n in [1, 2, 7, 8, 128] {
            for i in 0..n {
                assert_eq!(internal_to_centered(centered_to_internal(i, n), n), i);
            }
        }
        // DC sits in the middle of the centered layout
        assert_eq!(internal_to_centered(0, 128), 64);
        assert_eq!(internal_to_centered(0, 7), 3);
        assert_eq!(signed_frequency(127, 128), -1);
    }

    #[test]
    fn counter_tracks_transforms() {
        let x = ComplexImage::zeros(4, 4);
        let before = transform_count();
        let _ = idft2(&dft2(&x));
        assert_eq!(transform_count() - before, 2);
    }
}
