//! Image-quality metrics: NMSE in dB and mean windowed SSIM.

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// Value reported when the reconstruction is exact.
pub const NMSE_FLOOR_DB: f64 = -300.0;
pub const SSIM_WINDOW: usize = 8;

/// Linear NMSE `||xhat - x0||^2 / ||x0||^2`.
pub fn nmse_linear(xhat: &ComplexImage, x0: &ComplexImage) -> Result<f64> {
    xhat.check_shape(x0.shape())?;
    let denom = x0.norm_sqr();
    if !(denom > 0.0) {
        return Err(Error::invalid("NMSE is undefined for a zero ground truth"));
    }
    Ok(xhat.distance_sqr(x0) / denom)
}

/// NMSE in dB, floored at [`NMSE_FLOOR_DB`].
pub fn nmse(xhat: &ComplexImage, x0: &ComplexImage) -> Result<f64> {
    Ok(linear_to_db(nmse_linear(xhat, x0)?))
}

pub fn linear_to_db(v: f64) -> f64 {
    if v <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * v.log10()).max(NMSE_FLOOR_DB)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Mean SSIM over all 8x8 windows (stride 1) with uniform weights,
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` and `L` the dynamic range of `x0`
/// (1 when `x0` is constant). Purely real inputs are compared as signed
/// values; anything with an imaginary part is compared on magnitudes.
pub fn ssim(xhat: &ComplexImage, x0: &ComplexImage) -> Result<f64> {
    xhat.check_shape(x0.shape())?;
    let (h, w) = x0.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let (a, b) = if xhat.is_real() && x0.is_real() {
        (xhat.real_part(), x0.real_part())
    } else {
        (xhat.magnitude(), x0.magnitude())
    };
    let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);

    let win = SSIM_WINDOW;
    let count = (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..win {
                let row = (i + di) * w + j;
                for k in row..row + win {
                    let (va, vb) = (a[k], b[k]);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let var_a = saa / count - ma * ma;
            let var_b = sbb / count - mb * mb;
            let cov = sab / count - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Lower median (the smaller middle element for even counts).
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v[(v.len() - 1) / 2])
}
