//! Synthetic test images standing in for anatomical scans.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

#[derive(Clone, Debug, PartialEq)]
pub enum PhantomKind {
    /// Modified (Toft) Shepp-Logan head phantom.
    SheppLogan,
    /// Piecewise-constant rectangles; seed 0 gives the canonical layout.
    Blocks { seed: u64 },
    /// 8/16-bit binary PGM or `.cplx` file, nearest-neighbour resampled.
    NaturalFile(PathBuf),
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "blocks" => Ok(PhantomKind::Blocks { seed: 0 }),
            _ => {
                if let Some(rest) = s.strip_prefix("blocks:") {
                    let seed = rest
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad blocks seed `{rest}`")))?;
                    Ok(PhantomKind::Blocks { seed })
                } else if let Some(path) = s.strip_prefix("file:") {
                    Ok(PhantomKind::NaturalFile(PathBuf::from(path)))
                } else {
                    Err(Error::invalid(format!(
                        "unknown phantom `{s}` (expected shepp_logan, blocks[:seed], file:<path>)"
                    )))
                }
            }
        }
    }
}

// (intensity, semi-axis a, semi-axis b, center x, center y, rotation degrees)
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Real-valued phantom with pixel values in `[0, 1]`.
pub fn make_phantom(shape: (usize, usize), kind: &PhantomKind) -> Result<ComplexImage> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("phantom shape must be positive"));
    }
    let pixels = match kind {
        PhantomKind::SheppLogan => shepp_logan(h, w),
        PhantomKind::Blocks { seed } => blocks(h, w, *seed),
        PhantomKind::NaturalFile(path) => load_natural(path, h, w)?,
    };
    ComplexImage::from_real(h, w, &pixels)
}

fn shepp_logan(h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        // y axis points up
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / h as f64;
        for j in 0..w {
            let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
            let mut v = 0.0;
            for &[amp, a, b, cx, cy, deg] in &SHEPP_LOGAN {
                let (s, c) = deg.to_radians().sin_cos();
                let xr = (x - cx) * c + (y - cy) * s;
                let yr = -(x - cx) * s + (y - cy) * c;
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    v += amp;
                }
            }
            out[i * w + j] = v.clamp(0.0, 1.0);
        }
    }
    out
}

fn blocks(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut paint = |r0: f64, r1: f64, c0: f64, c1: f64, v: f64| {
        let (r0, r1) = ((r0 * h as f64) as usize, (r1 * h as f64) as usize);
        let (c0, c1) = ((c0 * w as f64) as usize, (c1 * w as f64) as usize);
        for r in r0..r1.min(h) {
            for c in c0..c1.min(w) {
                out[r * w + c] = v;
            }
        }
    };
    if seed == 0 {
        paint(0.1, 0.9, 0.1, 0.9, 0.25);
        paint(0.2, 0.5, 0.2, 0.55, 0.5);
        paint(0.6, 0.8, 0.15, 0.45, 0.75);
        paint(0.25, 0.75, 0.62, 0.82, 1.0);
        paint(0.35, 0.45, 0.3, 0.42, 0.0);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        paint(0.08, 0.92, 0.08, 0.92, 0.25);
        let levels = [0.0, 0.5, 0.75, 1.0];
        for k in 0..6 {
            let r0 = rng.random_range(0.1..0.7);
            let c0 = rng.random_range(0.1..0.7);
            let r1 = (r0 + rng.random_range(0.1f64..0.35)).min(0.9);
            let c1 = (c0 + rng.random_range(0.1f64..0.35)).min(0.9);
            paint(r0, r1, c0, c1, levels[k % levels.len()]);
        }
    }
    out
}

fn load_natural(path: &Path, h: usize, w: usize) -> Result<Vec<f64>> {
    let (sh, sw, src) = if path.extension().is_some_and(|e| e == "cplx") {
        let img = ComplexImage::read_cplx(path)?;
        (img.height(), img.width(), img.magnitude())
    } else {
        read_pgm(&fs::read(path)?)?
    };
    let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let si = (i * sh) / h;
        for j in 0..w {
            let sj = (j * sw) / w;
            out[i * w + j] = ((src[si * sw + sj] - lo) / span).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let payload = bytes.get(pos..).ok_or_else(|| bad("missing payload"))?;
    if payload.len() < w * h * bpp {
        return Err(bad("truncated payload"));
    }
    let px = (0..w * h)
        .map(|k| {
            if bpp == 1 {
                payload[k] as f64
            } else {
                u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as f64
            }
        })
        .collect();
    Ok((h, w, px))
}

/// One of the eight flips/transposes of a square image (`k` in `0..8`).
pub fn dihedral(img: &ComplexImage, k: u8) -> ComplexImage {
    let (h, w) = img.shape();
    let transpose = k & 4 != 0 && h == w;
    ComplexImage::from_fn(h, w, |i, j| {
        let (mut si, mut sj) = if transpose { (j, i) } else { (i, j) };
        if k & 1 != 0 {
            si = h - 1 - si;
        }
        if k & 2 != 0 {
            sj = w - 1 - sj;
        }
        img.get(si, sj)
    })
}
