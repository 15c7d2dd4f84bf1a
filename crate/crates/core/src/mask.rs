//! k-space sampling masks.
//!
//! Masks store linear indices in the DC-at-`(0,0)` layout. The generators
//! reason in centered coordinates (DC at `(h/2, w/2)`) and convert through
//! [`crate::fourier::centered_to_internal`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::{centered_to_internal, internal_to_centered};

pub const DEFAULT_CENTER_FRACTION: f64 = 0.08;
pub const DEFAULT_POLY_DEGREE: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Cartesian,
    Point,
    Full,
    Custom,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Cartesian => "cartesian",
            MaskKind::Point => "point",
            MaskKind::Full => "full",
            MaskKind::Custom => "custom",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian" => Ok(MaskKind::Cartesian),
            "point" => Ok(MaskKind::Point),
            "full" => Ok(MaskKind::Full),
            "custom" => Ok(MaskKind::Custom),
            other => Err(Error::invalid(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Row selector `M` of the measurement model: the retained k-space bins.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    shape: (usize, usize),
    kept: Vec<usize>,
    kind: MaskKind,
    seed: u64,
}

impl SamplingMask {
    /// Builds a custom mask; indices are sorted and must be unique and in range.
    pub fn custom(shape: (usize, usize), mut kept: Vec<usize>) -> Result<Self> {
        let n = shape.0 * shape.1;
        if n == 0 {
            return Err(Error::invalid("mask shape must be positive"));
        }
        kept.sort_unstable();
        if kept.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("mask indices contain duplicates"));
        }
        if kept.last().is_some_and(|&k| k >= n) {
            return Err(Error::invalid("mask index out of range"));
        }
        Ok(Self {
            shape,
            kept,
            kind: MaskKind::Custom,
            seed: 0,
        })
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            shape,
            kept: (0..shape.0 * shape.1).collect(),
            kind: MaskKind::Full,
            seed: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// Number of image pixels `N`.
    pub fn n_pixels(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    /// Number of measurements `M`.
    pub fn n_kept(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn acceleration(&self) -> f64 {
        self.n_pixels() as f64 / self.n_kept() as f64
    }

    pub fn is_full(&self) -> bool {
        self.n_kept() == self.n_pixels()
    }

    /// Dense boolean view over all bins.
    pub fn indicator(&self) -> Vec<bool> {
        let mut ind = vec![false; self.n_pixels()];
        for &k in &self.kept {
            ind[k] = true;
        }
        ind
    }

    /// Rows (centered coordinates) that are sampled across their full width.
    pub fn full_rows_centered(&self) -> Vec<usize> {
        let (h, w) = self.shape;
        let mut counts = vec![0usize; h];
        for &k in &self.kept {
            counts[k / w] += 1;
        }
        let mut rows: Vec<usize> = (0..h)
            .filter(|&r| counts[r] == w)
            .map(|r| internal_to_centered(r, h))
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Text format: `height width` on the first line, then one index per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.shape.0, self.shape.1);
        for k in &self.kept {
            s.push_str(&k.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty mask file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad mask header `{header}`")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Format(format!("bad mask header `{header}`")));
        }
        let kept = lines
            .map(|l| {
                l.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad mask index `{l}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let shape = (dims[0], dims[1]);
        let mut mask = Self::custom(shape, kept).map_err(|e| Error::Format(e.to_string()))?;
        if mask.is_full() {
            mask.kind = MaskKind::Full;
        }
        Ok(mask)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Cartesian (row) mask: a fully sampled central band of
/// `floor(center_fraction * height)` rows plus uniformly random outer rows,
/// `ceil(height / R)` rows in total.
pub fn make_cartesian_mask(
    shape: (usize, usize),
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask shape must be positive"));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if !(0.0..1.0 / acceleration).contains(&center_fraction) {
        return Err(Error::invalid(format!(
            "center_fraction must lie in [0, 1/R), got {center_fraction}"
        )));
    }
    let target = (h as f64 / acceleration).ceil() as usize;
    let n_center = ((center_fraction * h as f64).floor() as usize).min(target);
    let start = h / 2 - n_center / 2;
    let mut rows: Vec<usize> = (start..start + n_center).collect();
    let mut outer: Vec<usize> = (0..h).filter(|r| !(start..start + n_center).contains(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    outer.shuffle(&mut rng);
    rows.extend(outer.into_iter().take(target - n_center));

    let mut kept = Vec::with_capacity(rows.len() * w);
    for r in rows {
        let ri = centered_to_internal(r, h);
        kept.extend((0..w).map(|c| ri * w + c));
    }
    kept.sort_unstable();
    let kind = if kept.len() == h * w {
        MaskKind::Full
    } else {
        MaskKind::Cartesian
    };
    Ok(SamplingMask {
        shape,
        kept,
        kind,
        seed,
    })
}

/// Variable-density point mask: `ceil(N / R)` bins drawn without replacement
/// with probability proportional to `(1 - d)^poly_degree`, `d` being the
/// distance from the k-space center normalized so the farthest corner is 1.
pub fn make_point_mask(shape: (usize, usize), acceleration: f64, poly_degree: f64, seed: u64) -> Result<SamplingMask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask shape must be positive"));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if !(poly_degree >= 0.0) || !poly_degree.is_finite() {
        return Err(Error::invalid("poly_degree must be a finite non-negative number"));
    }
    let n = h * w;
    let target = (n as f64 / acceleration).ceil() as usize;

    let half_h = (h / 2).max(1) as f64;
    let half_w = (w / 2).max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Efraimidis-Spirakis weighted sampling: keep the `target` largest ln(u)/weight.
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..h {
        for j in 0..w {
            let dy = (i as f64 - (h / 2) as f64) / half_h;
            let dx = (j as f64 - (w / 2) as f64) / half_w;
            let d = ((dy * dy + dx * dx) / 2.0).sqrt().min(1.0);
            let weight = (1.0 - d).powf(poly_degree);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let key = if weight > 0.0 {
                u.ln() / weight
            } else {
                f64::NEG_INFINITY
            };
            let idx = centered_to_internal(i, h) * w + centered_to_internal(j, w);
            keys.push((key, idx));
        }
    }
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = keys.into_iter().take(target).map(|(_, i)| i).collect();
    kept.sort_unstable();
    let kind = if kept.len() == n {
        MaskKind::Full
    } else {
        MaskKind::Point
    };
    Ok(SamplingMask {
        shape,
        kept,
        kind,
        seed,
    })
}

/// Normalized distance from the k-space center for an internal index.
pub fn normalized_radius(index: usize, shape: (usize, usize)) -> f64 {
    let (h, w) = shape;
    let i = internal_to_centered(index / w, h) as f64;
    let j = internal_to_centered(index % w, w) as f64;
    let dy = (i - (h / 2) as f64) / (h / 2).max(1) as f64;
    let dx = (j - (w / 2) as f64) / (w / 2).max(1) as f64;
    ((dy * dy + dx * dx) / 2.0).sqrt()
}

/// Draws a uniformly random mask with exactly `m` bins; used by tests and examples.
pub fn make_random_mask<R: Rng + ?Sized>(shape: (usize, usize), m: usize, rng: &mut R) -> Result<SamplingMask> {
    let n = shape.0 * shape.1;
    if m > n {
        return Err(Error::invalid("more bins requested than available"));
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(m);
    SamplingMask::custom(shape, all)
}
