//! All-pairs feature correlation: a 4D volume of dot products, a 4-level
//! average-pooled pyramid over its last two dimensions, and bilinear radius
//! lookup around externally supplied correspondence coordinates.
//!
//! Feature maps arrive from outside (test fixtures or the simulator); the
//! volume, pyramid and lookup are fully deterministic.

use crate::grid::Grid;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("feature dimensions differ: {0} vs {1}")]
    FeatureDimMismatch(usize, usize),
    #[error("map size {width}x{height} must be divisible by 8")]
    NotDivisibleByEight { width: usize, height: usize },
    #[error("coordinate grid is {0}x{1} but the volume's source plane is {2}x{3}")]
    CoordGridMismatch(usize, usize, usize, usize),
}

/// H x W grid of D-dimensional feature vectors, stored row-major with the
/// feature dimension contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        assert!(dim >= 1, "feature dimension must be at least 1");
        Self {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut map = Self::zeros(width, height, dim);
        for y in 0..height {
            for x in 0..width {
                for d in 0..dim {
                    let v = f(x, y, d);
                    map.data[(y * width + x) * dim + d] = v;
                }
            }
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// 4D similarity volume over source pixels (i, j) and target pixels (k, h).
///
/// `shape = (src_h, src_w, tgt_h, tgt_w)`, indexed `[j, i, h, k]` in
/// row-major order with the target plane innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    src_w: usize,
    src_h: usize,
    tgt_w: usize,
    tgt_h: usize,
    data: Vec<f64>,
}

impl CorrelationVolume {
    pub fn zeros(src_w: usize, src_h: usize, tgt_w: usize, tgt_h: usize) -> Self {
        Self {
            src_w,
            src_h,
            tgt_w,
            tgt_h,
            data: vec![0.0; src_w * src_h * tgt_w * tgt_h],
        }
    }

    pub fn source_size(&self) -> (usize, usize) {
        (self.src_w, self.src_h)
    }

    pub fn target_size(&self) -> (usize, usize) {
        (self.tgt_w, self.tgt_h)
    }

    #[inline]
    fn index(&self, sx: usize, sy: usize, tx: usize, ty: usize) -> usize {
        ((sy * self.src_w + sx) * self.tgt_h + ty) * self.tgt_w + tx
    }

    pub fn get(&self, sx: usize, sy: usize, tx: usize, ty: usize) -> f64 {
        self.data[self.index(sx, sy, tx, ty)]
    }

    pub fn set(&mut self, sx: usize, sy: usize, tx: usize, ty: usize, value: f64) {
        let i = self.index(sx, sy, tx, ty);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean over all entries.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample of the target plane of source pixel (sx, sy) at the
    /// continuous position (tx, ty); out-of-bounds contributions are zero.
    pub fn sample_bilinear(&self, sx: usize, sy: usize, tx: f64, ty: f64) -> f64 {
        let x0 = tx.floor();
        let y0 = ty.floor();
        let wx = tx - x0;
        let wy = ty - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0i64, 1.0 - wy), (1, wy)] {
            for (dx, wx) in [(0i64, 1.0 - wx), (1, wx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let cx = x0 as i64 + dx;
                let cy = y0 as i64 + dy;
                if cx < 0 || cy < 0 || cx >= self.tgt_w as i64 || cy >= self.tgt_h as i64 {
                    continue;
                }
                acc += w * self.get(sx, sy, cx as usize, cy as usize);
            }
        }
        acc
    }
}

/// Builds the all-pairs dot-product volume `C[i,j,k,h] = <a(i,j), b(k,h)>`.
///
/// Both maps need the same feature dimension, and both extents of each map
/// must be divisible by 8 so the three pyramid poolings stay exact.
pub fn build_correlation_volume(
    a: &FeatureMap,
    b: &FeatureMap,
) -> Result<CorrelationVolume, CorrelationError> {
    if a.dim() != b.dim() {
        return Err(CorrelationError::FeatureDimMismatch(a.dim(), b.dim()));
    }
    for m in [a, b] {
        if m.width() % 8 != 0 || m.height() % 8 != 0 {
            return Err(CorrelationError::NotDivisibleByEight {
                width: m.width(),
                height: m.height(),
            });
        }
    }
    let mut vol = CorrelationVolume::zeros(a.width(), a.height(), b.width(), b.height());
    for sy in 0..a.height() {
        for sx in 0..a.width() {
            let fa = a.feature(sx, sy);
            for ty in 0..b.height() {
                for tx in 0..b.width() {
                    let fb = b.feature(tx, ty);
                    let dot: f64 = fa.iter().zip(fb).map(|(x, y)| x * y).sum();
                    vol.set(sx, sy, tx, ty, dot);
                }
            }
        }
    }
    Ok(vol)
}

/// Four volumes: the input plus three 2x2 average poolings of the target
/// plane. Level k has target extent `1/2^(k-1)` of the original.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPyramid {
    levels: Vec<CorrelationVolume>,
}

impl CorrelationPyramid {
    pub const LEVELS: usize = 4;

    pub fn levels(&self) -> &[CorrelationVolume] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &CorrelationVolume {
        &self.levels[k]
    }
}

fn pool_last_two(v: &CorrelationVolume) -> CorrelationVolume {
    let (tw, th) = v.target_size();
    let (sw, sh) = v.source_size();
    let mut out = CorrelationVolume::zeros(sw, sh, tw / 2, th / 2);
    for sy in 0..sh {
        for sx in 0..sw {
            for ty in 0..th / 2 {
                for tx in 0..tw / 2 {
                    let sum = v.get(sx, sy, 2 * tx, 2 * ty)
                        + v.get(sx, sy, 2 * tx + 1, 2 * ty)
                        + v.get(sx, sy, 2 * tx, 2 * ty + 1)
                        + v.get(sx, sy, 2 * tx + 1, 2 * ty + 1);
                    out.set(sx, sy, tx, ty, sum * 0.25);
                }
            }
        }
    }
    out
}

/// Stacks the volume with three consecutive 2x2 average poolings of its
/// target plane into a 4-level pyramid.
pub fn build_pyramid(volume: CorrelationVolume) -> Result<CorrelationPyramid, CorrelationError> {
    let (tw, th) = volume.target_size();
    if tw % 8 != 0 || th % 8 != 0 {
        return Err(CorrelationError::NotDivisibleByEight {
            width: tw,
            height: th,
        });
    }
    let mut levels = Vec::with_capacity(CorrelationPyramid::LEVELS);
    levels.push(volume);
    for _ in 1..CorrelationPyramid::LEVELS {
        let next = pool_last_two(levels.last().expect("at least one level"));
        levels.push(next);
    }
    Ok(CorrelationPyramid { levels })
}

/// For every source pixel, samples the `(2r+1)^2` integer-offset
/// neighborhood around `coords / 2^(k-1)` at each pyramid level with
/// bilinear interpolation (zero outside bounds) and concatenates the levels
/// into a feature vector of length `4 * (2r+1)^2`.
///
/// Within one level the offsets run row-major: `dy` from `-r` to `r`
/// outermost, `dx` innermost.
pub fn lookup(
    pyramid: &CorrelationPyramid,
    coords: &Grid<[f64; 2]>,
    radius: usize,
) -> Result<FeatureMap, CorrelationError> {
    let (sw, sh) = pyramid.level(0).source_size();
    if coords.width() != sw || coords.height() != sh {
        return Err(CorrelationError::CoordGridMismatch(
            coords.width(),
            coords.height(),
            sw,
            sh,
        ));
    }
    let side = 2 * radius + 1;
    let per_level = side * side;
    let dim = CorrelationPyramid::LEVELS * per_level;
    let r = radius as i64;
    let mut out = FeatureMap::zeros(sw, sh, dim);
    for sy in 0..sh {
        for sx in 0..sw {
            let [cx, cy] = *coords.get(sx, sy);
            let mut channel = 0;
            for (li, level) in pyramid.levels().iter().enumerate() {
                let scale = 1.0 / (1 << li) as f64;
                let lx = cx * scale;
                let ly = cy * scale;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let v = level.sample_bilinear(sx, sy, lx + dx as f64, ly + dy as f64);
                        out.data[(sy * sw + sx) * dim + channel] = v;
                        channel += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}
