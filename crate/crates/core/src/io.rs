//! File formats: KITTI-style binary point clouds, plain-text extrinsics and
//! intrinsics, and the binary flow-field container.
//!
//! All writers are deterministic and all round-trips are byte-exact:
//! floating point text uses Rust's shortest round-trip formatting, binary
//! payloads are little-endian `f32`.

use crate::camera::{PinholeIntrinsics, PointCloud};
use crate::flow::{FlowField, UncertaintyScale};
use crate::geometry::{Mat3, SE3Transform, Vec3};
use crate::grid::Grid;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("point cloud file size {size} is not a multiple of 16 bytes")]
    SizeNotDivisible { size: usize },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("rotation block is not orthonormal (deviation {deviation:.3e} exceeds 1e-3)")]
    NonOrthonormalRotation { deviation: f64 },
    #[error("bad magic: expected \"DXQF\"")]
    BadMagic,
    #[error("unsupported flow file version {found} (expected 1)")]
    BadVersion { found: u32 },
    #[error("flow payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
}

const FLOW_MAGIC: [u8; 4] = *b"DXQF";
const FLOW_VERSION: u32 = 1;

// Accept the rotation block as-is below this deviation, project onto the
// nearest rotation up to NON_ORTHONORMAL_HARD_LIMIT, fail beyond it.
const ORTHONORMAL_AS_IS: f64 = 1e-9;
const NON_ORTHONORMAL_HARD_LIMIT: f64 = 1e-3;

/// Reads a KITTI velodyne binary scan: little-endian `f32` quadruplets
/// `(x, y, z, reflectance)`.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud, IoError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::SizeNotDivisible { size: bytes.len() });
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| {
            f32::from_le_bytes([rec[4 * i], rec[4 * i + 1], rec[4 * i + 2], rec[4 * i + 3]]) as f64
        };
        points.push(Vec3::new(f(0), f(1), f(2)));
        intensity.push(f(3));
    }
    PointCloud::with_intensity(points, Some(intensity))
        .map_err(|e| IoError::InvalidData(e.to_string()))
}

/// Writes a cloud in the KITTI binary layout. Coordinates and intensities
/// are stored as `f32`; a missing intensity channel writes zeros.
pub fn write_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        let refl = cloud.intensity().map_or(0.0, |v| v[i]);
        for value in [p.x, p.y, p.z, refl] {
            bytes.extend_from_slice(&(value as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn content_tokens(text: &str) -> Vec<&str> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .flat_map(|line| line.split_whitespace())
        .collect()
}

fn parse_numbers(tokens: &[&str]) -> Result<Vec<f64>, IoError> {
    tokens
        .iter()
        .map(|t| {
            let v: f64 = t
                .parse()
                .map_err(|_| IoError::Malformed(format!("not a number: {t:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(IoError::Malformed(format!("non-finite value {t:?}")))
            }
        })
        .collect()
}

// Nearest rotation in the Frobenius sense via the polar decomposition.
fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut flipped = u;
        flipped.column_mut(2).scale_mut(-1.0);
        r = flipped * v_t;
    }
    r
}

/// Reads a plain-text extrinsic: 12 whitespace-separated numbers, the
/// row-major 3x4 `[R | t]` block. Lines starting with `#` are comments.
///
/// A rotation block that is orthonormal only to within 1e-3 is projected
/// onto the nearest rotation; worse deviations are rejected.
pub fn read_extrinsic(path: impl AsRef<Path>) -> Result<SE3Transform, IoError> {
    let text = std::fs::read_to_string(path)?;
    let tokens = content_tokens(&text);
    if tokens.len() != 12 {
        return Err(IoError::Malformed(format!(
            "expected 12 numbers, found {}",
            tokens.len()
        )));
    }
    let v = parse_numbers(&tokens)?;
    let rotation = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let translation = Vec3::new(v[3], v[7], v[11]);
    let deviation = (rotation.transpose() * rotation - Mat3::identity()).norm();
    let rotation = if deviation < ORTHONORMAL_AS_IS {
        rotation
    } else if deviation <= NON_ORTHONORMAL_HARD_LIMIT {
        nearest_rotation(&rotation)
    } else {
        return Err(IoError::NonOrthonormalRotation { deviation });
    };
    Ok(SE3Transform::from_parts_unchecked(rotation, translation))
}

/// Writes the row-major 3x4 `[R | t]` block on one line, using shortest
/// round-trip float formatting so `read(write(t))` is exact.
pub fn write_extrinsic(t: &SE3Transform, path: impl AsRef<Path>) -> Result<(), IoError> {
    let r = t.rotation();
    let tr = t.translation();
    let mut line = String::new();
    for row in 0..3 {
        for col in 0..3 {
            write!(line, "{} ", r[(row, col)]).expect("write to string");
        }
        write!(line, "{}", tr[row]).expect("write to string");
        if row < 2 {
            line.push(' ');
        }
    }
    line.push('\n');
    std::fs::write(path, line)?;
    Ok(())
}

/// Reads intrinsics from one content line: `fx fy cx cy width height`.
pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<PinholeIntrinsics, IoError> {
    let text = std::fs::read_to_string(path)?;
    let tokens = content_tokens(&text);
    if tokens.len() != 6 {
        return Err(IoError::Malformed(format!(
            "expected 6 values, found {}",
            tokens.len()
        )));
    }
    let v = parse_numbers(&tokens[..4])?;
    let dim = |t: &str| -> Result<u32, IoError> {
        t.parse()
            .map_err(|_| IoError::Malformed(format!("not an image extent: {t:?}")))
    };
    PinholeIntrinsics::new(v[0], v[1], v[2], v[3], dim(tokens[4])?, dim(tokens[5])?)
        .map_err(|e| IoError::InvalidData(e.to_string()))
}

pub fn write_intrinsics(k: &PinholeIntrinsics, path: impl AsRef<Path>) -> Result<(), IoError> {
    let line = format!(
        "{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    std::fs::write(path, line)?;
    Ok(())
}

/// Reads the binary flow container: magic `DXQF`, `u32` version 1, `u32`
/// width and height, then `width * height` row-major records of four
/// little-endian `f32` values `(fu, fv, q, valid)`.
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField, IoError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(IoError::TruncatedPayload {
            expected: 16,
            found: bytes.len(),
        });
    }
    if bytes[0..4] != FLOW_MAGIC {
        return Err(IoError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(4);
    if version != FLOW_VERSION {
        return Err(IoError::BadVersion { found: version });
    }
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    // Checked arithmetic: a hostile header must produce a typed error, not
    // an overflow panic or a giant allocation attempt.
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| IoError::Malformed("width * height overflows".to_string()))?;
    if bytes.len() < expected {
        return Err(IoError::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let mut fu = Grid::filled(width, height, 0.0);
    let mut fv = Grid::filled(width, height, 0.0);
    let mut q = Grid::filled(width, height, 1.0);
    let mut valid = Grid::filled(width, height, false);
    for i in 0..width * height {
        let o = 16 + i * 16;
        let f = |j: usize| {
            f32::from_le_bytes([
                bytes[o + 4 * j],
                bytes[o + 4 * j + 1],
                bytes[o + 4 * j + 2],
                bytes[o + 4 * j + 3],
            ]) as f64
        };
        let (x, y) = (i % width, i / width);
        fu.set(x, y, f(0));
        fv.set(x, y, f(1));
        q.set(x, y, f(2));
        valid.set(x, y, f(3) != 0.0);
    }
    FlowField::from_channels(fu, fv, q, valid, UncertaintyScale::Precision)
        .map_err(|e| IoError::InvalidData(e.to_string()))
}

/// Writes a precision-scale flow field; channels are narrowed to `f32`.
pub fn write_flow(field: &FlowField, path: impl AsRef<Path>) -> Result<(), IoError> {
    if field.scale() != UncertaintyScale::Precision {
        return Err(IoError::InvalidData(
            "flow files store precision-scale uncertainty; normalize after reading instead"
                .to_string(),
        ));
    }
    let (fu, fv, q, valid) = field.channels();
    let (w, h) = (field.width(), field.height());
    let mut bytes = Vec::with_capacity(16 + w * h * 16);
    bytes.extend_from_slice(&FLOW_MAGIC);
    bytes.extend_from_slice(&FLOW_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let flag = if *valid.get(x, y) { 1.0f32 } else { 0.0 };
            for value in [
                *fu.get(x, y) as f32,
                *fv.get(x, y) as f32,
                *q.get(x, y) as f32,
                flag,
            ] {
                bytes.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// One aligned LiDAR-camera pair, optionally with its true extrinsic.
#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub cloud: PointCloud,
    pub intrinsics: PinholeIntrinsics,
    pub extrinsic_gt: Option<SE3Transform>,
    pub frame_id: String,
}

impl DatasetFrame {
    pub fn new(
        cloud: PointCloud,
        intrinsics: PinholeIntrinsics,
        extrinsic_gt: Option<SE3Transform>,
        frame_id: impl Into<String>,
    ) -> Result<Self, IoError> {
        let frame_id = frame_id.into();
        if frame_id.is_empty() {
            return Err(IoError::InvalidData("frame_id must be nonempty".into()));
        }
        if cloud.is_empty() {
            return Err(IoError::InvalidData("frame cloud must be nonempty".into()));
        }
        Ok(Self {
            cloud,
            intrinsics,
            extrinsic_gt,
            frame_id,
        })
    }

    /// Loads a frame from its component files.
    pub fn load(
        cloud_path: impl AsRef<Path>,
        intrinsics_path: impl AsRef<Path>,
        extrinsic_gt_path: Option<&Path>,
        frame_id: impl Into<String>,
    ) -> Result<Self, IoError> {
        let cloud = read_point_cloud(cloud_path)?;
        let intrinsics = read_intrinsics(intrinsics_path)?;
        let extrinsic_gt = extrinsic_gt_path.map(read_extrinsic).transpose()?;
        Self::new(cloud, intrinsics, extrinsic_gt, frame_id)
    }
}
