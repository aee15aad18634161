//! Pinhole projection of LiDAR points and inverse-depth rasterization.
//!
//! A point survives projection when its camera-frame depth exceeds
//! [`MIN_DEPTH`]; rasterization assigns continuous pixel coordinates to the
//! integer cell `(floor(u), floor(v))` and keeps the point with the largest
//! inverse depth per cell (ties broken by the lowest cloud index, so the
//! result is deterministic).

use crate::geometry::{Mat3, SE3Transform, Vec3};
use crate::grid::Grid;
use nalgebra::{Matrix2x3, Vector2};
use thiserror::Error;

/// Depth cutoff in meters; anything at or below counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    InvalidFocalLength { fx: f64, fy: f64 },
    #[error("image size must be at least 8x8 (got {width}x{height})")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("point cloud contains a non-finite coordinate at index {index}")]
    NonFinitePoint { index: usize },
    #[error("intensity channel length {intensities} does not match {points} points")]
    IntensityLengthMismatch { points: usize, intensities: usize },
}

/// Pinhole camera parameters plus image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::InvalidFocalLength { fx, fy });
        }
        if width < 8 || height < 8 {
            return Err(CameraError::ImageTooSmall { width, height });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// True iff the continuous pixel position lies inside the image:
    /// `0 <= u < width` and `0 <= v < height`.
    pub fn in_scope(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// N points in the LiDAR frame, with an optional per-point intensity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, CameraError> {
        Self::with_intensity(points, None)
    }

    pub fn with_intensity(
        points: Vec<Vec3>,
        intensity: Option<Vec<f64>>,
    ) -> Result<Self, CameraError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(CameraError::NonFinitePoint { index });
            }
        }
        if let Some(ref i) = intensity {
            if i.len() != points.len() {
                return Err(CameraError::IntensityLengthMismatch {
                    points: points.len(),
                    intensities: i.len(),
                });
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rounds every coordinate (and intensity) through `f32`, so that the
    /// cloud survives the binary point-cloud format without change.
    pub fn quantized_f32(&self) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64))
                .collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|i| i.iter().map(|v| *v as f32 as f64).collect()),
        }
    }
}

/// Continuous projection of one point: pixel position and inverse depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub inv_depth: f64,
}

/// Projects a LiDAR point through extrinsic `t` and intrinsics `k`.
/// Returns `None` when the transformed point lies behind the camera
/// (depth at or below [`MIN_DEPTH`]).
pub fn project_point(t: &SE3Transform, k: &PinholeIntrinsics, p: &Vec3) -> Option<Projection> {
    let cam = t.transform_point(p);
    if cam.z <= MIN_DEPTH {
        return None;
    }
    Some(Projection {
        u: k.fx * (cam.x / cam.z) + k.cx,
        v: k.fy * (cam.y / cam.z) + k.cy,
        inv_depth: 1.0 / cam.z,
    })
}

/// Jacobian of the pixel position with respect to the LiDAR point,
/// `d(u, v)/dP = d(pi)/dX * R`. `None` when the point is behind the camera.
pub fn projection_jacobian_point(
    t: &SE3Transform,
    k: &PinholeIntrinsics,
    p: &Vec3,
) -> Option<Matrix2x3<f64>> {
    let cam = t.transform_point(p);
    Some(pixel_jacobian_wrt_camera_point(k, &cam)? * t.rotation())
}

/// Jacobian of the pixel position with respect to the camera-frame point.
pub fn pixel_jacobian_wrt_camera_point(
    k: &PinholeIntrinsics,
    cam: &Vec3,
) -> Option<Matrix2x3<f64>> {
    if cam.z <= MIN_DEPTH {
        return None;
    }
    let iz = 1.0 / cam.z;
    let iz2 = iz * iz;
    Some(Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * cam.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * cam.y * iz2,
    ))
}

/// Winning sample of one depth-image pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    /// Inverse depth of the nearest point that hit this pixel (1/m).
    pub inv_depth: f64,
    /// Index of that point in the source cloud.
    pub point_index: u32,
    /// Continuous pixel position of the winning projection.
    pub u: f64,
    /// Continuous pixel position of the winning projection.
    pub v: f64,
}

/// Sparse inverse-depth image: each occupied pixel remembers the nearest
/// projecting point and where exactly it landed.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pixels: Grid<Option<DepthSample>>,
}

impl DepthImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            pixels: Grid::filled(width, height, None),
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn sample(&self, x: usize, y: usize) -> Option<&DepthSample> {
        self.pixels.get(x, y).as_ref()
    }

    /// Inverse depth at a pixel; 0 for empty pixels.
    pub fn inv_depth(&self, x: usize, y: usize) -> f64 {
        self.sample(x, y).map_or(0.0, |s| s.inv_depth)
    }

    /// Cloud index of the winning point, if any.
    pub fn source_index(&self, x: usize, y: usize) -> Option<u32> {
        self.sample(x, y).map(|s| s.point_index)
    }

    pub fn occupied_count(&self) -> usize {
        self.pixels.data().iter().filter(|p| p.is_some()).count()
    }

    /// Iterates occupied pixels as `(x, y, sample)`.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, &DepthSample)> {
        self.pixels
            .enumerate()
            .filter_map(|(x, y, s)| s.as_ref().map(|s| (x, y, s)))
    }
}

/// Projects every cloud point and keeps, per integer pixel, the sample with
/// the largest inverse depth (nearest point). Equal inverse depths resolve
/// to the lowest cloud index.
pub fn rasterize_depth(
    cloud: &PointCloud,
    t: &SE3Transform,
    k: &PinholeIntrinsics,
) -> DepthImage {
    let mut image = DepthImage::empty(k.width as usize, k.height as usize);
    for (index, point) in cloud.points().iter().enumerate() {
        let Some(proj) = project_point(t, k, point) else {
            continue;
        };
        if !k.in_scope(proj.u, proj.v) {
            continue;
        }
        let px = proj.u.floor() as usize;
        let py = proj.v.floor() as usize;
        let candidate = DepthSample {
            inv_depth: proj.inv_depth,
            point_index: index as u32,
            u: proj.u,
            v: proj.v,
        };
        let cell = image.pixels.get_mut(px, py);
        let replace = match cell {
            None => true,
            Some(old) => {
                candidate.inv_depth > old.inv_depth
                    || (candidate.inv_depth == old.inv_depth
                        && candidate.point_index < old.point_index)
            }
        };
        if replace {
            *cell = Some(candidate);
        }
    }
    image
}

// Extrinsic mapping LiDAR (x forward, y left, z up) into camera coordinates
// (z forward, x right, y down), with a small mounting offset.
pub(crate) fn kitti_like_extrinsic() -> SE3Transform {
    let rotation = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    SE3Transform::from_parts_unchecked(rotation, Vec3::new(-0.005, -0.076, -0.272))
}

#[allow(dead_code)]
fn vector2(u: f64, v: f64) -> Vector2<f64> {
    Vector2::new(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Twist;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> PinholeIntrinsics {
        PinholeIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn intrinsics_validation() {
        assert!(matches!(
            PinholeIntrinsics::new(0.0, 1.0, 0.0, 0.0, 100, 100),
            Err(CameraError::InvalidFocalLength { .. })
        ));
        assert!(matches!(
            PinholeIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 100),
            Err(CameraError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn project_on_optical_axis() {
        let k = test_intrinsics();
        let p = project_point(&SE3Transform::identity(), &k, &Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.inv_depth), (50.0, 50.0, 0.5));
    }

    #[test]
    fn project_off_axis() {
        let k = test_intrinsics();
        let p = project_point(&SE3Transform::identity(), &k, &Vec3::new(1.0, 2.0, 10.0)).unwrap();
        assert_abs_diff_eq!(p.u, 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.v, 70.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.inv_depth, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn project_behind_camera() {
        let k = test_intrinsics();
        assert!(project_point(&SE3Transform::identity(), &k, &Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn scope_bounds() {
        let k = test_intrinsics();
        assert!(k.in_scope(0.0, 0.0));
        assert!(!k.in_scope(100.0, 50.0));
        assert!(!k.in_scope(-0.5, 50.0));
        assert!(k.in_scope(99.999, 99.999));
    }

    #[test]
    fn rasterize_empty_cloud() {
        let k = test_intrinsics();
        let image = rasterize_depth(&PointCloud::default(), &SE3Transform::identity(), &k);
        assert_eq!(image.occupied_count(), 0);
        assert_eq!(image.inv_depth(10, 10), 0.0);
    }

    #[test]
    fn nearest_point_wins_on_shared_ray() {
        let k = test_intrinsics();
        let cloud = PointCloud::new(vec![
            Vec3::new(0.1, 0.1, 5.0),
            Vec3::new(0.04, 0.04, 2.0),
        ])
        .unwrap();
        let image = rasterize_depth(&cloud, &SE3Transform::identity(), &k);
        // Both project to pixel (52, 52); the z = 2 point is nearer.
        let sample = image.sample(52, 52).unwrap();
        assert_eq!(sample.inv_depth, 0.5);
        assert_eq!(sample.point_index, 1);
        assert_eq!(image.occupied_count(), 1);
    }

    #[test]
    fn equal_depth_tie_breaks_to_lowest_index() {
        let k = test_intrinsics();
        let p = Vec3::new(0.0, 0.0, 4.0);
        let cloud = PointCloud::new(vec![p, p]).unwrap();
        let image = rasterize_depth(&cloud, &SE3Transform::identity(), &k);
        assert_eq!(image.sample(50, 50).unwrap().point_index, 0);
    }

    #[test]
    fn single_point_occupies_one_pixel() {
        let k = test_intrinsics();
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 3.0)]).unwrap();
        let image = rasterize_depth(&cloud, &SE3Transform::identity(), &k);
        assert_eq!(image.occupied_count(), 1);
        assert!(image.sample(50, 50).is_some());
    }

    #[test]
    fn stored_projection_lands_in_its_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = test_intrinsics();
        let t = SE3Transform::exp(&Twist::new(
            Vec3::new(0.02, -0.01, 0.05),
            Vec3::new(0.01, 0.02, -0.03),
        ));
        let points: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(1.0..10.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        let image = rasterize_depth(&cloud, &t, &k);
        for (x, y, sample) in image.occupied() {
            let p = &cloud.points()[sample.point_index as usize];
            let proj = project_point(&t, &k, p).unwrap();
            assert_eq!(proj.u.floor() as usize, x);
            assert_eq!(proj.v.floor() as usize, y);
            assert_eq!(proj.u, sample.u);
            assert_eq!(proj.v, sample.v);
        }
    }

    #[test]
    fn z_buffer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let k = test_intrinsics();
        let t = SE3Transform::identity();
        let points: Vec<Vec3> = (0..10_000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.5..12.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        let image = rasterize_depth(&cloud, &t, &k);

        // Brute force: per pixel, max inverse depth with min-index ties.
        let mut best: Vec<Option<(f64, u32)>> = vec![None; 100 * 100];
        for (i, p) in cloud.points().iter().enumerate() {
            if let Some(proj) = project_point(&t, &k, p) {
                if k.in_scope(proj.u, proj.v) {
                    let cell =
                        &mut best[proj.v.floor() as usize * 100 + proj.u.floor() as usize];
                    let take = match cell {
                        None => true,
                        Some((d, idx)) => {
                            proj.inv_depth > *d || (proj.inv_depth == *d && (i as u32) < *idx)
                        }
                    };
                    if take {
                        *cell = Some((proj.inv_depth, i as u32));
                    }
                }
            }
        }
        for y in 0..100 {
            for x in 0..100 {
                let expected = best[y * 100 + x];
                let got = image.sample(x, y).map(|s| (s.inv_depth, s.point_index));
                assert_eq!(got, expected, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn projection_jacobian_matches_numeric() {
        let k = test_intrinsics();
        let t = SE3Transform::exp(&Twist::new(
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(0.05, -0.02, 0.04),
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(2.0..10.0),
            );
            let Some(analytic) = projection_jacobian_point(&t, &k, &p) else {
                continue;
            };
            let h = 1e-6;
            for axis in 0..3 {
                let mut dp = Vec3::zeros();
                dp[axis] = h;
                let plus = project_point(&t, &k, &(p + dp)).unwrap();
                let minus = project_point(&t, &k, &(p - dp)).unwrap();
                let du = (plus.u - minus.u) / (2.0 * h);
                let dv = (plus.v - minus.v) / (2.0 * h);
                let scale = analytic[(0, axis)].abs().max(1.0);
                assert!((du - analytic[(0, axis)]).abs() / scale < 1e-6);
                let scale = analytic[(1, axis)].abs().max(1.0);
                assert!((dv - analytic[(1, axis)]).abs() / scale < 1e-6);
            }
        }
    }

    #[test]
    fn f32_quantization_is_idempotent() {
        let cloud = PointCloud::new(vec![Vec3::new(0.1, 0.2, 0.3)]).unwrap();
        let q = cloud.quantized_f32();
        assert_eq!(q.quantized_f32(), q);
        assert_ne!(q.points()[0].x, 0.1);
        assert_eq!(q.points()[0].x, 0.1f32 as f64);
    }
}
