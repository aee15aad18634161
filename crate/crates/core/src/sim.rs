//! Synthetic data generation: point clouds shaped to a camera frustum,
//! ground-truth extrinsics with random perturbations, oracle calibration
//! flow, and controlled noise, outlier and uncertainty injection.
//!
//! Everything is deterministic per seed. Scene generation draws from
//! `SceneConfig::seed`, corruption from `NoiseConfig::seed`, and the
//! experiment seed drives the extrinsic perturbation, so the three stages
//! can be varied independently.

use crate::camera::{kitti_like_extrinsic, DepthImage, PinholeIntrinsics, PointCloud};
use crate::flow::{
    flow_for_depth, FlowError, FlowField, FlowProvider, FlowRequest,
};
use crate::geometry::{
    make_initial_extrinsic, sample_perturbation, PerturbRange, SE3Transform, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidScene(String),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error("invalid config file: {0}")]
    InvalidConfig(String),
}

/// Spatial layout of the generated cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Points uniform over the visible frustum.
    UniformFrustum,
    /// Points on [`PLANE_COUNT`] random planes facing the camera.
    Planes,
    /// Points in [`CLUSTER_COUNT`] compact blobs inside the frustum.
    Clusters,
}

pub const PLANE_COUNT: usize = 3;
pub const CLUSTER_COUNT: usize = 5;

/// Scene generation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub n_points: usize,
    /// Camera-frame depth interval (meters), `0 < min < max`.
    pub depth_range: (f64, f64),
    /// Fraction of the image shaved off each border when sampling pixels.
    pub fov_margin: f64,
    pub geometry: Geometry,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_points < 1 {
            return Err(SimError::InvalidScene("n_points must be >= 1".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(SimError::InvalidScene(format!(
                "depth range must satisfy 0 < min < max (got {lo}..{hi})"
            )));
        }
        if !(0.0..0.5).contains(&self.fov_margin) {
            return Err(SimError::InvalidScene(
                "fov_margin must be in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Flow corruption parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Isotropic Gaussian noise per flow component (pixels).
    pub flow_sigma: f64,
    /// Fraction of valid pixels replaced by gross errors.
    pub outlier_fraction: f64,
    /// Per-component bound of the uniform outlier error (pixels).
    pub outlier_magnitude: f64,
    /// When set, the injected `q` is the true precision of the injected
    /// noise (outliers get a large effective sigma); otherwise `q` is 1.
    pub uncertainty_informative: bool,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            flow_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_magnitude: 0.0,
            uncertainty_informative: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.flow_sigma < 0.0 {
            return Err(SimError::InvalidNoise("flow_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(SimError::InvalidNoise(
                "outlier_fraction must be in [0, 1]".into(),
            ));
        }
        if self.outlier_fraction > 0.0 && self.outlier_magnitude <= self.flow_sigma {
            return Err(SimError::InvalidNoise(
                "outlier_magnitude must exceed flow_sigma when outliers are requested".into(),
            ));
        }
        Ok(())
    }
}

/// Default LiDAR-to-camera pose: the usual axis permutation (x forward to
/// z forward) plus a small mounting offset.
pub fn default_extrinsic() -> SE3Transform {
    kitti_like_extrinsic()
}

fn pixel_ray(k: &PinholeIntrinsics, u: f64, v: f64) -> Vec3 {
    Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
}

struct PixelBox {
    u_lo: f64,
    u_hi: f64,
    v_lo: f64,
    v_hi: f64,
}

fn margin_box(cfg: &SceneConfig, k: &PinholeIntrinsics) -> PixelBox {
    let mu = cfg.fov_margin * k.width as f64;
    let mv = cfg.fov_margin * k.height as f64;
    PixelBox {
        u_lo: mu,
        u_hi: k.width as f64 - mu,
        v_lo: mv,
        v_hi: k.height as f64 - mv,
    }
}

const SAMPLE_RETRIES: usize = 200;

fn uniform_frustum_points(
    cfg: &SceneConfig,
    k: &PinholeIntrinsics,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec3> {
    let bx = margin_box(cfg, k);
    (0..cfg.n_points)
        .map(|_| {
            let u = rng.random_range(bx.u_lo..bx.u_hi);
            let v = rng.random_range(bx.v_lo..bx.v_hi);
            let z = rng.random_range(cfg.depth_range.0..cfg.depth_range.1);
            pixel_ray(k, u, v) * z
        })
        .collect()
}

fn plane_points(cfg: &SceneConfig, k: &PinholeIntrinsics, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let bx = margin_box(cfg, k);
    let (d_lo, d_hi) = cfg.depth_range;
    let span = d_hi - d_lo;
    let mut points = Vec::with_capacity(cfg.n_points);
    let base = cfg.n_points / PLANE_COUNT;
    for plane in 0..PLANE_COUNT {
        let count = if plane + 1 == PLANE_COUNT {
            cfg.n_points - base * (PLANE_COUNT - 1)
        } else {
            base
        };
        let uc = rng.random_range(bx.u_lo..bx.u_hi);
        let vc = rng.random_range(bx.v_lo..bx.v_hi);
        let d0 = rng.random_range(d_lo + 0.25 * span..d_hi - 0.25 * span);
        let anchor = pixel_ray(k, uc, vc) * d0;
        // Normal tilted away from the central viewing ray by a bounded
        // random amount, so every ray in the box still hits the plane.
        let tilt = Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        let normal = (-pixel_ray(k, uc, vc).normalize() + tilt).normalize();
        for _ in 0..count {
            let mut accepted = None;
            for _ in 0..SAMPLE_RETRIES {
                let u = rng.random_range(bx.u_lo..bx.u_hi);
                let v = rng.random_range(bx.v_lo..bx.v_hi);
                let ray = pixel_ray(k, u, v);
                let denom = normal.dot(&ray);
                if denom.abs() < 1e-6 {
                    continue;
                }
                let t = normal.dot(&anchor) / denom;
                let p = ray * t;
                accepted = Some(p);
                if t >= d_lo && t <= d_hi {
                    break;
                }
            }
            points.push(accepted.expect("plane sampling produced a candidate"));
        }
    }
    points
}

fn cluster_points(cfg: &SceneConfig, k: &PinholeIntrinsics, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let bx = margin_box(cfg, k);
    let (d_lo, d_hi) = cfg.depth_range;
    let sigma = 0.05 * (d_hi - d_lo);
    let centers: Vec<Vec3> = (0..CLUSTER_COUNT)
        .map(|_| {
            let u = rng.random_range(bx.u_lo..bx.u_hi);
            let v = rng.random_range(bx.v_lo..bx.v_hi);
            let z = rng.random_range(d_lo + 0.2 * (d_hi - d_lo)..d_hi - 0.2 * (d_hi - d_lo));
            pixel_ray(k, u, v) * z
        })
        .collect();
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    (0..cfg.n_points)
        .map(|i| {
            let center = centers[i % CLUSTER_COUNT];
            for _ in 0..SAMPLE_RETRIES {
                let p = center
                    + Vec3::new(
                        normal.sample(rng),
                        normal.sample(rng),
                        normal.sample(rng),
                    );
                if p.z < d_lo || p.z > d_hi {
                    continue;
                }
                let u = k.fx * (p.x / p.z) + k.cx;
                let v = k.fy * (p.y / p.z) + k.cy;
                if k.in_scope(u, v) {
                    return p;
                }
            }
            center
        })
        .collect()
}

/// Generates a cloud whose points project inside the image under `t_gt`.
/// Points are built in the camera frame and mapped back to the LiDAR frame
/// through `t_gt^-1`; deterministic per `cfg.seed`.
pub fn generate_scene(
    cfg: &SceneConfig,
    k: &PinholeIntrinsics,
    t_gt: &SE3Transform,
) -> Result<PointCloud, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cam_points = match cfg.geometry {
        Geometry::UniformFrustum => uniform_frustum_points(cfg, k, &mut rng),
        Geometry::Planes => plane_points(cfg, k, &mut rng),
        Geometry::Clusters => cluster_points(cfg, k, &mut rng),
    };
    let inv = t_gt.inverse();
    let points = cam_points.iter().map(|p| inv.transform_point(p)).collect();
    PointCloud::new(points).map_err(|e| SimError::InvalidScene(e.to_string()))
}

const SIGMA_FLOOR: f64 = 1e-6;

/// Corrupts a flow field: adds isotropic Gaussian noise of `flow_sigma`
/// pixels to valid pixels and replaces an `outlier_fraction` of them with
/// per-component uniform errors up to `outlier_magnitude`. With informative
/// uncertainty the per-pixel precision is `1/sigma_eff^2` (outliers get the
/// uniform distribution's sigma); otherwise `q` is 1 everywhere.
pub fn corrupt_flow(gt: &FlowField, cfg: &NoiseConfig) -> Result<FlowField, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gaussian = Normal::new(0.0, cfg.flow_sigma.max(SIGMA_FLOOR)).expect("valid sigma");
    let outlier_sigma = cfg.outlier_magnitude / 3.0_f64.sqrt();
    let mut out = FlowField::invalid(gt.width(), gt.height());
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let Some((fu, fv)) = gt.flow_at(x, y) else {
                continue;
            };
            let is_outlier =
                cfg.outlier_fraction > 0.0 && rng.random_range(0.0..1.0) < cfg.outlier_fraction;
            let (du, dv, sigma_eff) = if is_outlier {
                (
                    rng.random_range(-cfg.outlier_magnitude..cfg.outlier_magnitude),
                    rng.random_range(-cfg.outlier_magnitude..cfg.outlier_magnitude),
                    outlier_sigma,
                )
            } else if cfg.flow_sigma > 0.0 {
                (
                    gaussian.sample(&mut rng),
                    gaussian.sample(&mut rng),
                    cfg.flow_sigma,
                )
            } else {
                (0.0, 0.0, SIGMA_FLOOR)
            };
            let q = if cfg.uncertainty_informative {
                1.0 / (sigma_eff * sigma_eff)
            } else {
                1.0
            };
            out.set_sample(x, y, fu + du, fv + dv, q);
        }
    }
    Ok(out)
}

/// Everything one synthetic calibration trial produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cloud: PointCloud,
    pub t_gt: SE3Transform,
    pub t_init: SE3Transform,
    /// The perturbation that was applied: `t_init = t_gt * d_true^-1`.
    pub d_true: SE3Transform,
    pub depth: DepthImage,
    pub flow_gt: FlowField,
    pub flow_noisy: FlowField,
}

/// Full pipeline against the default LiDAR-camera pose: perturb, rasterize,
/// build ground-truth flow, corrupt it. The experiment `seed` drives only
/// the perturbation.
pub fn make_experiment(
    scene: &SceneConfig,
    noise: &NoiseConfig,
    range: &PerturbRange,
    k: &PinholeIntrinsics,
    seed: u64,
) -> Result<Experiment, SimError> {
    make_experiment_with(&default_extrinsic(), scene, noise, range, k, seed)
}

/// As [`make_experiment`] with an explicit ground-truth extrinsic.
pub fn make_experiment_with(
    t_gt: &SE3Transform,
    scene: &SceneConfig,
    noise: &NoiseConfig,
    range: &PerturbRange,
    k: &PinholeIntrinsics,
    seed: u64,
) -> Result<Experiment, SimError> {
    let cloud = generate_scene(scene, k, t_gt)?;
    experiment_from_cloud(cloud, t_gt, noise, range, k, seed)
}

/// As [`make_experiment_with`] but with the cloud quantized through `f32`
/// before any flow is derived, so a bundle written to the binary cloud
/// format stays bit-exactly consistent with its own flow files.
pub fn make_experiment_quantized(
    t_gt: &SE3Transform,
    scene: &SceneConfig,
    noise: &NoiseConfig,
    range: &PerturbRange,
    k: &PinholeIntrinsics,
    seed: u64,
) -> Result<Experiment, SimError> {
    let cloud = generate_scene(scene, k, t_gt)?.quantized_f32();
    experiment_from_cloud(cloud, t_gt, noise, range, k, seed)
}

fn experiment_from_cloud(
    cloud: PointCloud,
    t_gt: &SE3Transform,
    noise: &NoiseConfig,
    range: &PerturbRange,
    k: &PinholeIntrinsics,
    seed: u64,
) -> Result<Experiment, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_true = sample_perturbation(range, &mut rng);
    let t_init = make_initial_extrinsic(t_gt, &d_true);
    let depth = crate::camera::rasterize_depth(&cloud, &t_init, k);
    let flow_gt = flow_for_depth(&depth, &cloud, t_gt, k);
    let flow_noisy = corrupt_flow(&flow_gt, noise)?;
    Ok(Experiment {
        cloud,
        t_gt: *t_gt,
        t_init,
        d_true,
        depth,
        flow_gt,
        flow_noisy,
    })
}

/// Flow provider backed by the ground truth extrinsic, optionally degraded
/// by a noise model. Deterministic: every prediction for the same request
/// uses the configured noise seed.
pub struct OracleFlowProvider {
    pub t_gt: SE3Transform,
    pub noise: Option<NoiseConfig>,
}

impl FlowProvider for OracleFlowProvider {
    fn predict(&mut self, request: &FlowRequest<'_>) -> Result<FlowField, FlowError> {
        let clean = flow_for_depth(
            request.depth,
            request.cloud,
            &self.t_gt,
            request.intrinsics,
        );
        match &self.noise {
            None => Ok(clean),
            Some(cfg) => corrupt_flow(&clean, cfg).map_err(|e| FlowError::InvalidSample {
                x: 0,
                y: 0,
                reason: e.to_string(),
            }),
        }
    }
}

/// Bundle of everything the `simulate` pipeline needs, as read from a
/// config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub range: PerturbRange,
    pub intrinsics: PinholeIntrinsics,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                n_points: 4000,
                depth_range: (2.0, 40.0),
                fov_margin: 0.04,
                geometry: Geometry::UniformFrustum,
                seed: 1,
            },
            noise: NoiseConfig {
                flow_sigma: 0.5,
                outlier_fraction: 0.2,
                outlier_magnitude: 50.0,
                uncertainty_informative: true,
                seed: 2,
            },
            range: PerturbRange::new(0.10, 5.0_f64.to_radians()).expect("valid defaults"),
            intrinsics: PinholeIntrinsics::new(350.0, 350.0, 319.5, 95.5, 640, 192)
                .expect("valid defaults"),
            seed: 42,
        }
    }
}

/// Parses the sectioned `key = value` config format:
///
/// ```text
/// seed = 42
/// [scene]
/// n_points = 4000
/// depth_min = 2.0
/// depth_max = 40.0
/// fov_margin = 0.04
/// geometry = uniform-frustum   # or: planes | clusters
/// seed = 1
/// [noise]
/// flow_sigma = 0.5
/// outlier_fraction = 0.2
/// outlier_magnitude = 50
/// informative = true
/// seed = 2
/// [perturb]
/// max_translation_m = 0.10
/// max_rotation_deg = 5.0
/// [camera]
/// fx = 350
/// fy = 350
/// cx = 319.5
/// cy = 95.5
/// width = 640
/// height = 192
/// ```
///
/// Missing keys keep their defaults; unknown sections or keys are errors.
pub fn parse_sim_config(text: &str) -> Result<SimConfig, SimError> {
    let mut cfg = SimConfig::default();
    let mut max_translation = cfg.range.max_translation();
    let mut max_rotation_deg = cfg.range.max_rotation().to_degrees();
    let mut cam = [
        cfg.intrinsics.fx,
        cfg.intrinsics.fy,
        cfg.intrinsics.cx,
        cfg.intrinsics.cy,
        cfg.intrinsics.width as f64,
        cfg.intrinsics.height as f64,
    ];
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            if !["scene", "noise", "perturb", "camera"].contains(&section.as_str()) {
                return Err(SimError::InvalidConfig(format!(
                    "unknown section [{section}] on line {}",
                    lineno + 1
                )));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SimError::InvalidConfig(format!(
                "expected key = value on line {}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad_key = || {
            SimError::InvalidConfig(format!(
                "unknown key {key:?} in section [{section}] on line {}",
                lineno + 1
            ))
        };
        let num = |v: &str| -> Result<f64, SimError> {
            v.parse()
                .map_err(|_| SimError::InvalidConfig(format!("not a number: {v:?}")))
        };
        let int = |v: &str| -> Result<u64, SimError> {
            v.parse()
                .map_err(|_| SimError::InvalidConfig(format!("not an integer: {v:?}")))
        };
        match section.as_str() {
            "" => match key {
                "seed" => cfg.seed = int(value)?,
                _ => return Err(bad_key()),
            },
            "scene" => match key {
                "n_points" => cfg.scene.n_points = int(value)? as usize,
                "depth_min" => cfg.scene.depth_range.0 = num(value)?,
                "depth_max" => cfg.scene.depth_range.1 = num(value)?,
                "fov_margin" => cfg.scene.fov_margin = num(value)?,
                "geometry" => {
                    cfg.scene.geometry = match value {
                        "uniform-frustum" => Geometry::UniformFrustum,
                        "planes" => Geometry::Planes,
                        "clusters" => Geometry::Clusters,
                        other => {
                            return Err(SimError::InvalidConfig(format!(
                                "unknown geometry {other:?}"
                            )))
                        }
                    }
                }
                "seed" => cfg.scene.seed = int(value)?,
                _ => return Err(bad_key()),
            },
            "noise" => match key {
                "flow_sigma" => cfg.noise.flow_sigma = num(value)?,
                "outlier_fraction" => cfg.noise.outlier_fraction = num(value)?,
                "outlier_magnitude" => cfg.noise.outlier_magnitude = num(value)?,
                "informative" => {
                    cfg.noise.uncertainty_informative = match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        other => {
                            return Err(SimError::InvalidConfig(format!(
                                "not a boolean: {other:?}"
                            )))
                        }
                    }
                }
                "seed" => cfg.noise.seed = int(value)?,
                _ => return Err(bad_key()),
            },
            "perturb" => match key {
                "max_translation_m" => max_translation = num(value)?,
                "max_rotation_deg" => max_rotation_deg = num(value)?,
                _ => return Err(bad_key()),
            },
            "camera" => {
                let slot = match key {
                    "fx" => 0,
                    "fy" => 1,
                    "cx" => 2,
                    "cy" => 3,
                    "width" => 4,
                    "height" => 5,
                    _ => return Err(bad_key()),
                };
                cam[slot] = num(value)?;
            }
            _ => unreachable!("section validated above"),
        }
    }
    cfg.scene.validate()?;
    cfg.noise.validate()?;
    cfg.range = PerturbRange::new(max_translation, max_rotation_deg.to_radians())
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    cfg.intrinsics =
        PinholeIntrinsics::new(cam[0], cam[1], cam[2], cam[3], cam[4] as u32, cam[5] as u32)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    Ok(cfg)
}
