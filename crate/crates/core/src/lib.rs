//! LiDAR-camera extrinsic calibration toolkit.
//!
//! The crate implements the geometric core of flow-based extrinsic
//! calibration: pinhole projection of LiDAR points into a depth image,
//! per-pixel calibration flow with scalar uncertainty, an all-pairs
//! correlation pyramid, and an uncertainty-gated Gauss-Newton pose
//! refiner that is differentiable with respect to the 2D targets.
//! A deterministic simulator and KITTI-format readers make the whole
//! pipeline testable without any learned components.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`geometry`] — SE(3) arithmetic, Euler conversions, perturbation sampling
//! - [`camera`] — pinhole projection and inverse-depth rasterization
//! - [`flow`] — calibration-flow fields, uncertainty handling, flow loss
//! - [`correlation`] — 4D correlation volume, pooled pyramid, radius lookup
//! - [`solver`] — correspondences, weighted/gated Gauss-Newton, pose Jacobian
//! - [`metrics`] — extrinsic error metrics, aggregation, regression
//! - [`sim`] — synthetic scenes, noise injection, end-to-end experiments
//! - [`io`] — point-cloud / extrinsic / intrinsics / flow file formats
//!
//! # Quick start
//!
//! Simulate a perturbed extrinsic, build correspondences from the oracle
//! flow, and recover the perturbation:
//!
//! ```
//! use calibflow::camera::PinholeIntrinsics;
//! use calibflow::geometry::PerturbRange;
//! use calibflow::metrics::calibration_error;
//! use calibflow::sim::{make_experiment, Geometry, NoiseConfig, SceneConfig};
//! use calibflow::solver::{correspondences_from_flow, solve_weighted, SolveOptions};
//!
//! let k = PinholeIntrinsics::new(200.0, 200.0, 128.0, 64.0, 256, 128)?;
//! let scene = SceneConfig {
//!     n_points: 400,
//!     depth_range: (2.0, 20.0),
//!     fov_margin: 0.05,
//!     geometry: Geometry::UniformFrustum,
//!     seed: 1,
//! };
//! let range = PerturbRange::new(0.10, 5.0_f64.to_radians())?;
//! let exp = make_experiment(&scene, &NoiseConfig::noiseless(2), &range, &k, 3)?;
//! let cs = correspondences_from_flow(&exp.depth, &exp.cloud, &exp.flow_gt, &k);
//! let report = solve_weighted(&exp.t_init, &cs, &k, &SolveOptions::default())?;
//! let err = calibration_error(&report.predicted_extrinsic(&exp.t_init), &exp.t_gt)?;
//! assert!(err.e_t < 1e-6 && err.e_r < 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod camera;
pub mod correlation;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod solver;

pub use camera::{DepthImage, PinholeIntrinsics, PointCloud, Projection};
pub use correlation::{CorrelationPyramid, CorrelationVolume, FeatureMap};
pub use flow::{FlowField, FlowProvider, FlowSequence, UncertaintyScale};
pub use geometry::{EulerAngles, PerturbRange, SE3Transform, Twist};
pub use grid::Grid;
pub use io::DatasetFrame;
pub use metrics::{CalibrationError, ErrorSummary, RegressionResult};
pub use sim::{Experiment, Geometry, NoiseConfig, SceneConfig, SimConfig};
pub use solver::{Correspondence, CorrespondenceSet, SolveOptions, SolveReport};
