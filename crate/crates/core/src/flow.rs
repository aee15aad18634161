//! Calibration flow: the per-pixel 2D displacement between a point's
//! projection under the initial (drifted) extrinsic and under the true one,
//! together with a scalar per-pixel uncertainty.
//!
//! The uncertainty channel `q` has two orientations, tracked by
//! [`UncertaintyScale`]: raw fields carry a *precision* (larger = more
//! confident, `sigma = 1/q`), while [`FlowField::normalize_uncertainty`]
//! rescales `sigma` to `[0, 1]` per frame (1 = worst) for gating.

use crate::camera::{project_point, rasterize_depth, DepthImage, PinholeIntrinsics, PointCloud};
use crate::geometry::SE3Transform;
use crate::grid::Grid;
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("flow field dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no valid pixels available")]
    EmptyValidSet,
    #[error("sigma components must be positive (got {0}, {1})")]
    NonPositiveSigma(f64, f64),
    #[error("invalid sample at ({x}, {y}): {reason}")]
    InvalidSample { x: usize, y: usize, reason: String },
    #[error("a flow sequence needs at least one field")]
    EmptySequence,
}

/// Orientation of the `q` channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyScale {
    /// `q` is a precision: larger means more confident, `sigma = 1/q`.
    Precision,
    /// `q` is a min-max normalized uncertainty in `[0, 1]`: 1 is worst.
    NormalizedUncertainty,
}

/// Two-channel flow with per-pixel uncertainty and a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    fu: Grid<f64>,
    fv: Grid<f64>,
    q: Grid<f64>,
    valid: Grid<bool>,
    scale: UncertaintyScale,
}

impl FlowField {
    /// A field with every pixel invalid.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            fu: Grid::filled(width, height, 0.0),
            fv: Grid::filled(width, height, 0.0),
            q: Grid::filled(width, height, 1.0),
            valid: Grid::filled(width, height, false),
            scale: UncertaintyScale::Precision,
        }
    }

    /// Assembles a field from channels, validating the per-pixel invariants:
    /// finite flow everywhere valid, and `q > 0` (precision scale) or
    /// finite `q` (normalized scale).
    pub fn from_channels(
        fu: Grid<f64>,
        fv: Grid<f64>,
        q: Grid<f64>,
        valid: Grid<bool>,
        scale: UncertaintyScale,
    ) -> Result<Self, FlowError> {
        if !(fu.same_size(&fv) && fu.same_size(&q) && fu.same_size(&valid)) {
            return Err(FlowError::DimensionMismatch(
                fu.width(),
                fu.height(),
                valid.width(),
                valid.height(),
            ));
        }
        for (x, y, &ok) in valid.enumerate() {
            if !ok {
                continue;
            }
            let (u, v, qv) = (*fu.get(x, y), *fv.get(x, y), *q.get(x, y));
            if !(u.is_finite() && v.is_finite()) {
                return Err(FlowError::InvalidSample {
                    x,
                    y,
                    reason: format!("non-finite flow ({u}, {v})"),
                });
            }
            let q_ok = match scale {
                UncertaintyScale::Precision => qv.is_finite() && qv > 0.0,
                UncertaintyScale::NormalizedUncertainty => qv.is_finite(),
            };
            if !q_ok {
                return Err(FlowError::InvalidSample {
                    x,
                    y,
                    reason: format!("invalid uncertainty {qv}"),
                });
            }
        }
        Ok(Self {
            fu,
            fv,
            q,
            valid,
            scale,
        })
    }

    pub fn width(&self) -> usize {
        self.fu.width()
    }

    pub fn height(&self) -> usize {
        self.fu.height()
    }

    pub fn scale(&self) -> UncertaintyScale {
        self.scale
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.valid.get(x, y)
    }

    /// Flow vector at a valid pixel; `None` where invalid.
    pub fn flow_at(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        self.is_valid(x, y)
            .then(|| (*self.fu.get(x, y), *self.fv.get(x, y)))
    }

    pub fn q_at(&self, x: usize, y: usize) -> Option<f64> {
        self.is_valid(x, y).then(|| *self.q.get(x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    pub fn valid_mask(&self) -> &Grid<bool> {
        &self.valid
    }

    /// Marks a pixel valid with the given flow and uncertainty.
    pub fn set_sample(&mut self, x: usize, y: usize, fu: f64, fv: f64, q: f64) {
        self.fu.set(x, y, fu);
        self.fv.set(x, y, fv);
        self.q.set(x, y, q);
        self.valid.set(x, y, true);
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid.set(x, y, false);
    }

    pub(crate) fn channels(&self) -> (&Grid<f64>, &Grid<f64>, &Grid<f64>, &Grid<bool>) {
        (&self.fu, &self.fv, &self.q, &self.valid)
    }

    /// Rescales the uncertainty to `[0, 1]` by per-frame min-max, with 1 the
    /// worst pixel (highest `sigma = 1/q` on precision-scale input). A
    /// constant channel maps to all zeros. Normalized input passes through
    /// another min-max on its own scale, which leaves it unchanged.
    pub fn normalize_uncertainty(&self) -> Result<FlowField, FlowError> {
        let sigma_of = |q: f64| match self.scale {
            UncertaintyScale::Precision => 1.0 / q,
            UncertaintyScale::NormalizedUncertainty => q,
        };
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for (x, y, &ok) in self.valid.enumerate() {
            if ok {
                any = true;
                let s = sigma_of(*self.q.get(x, y));
                min = min.min(s);
                max = max.max(s);
            }
        }
        if !any {
            return Err(FlowError::EmptyValidSet);
        }
        let span = max - min;
        let mut q = self.q.clone();
        for (x, y, &ok) in self.valid.enumerate() {
            if ok {
                let s = sigma_of(*self.q.get(x, y));
                let value = if span == 0.0 { 0.0 } else { (s - min) / span };
                q.set(x, y, value);
            }
        }
        Ok(FlowField {
            fu: self.fu.clone(),
            fv: self.fv.clone(),
            q,
            valid: self.valid.clone(),
            scale: UncertaintyScale::NormalizedUncertainty,
        })
    }

    /// Mask of pixels whose normalized uncertainty is strictly below the
    /// threshold (the high-quality set). The field must already be
    /// normalized.
    pub fn select_high_quality(&self, threshold: f64) -> Grid<bool> {
        debug_assert_eq!(
            self.scale,
            UncertaintyScale::NormalizedUncertainty,
            "select_high_quality expects a normalized field"
        );
        let mut mask = Grid::filled(self.width(), self.height(), false);
        for (x, y, &ok) in self.valid.enumerate() {
            if ok && *self.q.get(x, y) < threshold {
                mask.set(x, y, true);
            }
        }
        mask
    }
}

/// Everything a flow provider gets to look at for one frame.
pub struct FlowRequest<'a> {
    pub cloud: &'a PointCloud,
    pub depth: &'a DepthImage,
    pub t_init: &'a SE3Transform,
    pub intrinsics: &'a PinholeIntrinsics,
}

/// Source of calibration flow for a frame. The toolkit ships oracle
/// providers backed by the ground truth; learned predictors plug in behind
/// the same interface.
pub trait FlowProvider {
    fn predict(&mut self, request: &FlowRequest<'_>) -> Result<FlowField, FlowError>;
}

/// Ground-truth calibration flow for a cloud observed under `t_init` when
/// the true extrinsic is `t_gt`.
///
/// The cloud is rasterized under `t_init`; at every occupied pixel the flow
/// is the true projection minus the stored initial projection of the same
/// source point. Pixels whose true projection falls behind the camera stay
/// invalid. The uncertainty channel is 1 everywhere valid.
pub fn ground_truth_flow(
    cloud: &PointCloud,
    t_init: &SE3Transform,
    t_gt: &SE3Transform,
    k: &PinholeIntrinsics,
) -> FlowField {
    let depth = rasterize_depth(cloud, t_init, k);
    flow_for_depth(&depth, cloud, t_gt, k)
}

/// As [`ground_truth_flow`] but reusing an existing rasterization.
pub fn flow_for_depth(
    depth: &DepthImage,
    cloud: &PointCloud,
    t_gt: &SE3Transform,
    k: &PinholeIntrinsics,
) -> FlowField {
    let mut field = FlowField::invalid(depth.width(), depth.height());
    for (x, y, sample) in depth.occupied() {
        let point = &cloud.points()[sample.point_index as usize];
        if let Some(gt) = project_point(t_gt, k, point) {
            field.set_sample(x, y, gt.u - sample.u, gt.v - sample.v, 1.0);
        }
    }
    field
}

/// Negative log density of a flow increment under an axis-aligned Gaussian
/// with conditionally independent u and v components.
pub fn gaussian_nll(
    delta: &Vector2<f64>,
    mu: &Vector2<f64>,
    sigma: &Vector2<f64>,
) -> Result<f64, FlowError> {
    if !(sigma.x > 0.0 && sigma.y > 0.0) {
        return Err(FlowError::NonPositiveSigma(sigma.x, sigma.y));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let ru = (delta.x - mu.x) / sigma.x;
    let rv = (delta.y - mu.y) / sigma.y;
    Ok(tau.ln() + sigma.x.ln() + sigma.y.ln() + 0.5 * (ru * ru + rv * rv))
}

/// One refinement step: `F_t = F_{t-1} + dF_t`. The uncertainty channel is
/// taken from the delta (the latest estimate); validity is the AND of the
/// two masks.
pub fn update_flow(prev: &FlowField, delta: &FlowField) -> Result<FlowField, FlowError> {
    if prev.width() != delta.width() || prev.height() != delta.height() {
        return Err(FlowError::DimensionMismatch(
            prev.width(),
            prev.height(),
            delta.width(),
            delta.height(),
        ));
    }
    let (w, h) = (prev.width(), prev.height());
    let mut fu = Grid::filled(w, h, 0.0);
    let mut fv = Grid::filled(w, h, 0.0);
    let mut q = Grid::filled(w, h, 1.0);
    let mut valid = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            fu.set(x, y, prev.fu[(x, y)] + delta.fu[(x, y)]);
            fv.set(x, y, prev.fv[(x, y)] + delta.fv[(x, y)]);
            q.set(x, y, delta.q[(x, y)]);
            valid.set(x, y, prev.valid[(x, y)] && delta.valid[(x, y)]);
        }
    }
    Ok(FlowField {
        fu,
        fv,
        q,
        valid,
        scale: delta.scale,
    })
}

/// Ordered flow estimates from an iterative refiner, oldest first.
#[derive(Debug, Clone)]
pub struct FlowSequence {
    fields: Vec<FlowField>,
}

impl FlowSequence {
    pub fn new(fields: Vec<FlowField>) -> Result<Self, FlowError> {
        let Some(first) = fields.first() else {
            return Err(FlowError::EmptySequence);
        };
        let (w, h) = (first.width(), first.height());
        for f in &fields {
            if f.width() != w || f.height() != h {
                return Err(FlowError::DimensionMismatch(w, h, f.width(), f.height()));
            }
        }
        Ok(Self { fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FlowField] {
        &self.fields
    }
}

/// Sequence loss with exponentially increasing weights:
///
/// ```text
/// sum_i gamma^(N-i) * mean_valid[ Q_i * (|du| + |dv|) + 1/Q_i ]
/// ```
///
/// The inner reduction is a mean over pixels valid in both the estimate and
/// the ground truth, which keeps the loss scale independent of resolution.
/// `gamma` must lie in (0, 1].
pub fn flow_loss(seq: &FlowSequence, gt: &FlowField, gamma: f64) -> Result<f64, FlowError> {
    assert!(
        gamma > 0.0 && gamma <= 1.0,
        "gamma must be in (0, 1], got {gamma}"
    );
    let n = seq.len();
    let mut total = 0.0;
    for (i, field) in seq.fields().iter().enumerate() {
        if field.width() != gt.width() || field.height() != gt.height() {
            return Err(FlowError::DimensionMismatch(
                field.width(),
                field.height(),
                gt.width(),
                gt.height(),
            ));
        }
        debug_assert_eq!(field.scale(), UncertaintyScale::Precision);
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (Some((fu, fv)), Some((gu, gv))) = (field.flow_at(x, y), gt.flow_at(x, y))
                else {
                    continue;
                };
                let q = field.q_at(x, y).expect("valid pixel has q");
                let l1 = (gu - fu).abs() + (gv - fv).abs();
                sum += q * l1 + 1.0 / q;
                count += 1;
            }
        }
        if count == 0 {
            return Err(FlowError::EmptyValidSet);
        }
        let weight = gamma.powi((n - 1 - i) as i32);
        total += weight * sum / count as f64;
    }
    Ok(total)
}
