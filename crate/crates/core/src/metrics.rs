//! Extrinsic error metrics, per-field aggregation, flow error, and the
//! uncertainty-versus-error regression.
//!
//! Translation errors are reported in centimeters, rotation errors in
//! degrees. The residual transform is `dT = T_pred^-1 * T_gt`; per-axis
//! errors are the unsigned components of its translation and ZYX Euler
//! angles.

use crate::flow::FlowField;
use crate::geometry::{EulerAngles, GeometryError, SE3Transform};
use crate::grid::Grid;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("residual rotation is gimbal locked: {0}")]
    GimbalLock(GeometryError),
    #[error("cannot aggregate an empty list")]
    EmptyList,
    #[error("flow fields have different sizes: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("regression needs at least 3 samples (got {0})")]
    TooFewSamples(usize),
    #[error("regression inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("regressor is constant; slope is undefined")]
    DegenerateRegressor,
}

/// Extrinsic calibration error split per axis. Translation in centimeters,
/// rotation in degrees; all components unsigned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationError {
    pub e_t: f64,
    pub e_x: f64,
    pub e_y: f64,
    pub e_z: f64,
    pub e_r: f64,
    pub e_roll: f64,
    pub e_pitch: f64,
    pub e_yaw: f64,
}

impl CalibrationError {
    pub fn zero() -> Self {
        Self {
            e_t: 0.0,
            e_x: 0.0,
            e_y: 0.0,
            e_z: 0.0,
            e_r: 0.0,
            e_roll: 0.0,
            e_pitch: 0.0,
            e_yaw: 0.0,
        }
    }

    fn fields(&self) -> [f64; 8] {
        [
            self.e_t, self.e_x, self.e_y, self.e_z, self.e_r, self.e_roll, self.e_pitch,
            self.e_yaw,
        ]
    }

    fn from_fields(f: [f64; 8]) -> Self {
        Self {
            e_t: f[0],
            e_x: f[1],
            e_y: f[2],
            e_z: f[3],
            e_r: f[4],
            e_roll: f[5],
            e_pitch: f[6],
            e_yaw: f[7],
        }
    }
}

/// Splits `dT = T_pred^-1 * T_gt` into per-axis translation (cm) and Euler
/// rotation (degrees) errors. `e_t` and `e_r` are the 2-norms of the
/// translation and Euler vectors.
pub fn calibration_error(
    t_pred: &SE3Transform,
    t_gt: &SE3Transform,
) -> Result<CalibrationError, MetricsError> {
    let delta = t_pred.inverse().compose(t_gt);
    let t_cm = delta.translation() * 100.0;
    let euler = EulerAngles::from_rotation(delta.rotation()).map_err(MetricsError::GimbalLock)?;
    let (roll, pitch, yaw) = (
        euler.roll.to_degrees(),
        euler.pitch.to_degrees(),
        euler.yaw.to_degrees(),
    );
    Ok(CalibrationError {
        e_t: t_cm.norm(),
        e_x: t_cm.x.abs(),
        e_y: t_cm.y.abs(),
        e_z: t_cm.z.abs(),
        e_r: (roll * roll + pitch * pitch + yaw * yaw).sqrt(),
        e_roll: roll.abs(),
        e_pitch: pitch.abs(),
        e_yaw: yaw.abs(),
    })
}

/// Per-pixel Euclidean distance between two flow fields on jointly valid
/// pixels; `None` where either field is invalid.
pub fn flow_error(pred: &FlowField, gt: &FlowField) -> Result<Grid<Option<f64>>, MetricsError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricsError::DimensionMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let mut out = Grid::filled(pred.width(), pred.height(), None);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if let (Some((pu, pv)), Some((gu, gv))) = (pred.flow_at(x, y), gt.flow_at(x, y)) {
                let (du, dv) = (pu - gu, pv - gv);
                out.set(x, y, Some((du * du + dv * dv).sqrt()));
            }
        }
    }
    Ok(out)
}

/// Per-field statistics over a set of calibration errors. Each statistic is
/// computed independently per field, so `mean.e_t` is generally not the norm
/// of the per-axis means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean: CalibrationError,
    pub median: CalibrationError,
    pub std: CalibrationError,
    pub count: usize,
}

/// Arithmetic mean, lower median, and population standard deviation per
/// field.
pub fn aggregate(errors: &[CalibrationError]) -> Result<ErrorSummary, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let n = errors.len() as f64;
    let mut mean = [0.0; 8];
    let mut median = [0.0; 8];
    let mut std = [0.0; 8];
    for f in 0..8 {
        let mut values: Vec<f64> = errors.iter().map(|e| e.fields()[f]).collect();
        let m = values.iter().sum::<f64>() / n;
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        let lower_median = values[(values.len() - 1) / 2];
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[f] = m;
        median[f] = lower_median;
        std[f] = var.sqrt();
    }
    Ok(ErrorSummary {
        mean: CalibrationError::from_fields(mean),
        median: CalibrationError::from_fields(median),
        std: CalibrationError::from_fields(std),
        count: errors.len(),
    })
}

const TABLE_COLUMNS: [&str; 8] = [
    "E_t", "E_x", "E_y", "E_z", "E_r", "E_roll", "E_pitch", "E_yaw",
];

fn table_row(label: &str, e: &CalibrationError) -> String {
    let mut row = format!("{label:<8}");
    for v in e.fields() {
        write!(row, "{v:>9.3}").expect("write to string");
    }
    row
}

/// Aligned text table in the usual benchmark layout: translation columns
/// first (cm), then rotation columns (degrees), one row per statistic.
pub fn render_summary_table(summary: &ErrorSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8}{:>18}Translation(cm){:>20}Rotation(deg)\n",
        "", "", ""
    ));
    out.push_str(&format!("{:<8}", ""));
    for c in TABLE_COLUMNS {
        out.push_str(&format!("{c:>9}"));
    }
    out.push('\n');
    out.push_str(&table_row("Mean", &summary.mean));
    out.push('\n');
    out.push_str(&table_row("Median", &summary.median));
    out.push('\n');
    out.push_str(&table_row("Std", &summary.std));
    out.push('\n');
    out
}

/// Single-frame variant of [`render_summary_table`].
pub fn render_single_error(e: &CalibrationError) -> String {
    let mut out = format!("{:<8}", "");
    for c in TABLE_COLUMNS {
        out.push_str(&format!("{c:>9}"));
    }
    out.push('\n');
    out.push_str(&table_row("Error", e));
    out.push('\n');
    out
}

/// Header for the machine-readable per-frame record.
pub const CSV_HEADER: &str = "frame,e_t_cm,e_x_cm,e_y_cm,e_z_cm,e_r_deg,e_roll_deg,e_pitch_deg,e_yaw_deg";

/// One comma-separated record matching [`CSV_HEADER`].
pub fn csv_line(frame_id: &str, e: &CalibrationError) -> String {
    let mut line = String::from(frame_id);
    for v in e.fields() {
        write!(line, ",{v}").expect("write to string");
    }
    line
}

/// Ordinary least squares fit of an error against a regressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub p_value: f64,
}

/// Fits `e_f = slope * q_norm + intercept` by least squares and reports the
/// coefficient of determination and the two-sided p-value of the slope from
/// the exact Student-t distribution with `n - 2` degrees of freedom.
pub fn uncertainty_regression(
    e_f: &[f64],
    q_norm: &[f64],
) -> Result<RegressionResult, MetricsError> {
    if e_f.len() != q_norm.len() {
        return Err(MetricsError::LengthMismatch(e_f.len(), q_norm.len()));
    }
    let n = e_f.len();
    if n < 3 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let nf = n as f64;
    let x_mean = q_norm.iter().sum::<f64>() / nf;
    let y_mean = e_f.iter().sum::<f64>() / nf;
    let mut s_xx = 0.0;
    let mut s_xy = 0.0;
    for (x, y) in q_norm.iter().zip(e_f) {
        s_xx += (x - x_mean) * (x - x_mean);
        s_xy += (x - x_mean) * (y - y_mean);
    }
    if s_xx == 0.0 {
        return Err(MetricsError::DegenerateRegressor);
    }
    let slope = s_xy / s_xx;
    let intercept = y_mean - slope * x_mean;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in q_norm.iter().zip(e_f) {
        let fit = slope * x + intercept;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res.abs() < 1e-300 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let dof = nf - 2.0;
    let se = (ss_res / dof / s_xx).sqrt();
    let p_value = if se == 0.0 {
        0.0
    } else {
        student_t_two_sided_p(slope / se, dof)
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        p_value,
    })
}

/// Two-sided tail probability of the Student-t distribution:
/// `P(|T| >= |t|) = I_{v/(v + t^2)}(v/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t))
}

/// Lanczos approximation of `ln Gamma(x)` for positive `x`.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Twist, Vec3};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> SE3Transform {
        SE3Transform::exp(&Twist::new(
            Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
            Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
        ))
    }

    #[test]
    fn identical_transforms_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let e = calibration_error(&t, &t).unwrap();
            // R^T R of the same stored matrix leaves rounding at the
            // last-ulp level; everything must vanish to that scale.
            for field in e.fields() {
                assert!(field.abs() < 1e-12, "residual field {field}");
            }
        }
    }

    #[test]
    fn translation_error_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t_pred = random_transform(&mut rng);
        // dT carries a pure (1, 2, 2) cm translation.
        let delta = SE3Transform::from_parts_unchecked(
            *SE3Transform::identity().rotation(),
            Vec3::new(0.01, 0.02, 0.02),
        );
        let t_gt = t_pred.compose(&delta);
        let e = calibration_error(&t_pred, &t_gt).unwrap();
        assert_abs_diff_eq!(e.e_t, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_y, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_z, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_r, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn pure_yaw_rotation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t_pred = random_transform(&mut rng);
        let delta = SE3Transform::from_parts_unchecked(
            EulerAngles::new(0.0, 0.0, 0.1_f64.to_radians()).to_rotation(),
            Vec3::zeros(),
        );
        let t_gt = t_pred.compose(&delta);
        let e = calibration_error(&t_pred, &t_gt).unwrap();
        assert_abs_diff_eq!(e.e_yaw, 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_r, 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_roll, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.e_pitch, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn gimbal_locked_residual_is_an_error() {
        let t_pred = SE3Transform::identity();
        let t_gt = SE3Transform::from_parts_unchecked(
            EulerAngles::new(0.0, std::f64::consts::FRAC_PI_2, 0.0).to_rotation(),
            Vec3::zeros(),
        );
        assert!(matches!(
            calibration_error(&t_pred, &t_gt),
            Err(MetricsError::GimbalLock(_))
        ));
    }

    #[test]
    fn norm_identities_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let Ok(e) = calibration_error(&a, &b) else {
                continue;
            };
            let t_norm = (e.e_x * e.e_x + e.e_y * e.e_y + e.e_z * e.e_z).sqrt();
            let r_norm =
                (e.e_roll * e.e_roll + e.e_pitch * e.e_pitch + e.e_yaw * e.e_yaw).sqrt();
            assert_abs_diff_eq!(e.e_t, t_norm, epsilon = 1e-9);
            assert_abs_diff_eq!(e.e_r, r_norm, epsilon = 1e-9);
        }
    }

    #[test]
    fn error_is_invariant_under_common_left_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pred = random_transform(&mut rng);
            let gt = random_transform(&mut rng);
            let g = random_transform(&mut rng);
            let Ok(base) = calibration_error(&pred, &gt) else {
                continue;
            };
            let moved = calibration_error(&g.compose(&pred), &g.compose(&gt)).unwrap();
            for (a, b) in base.fields().iter().zip(moved.fields()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    fn field_with(values: &[(usize, usize, f64, f64)]) -> FlowField {
        let mut f = FlowField::invalid(8, 8);
        for (x, y, u, v) in values {
            f.set_sample(*x, *y, *u, *v, 1.0);
        }
        f
    }

    #[test]
    fn flow_error_zero_when_equal() {
        let f = field_with(&[(0, 0, 1.0, 2.0), (3, 4, -1.0, 0.5)]);
        let e = flow_error(&f, &f).unwrap();
        assert_eq!(*e.get(0, 0), Some(0.0));
        assert_eq!(*e.get(3, 4), Some(0.0));
        assert_eq!(*e.get(1, 1), None);
    }

    #[test]
    fn flow_error_pythagorean() {
        let gt = field_with(&[(2, 2, 0.0, 0.0)]);
        let pred = field_with(&[(2, 2, 3.0, 4.0)]);
        let e = flow_error(&pred, &gt).unwrap();
        assert_eq!(*e.get(2, 2), Some(5.0));
    }

    #[test]
    fn flow_error_excludes_partially_valid_pixels() {
        let gt = field_with(&[(1, 1, 0.0, 0.0)]);
        let pred = field_with(&[(2, 2, 0.0, 0.0)]);
        let e = flow_error(&pred, &gt).unwrap();
        assert_eq!(*e.get(1, 1), None);
        assert_eq!(*e.get(2, 2), None);
    }

    fn uniform_error(v: f64) -> CalibrationError {
        CalibrationError::from_fields([v; 8])
    }

    #[test]
    fn aggregate_single_element() {
        let e = uniform_error(2.5);
        let s = aggregate(&[e]).unwrap();
        assert_eq!(s.mean, e);
        assert_eq!(s.median, e);
        assert_eq!(s.std, CalibrationError::zero());
        assert_eq!(s.count, 1);
    }

    #[test]
    fn aggregate_of_one_two_three() {
        let s = aggregate(&[uniform_error(1.0), uniform_error(2.0), uniform_error(3.0)]).unwrap();
        assert_abs_diff_eq!(s.mean.e_t, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.median.e_t, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std.e_t, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn aggregate_uses_lower_median() {
        let s = aggregate(&[uniform_error(1.0), uniform_error(4.0)]).unwrap();
        assert_eq!(s.median.e_t, 1.0);
    }

    #[test]
    fn aggregate_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let errors: Vec<CalibrationError> = (0..37)
            .map(|_| {
                CalibrationError::from_fields(std::array::from_fn(|_| {
                    rng.random_range(0.0..10.0)
                }))
            })
            .collect();
        let s = aggregate(&errors).unwrap();
        // Naive oracle on the first field.
        let values: Vec<f64> = errors.iter().map(|e| e.e_t).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(s.mean.e_t, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std.e_t, var.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.median.e_t, sorted[(sorted.len() - 1) / 2], epsilon = 1e-12);
    }

    #[test]
    fn aggregate_rejects_empty_list() {
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyList));
    }

    #[test]
    fn summary_table_layout() {
        let mut mean = CalibrationError::zero();
        mean.e_t = 1.425;
        mean.e_r = 0.084;
        let summary = ErrorSummary {
            mean,
            median: CalibrationError::zero(),
            std: CalibrationError::zero(),
            count: 1,
        };
        let table = render_summary_table(&summary);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].contains("Translation(cm)"));
        assert!(lines[0].contains("Rotation(deg)"));
        // Column order: E_t E_x E_y E_z E_r E_roll E_pitch E_yaw.
        let header = lines[1];
        let positions: Vec<usize> = TABLE_COLUMNS
            .iter()
            .map(|c| header.find(c).expect("column present"))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(lines[2].starts_with("Mean"));
        assert!(lines[2].contains("1.425"));
        assert!(lines[2].contains("0.084"));
        assert!(lines[3].starts_with("Median"));
        assert!(lines[4].starts_with("Std"));
    }

    #[test]
    fn csv_roundtrip_layout() {
        let mut e = CalibrationError::zero();
        e.e_t = 1.5;
        let line = csv_line("frame_000", &e);
        assert!(line.starts_with("frame_000,1.5,"));
        assert_eq!(
            line.split(',').count(),
            CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn regression_on_perfect_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * x - 0.5).collect();
        let r = uncertainty_regression(&y, &x).unwrap();
        assert_abs_diff_eq!(r.slope, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.intercept, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r_squared, 1.0, epsilon = 1e-12);
        assert!(r.p_value < 1e-100);
    }

    #[test]
    fn regression_slope_approaches_two_as_noise_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|x| 2.0 * x + rng.random_range(-1e-9..1e-9))
            .collect();
        let r = uncertainty_regression(&y, &x).unwrap();
        assert_abs_diff_eq!(r.slope, 2.0, epsilon = 1e-7);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn regression_rejects_degenerate_input() {
        assert_eq!(
            uncertainty_regression(&[1.0, 2.0], &[0.1, 0.2]),
            Err(MetricsError::TooFewSamples(2))
        );
        assert_eq!(
            uncertainty_regression(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]),
            Err(MetricsError::DegenerateRegressor)
        );
        assert_eq!(
            uncertainty_regression(&[1.0, 2.0, 3.0], &[0.5, 0.5]),
            Err(MetricsError::LengthMismatch(3, 2))
        );
    }

    #[test]
    fn regression_positive_slope_on_two_level_noise() {
        // Noisy errors whose scale matches a two-level uncertainty signal.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut e_f = Vec::new();
        let mut q = Vec::new();
        for _ in 0..1000 {
            let outlier = rng.random_range(0.0..1.0) < 0.3;
            let sigma = if outlier { 8.0 } else { 0.5 };
            e_f.push(rng.random_range(0.0..sigma));
            q.push(if outlier { 1.0 } else { 0.0 });
        }
        let r = uncertainty_regression(&e_f, &q).unwrap();
        assert!(r.slope > 0.0);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn student_t_matches_closed_forms() {
        // dof = 1 is Cauchy: p = 1 - 2 atan(t)/pi.
        for t in [0.5f64, 1.0, 2.0, 5.0] {
            let expected = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_two_sided_p(t, 1.0), expected, epsilon = 1e-12);
        }
        // dof = 2: p = 1 - t/sqrt(t^2 + 2).
        for t in [0.5f64, 1.0, 3.0] {
            let expected = 1.0 - t / (t * t + 2.0).sqrt();
            assert_abs_diff_eq!(student_t_two_sided_p(t, 2.0), expected, epsilon = 1e-12);
        }
        // t = 0 is certain.
        assert_abs_diff_eq!(student_t_two_sided_p(0.0, 10.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn incomplete_beta_symmetry_and_midpoint() {
        assert_abs_diff_eq!(
            regularized_incomplete_beta(0.5, 0.5, 0.5),
            0.5,
            epsilon = 1e-12
        );
        for (a, b, x) in [(2.0, 3.0, 0.3), (0.5, 5.0, 0.7), (4.0, 1.5, 0.2)] {
            let lhs = regularized_incomplete_beta(a, b, x);
            let rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }
}
