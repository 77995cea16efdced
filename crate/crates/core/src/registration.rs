//! Two-stage Sim(3) registration of the current window's submap to the
//! global map: a Huber-robust IRLS scale from mutually confident point
//! correspondences taken in matched per-frame camera coordinates, then
//! Kabsch on scaled camera anchor triplets.
//!
//! Comparing the two windows' predictions for the same frame inside that
//! frame's own camera coordinates cancels the rigid part of the window
//! misalignment, leaving a pure scale problem for the IRLS stage; the rigid
//! part is then recovered from the camera anchors alone.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{RigidPose, Rotation, Sim3Transform};
use crate::ingest::WindowPrediction;

/// IRLS settings shared by the window-scale and layer-scale estimators.
/// The effective Huber delta is `huber_delta_factor` times the median target
/// norm of each call, which keeps behavior invariant to scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    pub huber_delta_factor: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            huber_delta_factor: 0.1,
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("irls_max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config("irls_rel_tol must be positive".into()));
        }
        if !(self.huber_delta_factor > 0.0 && self.huber_delta_factor.is_finite()) {
            return Err(Error::Config("huber_delta_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Huber loss: quadratic inside `delta`, linear outside. Its IRLS weight is
/// 1 for small residuals and `delta/r` beyond.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        r * r
    } else {
        2.0 * delta * r - delta * delta
    }
}

/// Lower/upper interpolated median; `None` on empty input.
pub(crate) fn interpolated_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("median input must not contain NaN"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Observation kinds the scale IRLS runs over: 3D points for window
/// registration, scalar depths for layer scales.
pub(crate) trait ScaleObservation: Copy {
    fn dot(a: Self, b: Self) -> f64;
    fn norm(self) -> f64;
    fn residual_norm(source: Self, target: Self, s: f64) -> f64;
}

impl ScaleObservation for Vector3<f64> {
    fn dot(a: Self, b: Self) -> f64 {
        a.dot(&b)
    }

    fn norm(self) -> f64 {
        Vector3::norm(&self)
    }

    fn residual_norm(source: Self, target: Self, s: f64) -> f64 {
        (s * source - target).norm()
    }
}

impl ScaleObservation for f64 {
    fn dot(a: Self, b: Self) -> f64 {
        a * b
    }

    fn norm(self) -> f64 {
        self.abs()
    }

    fn residual_norm(source: Self, target: Self, s: f64) -> f64 {
        (s * source - target).abs()
    }
}

/// Huber delta used for a given pair set: `huber_delta_factor` times the
/// median target norm. Exposed so oracle tests can minimize the identical
/// objective.
pub fn effective_huber_delta(targets: impl Iterator<Item = f64>, cfg: &IrlsConfig) -> f64 {
    let mut norms: Vec<f64> = targets.collect();
    let med = interpolated_median(&mut norms).unwrap_or(0.0);
    cfg.huber_delta_factor * med
}

pub(crate) fn scale_irls<V: ScaleObservation>(pairs: &[(V, V)], cfg: &IrlsConfig) -> Result<f64> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::degenerate("scale_irls", "no correspondences"));
    }
    let mut source_sq = 0.0;
    let mut norm_prod = 0.0;
    for &(p, q) in pairs {
        let (np, nq) = (p.norm(), q.norm());
        if !np.is_finite() || !nq.is_finite() {
            return Err(Error::NonFinite("scale correspondences"));
        }
        source_sq += np * np;
        norm_prod += np * nq;
    }
    if source_sq == 0.0 {
        return Err(Error::degenerate(
            "scale_irls",
            "all source points are zero; scale is undefined",
        ));
    }

    let delta = effective_huber_delta(pairs.iter().map(|&(_, q)| q.norm()), cfg);
    let objective = |s: f64| -> f64 {
        pairs
            .iter()
            .map(|&(p, q)| huber(V::residual_norm(p, q, s), delta))
            .sum()
    };

    // Norm-ratio initialization: robust enough to land in the Huber basin.
    let mut s = norm_prod / source_sq;
    let mut prev_obj = objective(s);
    for _ in 0..cfg.max_iters {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(p, q) in pairs {
            let r = V::residual_norm(p, q, s);
            let w = if r <= delta { 1.0 } else { delta / r };
            num += w * V::dot(p, q);
            den += w * V::dot(p, p);
        }
        if den == 0.0 {
            return Err(Error::degenerate(
                "scale_irls",
                "all correspondences received zero weight",
            ));
        }
        let next = num / den;
        if !next.is_finite() {
            return Err(Error::NonFinite("scale_irls update"));
        }
        let obj = objective(next);
        debug_assert!(
            obj <= prev_obj * (1.0 + 1e-12) + 1e-12,
            "IRLS objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        let delta_s = (next - s).abs();
        s = next;
        if delta_s / s.abs().max(f64::MIN_POSITIVE) < cfg.rel_tol {
            break;
        }
    }
    Ok(s.max(f64::MIN_POSITIVE))
}

/// Robust scale from 3D pairs: the `s` minimizing Σ ρ(‖s·source − target‖).
pub fn estimate_scale_irls(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    cfg: &IrlsConfig,
) -> Result<f64> {
    scale_irls(pairs, cfg)
}

/// Non-robust least-squares scale Σ⟨p,q⟩ / Σ⟨p,p⟩, kept as the comparison
/// baseline for the robustness checks.
pub fn least_squares_scale(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::degenerate("least_squares_scale", "no pairs"));
    }
    let num: f64 = pairs.iter().map(|(p, q)| p.dot(q)).sum();
    let den: f64 = pairs.iter().map(|(p, _)| p.dot(p)).sum();
    if den == 0.0 {
        return Err(Error::degenerate("least_squares_scale", "zero source"));
    }
    Ok(num / den)
}

/// Mutually confident point pairs for one window transition, expressed in
/// each frame's own camera coordinates (`prev` from the registered previous
/// window, `curr` from the incoming window's local prediction).
#[derive(Debug, Clone, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vector3<f64>, Vector3<f64>)] {
        &self.pairs
    }

    /// (source, target) pairs oriented so the estimated scale carries the
    /// current window into the previous window's metric, i.e. the scale of
    /// the returned registration.
    pub fn scale_pairs(&self) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        self.pairs.iter().map(|&(prev, curr)| (curr, prev)).collect()
    }
}

fn median_confidence(pred: &WindowPrediction, overlap: &[usize]) -> Result<f64> {
    let mut values = Vec::new();
    for &t in overlap {
        let frame = pred.frame_for(t).ok_or_else(|| {
            Error::degenerate(
                "select_correspondences",
                format!("frame {t} not in window {}", pred.window().index),
            )
        })?;
        for (i, _) in frame.pointmap.iter_valid() {
            values.push(frame.confidence.get(i) as f64);
        }
    }
    interpolated_median(&mut values)
        .ok_or_else(|| Error::degenerate("select_correspondences", "no valid pixels in overlap"))
}

/// Selects pixels valid in both windows whose confidences strictly exceed
/// the per-window median confidence (median over valid pixels of the overlap
/// frames), and returns the paired points in matched camera coordinates.
pub fn select_correspondences(
    prev_world: &WindowPrediction,
    curr: &WindowPrediction,
    overlap: &[usize],
) -> Result<CorrespondenceSet> {
    if overlap.is_empty() {
        return Err(Error::degenerate("select_correspondences", "empty overlap"));
    }
    if prev_world.height() != curr.height() || prev_world.width() != curr.width() {
        return Err(Error::degenerate(
            "select_correspondences",
            "window dimensions differ",
        ));
    }
    let med_prev = median_confidence(prev_world, overlap)?;
    let med_curr = median_confidence(curr, overlap)?;

    let mut pairs = Vec::new();
    for &t in overlap {
        let pf = prev_world.frame_for(t).expect("checked by median pass");
        let cf = curr.frame_for(t).ok_or_else(|| {
            Error::degenerate(
                "select_correspondences",
                format!("frame {t} not in window {}", curr.window().index),
            )
        })?;
        let prev_cam = pf.pose.inverse();
        let curr_cam = cf.pose.inverse();
        for i in 0..pf.pointmap.len() {
            if !(pf.pointmap.is_valid(i) && cf.pointmap.is_valid(i)) {
                continue;
            }
            if (pf.confidence.get(i) as f64) > med_prev && (cf.confidence.get(i) as f64) > med_curr
            {
                pairs.push((
                    prev_cam.transform_point(&pf.pointmap.point(i)),
                    curr_cam.transform_point(&cf.pointmap.point(i)),
                ));
            }
        }
    }
    Ok(CorrespondenceSet { pairs })
}

/// Camera anchor triplet: scaled camera center plus unit view/up offsets,
/// rotated into the window frame by the camera's own rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTriplet {
    pub center: Vector3<f64>,
    pub view: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl AnchorTriplet {
    pub fn points(&self) -> [Vector3<f64>; 3] {
        [self.center, self.view, self.up]
    }
}

const VIEW_AXIS: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);
const UP_AXIS: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Builds the anchor triplet for each pose: center `scale·t`, plus the
/// canonical view (0,0,-1) and up (0,1,0) axes rotated by that camera.
pub fn build_camera_anchors(poses: &[RigidPose], scale: f64) -> Vec<AnchorTriplet> {
    poses
        .iter()
        .map(|p| {
            let center = scale * p.translation;
            AnchorTriplet {
                center,
                view: center + p.rotation * VIEW_AXIS,
                up: center + p.rotation * UP_AXIS,
            }
        })
        .collect()
}

/// Least-squares rigid alignment: returns the (R, t) minimizing
/// Σ‖R·x_j + t − y_j‖² via SVD of the centered cross-covariance, with
/// reflection correction.
pub fn kabsch(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> Result<RigidPose> {
    if x.len() != y.len() {
        return Err(Error::degenerate("kabsch", "point counts differ"));
    }
    if x.len() < 3 {
        return Err(Error::degenerate(
            "kabsch",
            format!("need at least 3 pairs, got {}", x.len()),
        ));
    }
    let n = x.len() as f64;
    let cx: Vector3<f64> = x.iter().sum::<Vector3<f64>>() / n;
    let cy: Vector3<f64> = y.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (a, b) in x.iter().zip(y.iter()) {
        h += (a - cx) * (b - cy).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::degenerate("kabsch", "SVD failed")),
    };
    let sv = svd.singular_values;
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::degenerate(
            "kabsch",
            "degenerate (collinear or coincident) point configuration",
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(rotation);
    let translation = cy - rotation * cx;
    Ok(RigidPose::new(rotation, translation))
}

/// How a window registration was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationMethod {
    /// Robust scale + anchor Kabsch.
    TwoStage,
    /// Carried forward from the previous registration through the shared
    /// first overlap frame (empty correspondences or degenerate anchors).
    Fallback,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: Sim3Transform,
    pub method: RegistrationMethod,
    pub correspondences: usize,
}

fn fallback_registration(
    prev_world: &WindowPrediction,
    prev_registration: &Sim3Transform,
    curr: &WindowPrediction,
    overlap: &[usize],
) -> Result<Registration> {
    let t0 = overlap[0];
    let prev_pose = prev_world.frame_for(t0).ok_or_else(|| {
        Error::degenerate("register_submap", format!("frame {t0} missing in previous window"))
    })?;
    let curr_pose = curr.frame_for(t0).ok_or_else(|| {
        Error::degenerate("register_submap", format!("frame {t0} missing in current window"))
    })?;
    let scale = prev_registration.scale;
    let rotation = prev_pose.pose.rotation * curr_pose.pose.rotation.inverse();
    let translation =
        prev_pose.pose.translation - scale * (rotation * curr_pose.pose.translation);
    Ok(Registration {
        transform: Sim3Transform::new(scale, rotation, translation)?,
        method: RegistrationMethod::Fallback,
        correspondences: 0,
    })
}

/// Registers the current window against the previous window's world-frame
/// prediction: IRLS scale on gated camera-frame correspondences, then Kabsch
/// over the scaled current anchors and unscaled previous world anchors.
/// Falls back to carrying the previous registration through the first
/// overlap frame when correspondences are empty or the anchors degenerate.
pub fn register_submap(
    prev_world: &WindowPrediction,
    prev_registration: &Sim3Transform,
    curr: &WindowPrediction,
    overlap: &[usize],
    cfg: &IrlsConfig,
) -> Result<Registration> {
    if overlap.is_empty() {
        return Err(Error::degenerate("register_submap", "empty overlap"));
    }
    let corr = select_correspondences(prev_world, curr, overlap)?;
    if corr.is_empty() {
        log::warn!(
            "window {}: no mutually confident correspondences; using fallback registration",
            curr.window().index
        );
        return fallback_registration(prev_world, prev_registration, curr, overlap);
    }
    let scale = estimate_scale_irls(&corr.scale_pairs(), cfg)?;

    let curr_poses: Vec<RigidPose> = overlap
        .iter()
        .filter_map(|&t| curr.frame_for(t).map(|f| f.pose))
        .collect();
    let prev_poses: Vec<RigidPose> = overlap
        .iter()
        .filter_map(|&t| prev_world.frame_for(t).map(|f| f.pose))
        .collect();
    if curr_poses.len() != overlap.len() || prev_poses.len() != overlap.len() {
        return Err(Error::degenerate(
            "register_submap",
            "overlap frames missing from a window",
        ));
    }

    let x: Vec<Vector3<f64>> = build_camera_anchors(&curr_poses, scale)
        .iter()
        .flat_map(|a| a.points())
        .collect();
    let y: Vec<Vector3<f64>> = build_camera_anchors(&prev_poses, 1.0)
        .iter()
        .flat_map(|a| a.points())
        .collect();

    match kabsch(&x, &y) {
        Ok(rigid) => Ok(Registration {
            transform: Sim3Transform::new(scale, rigid.rotation, rigid.translation)?,
            method: RegistrationMethod::TwoStage,
            correspondences: corr.len(),
        }),
        Err(e) => {
            log::warn!(
                "window {}: anchor alignment degenerate ({e}); using fallback registration",
                curr.window().index
            );
            fallback_registration(prev_world, prev_registration, curr, overlap)
        }
    }
}
