//! Core geometric types shared by every stage: rotations, rigid poses,
//! similarity transforms, and the dense per-frame point/confidence grids.
//!
//! World-frame arithmetic is done in f64 throughout; point-map storage is
//! f32 to keep multi-thousand-window streams affordable on disk and in RAM.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// 3x3 rotation matrix, det +1. Matrix-backed (not quaternion) because the
/// Kabsch and anchor math is matrix-native; quaternions appear only in the
/// trajectory file writer.
pub type Rotation = Rotation3<f64>;

const ROTATION_TOL: f64 = 1e-9;

/// Validates orthonormality (R·Rᵀ = I within 1e-9 per entry) and det = +1
/// before wrapping an externally supplied matrix as a rotation.
pub fn rotation_from_matrix(m: &Matrix3<f64>) -> Result<Rotation> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rotation matrix"));
    }
    let gram = m * m.transpose();
    let eye = Matrix3::identity();
    let max_dev = (gram - eye).abs().max();
    if max_dev > ROTATION_TOL {
        return Err(Error::degenerate(
            "rotation_from_matrix",
            format!("not orthonormal (max |R·Rᵀ − I| = {max_dev:.3e})"),
        ));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::degenerate(
            "rotation_from_matrix",
            format!("det = {det}, expected +1"),
        ));
    }
    Ok(Rotation::from_matrix_unchecked(*m))
}

/// Rigid transform (rotation + translation), e.g. a camera pose mapping
/// camera coordinates into its window's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a point expressed in this pose's target frame back into its
    /// source frame (e.g. world point -> camera coordinates).
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidPose {
        let rot_inv = self.rotation.inverse();
        RigidPose::new(rot_inv, -(rot_inv * self.translation))
    }
}

/// Similarity transform (positive scale, rotation, translation) registering
/// a window-local submap into world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn new(scale: f64, rotation: Rotation, translation: Vector3<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::degenerate(
                "Sim3Transform::new",
                format!("scale must be finite and positive, got {scale}"),
            ));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// s·R·p + t
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// World-space camera pose induced for a window-local pose:
    /// (R·R_local, s·R·t_local + t).
    pub fn compose_pose(&self, local: &RigidPose) -> RigidPose {
        RigidPose::new(
            self.rotation * local.rotation,
            self.scale * (self.rotation * local.translation) + self.translation,
        )
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let rot_inv = self.rotation.inverse();
        Sim3Transform {
            scale: 1.0 / self.scale,
            rotation: rot_inv,
            translation: -(rot_inv * self.translation) / self.scale,
        }
    }
}

/// Dense H×W grid of 3D points with a validity mask. Non-finite input points
/// are masked out at construction so estimators never see NaNs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    height: usize,
    width: usize,
    points: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl PointMap {
    pub fn new(
        height: usize,
        width: usize,
        points: Vec<[f32; 3]>,
        mut valid: Vec<bool>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::degenerate(
                "PointMap::new",
                format!("dimensions {height}x{width} must be at least 1x1"),
            ));
        }
        let n = height * width;
        if points.len() != n || valid.len() != n {
            return Err(Error::degenerate(
                "PointMap::new",
                format!(
                    "expected {n} points/flags, got {}/{}",
                    points.len(),
                    valid.len()
                ),
            ));
        }
        for (p, v) in points.iter().zip(valid.iter_mut()) {
            if *v && !p.iter().all(|c| c.is_finite()) {
                *v = false;
            }
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn raw_points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> Vector3<f64> {
        let p = self.points[idx];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn set_point(&mut self, idx: usize, p: &Vector3<f64>) {
        self.points[idx] = [p.x as f32, p.y as f32, p.z as f32];
    }

    /// Iterates (flat index, point in f64) over valid pixels.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, Vector3<f64>)> + '_ {
        self.points
            .iter()
            .zip(self.valid.iter())
            .enumerate()
            .filter_map(|(i, (p, &v))| {
                v.then(|| (i, Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)))
            })
    }

    /// Rigidly transforms every valid point in place; the mask is unchanged.
    pub fn transform_in_place(&mut self, pose: &RigidPose) {
        for i in 0..self.points.len() {
            if self.valid[i] {
                let p = pose.transform_point(&self.point(i));
                self.set_point(i, &p);
            }
        }
    }

    pub fn transformed(&self, pose: &RigidPose) -> PointMap {
        let mut out = self.clone();
        out.transform_in_place(pose);
        out
    }

    /// Applies a similarity transform to every valid point in place.
    pub fn apply_sim3_in_place(&mut self, reg: &Sim3Transform) {
        for i in 0..self.points.len() {
            if self.valid[i] {
                let p = reg.apply(&self.point(i));
                self.set_point(i, &p);
            }
        }
    }
}

/// Per-pixel non-negative confidence grid matching a point map's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::degenerate(
                "ConfidenceMap::new",
                format!(
                    "expected {} values, got {}",
                    height * width,
                    values.len()
                ),
            ));
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::NonFinite("confidence map"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> f32 {
        self.values[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        Rotation::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
    }

    fn rz90() -> Rotation {
        Rotation::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2)
    }

    #[test]
    fn compose_pose_identity_is_noop() {
        let pose = RigidPose::new(rz90(), Vector3::new(1.0, -2.0, 3.0));
        let out = Sim3Transform::identity().compose_pose(&pose);
        assert_relative_eq!(out.translation, pose.translation, epsilon = 1e-15);
        assert_relative_eq!(
            out.rotation.into_inner(),
            pose.rotation.into_inner(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn compose_pose_scales_translation_only() {
        let reg = Sim3Transform::new(2.0, Rotation::identity(), Vector3::zeros()).unwrap();
        let local = RigidPose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        let out = reg.compose_pose(&local);
        assert_relative_eq!(out.translation, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(
            out.rotation.into_inner(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn compose_pose_rotation_and_offset() {
        // By direct 3x3 arithmetic: Rz(90°)·(1,0,0) = (0,1,0), plus (0,0,1).
        let reg = Sim3Transform::new(1.0, rz90(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let local = RigidPose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        let out = reg.compose_pose(&local);
        assert_relative_eq!(out.translation, Vector3::new(0.0, 1.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(out.rotation.into_inner(), rz90().into_inner(), epsilon = 1e-12);
    }

    #[test]
    fn apply_identity_and_pure_scale() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(Sim3Transform::identity().apply(&p), p, epsilon = 1e-15);
        let reg = Sim3Transform::new(3.0, Rotation::identity(), Vector3::zeros()).unwrap();
        assert_relative_eq!(
            reg.apply(&Vector3::new(1.0, 0.0, 0.0)),
            Vector3::new(3.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn apply_full_sim3() {
        // 2·Rz(90°)·(1,0,0) + (1,1,1) = (0,2,0) + (1,1,1) = (1,3,1).
        let reg = Sim3Transform::new(2.0, rz90(), Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(
            reg.apply(&Vector3::new(1.0, 0.0, 0.0)),
            Vector3::new(1.0, 3.0, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn apply_composes_associatively() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let a = Sim3Transform::new(
                rng.random::<f64>() * 2.0 + 0.1,
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let b = Sim3Transform::new(
                rng.random::<f64>() * 2.0 + 0.1,
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let p = Vector3::new(rng.random(), rng.random(), rng.random());
            let seq = b.apply(&a.apply(&p));
            let composed = b.compose(&a).apply(&p);
            assert_relative_eq!(seq, composed, epsilon = 1e-10);
        }
    }

    #[test]
    fn sim3_inverse_round_trips() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let g = Sim3Transform::new(
                rng.random::<f64>() * 3.0 + 0.2,
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let p = Vector3::new(rng.random(), rng.random(), rng.random());
            assert_relative_eq!(g.inverse().apply(&g.apply(&p)), p, epsilon = 1e-10);
        }
    }

    fn grid_pointmap(h: usize, w: usize, rng: &mut impl Rng) -> PointMap {
        let pts: Vec<[f32; 3]> = (0..h * w)
            .map(|_| {
                [
                    rng.random::<f32>() * 4.0 - 2.0,
                    rng.random::<f32>() * 4.0 - 2.0,
                    rng.random::<f32>() * 4.0 - 2.0,
                ]
            })
            .collect();
        PointMap::new(h, w, pts, vec![true; h * w]).unwrap()
    }

    #[test]
    fn transform_pointmap_identity_and_translation() {
        let mut rng = StdRng::seed_from_u64(3);
        let pm = grid_pointmap(4, 5, &mut rng);
        let same = pm.transformed(&RigidPose::identity());
        assert_eq!(same, pm);

        let lifted = pm.transformed(&RigidPose::new(
            Rotation::identity(),
            Vector3::new(0.0, 0.0, 5.0),
        ));
        for (i, p) in pm.iter_valid() {
            let q = lifted.point(i);
            assert_relative_eq!(q.z, p.z + 5.0, epsilon = 1e-5);
            assert_relative_eq!(q.x, p.x, epsilon = 1e-6);
        }
    }

    #[test]
    fn transform_pointmap_matches_per_pixel_oracle() {
        let mut rng = StdRng::seed_from_u64(5);
        let pm = grid_pointmap(6, 7, &mut rng);
        let pose = RigidPose::new(random_rotation(&mut rng), Vector3::new(0.3, -0.7, 1.1));
        let out = pm.transformed(&pose);
        for i in 0..pm.len() {
            let expected = pose.rotation * pm.point(i) + pose.translation;
            assert_relative_eq!(out.point(i), expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn transform_pointmap_preserves_distances() {
        let mut rng = StdRng::seed_from_u64(9);
        let pm = grid_pointmap(5, 5, &mut rng);
        let pose = RigidPose::new(random_rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0));
        let out = pm.transformed(&pose);
        // Distances compared in f64 on the f32-stored values: the rigid map is
        // an isometry, so the only wiggle left is the f32 quantization.
        for i in (0..pm.len()).step_by(3) {
            for j in (1..pm.len()).step_by(5) {
                let d0 = (pm.point(i) - pm.point(j)).norm();
                let d1 = (out.point(i) - out.point(j)).norm();
                assert!((d0 - d1).abs() < 1e-5, "distance drifted: {d0} vs {d1}");
            }
        }
    }

    #[test]
    fn transform_pointmap_distance_preservation_f64_path() {
        // The 1e-9 isometry bound holds on the f64 arithmetic itself.
        let mut rng = StdRng::seed_from_u64(13);
        let pose = RigidPose::new(random_rotation(&mut rng), Vector3::new(0.5, -0.25, 2.0));
        for _ in 0..100 {
            let a = Vector3::new(rng.random(), rng.random(), rng.random());
            let b = Vector3::new(rng.random(), rng.random(), rng.random());
            let d0 = (a - b).norm();
            let d1 = (pose.transform_point(&a) - pose.transform_point(&b)).norm();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn pointmap_masks_non_finite_points() {
        let pts = vec![[0.0, 0.0, 1.0], [f32::NAN, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let pm = PointMap::new(1, 3, pts, vec![true; 3]).unwrap();
        assert!(pm.is_valid(0));
        assert!(!pm.is_valid(1));
        assert!(pm.is_valid(2));
        assert_eq!(pm.iter_valid().count(), 2);
    }

    #[test]
    fn rotation_validation_rejects_bad_matrices() {
        let scaled = Matrix3::identity() * 1.1;
        assert!(rotation_from_matrix(&scaled).is_err());
        let mut reflected = Matrix3::identity();
        reflected[(0, 0)] = -1.0;
        assert!(rotation_from_matrix(&reflected).is_err());
        assert!(rotation_from_matrix(&Matrix3::identity()).is_ok());
    }

    #[test]
    fn confidence_map_rejects_negative_or_nan() {
        assert!(ConfidenceMap::new(1, 2, vec![0.5, -0.1]).is_err());
        assert!(ConfidenceMap::new(1, 2, vec![0.5, f32::NAN]).is_err());
        assert!(ConfidenceMap::new(1, 2, vec![0.5, 0.0]).is_ok());
    }
}
