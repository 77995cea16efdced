//! Synthetic scene generator: layered ground-truth geometry on a smooth
//! camera path, emitted per window with controlled, replayable corruptions.
//!
//! Each frame shows a deep background plane plus fronto-parallel (optionally
//! slanted) foreground planes defined as image-space regions, so ground-truth
//! layer labels are exact. A window's emission re-expresses the ground truth
//! in that window's local frame, applies the window's recorded Sim(3)
//! perturbation to points and poses, scales each pixel along its camera ray
//! by its layer's recorded factor, and finally adds per-coordinate Gaussian
//! noise. Confidence is a monotone-decreasing function of the total
//! displacement the corruption caused at that pixel (plus a tiny tie-breaking
//! dither so a strict median gate always has signal); tests should rely only
//! on that monotonicity, not the exact formula.
//!
//! The background layer keeps scale factor 1 in every window: foreground
//! regions mis-scale relative to the background, which also keeps a majority
//! of correspondence candidates trustworthy. Window 1 is emitted without
//! Sim(3)/layer corruption since it defines the world frame.

use std::path::Path;

use nalgebra::{Unit, Vector3};
use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, PointMap, RigidPose, Rotation, Sim3Transform};
use crate::kvfile;
use crate::windowing::WindowSpec;

use super::{FramePrediction, WindowPrediction};

const BACKGROUND_DEPTH: f64 = 30.0;
const NEAREST_DEPTH: f64 = 4.0;
const CONFIDENCE_DITHER: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraPath {
    Line,
    Arc,
    Orbit,
}

impl CameraPath {
    fn parse(value: &str) -> Result<Self> {
        match value {
            "line" => Ok(CameraPath::Line),
            "arc" => Ok(CameraPath::Arc),
            "orbit" => Ok(CameraPath::Orbit),
            _ => Err(Error::Config(format!(
                "camera_path must be line|arc|orbit, got `{value}`"
            ))),
        }
    }
}

/// Parameters of a synthetic scene. Ranges are sampled per window (Sim(3)
/// perturbation) or per window and foreground layer (depth scale factors).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub layers: usize,
    pub camera_path: CameraPath,
    pub noise_sigma: f64,
    pub window_scale_range: (f64, f64),
    pub window_rot_deg_range: (f64, f64),
    pub window_trans_range: (f64, f64),
    pub layer_scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            height: 36,
            width: 48,
            layers: 3,
            camera_path: CameraPath::Line,
            noise_sigma: 0.0,
            window_scale_range: (1.0, 1.0),
            window_rot_deg_range: (0.0, 0.0),
            window_trans_range: (0.0, 0.0),
            layer_scale_range: (1.0, 1.0),
            seed: 1,
        }
    }
}

impl SceneConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let kv = kvfile::parse_kv_file(path)?;
        let mut cfg = SceneConfig::default();
        for (key, value) in &kv {
            cfg.apply_key(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                Error::UnknownConfigKey { key, .. } => Error::UnknownConfigKey {
                    key,
                    path: path.to_path_buf(),
                },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frames" => self.frames = kvfile::parse_usize(key, value)?,
            "height" => self.height = kvfile::parse_usize(key, value)?,
            "width" => self.width = kvfile::parse_usize(key, value)?,
            "layers" => self.layers = kvfile::parse_usize(key, value)?,
            "camera_path" => self.camera_path = CameraPath::parse(value)?,
            "noise_sigma" => self.noise_sigma = kvfile::parse_f64(key, value)?,
            "window_scale_range" => self.window_scale_range = kvfile::parse_range(key, value)?,
            "window_rot_deg_range" => self.window_rot_deg_range = kvfile::parse_range(key, value)?,
            "window_trans_range" => self.window_trans_range = kvfile::parse_range(key, value)?,
            "layer_scale_range" => self.layer_scale_range = kvfile::parse_range(key, value)?,
            "seed" => self.seed = kvfile::parse_u64(key, value)?,
            _ => {
                return Err(Error::UnknownConfigKey {
                    key: key.to_string(),
                    path: "<scene config>".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("scene needs at least 2 frames".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("scene needs at least 1 layer".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(
                "scene image must be at least 8x8 pixels".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if self.window_scale_range.0 <= 0.0 || self.layer_scale_range.0 <= 0.0 {
            return Err(Error::Config("scale ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Exact corruption applied to one window's emission, kept so tests can
/// replay and invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDistortion {
    pub sim3: Sim3Transform,
    /// Per-layer depth scale factors along the camera ray; index = layer id.
    /// The background entry (layer 0) is always 1.
    pub layer_scales: Vec<f64>,
}

impl WindowDistortion {
    pub fn identity(layers: usize) -> Self {
        Self {
            sim3: Sim3Transform::identity(),
            layer_scales: vec![1.0; layers],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.sim3 == Sim3Transform::identity() && self.layer_scales.iter().all(|&s| s == 1.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51AB_5EED_0D15_EA5E, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Triangle wave with period 1 mapping to [-1, 1].
fn triangle(u: f64) -> f64 {
    let s = u.rem_euclid(1.0);
    if s < 0.5 {
        4.0 * s - 1.0
    } else {
        3.0 - 4.0 * s
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return Unit::new_normalize(v);
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Deterministic synthetic scene: ground truth geometry, labels and
/// trajectory plus per-window corruption records.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    config: SceneConfig,
    focal: f64,
    base_pose_inv: RigidPose,
}

impl SyntheticScene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let focal = 0.8 * config.width as f64;
        let mut scene = Self {
            config,
            focal,
            base_pose_inv: RigidPose::identity(),
        };
        scene.base_pose_inv = scene.raw_pose(1).inverse();
        Ok(scene)
    }

    /// Builds a scene overriding the config's seed (same scene otherwise).
    pub fn with_seed(mut config: SceneConfig, seed: u64) -> Result<Self> {
        config.seed = seed;
        Self::new(config)
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }

    fn raw_pose(&self, t: usize) -> RigidPose {
        let k = (t - 1) as f64;
        match self.config.camera_path {
            CameraPath::Line => RigidPose::new(
                Rotation::identity(),
                Vector3::new(0.05 * k, 0.0, 0.0),
            ),
            CameraPath::Arc => {
                let theta = 0.3f64.to_radians() * k;
                let r = 8.0;
                RigidPose::new(
                    Rotation::from_axis_angle(&Vector3::z_axis(), 0.5 * theta),
                    Vector3::new(r * theta.sin(), r * (1.0 - theta.cos()), 0.0),
                )
            }
            CameraPath::Orbit => {
                let theta = 0.4f64.to_radians() * k;
                let zc = BACKGROUND_DEPTH * 0.6;
                let r = 0.35 * zc;
                RigidPose::new(
                    Rotation::from_axis_angle(&Vector3::y_axis(), -theta),
                    Vector3::new(r * theta.sin(), 0.0, zc - r * theta.cos()),
                )
            }
        }
    }

    /// Ground-truth camera pose (camera -> world); frame 1 is the identity,
    /// i.e. the world frame is the first camera's frame.
    pub fn gt_pose(&self, t: usize) -> RigidPose {
        self.base_pose_inv.compose(&self.raw_pose(t))
    }

    fn layer_depth(&self, layer: usize) -> f64 {
        if layer == 0 || self.config.layers == 1 {
            return BACKGROUND_DEPTH;
        }
        let m = self.config.layers - 1;
        let ratio = NEAREST_DEPTH / BACKGROUND_DEPTH;
        BACKGROUND_DEPTH * ratio.powf(layer as f64 / m as f64)
    }

    /// Foreground rectangle of `layer` (1-based among foreground) at frame
    /// `t`: (row0, row1, col0, col1), half-open.
    fn layer_rect(&self, layer: usize, t: usize) -> (usize, usize, usize, usize) {
        let m = self.config.layers - 1;
        let w = self.config.width as f64;
        let h = self.config.height as f64;
        let cx = (layer as f64 - 0.5) / m as f64 * w;
        let cy = 0.5 * h;
        let half_w = ((0.6 / m as f64).min(0.34) * w / 2.0).max(2.0);
        let half_h = (0.25 * h).max(2.0);
        let k = (t - 1) as f64;
        let dx = (3.0 * triangle(k / 60.0 + layer as f64 * 0.37)).round();
        let dy = (2.0 * triangle(k / 90.0 + layer as f64 * 0.59)).round();
        let col0 = (cx + dx - half_w).round().max(0.0) as usize;
        let col1 = ((cx + dx + half_w).round() as usize).min(self.config.width);
        let row0 = (cy + dy - half_h).round().max(0.0) as usize;
        let row1 = ((cy + dy + half_h).round() as usize).min(self.config.height);
        (row0, row1, col0, col1)
    }

    /// Exact per-pixel layer labels for frame `t` (0 = background; larger
    /// ids are nearer and occlude).
    pub fn gt_labels(&self, t: usize) -> Vec<u16> {
        let mut labels = vec![0u16; self.config.height * self.config.width];
        for layer in 1..self.config.layers {
            let (r0, r1, c0, c1) = self.layer_rect(layer, t);
            for r in r0..r1 {
                for c in c0..c1 {
                    labels[r * self.config.width + c] = layer as u16;
                }
            }
        }
        labels
    }

    fn pixel_ray(&self, r: usize, c: usize) -> (f64, f64) {
        let xn = (c as f64 + 0.5 - self.config.width as f64 / 2.0) / self.focal;
        let yn = (r as f64 + 0.5 - self.config.height as f64 / 2.0) / self.focal;
        (xn, yn)
    }

    fn pixel_camera_point(&self, r: usize, c: usize, layer: usize) -> Vector3<f64> {
        let (xn, yn) = self.pixel_ray(r, c);
        let mut d = self.layer_depth(layer);
        // Layers beyond the second foreground plane are slanted.
        if layer >= 3 {
            d *= 1.0 + 0.1 * xn;
        }
        Vector3::new(xn * d, yn * d, d)
    }

    /// Ground-truth world points of frame `t`, pixel row-major.
    pub fn gt_points(&self, t: usize) -> Vec<Vector3<f64>> {
        let pose = self.gt_pose(t);
        let labels = self.gt_labels(t);
        let mut out = Vec::with_capacity(labels.len());
        for r in 0..self.config.height {
            for c in 0..self.config.width {
                let layer = labels[r * self.config.width + c] as usize;
                out.push(pose.transform_point(&self.pixel_camera_point(r, c, layer)));
            }
        }
        out
    }

    /// Ground-truth pseudo-depth (world Z) grid of frame `t`.
    pub fn gt_depth(&self, t: usize) -> Vec<f64> {
        self.gt_points(t).iter().map(|p| p.z).collect()
    }

    /// The corruption recorded for a window index; window 1 is clean because
    /// it defines the world frame.
    pub fn distortion(&self, window_index: usize) -> WindowDistortion {
        if window_index <= 1 {
            return WindowDistortion::identity(self.config.layers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
            self.config.seed,
            0xD15,
            window_index as u64,
        ]));
        let scale = sample_range(&mut rng, self.config.window_scale_range);
        let angle = sample_range(&mut rng, self.config.window_rot_deg_range).to_radians();
        let axis = random_unit(&mut rng);
        let magnitude = sample_range(&mut rng, self.config.window_trans_range);
        let dir = random_unit(&mut rng);
        let sim3 = Sim3Transform::new(
            scale,
            Rotation::from_axis_angle(&axis, angle),
            dir.into_inner() * magnitude,
        )
        .expect("sampled scale is positive");
        let mut layer_scales = vec![1.0];
        for _ in 1..self.config.layers {
            layer_scales.push(sample_range(&mut rng, self.config.layer_scale_range));
        }
        WindowDistortion { sim3, layer_scales }
    }

    /// Bounding-box diagonal over sampled ground-truth content and the full
    /// camera path; used to express noise and error budgets in scene units.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut absorb = |p: &Vector3<f64>| {
            lo = lo.inf(p);
            hi = hi.sup(p);
        };
        let step = (self.config.frames / 8).max(1);
        for t in (1..=self.config.frames).step_by(step) {
            for p in self.gt_points(t) {
                absorb(&p);
            }
        }
        for t in 1..=self.config.frames {
            absorb(&self.gt_pose(t).translation);
        }
        (hi - lo).norm()
    }

    /// Emits the prediction a frozen reconstructor would produce for
    /// `window`: ground truth in the window's local frame, corrupted by the
    /// window's recorded distortion and noise.
    pub fn emit_window(&self, window: &WindowSpec) -> Result<WindowPrediction> {
        if window.start < 1 || window.end() > self.config.frames {
            return Err(Error::Config(format!(
                "window {} spans frames {}..={} outside the scene's 1..={}",
                window.index,
                window.start,
                window.end(),
                self.config.frames
            )));
        }
        let distortion = self.distortion(window.index);
        let local_anchor = self.gt_pose(window.start).inverse();
        let px = self.config.height * self.config.width;
        let sigma = self.config.noise_sigma;

        let mut frames = Vec::with_capacity(window.len);
        for t in window.frames() {
            let gt_local_pose = local_anchor.compose(&self.gt_pose(t));
            let pose = distortion.sim3.compose_pose(&gt_local_pose);
            let center = pose.translation;
            let labels = self.gt_labels(t);
            let world_points = self.gt_points(t);

            let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                self.config.seed,
                0x0153,
                window.index as u64,
                t as u64,
            ]));
            let mut dither_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                self.config.seed,
                0xC0FD,
                window.index as u64,
                t as u64,
            ]));

            let mut points = Vec::with_capacity(px);
            let mut conf = Vec::with_capacity(px);
            for (i, world) in world_points.iter().enumerate() {
                let local = local_anchor.transform_point(world);
                let sim3_only = distortion.sim3.apply(&local);
                let f = distortion.layer_scales[labels[i] as usize];
                let mut p = center + f * (sim3_only - center);
                if sigma > 0.0 {
                    let g = Vector3::new(
                        noise_rng.sample::<f64, _>(StandardNormal),
                        noise_rng.sample::<f64, _>(StandardNormal),
                        noise_rng.sample::<f64, _>(StandardNormal),
                    );
                    p += sigma * g;
                }
                let displacement = (p - sim3_only).norm();
                let dither = CONFIDENCE_DITHER * dither_rng.random::<f64>();
                conf.push((1.0 / (1.0 + displacement + dither)) as f32);
                points.push([p.x as f32, p.y as f32, p.z as f32]);
            }

            frames.push(FramePrediction {
                pointmap: PointMap::new(self.config.height, self.config.width, points, vec![true; px])?,
                pose,
                confidence: ConfidenceMap::new(self.config.height, self.config.width, conf)?,
            });
        }
        WindowPrediction::new(*window, frames)
    }
}
