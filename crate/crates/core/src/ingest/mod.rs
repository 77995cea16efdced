//! Sources of per-window predictions: a bit-exact binary container for
//! precomputed backbone outputs, and a synthetic ground-truth generator with
//! controlled, replayable distortions.

mod container;
mod synthetic;

pub use container::{
    inspect_container, read_window_predictions, read_window_predictions_any, ContainerHeader,
    CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use synthetic::{CameraPath, SceneConfig, SyntheticScene, WindowDistortion};

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, PointMap, RigidPose};
use crate::windowing::WindowSpec;

/// One frame's prediction inside a window, in the window's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub pointmap: PointMap,
    pub pose: RigidPose,
    pub confidence: ConfidenceMap,
}

/// Per-window output of the (real or synthetic) reconstructor: point maps,
/// camera poses and confidences for every frame of the window, all expressed
/// in the window's local coordinate system.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    window: WindowSpec,
    frames: Vec<FramePrediction>,
}

impl WindowPrediction {
    pub fn new(window: WindowSpec, frames: Vec<FramePrediction>) -> Result<Self> {
        if frames.len() != window.len {
            return Err(Error::degenerate(
                "WindowPrediction::new",
                format!(
                    "window {} declares {} frames but {} supplied",
                    window.index,
                    window.len,
                    frames.len()
                ),
            ));
        }
        let (h, w) = match frames.first() {
            Some(f) => (f.pointmap.height(), f.pointmap.width()),
            None => {
                return Err(Error::degenerate(
                    "WindowPrediction::new",
                    "window must contain at least one frame",
                ))
            }
        };
        for (pos, f) in frames.iter().enumerate() {
            if f.pointmap.height() != h
                || f.pointmap.width() != w
                || f.confidence.height() != h
                || f.confidence.width() != w
            {
                return Err(Error::degenerate(
                    "WindowPrediction::new",
                    format!("frame at position {pos} has mismatched dimensions"),
                ));
            }
        }
        Ok(Self { window, frames })
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn height(&self) -> usize {
        self.frames[0].pointmap.height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].pointmap.width()
    }

    pub fn frames(&self) -> &[FramePrediction] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [FramePrediction] {
        &mut self.frames
    }

    pub fn frame_at(&self, pos: usize) -> &FramePrediction {
        &self.frames[pos]
    }

    /// Frame lookup by absolute (1-based) timestamp.
    pub fn frame_for(&self, timestamp: usize) -> Option<&FramePrediction> {
        if !self.window.contains(timestamp) {
            return None;
        }
        Some(&self.frames[timestamp - self.window.start])
    }

    pub fn position_of(&self, timestamp: usize) -> Option<usize> {
        self.window
            .contains(timestamp)
            .then(|| timestamp - self.window.start)
    }

    /// Approximate in-memory footprint of the dense payload, in bytes.
    pub fn payload_bytes(&self) -> usize {
        let per_pixel = 12 + 4 + 1; // f32 xyz + f32 confidence + validity
        self.frames.len() * self.height() * self.width() * per_pixel
    }
}
