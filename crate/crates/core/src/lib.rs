//! Training-free streaming alignment of windowed dense 3D reconstructions.
//!
//! A frozen feed-forward reconstructor (or a synthetic stand-in) produces
//! per-window point maps, camera poses and confidences in each window's local
//! frame. This crate fuses those windows into a globally consistent map and
//! trajectory:
//!
//! * [`registration`] — two-stage Sim(3) registration of each window to the
//!   global map: a robust IRLS scale from mutually confident point
//!   correspondences, then Kabsch on scaled camera anchors.
//! * [`lsa`] — layer-wise scale alignment: depth-layer segmentation, a
//!   directed layer graph across windows and time, per-layer scale IRLS,
//!   propagation/aggregation and per-pixel correction.
//! * [`pipeline`] — the bounded-memory streaming driver and file exports.
//! * [`metrics`] — trajectory, depth and point-map evaluation protocols.
//! * [`ingest`] — a bit-exact prediction container plus a synthetic scene
//!   generator with replayable distortions, standing in for the neural
//!   backbone.

pub mod error;
pub mod geometry;
pub mod ingest;
mod kvfile;
pub mod lsa;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod windowing;

pub use error::{Error, Result};
pub use geometry::{ConfidenceMap, PointMap, RigidPose, Rotation, Sim3Transform};
pub use ingest::{SceneConfig, SyntheticScene, WindowPrediction};
pub use registration::IrlsConfig;
pub use windowing::{schedule_windows, WindowSpec};
