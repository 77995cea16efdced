//! Layer-wise scale alignment: segments world-aligned pseudo-depth into
//! layers, links them across windows and time in a directed graph, estimates
//! per-layer scales on the inter-window edges by 1-D Huber IRLS, propagates
//! and aggregates them over the graph, and divides each pixel's offset from
//! its camera center by its layer's aggregated scale.

mod graph;
mod segment;

pub use graph::{
    build_layer_graph, layer_iou, propagate_scales, EdgeKind, FrameLayers, LayerEdge, LayerGraph,
    LayerScaleTable, LayerVertex, ScaleEntry,
};
pub use segment::{segment_depth, LayerLabelMap, SegmentationParams, INVALID_LABEL};

use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointMap;
use crate::ingest::WindowPrediction;
use crate::registration::{scale_irls, IrlsConfig};

/// Per-frame scalar grid (pseudo-depth) with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Z components of a world-aligned point map; invalid pixels stay marked.
pub fn pseudo_depth(pm_world: &PointMap) -> DepthGrid {
    let values = pm_world
        .raw_points()
        .iter()
        .map(|p| p[2] as f64)
        .collect();
    DepthGrid {
        height: pm_world.height(),
        width: pm_world.width(),
        values,
        valid: pm_world.validity().to_vec(),
    }
}

/// Robust scale between two layers' depths over their pixel intersection:
/// the `s` minimizing Σ ρ(|s·d_prev − d_curr|), i.e. how the current layer
/// is scaled relative to the previous window's.
pub fn estimate_layer_scale(
    prev_depth: &DepthGrid,
    curr_depth: &DepthGrid,
    intersection: &[usize],
    cfg: &IrlsConfig,
) -> Result<f64> {
    if intersection.is_empty() {
        return Err(Error::degenerate("estimate_layer_scale", "empty intersection"));
    }
    let pairs: Vec<(f64, f64)> = intersection
        .iter()
        .filter(|&&i| prev_depth.valid[i] && curr_depth.valid[i])
        .map(|&i| (prev_depth.values[i], curr_depth.values[i]))
        .collect();
    scale_irls(&pairs, cfg)
}

/// Scales every valid labeled pixel about the frame's camera center:
/// p' = c + s·(p − c), with s looked up per layer. Layers at scale 1 are
/// untouched bit-for-bit.
pub fn apply_layer_scales(
    pm_world: &PointMap,
    labels: &LayerLabelMap,
    frame_scales: &[f64],
    camera_center: &Vector3<f64>,
) -> PointMap {
    let mut out = pm_world.clone();
    apply_layer_scales_in_place(&mut out, labels, frame_scales, camera_center);
    out
}

pub fn apply_layer_scales_in_place(
    pm_world: &mut PointMap,
    labels: &LayerLabelMap,
    frame_scales: &[f64],
    camera_center: &Vector3<f64>,
) {
    debug_assert_eq!(pm_world.len(), labels.labels().len());
    for i in 0..pm_world.len() {
        if !pm_world.is_valid(i) {
            continue;
        }
        let label = labels.label(i);
        if label == INVALID_LABEL {
            continue;
        }
        let s = frame_scales[label as usize];
        if s == 1.0 {
            continue;
        }
        let p = pm_world.point(i);
        pm_world.set_point(i, &(camera_center + s * (p - camera_center)));
    }
}

/// Knobs of the LSA stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsaParams {
    pub iou_tau: f64,
    pub segmentation: SegmentationParams,
    pub irls: IrlsConfig,
}

impl Default for LsaParams {
    fn default() -> Self {
        Self {
            iou_tau: 0.3,
            segmentation: SegmentationParams::default(),
            irls: IrlsConfig::default(),
        }
    }
}

/// Counters and stage timings reported per window.
#[derive(Debug, Clone, Copy, Default)]
pub struct LsaStats {
    pub layers: usize,
    pub inter_edges: usize,
    pub intra_edges: usize,
    pub ms_segment: f64,
    pub ms_graph: f64,
    pub ms_propagate: f64,
}

/// Output of the scale-table computation: the aggregated table, the current
/// window's label maps (needed to apply or undo corrections later), and
/// stage statistics.
#[derive(Debug, Clone)]
pub struct LsaComputation {
    pub table: LayerScaleTable,
    pub labels: Vec<LayerLabelMap>,
    pub stats: LsaStats,
}

impl LsaComputation {
    /// Identity outcome used for the first window or when LSA is disabled:
    /// labels are still computed so downstream windows can segment against
    /// them, but all scales are 1.
    pub fn identity(labels: Vec<LayerLabelMap>, stats: LsaStats) -> Self {
        let counts: Vec<usize> = labels.iter().map(|l| l.num_layers()).collect();
        Self {
            table: LayerScaleTable::identity(&counts),
            labels,
            stats,
        }
    }
}

/// Segments every frame of a window's world-aligned prediction, in parallel
/// across frames.
pub fn segment_window(
    pred: &WindowPrediction,
    params: &SegmentationParams,
) -> Vec<LayerLabelMap> {
    pred.frames()
        .par_iter()
        .map(|f| segment_depth(&pseudo_depth(&f.pointmap), params))
        .collect()
}

/// Computes the aggregated layer-scale table aligning `curr_world` to
/// `prev_world` (both already registered into the world frame; `prev_world`
/// is expected to carry its own corrections already). Does not modify the
/// prediction; corrections are applied by dividing by the table's scales.
pub fn compute_scale_table(
    prev_world: &WindowPrediction,
    curr_world: &WindowPrediction,
    overlap: &[usize],
    params: &LsaParams,
) -> Result<LsaComputation> {
    let seg_start = Instant::now();
    let curr_labels = segment_window(curr_world, &params.segmentation);
    let prev_labels: Vec<(usize, LayerLabelMap)> = overlap
        .par_iter()
        .map(|&t| {
            let frame = prev_world.frame_for(t).ok_or_else(|| {
                Error::degenerate(
                    "compute_scale_table",
                    format!("overlap frame {t} missing from previous window"),
                )
            })?;
            Ok((
                t,
                segment_depth(&pseudo_depth(&frame.pointmap), &params.segmentation),
            ))
        })
        .collect::<Result<_>>()?;
    let ms_segment = seg_start.elapsed().as_secs_f64() * 1e3;

    let graph_start = Instant::now();
    let prev_frames: Vec<FrameLayers> = prev_labels
        .into_iter()
        .map(|(timestamp, labels)| FrameLayers { timestamp, labels })
        .collect();
    let curr_frames: Vec<FrameLayers> = curr_labels
        .iter()
        .enumerate()
        .map(|(pos, labels)| FrameLayers {
            timestamp: curr_world.window().start + pos,
            labels: labels.clone(),
        })
        .collect();
    let graph = build_layer_graph(
        prev_world.window().index,
        &prev_frames,
        curr_world.window().index,
        &curr_frames,
        params.iou_tau,
    )?;
    let ms_graph = graph_start.elapsed().as_secs_f64() * 1e3;

    let prop_start = Instant::now();
    // Per-edge scale estimation over the pixel intersection of the two
    // layers' masks, then Algorithm-style propagation and aggregation.
    let mut kept_inter = Vec::with_capacity(graph.inter_edges().len());
    let mut inter_scales = Vec::with_capacity(graph.inter_edges().len());
    for edge in graph.inter_edges() {
        let t = edge.child.timestamp;
        let prev_frame = prev_world.frame_for(t).expect("validated above");
        let curr_frame = curr_world.frame_for(t).expect("contiguous window");
        let prev_map = &prev_frames
            .iter()
            .find(|f| f.timestamp == t)
            .expect("overlap frame segmented")
            .labels;
        let curr_map = &curr_labels[curr_world.position_of(t).expect("in window")];
        let intersection: Vec<usize> = (0..prev_map.labels().len())
            .filter(|&i| {
                prev_map.label(i) == edge.parent.layer && curr_map.label(i) == edge.child.layer
            })
            .collect();
        let prev_depth = pseudo_depth(&prev_frame.pointmap);
        let curr_depth = pseudo_depth(&curr_frame.pointmap);
        match estimate_layer_scale(&prev_depth, &curr_depth, &intersection, &params.irls) {
            Ok(s) => {
                kept_inter.push(*edge);
                inter_scales.push(s);
            }
            Err(e) => {
                log::warn!(
                    "window {}: dropping inter edge {:?} -> {:?}: {e}",
                    curr_world.window().index,
                    edge.parent,
                    edge.child
                );
            }
        }
    }
    let graph = LayerGraph::from_parts(
        graph.curr_window(),
        graph.curr_start(),
        graph.layer_counts().to_vec(),
        kept_inter,
        graph.intra_edges().to_vec(),
    )?;
    let table = propagate_scales(&graph, &inter_scales)?;
    let ms_propagate = prop_start.elapsed().as_secs_f64() * 1e3;

    let stats = LsaStats {
        layers: graph.layer_counts().iter().sum(),
        inter_edges: graph.inter_edges().len(),
        intra_edges: graph.intra_edges().len(),
        ms_segment,
        ms_graph,
        ms_propagate,
    };
    Ok(LsaComputation {
        table,
        labels: curr_labels,
        stats,
    })
}

/// Divides each labeled pixel's camera-ray offset by its aggregated layer
/// scale, writing the corrected points into `curr_world`.
pub fn apply_correction(
    curr_world: &mut WindowPrediction,
    computation: &LsaComputation,
) {
    for pos in 0..curr_world.frames().len() {
        let scales: Vec<f64> = computation
            .table
            .frame_scales(pos)
            .iter()
            .map(|s| 1.0 / s)
            .collect();
        let center = curr_world.frame_at(pos).pose.translation;
        let frame = &mut curr_world.frames_mut()[pos];
        apply_layer_scales_in_place(&mut frame.pointmap, &computation.labels[pos], &scales, &center);
    }
}

/// Full LSA stage for one window pair: segment, link, estimate, propagate,
/// correct. Returns the corrected prediction and the aggregated table. With
/// no previous window there are no inter edges and the correction is the
/// identity.
pub fn run_lsa(
    prev_world: Option<&WindowPrediction>,
    curr_world: &WindowPrediction,
    overlap: &[usize],
    params: &LsaParams,
) -> Result<(WindowPrediction, LsaComputation)> {
    let computation = match prev_world {
        Some(prev) if !overlap.is_empty() => {
            compute_scale_table(prev, curr_world, overlap, params)?
        }
        _ => LsaComputation::identity(
            segment_window(curr_world, &params.segmentation),
            LsaStats::default(),
        ),
    };
    let mut corrected = curr_world.clone();
    apply_correction(&mut corrected, &computation);
    Ok((corrected, computation))
}
