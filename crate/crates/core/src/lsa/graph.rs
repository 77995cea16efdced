//! The directed layer graph over two adjacent windows and its scale
//! propagation. Inter-window edges connect layers of the same timestamp
//! across windows; intra-window edges connect layers of consecutive frames
//! inside the current window. Edges exist where the label-mask IoU strictly
//! exceeds the threshold, and are directed forward in (window, timestamp),
//! so the graph is acyclic by construction.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::segment::{LayerLabelMap, INVALID_LABEL};

/// |a ∩ b| / |a ∪ b| over same-grid pixel masks; 0 when the union is empty.
pub fn layer_iou(a: &[bool], b: &[bool]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection sizes for every co-occurring label pair of two label maps,
/// plus per-map label sizes. One pass over the pixels.
fn joint_overlap(
    a: &LayerLabelMap,
    b: &LayerLabelMap,
) -> (HashMap<(u32, u32), usize>, Vec<usize>, Vec<usize>) {
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    for (&la, &lb) in a.labels().iter().zip(b.labels().iter()) {
        if la != INVALID_LABEL && lb != INVALID_LABEL {
            *joint.entry((la, lb)).or_insert(0) += 1;
        }
    }
    (joint, a.sizes(), b.sizes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Same timestamp, previous window -> current window.
    Inter,
    /// Consecutive timestamps inside the current window.
    Intra,
}

/// Graph vertex: a depth layer of one frame of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerVertex {
    pub window: usize,
    pub timestamp: usize,
    pub layer: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerEdge {
    pub parent: LayerVertex,
    pub child: LayerVertex,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Layers of one frame, tagged with its absolute timestamp.
#[derive(Debug, Clone)]
pub struct FrameLayers {
    pub timestamp: usize,
    pub labels: LayerLabelMap,
}

/// Directed layer graph for one window transition. Children always live in
/// the current window; `layer_counts[pos]` is the current window's layer
/// count at frame position `pos`.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    curr_window: usize,
    curr_start: usize,
    layer_counts: Vec<usize>,
    inter_edges: Vec<LayerEdge>,
    intra_edges: Vec<LayerEdge>,
}

impl LayerGraph {
    /// Assembles a graph from explicit parts (tests and oracles); edges are
    /// validated to point strictly forward in (window, timestamp).
    pub fn from_parts(
        curr_window: usize,
        curr_start: usize,
        layer_counts: Vec<usize>,
        inter_edges: Vec<LayerEdge>,
        intra_edges: Vec<LayerEdge>,
    ) -> Result<Self> {
        for e in &inter_edges {
            if e.kind != EdgeKind::Inter
                || e.parent.window >= curr_window
                || e.child.window != curr_window
                || e.parent.timestamp != e.child.timestamp
            {
                return Err(Error::degenerate("LayerGraph", "malformed inter edge"));
            }
        }
        for e in &intra_edges {
            if e.kind != EdgeKind::Intra
                || e.parent.window != curr_window
                || e.child.window != curr_window
                || e.parent.timestamp + 1 != e.child.timestamp
            {
                return Err(Error::degenerate("LayerGraph", "malformed intra edge"));
            }
        }
        Ok(Self {
            curr_window,
            curr_start,
            layer_counts,
            inter_edges,
            intra_edges,
        })
    }

    pub fn curr_window(&self) -> usize {
        self.curr_window
    }

    pub fn curr_start(&self) -> usize {
        self.curr_start
    }

    pub fn layer_counts(&self) -> &[usize] {
        &self.layer_counts
    }

    pub fn inter_edges(&self) -> &[LayerEdge] {
        &self.inter_edges
    }

    pub fn intra_edges(&self) -> &[LayerEdge] {
        &self.intra_edges
    }

    pub fn frame_pos(&self, timestamp: usize) -> usize {
        timestamp - self.curr_start
    }
}

/// Builds the layer graph between the previous window's overlap-frame layers
/// and all of the current window's layers. `prev` holds the previous
/// window's label maps at the overlapping timestamps; `curr` holds one entry
/// per current-window frame, ascending and contiguous in timestamp.
pub fn build_layer_graph(
    prev_window: usize,
    prev: &[FrameLayers],
    curr_window: usize,
    curr: &[FrameLayers],
    tau: f64,
) -> Result<LayerGraph> {
    if curr.is_empty() {
        return Err(Error::degenerate("build_layer_graph", "no current frames"));
    }
    let curr_start = curr[0].timestamp;
    for (i, f) in curr.iter().enumerate() {
        if f.timestamp != curr_start + i {
            return Err(Error::degenerate(
                "build_layer_graph",
                "current frames must be contiguous in time",
            ));
        }
    }

    let mut inter_edges = Vec::new();
    for pf in prev {
        let Some(cf) = curr.iter().find(|c| c.timestamp == pf.timestamp) else {
            return Err(Error::degenerate(
                "build_layer_graph",
                format!("overlap frame {} missing from current window", pf.timestamp),
            ));
        };
        let (joint, prev_sizes, curr_sizes) = joint_overlap(&pf.labels, &cf.labels);
        let mut pairs: Vec<((u32, u32), usize)> = joint.into_iter().collect();
        pairs.sort_unstable_by_key(|&(pair, _)| pair);
        for ((lp, lc), inter) in pairs {
            let union = prev_sizes[lp as usize] + curr_sizes[lc as usize] - inter;
            let iou = inter as f64 / union as f64;
            if iou > tau {
                inter_edges.push(LayerEdge {
                    parent: LayerVertex {
                        window: prev_window,
                        timestamp: pf.timestamp,
                        layer: lp,
                    },
                    child: LayerVertex {
                        window: curr_window,
                        timestamp: cf.timestamp,
                        layer: lc,
                    },
                    weight: iou,
                    kind: EdgeKind::Inter,
                });
            }
        }
    }

    let mut intra_edges = Vec::new();
    for pair in curr.windows(2) {
        let (ca, cb) = (&pair[0], &pair[1]);
        let (joint, a_sizes, b_sizes) = joint_overlap(&ca.labels, &cb.labels);
        let mut pairs: Vec<((u32, u32), usize)> = joint.into_iter().collect();
        pairs.sort_unstable_by_key(|&(pair, _)| pair);
        for ((la, lb), inter) in pairs {
            let union = a_sizes[la as usize] + b_sizes[lb as usize] - inter;
            let iou = inter as f64 / union as f64;
            if iou > tau {
                intra_edges.push(LayerEdge {
                    parent: LayerVertex {
                        window: curr_window,
                        timestamp: ca.timestamp,
                        layer: la,
                    },
                    child: LayerVertex {
                        window: curr_window,
                        timestamp: cb.timestamp,
                        layer: lb,
                    },
                    weight: iou,
                    kind: EdgeKind::Intra,
                });
            }
        }
    }

    LayerGraph::from_parts(
        curr_window,
        curr_start,
        curr.iter().map(|f| f.labels.num_layers()).collect(),
        inter_edges,
        intra_edges,
    )
}

/// Accumulator state and final scale of one current-window layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEntry {
    pub accumulator: f64,
    pub weight: f64,
    pub scale: f64,
}

/// Final per-layer scales of the current window, indexed by
/// (frame position, layer id). Scales aggregate the estimated inter-window
/// edge scales, so they express how each layer is scaled relative to the
/// previous window; dividing by them aligns the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScaleTable {
    offsets: Vec<usize>,
    entries: Vec<ScaleEntry>,
}

impl LayerScaleTable {
    /// All-identity table for `layer_counts` (used when LSA is disabled or
    /// the graph is empty).
    pub fn identity(layer_counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(layer_counts.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for &c in layer_counts {
            total += c;
            offsets.push(total);
        }
        Self {
            offsets,
            entries: vec![
                ScaleEntry {
                    accumulator: 0.0,
                    weight: 0.0,
                    scale: 1.0,
                };
                total
            ],
        }
    }

    pub fn frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn layer_count(&self, frame_pos: usize) -> usize {
        self.offsets[frame_pos + 1] - self.offsets[frame_pos]
    }

    pub fn entry(&self, frame_pos: usize, layer: u32) -> &ScaleEntry {
        &self.entries[self.offsets[frame_pos] + layer as usize]
    }

    fn entry_mut(&mut self, frame_pos: usize, layer: u32) -> &mut ScaleEntry {
        &mut self.entries[self.offsets[frame_pos] + layer as usize]
    }

    pub fn scale(&self, frame_pos: usize, layer: u32) -> f64 {
        self.entry(frame_pos, layer).scale
    }

    /// Per-layer scales of one frame as a dense vector.
    pub fn frame_scales(&self, frame_pos: usize) -> Vec<f64> {
        self.entries[self.offsets[frame_pos]..self.offsets[frame_pos + 1]]
            .iter()
            .map(|e| e.scale)
            .collect()
    }

    pub fn entries(&self) -> &[ScaleEntry] {
        &self.entries
    }
}

/// Propagates and aggregates per-edge scales over the layer graph:
/// every inter edge deposits its estimated scale weighted by IoU; then, in
/// ascending timestamp order, every intra edge deposits its parent's running
/// mean. A layer that received nothing keeps scale 1.
///
/// `inter_scales[j]` is the estimated scale of `graph.inter_edges()[j]`.
pub fn propagate_scales(graph: &LayerGraph, inter_scales: &[f64]) -> Result<LayerScaleTable> {
    if inter_scales.len() != graph.inter_edges().len() {
        return Err(Error::degenerate(
            "propagate_scales",
            format!(
                "expected {} inter-edge scales, got {}",
                graph.inter_edges().len(),
                inter_scales.len()
            ),
        ));
    }
    let mut table = LayerScaleTable::identity(graph.layer_counts());

    for (edge, &s) in graph.inter_edges().iter().zip(inter_scales) {
        let pos = graph.frame_pos(edge.child.timestamp);
        let e = table.entry_mut(pos, edge.child.layer);
        e.accumulator += edge.weight * s;
        e.weight += edge.weight;
    }

    // Temporal pass: parents are read live, after their own inter deposits
    // and any earlier intra deposits at the previous timestamp.
    let frames = graph.layer_counts().len();
    for pos in 1..frames {
        let t = graph.curr_start() + pos;
        for edge in graph.intra_edges() {
            if edge.child.timestamp != t {
                continue;
            }
            let parent = *table.entry(pos - 1, edge.parent.layer);
            if parent.weight > 0.0 {
                let mean = parent.accumulator / parent.weight;
                let e = table.entry_mut(pos, edge.child.layer);
                e.accumulator += edge.weight * mean;
                e.weight += edge.weight;
            }
        }
    }

    for e in table.entries.iter_mut() {
        e.scale = if e.weight > 0.0 {
            e.accumulator / e.weight
        } else {
            1.0
        };
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels_from(grid: &[u32], h: usize, w: usize) -> LayerLabelMap {
        let m = grid
            .iter()
            .filter(|&&l| l != INVALID_LABEL)
            .map(|&l| l + 1)
            .max()
            .unwrap_or(0);
        LayerLabelMap::new(h, w, grid.to_vec(), m as usize)
    }

    #[test]
    fn iou_basics() {
        let a = vec![true, true, false, false];
        assert_eq!(layer_iou(&a, &a), 1.0);
        let b = vec![false, false, true, true];
        assert_eq!(layer_iou(&a, &b), 0.0);
        assert_eq!(layer_iou(&[false; 4], &[false; 4]), 0.0);
        // |a|=|b|=2, |inter|=1 -> 1/3
        let c = vec![true, false, true, false];
        assert_relative_eq!(layer_iou(&a, &c), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_segmentations_give_perfect_inter_matching() {
        let grid = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let lm = labels_from(&grid, 2, 4);
        let prev = vec![FrameLayers {
            timestamp: 5,
            labels: lm.clone(),
        }];
        let curr = vec![
            FrameLayers {
                timestamp: 5,
                labels: lm.clone(),
            },
            FrameLayers {
                timestamp: 6,
                labels: lm,
            },
        ];
        let g = build_layer_graph(1, &prev, 2, &curr, 0.3).unwrap();
        assert_eq!(g.inter_edges().len(), 2);
        assert!(g.inter_edges().iter().all(|e| e.weight == 1.0));
        assert!(g
            .inter_edges()
            .iter()
            .all(|e| e.parent.layer == e.child.layer));
        // Static labels across frames: one intra chain per layer.
        assert_eq!(g.intra_edges().len(), 2);
        assert!(g.intra_edges().iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn graph_matches_all_pairs_iou_oracle() {
        let (h, w) = (6, 6);
        let a: Vec<u32> = (0..h * w).map(|i| ((i / 3) % 3) as u32).collect();
        let b: Vec<u32> = (0..h * w).map(|i| ((i / 4) % 3) as u32).collect();
        let la = labels_from(&a, h, w);
        let lb = labels_from(&b, h, w);
        let tau = 0.3;
        let prev = vec![FrameLayers {
            timestamp: 9,
            labels: la.clone(),
        }];
        let curr = vec![FrameLayers {
            timestamp: 9,
            labels: lb.clone(),
        }];
        let g = build_layer_graph(3, &prev, 4, &curr, tau).unwrap();

        let mut expected = Vec::new();
        for lp in 0..la.num_layers() as u32 {
            for lc in 0..lb.num_layers() as u32 {
                let iou = layer_iou(&la.mask_of(lp), &lb.mask_of(lc));
                if iou > tau {
                    expected.push((lp, lc, iou));
                }
            }
        }
        let got: Vec<(u32, u32, f64)> = g
            .inter_edges()
            .iter()
            .map(|e| (e.parent.layer, e.child.layer, e.weight))
            .collect();
        assert_eq!(got.len(), expected.len());
        for (e, g) in expected.iter().zip(&got) {
            assert_eq!((e.0, e.1), (g.0, g.1));
            assert_relative_eq!(e.2, g.2, epsilon = 1e-15);
        }
    }

    fn vertex(window: usize, timestamp: usize, layer: u32) -> LayerVertex {
        LayerVertex {
            window,
            timestamp,
            layer,
        }
    }

    fn inter(t: usize, lp: u32, lc: u32, w: f64) -> LayerEdge {
        LayerEdge {
            parent: vertex(1, t, lp),
            child: vertex(2, t, lc),
            weight: w,
            kind: EdgeKind::Inter,
        }
    }

    fn intra(t_child: usize, lp: u32, lc: u32, w: f64) -> LayerEdge {
        LayerEdge {
            parent: vertex(2, t_child - 1, lp),
            child: vertex(2, t_child, lc),
            weight: w,
            kind: EdgeKind::Intra,
        }
    }

    #[test]
    fn single_inter_edge_sets_scale() {
        let g = LayerGraph::from_parts(2, 10, vec![1], vec![inter(10, 0, 0, 0.8)], vec![]).unwrap();
        let table = propagate_scales(&g, &[2.0]).unwrap();
        assert_eq!(table.scale(0, 0), 2.0);
    }

    #[test]
    fn two_inter_edges_weighted_mean() {
        let g = LayerGraph::from_parts(
            2,
            10,
            vec![1],
            vec![inter(10, 0, 0, 0.5), inter(10, 1, 0, 0.5)],
            vec![],
        )
        .unwrap();
        let table = propagate_scales(&g, &[1.0, 3.0]).unwrap();
        assert_eq!(table.scale(0, 0), 2.0);
    }

    #[test]
    fn chain_propagation_reads_live_parent_means() {
        // Three frames, one layer each. Frame 0 gets an inter scale of 1.5;
        // intra edges carry it down the chain; frame 2 additionally receives
        // an inter scale of 2.5, ending at (1*2.5 + 1*1.5)/2 = 2.0.
        let g = LayerGraph::from_parts(
            2,
            10,
            vec![1, 1, 1],
            vec![inter(10, 0, 0, 1.0), inter(12, 0, 0, 1.0)],
            vec![intra(11, 0, 0, 1.0), intra(12, 0, 0, 1.0)],
        )
        .unwrap();
        let table = propagate_scales(&g, &[1.5, 2.5]).unwrap();
        assert_eq!(table.scale(0, 0), 1.5);
        assert_eq!(table.scale(1, 0), 1.5);
        assert_eq!(table.scale(2, 0), 2.0);
    }

    #[test]
    fn unreached_layers_default_to_one() {
        let g = LayerGraph::from_parts(2, 4, vec![2, 2], vec![inter(4, 0, 0, 0.9)], vec![]).unwrap();
        let table = propagate_scales(&g, &[3.0]).unwrap();
        assert_eq!(table.scale(0, 0), 3.0);
        assert_eq!(table.scale(0, 1), 1.0);
        assert_eq!(table.scale(1, 0), 1.0);
        assert_eq!(table.scale(1, 1), 1.0);
        for e in table.entries() {
            if e.weight == 0.0 {
                assert_eq!(e.scale, 1.0);
            }
        }
    }

    #[test]
    fn constant_inter_scales_propagate_unchanged() {
        // Weighted averages of a constant stay that constant on every
        // reachable layer, regardless of the weights.
        let g = LayerGraph::from_parts(
            2,
            1,
            vec![2, 2, 2],
            vec![inter(1, 0, 0, 0.7), inter(1, 1, 1, 0.4)],
            vec![
                intra(2, 0, 0, 0.9),
                intra(2, 1, 1, 0.35),
                intra(3, 0, 0, 0.8),
                intra(3, 1, 1, 0.45),
                intra(3, 0, 1, 0.31),
            ],
        )
        .unwrap();
        let table = propagate_scales(&g, &[1.4, 1.4]).unwrap();
        for pos in 0..3 {
            for layer in 0..2 {
                assert_relative_eq!(table.scale(pos, layer), 1.4, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn accumulation_is_order_invariant() {
        let edges = vec![
            inter(5, 0, 0, 0.5),
            inter(5, 1, 0, 0.25),
            inter(5, 2, 0, 0.125),
        ];
        let scales = [1.25, 2.5, 0.5];
        let g = LayerGraph::from_parts(2, 5, vec![1], edges.clone(), vec![]).unwrap();
        let base = propagate_scales(&g, &scales).unwrap();

        let perm = [2usize, 0, 1];
        let edges_p: Vec<LayerEdge> = perm.iter().map(|&i| edges[i]).collect();
        let scales_p: Vec<f64> = perm.iter().map(|&i| scales[i]).collect();
        let gp = LayerGraph::from_parts(2, 5, vec![1], edges_p, vec![]).unwrap();
        let permuted = propagate_scales(&gp, &scales_p).unwrap();
        assert_relative_eq!(base.scale(0, 0), permuted.scale(0, 0), epsilon = 1e-12);
    }

    #[test]
    fn malformed_edges_rejected() {
        // intra edge skipping a timestamp
        let bad = LayerEdge {
            parent: vertex(2, 4, 0),
            child: vertex(2, 6, 0),
            weight: 0.9,
            kind: EdgeKind::Intra,
        };
        assert!(LayerGraph::from_parts(2, 4, vec![1, 1, 1], vec![], vec![bad]).is_err());
        // inter edge from a later window
        let bad = LayerEdge {
            parent: vertex(3, 4, 0),
            child: vertex(2, 4, 0),
            weight: 0.9,
            kind: EdgeKind::Inter,
        };
        assert!(LayerGraph::from_parts(2, 4, vec![1], vec![bad], vec![]).is_err());
    }
}
