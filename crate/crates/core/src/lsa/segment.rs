//! Graph-based depth segmentation on the 4-connected pixel grid
//! (Felzenszwalb-Huttenlocher). Edge weights are absolute differences of
//! per-frame min-max normalized depth after optional Gaussian smoothing;
//! components smaller than the minimum size are merged into their
//! lowest-weight neighbor in a final pass.

use super::DepthGrid;

/// Sentinel for pixels outside every layer (invalid depth).
pub const INVALID_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    /// Gaussian pre-smoothing bandwidth in pixels; 0 disables smoothing.
    pub sigma: f64,
    /// Merge threshold constant, in normalized depth units.
    pub k: f64,
    /// Minimum layer size as a fraction of the pixel count.
    pub min_size_frac: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            sigma: 0.8,
            k: 0.02,
            min_size_frac: 0.005,
        }
    }
}

/// Per-frame segmentation of pseudo-depth into disjoint 4-connected layers
/// with contiguous ids; invalid pixels carry [`INVALID_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_layers: usize,
}

impl LayerLabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, num_layers: usize) -> Self {
        debug_assert_eq!(labels.len(), height * width);
        Self {
            height,
            width,
            labels,
            num_layers,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Pixel count per layer id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_layers];
        for &l in &self.labels {
            if l != INVALID_LABEL {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn mask_of(&self, layer: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == layer).collect()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    /// Largest internal edge weight of each component.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, w: f64) -> u32 {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.internal[big as usize] = self.internal[big as usize]
            .max(self.internal[small as usize])
            .max(w);
        big
    }
}

/// Separable Gaussian blur over valid pixels, renormalizing the kernel by
/// the in-bounds valid mass so boundaries and masked pixels do not bleed.
fn smooth(grid: &[f64], valid: &[bool], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return grid.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();

    let mut tmp = vec![0.0; grid.len()];
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            if !valid[idx] {
                continue;
            }
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let cc = c as isize + ki as isize - radius;
                if cc < 0 || cc >= width as isize {
                    continue;
                }
                let j = r * width + cc as usize;
                if valid[j] {
                    acc += k * grid[j];
                    mass += k;
                }
            }
            tmp[idx] = acc / mass;
        }
    }
    let mut out = vec![0.0; grid.len()];
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            if !valid[idx] {
                continue;
            }
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let rr = r as isize + ki as isize - radius;
                if rr < 0 || rr >= height as isize {
                    continue;
                }
                let j = rr as usize * width + c;
                if valid[j] {
                    acc += k * tmp[j];
                    mass += k;
                }
            }
            out[idx] = acc / mass;
        }
    }
    out
}

/// Segments a pseudo-depth grid into depth layers.
pub fn segment_depth(depth: &DepthGrid, params: &SegmentationParams) -> LayerLabelMap {
    let (h, w) = (depth.height, depth.width);
    let n = h * w;
    let valid_count = depth.valid.iter().filter(|&&v| v).count();
    if valid_count == 0 {
        return LayerLabelMap::new(h, w, vec![INVALID_LABEL; n], 0);
    }

    // Per-frame min-max normalization keeps k scale-free.
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        if depth.valid[i] {
            dmin = dmin.min(depth.values[i]);
            dmax = dmax.max(depth.values[i]);
        }
    }
    let range = dmax - dmin;
    let normalized: Vec<f64> = if range > 0.0 {
        depth
            .values
            .iter()
            .map(|&d| (d - dmin) / range)
            .collect()
    } else {
        vec![0.0; n]
    };
    let smoothed = smooth(&normalized, &depth.valid, h, w, params.sigma);

    // 4-connected edges between valid pixels, ascending by weight with a
    // deterministic index tie-break.
    let mut edges: Vec<(f64, u32, u32)> = Vec::with_capacity(2 * n);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !depth.valid[i] {
                continue;
            }
            if c + 1 < w && depth.valid[i + 1] {
                edges.push(((smoothed[i] - smoothed[i + 1]).abs(), i as u32, (i + 1) as u32));
            }
            if r + 1 < h && depth.valid[i + w] {
                edges.push(((smoothed[i] - smoothed[i + w]).abs(), i as u32, (i + w) as u32));
            }
        }
    }
    edges.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("depth weights are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut ds = DisjointSet::new(n);
    for &(wgt, a, b) in &edges {
        let ca = ds.find(a);
        let cb = ds.find(b);
        if ca == cb {
            continue;
        }
        let ta = ds.internal[ca as usize] + params.k / ds.size[ca as usize] as f64;
        let tb = ds.internal[cb as usize] + params.k / ds.size[cb as usize] as f64;
        if wgt <= ta.min(tb) {
            ds.union(ca, cb, wgt);
        }
    }

    // Absorb undersized components along their cheapest connecting edges.
    let min_size = ((params.min_size_frac * n as f64).ceil() as u32).max(1);
    for &(wgt, a, b) in &edges {
        let ca = ds.find(a);
        let cb = ds.find(b);
        if ca != cb && (ds.size[ca as usize] < min_size || ds.size[cb as usize] < min_size) {
            ds.union(ca, cb, wgt);
        }
    }

    // Contiguous ids in row-major first-encounter order.
    let mut labels = vec![INVALID_LABEL; n];
    let mut remap: Vec<u32> = vec![INVALID_LABEL; n];
    let mut next = 0u32;
    for i in 0..n {
        if !depth.valid[i] {
            continue;
        }
        let root = ds.find(i as u32) as usize;
        if remap[root] == INVALID_LABEL {
            remap[root] = next;
            next += 1;
        }
        labels[i] = remap[root];
    }
    LayerLabelMap::new(h, w, labels, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, h: usize, w: usize) -> DepthGrid {
        DepthGrid {
            height: h,
            width: w,
            valid: vec![true; values.len()],
            values,
        }
    }

    fn crisp_params(k: f64) -> SegmentationParams {
        SegmentationParams {
            sigma: 0.0,
            k,
            min_size_frac: 0.0,
        }
    }

    #[test]
    fn constant_depth_is_one_layer() {
        let d = grid(vec![5.0; 60], 6, 10);
        let seg = segment_depth(&d, &SegmentationParams::default());
        assert_eq!(seg.num_layers(), 1);
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn two_planes_separate_exactly() {
        let (h, w) = (8, 10);
        let mut v = vec![2.0; h * w];
        for r in 0..h {
            for c in w / 2..w {
                v[r * w + c] = 10.0;
            }
        }
        let d = grid(v, h, w);
        let seg = segment_depth(&d, &crisp_params(0.02));
        assert_eq!(seg.num_layers(), 2);
        for r in 0..h {
            for c in 0..w {
                let expect = if c < w / 2 { seg.label(0) } else { seg.label(w / 2) };
                assert_eq!(seg.label(r * w + c), expect);
            }
        }
    }

    #[test]
    fn smooth_ramp_with_large_k_merges_to_one_layer() {
        let (h, w) = (6, 30);
        let mut v = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                v[r * w + c] = c as f64 / (w - 1) as f64;
            }
        }
        // Neighbor steps on the normalized ramp are 1/(w-1) ≈ 0.034; any
        // singleton threshold k above that merges the whole ramp.
        let d = grid(v, h, w);
        let seg = segment_depth(&d, &crisp_params(0.5));
        assert_eq!(seg.num_layers(), 1);
    }

    #[test]
    fn undersized_regions_are_absorbed() {
        let (h, w) = (10, 10);
        let mut v = vec![1.0; h * w];
        v[5 * w + 5] = 50.0; // one-pixel outlier
        let d = grid(v, h, w);
        let seg = segment_depth(
            &d,
            &SegmentationParams {
                sigma: 0.0,
                k: 0.01,
                min_size_frac: 0.005, // min size 1 pixel keeps it
            },
        );
        assert_eq!(seg.num_layers(), 2);
        let seg2 = segment_depth(
            &d,
            &SegmentationParams {
                sigma: 0.0,
                k: 0.01,
                min_size_frac: 0.03, // min size 3 pixels absorbs it
            },
        );
        assert_eq!(seg2.num_layers(), 1);
    }

    #[test]
    fn invalid_pixels_stay_unlabeled() {
        let (h, w) = (4, 4);
        let mut d = grid(vec![3.0; h * w], h, w);
        d.valid[0] = false;
        d.valid[5] = false;
        let seg = segment_depth(&d, &SegmentationParams::default());
        assert_eq!(seg.label(0), INVALID_LABEL);
        assert_eq!(seg.label(5), INVALID_LABEL);
        assert_eq!(seg.num_layers(), 1);
        assert_eq!(seg.sizes(), vec![14]);
    }

    #[test]
    fn segmentation_is_deterministic() {
        let (h, w) = (12, 17);
        let mut v = vec![0.0; h * w];
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i * 2654435761) % 97) as f64 / 97.0;
        }
        let d = grid(v, h, w);
        let a = segment_depth(&d, &SegmentationParams::default());
        let b = segment_depth(&d, &SegmentationParams::default());
        assert_eq!(a, b);
    }

    /// Piecewise-constant scenes: labels must equal the connected components
    /// of the quantized depth image exactly (modulo permutation).
    #[test]
    fn matches_connected_component_oracle_on_step_scenes() {
        let (h, w) = (16, 20);
        let mut v = vec![1.0; h * w];
        for r in 3..9 {
            for c in 4..9 {
                v[r * w + c] = 2.0;
            }
        }
        for r in 8..14 {
            for c in 12..18 {
                v[r * w + c] = 3.5;
            }
        }
        let d = grid(v.clone(), h, w);
        let seg = segment_depth(&d, &crisp_params(0.02));
        let oracle = connected_components(&v, h, w);
        assert_labelings_equivalent(seg.labels(), &oracle);
    }

    pub(crate) fn connected_components(values: &[f64], h: usize, w: usize) -> Vec<u32> {
        let mut labels = vec![u32::MAX; values.len()];
        let mut next = 0;
        for start in 0..values.len() {
            if labels[start] != u32::MAX {
                continue;
            }
            let mut stack = vec![start];
            labels[start] = next;
            while let Some(i) = stack.pop() {
                let (r, c) = (i / w, i % w);
                let mut push = |j: usize| {
                    if labels[j] == u32::MAX && values[j] == values[i] {
                        labels[j] = next;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    push(i - 1);
                }
                if c + 1 < w {
                    push(i + 1);
                }
                if r > 0 {
                    push(i - w);
                }
                if r + 1 < h {
                    push(i + w);
                }
            }
            next += 1;
        }
        labels
    }

    pub(crate) fn assert_labelings_equivalent(a: &[u32], b: &[u32]) {
        assert_eq!(a.len(), b.len());
        let mut fwd = std::collections::HashMap::new();
        let mut bwd = std::collections::HashMap::new();
        for (&x, &y) in a.iter().zip(b.iter()) {
            assert_eq!(*fwd.entry(x).or_insert(y), y, "label split detected");
            assert_eq!(*bwd.entry(y).or_insert(x), x, "label merge detected");
        }
    }
}
