//! Explicit correspondence between point maps: nearest neighbours (KD-tree
//! with a brute-force oracle path), mutual matching, kernel-argmax
//! matching on encoded maps, overlap measurement and pair filtering.
//!
//! All searches break ties by the smallest linear pixel index, so the
//! KD-tree and brute-force paths agree exactly and results are
//! reproducible.

use crate::encode::{kernel_eval, EncodedMap, EncodingConfig};
use crate::error::{Error, Result};
use crate::geom::{project_cam_point, Intrinsics, PointMap, Z_NEAR};

/// KD-tree leaf size; below this, nodes store point runs searched linearly.
pub const KDTREE_LEAF_SIZE: usize = 16;

/// One mutual correspondence: pixel `r_index` in the reference map matched
/// with pixel `t_index` in the target map, with their 3-D distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub r_index: usize,
    pub t_index: usize,
    pub distance: f64,
}

/// Set of mutual matches. Each side appears at most once.
#[derive(Clone, Debug, Default)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// CSV export with columns `r_index,t_index,distance_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r_index,t_index,distance_m\n");
        for m in &self.matches {
            out.push_str(&format!("{},{},{}\n", m.r_index, m.t_index, m.distance));
        }
        out
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Static KD-tree over indexed 3-D points.
pub struct KdTree {
    /// (point, original index), reordered during construction.
    items: Vec<([f64; 3], usize)>,
    nodes: Vec<KdNode>,
}

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

impl KdTree {
    /// Builds over `(point, index)` pairs. Empty input yields an empty tree.
    pub fn build(points: Vec<([f64; 3], usize)>) -> Self {
        let mut tree = KdTree { items: points, nodes: Vec::new() };
        if !tree.items.is_empty() {
            let n = tree.items.len();
            tree.split(0, n);
        }
        tree
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= KDTREE_LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return slot;
        }
        // Widest-spread axis.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (p, _) in &self.items[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&i, &j| (hi[i] - lo[i]).total_cmp(&(hi[j] - lo[j]))).unwrap();
        let mid = (start + end) / 2;
        self.items[start..end].select_nth_unstable_by(mid - start, |a, b| {
            a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1))
        });
        let value = self.items[mid].0[axis];
        self.nodes.push(KdNode::Split { axis, value, left: 0, right: 0 });
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        if let KdNode::Split { left: l, right: r, .. } = &mut self.nodes[slot] {
            *l = left;
            *r = right;
        }
        slot
    }

    /// Nearest stored point to `q`; ties resolved toward the smallest
    /// original index (matching the brute-force convention exactly).
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        if self.items.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some((best.1, best.0.sqrt()))
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut (f64, usize)) {
        match &self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for (p, idx) in &self.items[*start..*end] {
                    let d2 = dist2(*p, q);
                    if d2 < best.0 || (d2 == best.0 && *idx < best.1) {
                        *best = (d2, *idx);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, q, best);
                // Equality must still descend: an equal-distance candidate
                // with a smaller index may sit on the far side.
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Per-query-pixel nearest base pixel; `None` where the query is invalid.
pub type NnResult = Vec<Option<usize>>;

/// Brute-force nearest neighbour: the always-available oracle path.
pub fn nn_search_brute(query: &PointMap, base: &PointMap) -> Result<NnResult> {
    let base_idx = base.valid_indices();
    if base_idx.is_empty() {
        return Err(Error::EmptyBase);
    }
    let mut out = vec![None; query.points().len()];
    for qi in query.valid_indices() {
        let q = query.points()[qi];
        let mut best = (f64::INFINITY, usize::MAX);
        for &bi in &base_idx {
            let d2 = dist2(base.points()[bi], q);
            if d2 < best.0 || (d2 == best.0 && bi < best.1) {
                best = (d2, bi);
            }
        }
        out[qi] = Some(best.1);
    }
    Ok(out)
}

/// KD-tree nearest neighbour over the valid base pixels. Agrees with
/// [`nn_search_brute`] exactly, including tie-breaks.
pub fn nn_search(query: &PointMap, base: &PointMap) -> Result<NnResult> {
    let items: Vec<([f64; 3], usize)> =
        base.valid_indices().into_iter().map(|i| (base.points()[i], i)).collect();
    if items.is_empty() {
        return Err(Error::EmptyBase);
    }
    let tree = KdTree::build(items);
    let mut out = vec![None; query.points().len()];
    for qi in query.valid_indices() {
        out[qi] = tree.nearest(query.points()[qi]).map(|(idx, _)| idx);
    }
    Ok(out)
}

/// Mutual nearest neighbours between a reference map and a target map
/// sharing one frame: pairs `(a, b)` where `b` is `a`'s nearest target
/// pixel and `a` is `b`'s nearest reference pixel.
pub fn mutual_matches(x_r: &PointMap, x_t: &PointMap) -> Result<MatchSet> {
    x_r.expect_frame(x_t.frame())?;
    let fwd = nn_search(x_r, x_t)?; // a -> nearest b
    let bwd = nn_search(x_t, x_r)?; // b -> nearest a
    let mut matches = Vec::new();
    for (a, fw) in fwd.iter().enumerate() {
        if let Some(b) = fw {
            if bwd[*b] == Some(a) {
                let d = dist2(x_r.points()[a], x_t.points()[*b]).sqrt();
                matches.push(Match { r_index: a, t_index: *b, distance: d });
            }
        }
    }
    Ok(MatchSet { matches })
}

/// Kernel-argmax matching on encoded maps: for each valid query pixel, the
/// valid base pixel maximizing the encoding inner product. Ties break
/// toward the smallest linear index.
pub fn kernel_nn(query_enc: &EncodedMap, base_enc: &EncodedMap, cfg: &EncodingConfig) -> Result<NnResult> {
    if query_enc.channels() != base_enc.channels() || query_enc.channels() != cfg.channels() {
        return Err(Error::shape(
            "kernel_nn",
            format!(
                "channels {} vs {} (config wants {})",
                query_enc.channels(),
                base_enc.channels(),
                cfg.channels()
            ),
        ));
    }
    let base_valid: Vec<usize> = (0..base_enc.mask().len()).filter(|&i| base_enc.is_valid(i)).collect();
    if base_valid.is_empty() {
        return Err(Error::EmptyBase);
    }
    let n_query = query_enc.mask().len();
    let mut out = vec![None; n_query];
    for qi in 0..n_query {
        if !query_enc.is_valid(qi) {
            continue;
        }
        let qv = query_enc.pixel(qi);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &bi in &base_valid {
            let k = kernel_eval(qv, base_enc.pixel(bi), cfg)?;
            if k > best.0 || (k == best.0 && bi < best.1) {
                best = (k, bi);
            }
        }
        out[qi] = Some(best.1);
    }
    Ok(out)
}

/// Fraction of valid reference pixels that are covisible in the target
/// view: their projection through `k_t` lands in-bounds and their point
/// lies within `tol` meters of the target map's value at that pixel. Both
/// maps must be expressed in the target frame. Returns 0 when the
/// reference has no valid pixels.
pub fn overlap_ratio(x_r: &PointMap, x_t: &PointMap, k_t: &Intrinsics, tol: f64) -> Result<f64> {
    x_r.expect_frame(x_t.frame())?;
    if tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("overlap tolerance must be > 0, got {tol}")));
    }
    let valid_ref = x_r.valid_indices();
    if valid_ref.is_empty() {
        return Ok(0.0);
    }
    let mut covisible = 0usize;
    for &idx in &valid_ref {
        let p = x_r.points()[idx];
        let proj = project_cam_point(k_t, p, Z_NEAR);
        if !proj.visible() {
            continue;
        }
        let (pi, pj) = proj.pixel();
        let t_idx = pj as usize * x_t.width() + pi as usize;
        if x_t.is_valid(t_idx) && dist2(p, x_t.points()[t_idx]).sqrt() <= tol {
            covisible += 1;
        }
    }
    Ok(covisible as f64 / valid_ref.len() as f64)
}

/// Default 3-D tolerance (meters / scene units) for [`overlap_ratio`].
pub const OVERLAP_TOL: f64 = 0.05;

/// Default overlap threshold for training-pair selection.
pub const OVERLAP_THRESHOLD: f64 = 0.2;

/// Keeps items whose overlap ratio is strictly above `threshold`,
/// preserving order. A pair at exactly the threshold is dropped.
pub fn select_pairs<P>(pairs: Vec<P>, ratio: impl Fn(&P) -> f64, threshold: f64) -> Vec<P> {
    pairs.into_iter().filter(|p| ratio(p) > threshold).collect()
}
