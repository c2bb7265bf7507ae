use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

/// Marker stored in the feature array of leaf nodes.
pub const LEAF: i32 = -1;

/// Binary regression tree stored as parallel node arrays. Node 0 is the
/// root; a row goes left when `x[feature] <= threshold`. `cover` holds the
/// number of training rows that reached each node and may be empty for trees
/// assembled by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    #[serde(with = "codec::i32s")]
    feature: Vec<i32>,
    #[serde(with = "codec::f64s")]
    threshold: Vec<f64>,
    #[serde(with = "codec::u32s")]
    left: Vec<u32>,
    #[serde(with = "codec::u32s")]
    right: Vec<u32>,
    #[serde(with = "codec::f64s")]
    value: Vec<f64>,
    #[serde(with = "codec::f64s")]
    cover: Vec<f64>,
    max_depth: usize,
}

impl RegressionTree {
    /// Single-leaf tree.
    pub fn leaf(value: f64, cover: f64) -> Self {
        RegressionTree {
            feature: vec![LEAF],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
            cover: vec![cover],
            max_depth: 0,
        }
    }

    /// Assembles and validates a tree from node arrays.
    pub fn from_parts(
        feature: Vec<i32>,
        threshold: Vec<f64>,
        left: Vec<u32>,
        right: Vec<u32>,
        value: Vec<f64>,
        cover: Vec<f64>,
    ) -> Result<Self> {
        let mut tree = RegressionTree {
            feature,
            threshold,
            left,
            right,
            value,
            cover,
            max_depth: 0,
        };
        tree.validate()?;
        tree.max_depth = tree.depth();
        Ok(tree)
    }

    /// Checks shape, acyclicity (children after parents, one parent each),
    /// finite leaf weights and positive cover.
    pub fn validate(&self) -> Result<()> {
        let n = self.feature.len();
        if n == 0 {
            return Err(Error::invalid("tree has no nodes"));
        }
        if [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::invalid("tree node arrays differ in length"));
        }
        if !self.cover.is_empty() && self.cover.len() != n {
            return Err(Error::invalid("tree cover array has the wrong length"));
        }
        let mut parents = vec![0usize; n];
        for i in 0..n {
            if self.is_leaf(i) {
                if !self.value[i].is_finite() {
                    return Err(Error::invalid(format!("leaf {i} has a non-finite weight")));
                }
                continue;
            }
            if self.feature[i] < 0 {
                return Err(Error::invalid(format!("node {i} has an invalid feature")));
            }
            if !self.threshold[i].is_finite() {
                return Err(Error::invalid(format!("node {i} has a non-finite threshold")));
            }
            for c in [self.left[i] as usize, self.right[i] as usize] {
                if c <= i || c >= n {
                    return Err(Error::invalid(format!("node {i} has an invalid child {c}")));
                }
                parents[c] += 1;
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::invalid("tree nodes do not form a single binary tree"));
        }
        if self.cover.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::invalid("node cover must be positive"));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    pub fn feature(&self, node: usize) -> Option<usize> {
        (!self.is_leaf(node)).then(|| self.feature[node] as usize)
    }

    pub fn threshold(&self, node: usize) -> f64 {
        self.threshold[node]
    }

    pub fn children(&self, node: usize) -> (usize, usize) {
        (self.left[node] as usize, self.right[node] as usize)
    }

    pub fn value(&self, node: usize) -> f64 {
        self.value[node]
    }

    pub fn cover(&self, node: usize) -> Option<f64> {
        self.cover.get(node).copied()
    }

    pub fn has_cover(&self) -> bool {
        !self.cover.is_empty()
    }

    /// Depth limit the tree was grown under.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Realised depth (0 for a single leaf).
    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, node: usize) -> usize {
            if t.is_leaf(node) {
                0
            } else {
                let (l, r) = t.children(node);
                1 + go(t, l).max(go(t, r))
            }
        }
        go(self, 0)
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0;
        while !self.is_leaf(node) {
            node = if x[self.feature[node] as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value[self.leaf_index(x)]
    }

    /// Number of splits on each of `n_features` features.
    pub fn split_counts(&self, n_features: usize) -> Vec<usize> {
        let mut counts = vec![0; n_features];
        for &f in &self.feature {
            if f >= 0 && (f as usize) < n_features {
                counts[f as usize] += 1;
            }
        }
        counts
    }

    pub(crate) fn scale_values(&mut self, s: f64) {
        for (i, v) in self.value.iter_mut().enumerate() {
            if self.feature[i] == LEAF {
                *v *= s;
            }
        }
    }

    pub(crate) fn set_value(&mut self, node: usize, v: f64) {
        self.value[node] = v;
    }
}

/// Nodes appended in pre-order while growing a tree.
#[derive(Default)]
pub(crate) struct NodeArena {
    feature: Vec<i32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
    cover: Vec<f64>,
}

impl NodeArena {
    pub fn push_leaf(&mut self, value: f64, cover: f64) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.cover.push(cover);
        self.feature.len() - 1
    }

    pub fn split(&mut self, node: usize, feature: usize, threshold: f64, left: usize, right: usize) {
        self.feature[node] = feature as i32;
        self.threshold[node] = threshold;
        self.left[node] = left as u32;
        self.right[node] = right as u32;
        self.value[node] = 0.0;
    }

    /// Turns `node` back into a leaf, discarding everything grown after it.
    pub fn collapse(&mut self, node: usize, value: f64) {
        self.feature.truncate(node + 1);
        self.threshold.truncate(node + 1);
        self.left.truncate(node + 1);
        self.right.truncate(node + 1);
        self.value.truncate(node + 1);
        self.cover.truncate(node + 1);
        self.feature[node] = LEAF;
        self.left[node] = 0;
        self.right[node] = 0;
        self.threshold[node] = 0.0;
        self.value[node] = value;
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    pub fn finish(self, max_depth: usize) -> RegressionTree {
        RegressionTree {
            feature: self.feature,
            threshold: self.threshold,
            left: self.left,
            right: self.right,
            value: self.value,
            cover: self.cover,
            max_depth,
        }
    }
}

/// Feature columns recoded as indices into their sorted distinct values.
/// Every distinct value is its own candidate, so split search stays exact.
pub(crate) struct Binned {
    pub levels: Vec<Vec<f64>>,
    pub codes: Vec<Vec<u32>>,
}

impl Binned {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let (n, p) = x.dim();
        let mut levels = Vec::with_capacity(p);
        let mut codes = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = x.column(j).to_vec();
            let mut lv = col.clone();
            lv.sort_by(f64::total_cmp);
            lv.dedup();
            let c: Vec<u32> = (0..n)
                .map(|i| lv.partition_point(|&v| v < col[i]) as u32)
                .collect();
            levels.push(lv);
            codes.push(c);
        }
        Binned { levels, codes }
    }

    /// Threshold strictly between two adjacent observed levels.
    pub fn threshold(&self, feature: usize, lo_code: u32, hi_code: u32) -> f64 {
        let lo = self.levels[feature][lo_code as usize];
        let hi = self.levels[feature][hi_code as usize];
        let mid = lo + (hi - lo) / 2.0;
        if mid > lo && mid < hi {
            mid
        } else {
            lo
        }
    }

    /// Distinct codes present among `rows`, ascending, with the row indices
    /// grouped under each.
    pub fn present_codes(&self, feature: usize, rows: &[usize]) -> Vec<(u32, Vec<usize>)> {
        let codes = &self.codes[feature];
        let mut pairs: Vec<(u32, usize)> = rows.iter().map(|&i| (codes[i], i)).collect();
        pairs.sort_unstable();
        let mut out: Vec<(u32, Vec<usize>)> = Vec::new();
        for (c, i) in pairs {
            match out.last_mut() {
                Some((last, v)) if *last == c => v.push(i),
                _ => out.push((c, vec![i])),
            }
        }
        out
    }

    pub fn is_constant_on(&self, feature: usize, rows: &[usize]) -> bool {
        let codes = &self.codes[feature];
        rows.iter().all(|&i| codes[i] == codes[rows[0]])
    }
}

/// Growth limits for gradient trees. Least-squares trees use unit hessians
/// with `lambda = 0`, so both boosting presets share one split rule.
#[derive(Clone, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub features_per_split: Option<usize>,
    pub leaf_scale: f64,
}

struct Split {
    feature: usize,
    lo_code: u32,
    hi_code: u32,
    gain: f64,
}

/// Grows a tree on `rows` with leaf weights `leaf_scale * G / (H + lambda)`.
/// `allowed` lists the features this tree may split on.
pub(crate) fn grow_gradient_tree<R: Rng>(
    binned: &Binned,
    rows: &mut [usize],
    grad: &[f64],
    hess: &[f64],
    allowed: &[usize],
    params: &GrowParams,
    rng: &mut R,
) -> RegressionTree {
    let mut arena = NodeArena::default();
    let mut order = allowed.to_vec();
    grow_node(binned, rows, grad, hess, &mut order, params, rng, &mut arena, 0);
    arena.finish(params.max_depth)
}

#[allow(clippy::too_many_arguments)]
fn grow_node<R: Rng>(
    binned: &Binned,
    rows: &mut [usize],
    grad: &[f64],
    hess: &[f64],
    order: &mut [usize],
    params: &GrowParams,
    rng: &mut R,
    arena: &mut NodeArena,
    depth: usize,
) -> usize {
    let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]));
    let leaf_value = params.leaf_scale * g / (h + params.lambda);
    let node = arena.push_leaf(leaf_value, rows.len() as f64);
    if depth >= params.max_depth
        || rows.len() < params.min_samples_split
        || rows.len() < 2 * params.min_samples_leaf.max(1)
    {
        return node;
    }
    let Some(split) = best_split(binned, rows, grad, hess, g, h, order, params, rng) else {
        return node;
    };
    let codes = &binned.codes[split.feature];
    let n_left = partition(rows, |i| codes[i] <= split.lo_code);
    let threshold = binned.threshold(split.feature, split.lo_code, split.hi_code);
    let (left_rows, right_rows) = rows.split_at_mut(n_left);
    let l = grow_node(binned, left_rows, grad, hess, order, params, rng, arena, depth + 1);
    let r = grow_node(binned, right_rows, grad, hess, order, params, rng, arena, depth + 1);
    arena.split(node, split.feature, threshold, l, r);
    if arena.is_leaf(l) && arena.is_leaf(r) && split.gain < params.gamma {
        arena.collapse(node, leaf_value);
    }
    node
}

/// Stable in-place partition; returns the size of the `true` block.
pub(crate) fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (a, b): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| pred(i));
    let k = a.len();
    rows[..k].copy_from_slice(&a);
    rows[k..].copy_from_slice(&b);
    k
}

#[allow(clippy::too_many_arguments)]
fn best_split<R: Rng>(
    binned: &Binned,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    g_total: f64,
    h_total: f64,
    order: &mut [usize],
    params: &GrowParams,
    rng: &mut R,
) -> Option<Split> {
    let parent = g_total * g_total / (h_total + params.lambda);
    let scale: f64 = rows.iter().map(|&i| grad[i] * grad[i]).sum();
    let min_gain = 1e-12 * scale;
    let mut best: Option<Split> = None;
    let mut visited = 0;
    if params.features_per_split.is_some() {
        order.shuffle(rng);
    }
    let limit = params.features_per_split.unwrap_or(usize::MAX);
    let n = rows.len();
    for &j in order.iter() {
        if visited >= limit {
            break;
        }
        if binned.is_constant_on(j, rows) {
            continue;
        }
        visited += 1;
        let stats = code_stats(binned, j, rows, grad, hess);
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for w in stats.windows(2) {
            let (code, sg, sh, sn) = w[0];
            gl += sg;
            hl += sh;
            nl += sn;
            let nr = n - nl;
            if nl < params.min_samples_leaf || nr < params.min_samples_leaf {
                continue;
            }
            let hr = h_total - hl;
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gr = g_total - gl;
            let gain = gl * gl / (hl + params.lambda) + gr * gr / (hr + params.lambda) - parent;
            if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: j,
                    lo_code: code,
                    hi_code: w[1].0,
                    gain,
                });
            }
        }
    }
    best
}

/// Per present code: (code, Σg, Σh, count), ascending by code.
fn code_stats(binned: &Binned, j: usize, rows: &[usize], grad: &[f64], hess: &[f64]) -> Vec<(u32, f64, f64, usize)> {
    let codes = &binned.codes[j];
    let n_levels = binned.levels[j].len();
    if n_levels <= 4 * rows.len() + 64 {
        let mut sg = vec![0.0; n_levels];
        let mut sh = vec![0.0; n_levels];
        let mut sn = vec![0usize; n_levels];
        for &i in rows {
            let c = codes[i] as usize;
            sg[c] += grad[i];
            sh[c] += hess[i];
            sn[c] += 1;
        }
        (0..n_levels)
            .filter(|&c| sn[c] > 0)
            .map(|c| (c as u32, sg[c], sh[c], sn[c]))
            .collect()
    } else {
        let mut pairs: Vec<(u32, usize)> = rows.iter().map(|&i| (codes[i], i)).collect();
        pairs.sort_unstable();
        let mut out: Vec<(u32, f64, f64, usize)> = Vec::new();
        for (c, i) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == c => {
                    last.1 += grad[i];
                    last.2 += hess[i];
                    last.3 += 1;
                }
                _ => out.push((c, grad[i], hess[i], 1)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ls_params(depth: usize) -> GrowParams {
        GrowParams {
            max_depth: depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            min_child_weight: 0.0,
            lambda: 0.0,
            gamma: 0.0,
            features_per_split: None,
            leaf_scale: 1.0,
        }
    }

    #[test]
    fn stump_splits_at_midpoint_and_fits_means() {
        let x = array![[1.0], [2.0], [4.0], [8.0]];
        let binned = Binned::new(x.view());
        let y = [1.0, 1.0, 5.0, 5.0];
        let mut rows: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = grow_gradient_tree(&binned, &mut rows, &y, &[1.0; 4], &[0], &ls_params(1), &mut rng);
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(t.feature(0), Some(0));
        assert_eq!(t.threshold(0), 3.0);
        assert_eq!(t.predict(&[1.5]), 1.0);
        assert_eq!(t.predict(&[100.0]), 5.0);
        assert_eq!(t.cover(0), Some(4.0));
        assert_eq!(t.cover(1), Some(2.0));
        t.validate().unwrap();
    }

    #[test]
    fn second_order_leaves_and_gamma_pruning() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let binned = Binned::new(x.view());
        let g = [1.0, 0.5, -2.0, -1.0];
        let h = [0.5, 0.25, 1.0, 0.75];
        let mut p = ls_params(1);
        p.lambda = 1.0;
        let mut rows: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = grow_gradient_tree(&binned, &mut rows, &g, &h, &[0], &p, &mut rng);
        // G/(H+λ) per side: 1.5/1.75 and -3/2.75
        assert!((t.predict(&[0.0]) - 1.5 / 1.75).abs() < 1e-15);
        assert!((t.predict(&[1.0]) - (-3.0 / 2.75)).abs() < 1e-15);
        // gain = 1.5²/1.75 + 3²/2.75 - 1.5²/3.5 ≈ 3.9156; γ above it prunes
        p.gamma = 3.9;
        let mut rows: Vec<usize> = (0..4).collect();
        assert_eq!(grow_gradient_tree(&binned, &mut rows, &g, &h, &[0], &p, &mut rng).n_nodes(), 3);
        p.gamma = 3.95;
        let mut rows: Vec<usize> = (0..4).collect();
        let t = grow_gradient_tree(&binned, &mut rows, &g, &h, &[0], &p, &mut rng);
        assert_eq!(t.n_nodes(), 1);
        assert!((t.value(0) - (-1.5 / 3.5)).abs() < 1e-15);
    }

    #[test]
    fn min_leaf_and_depth_limits() {
        let n = 50;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let binned = Binned::new(x.view());
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut p = ls_params(4);
        p.min_samples_leaf = 7;
        let mut rows: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = grow_gradient_tree(&binned, &mut rows, &y, &vec![1.0; n], &[0], &p, &mut rng);
        assert!(t.depth() <= 4);
        for node in 0..t.n_nodes() {
            if t.is_leaf(node) {
                assert!(t.cover(node).unwrap() >= 7.0);
            } else {
                let (l, r) = t.children(node);
                assert_eq!(t.cover(node), Some(t.cover(l).unwrap() + t.cover(r).unwrap()));
            }
        }
    }

    #[test]
    fn constant_target_gives_a_leaf() {
        let x = array![[0.0], [1.0], [2.0]];
        let binned = Binned::new(x.view());
        let mut rows = vec![0, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = grow_gradient_tree(&binned, &mut rows, &[0.3; 3], &[1.0; 3], &[0], &ls_params(3), &mut rng);
        assert_eq!(t.n_nodes(), 1);
    }

    #[test]
    fn validation_rejects_bad_structures() {
        let ok = RegressionTree::from_parts(
            vec![0, LEAF, LEAF],
            vec![0.5, 0.0, 0.0],
            vec![1, 0, 0],
            vec![2, 0, 0],
            vec![0.0, -1.0, 1.0],
            vec![],
        )
        .unwrap();
        assert!(!ok.has_cover());
        assert_eq!(ok.predict(&[0.7]), 1.0);
        // child pointing backwards
        assert!(RegressionTree::from_parts(
            vec![0, LEAF, LEAF],
            vec![0.5, 0.0, 0.0],
            vec![1, 0, 0],
            vec![0, 0, 0],
            vec![0.0, -1.0, 1.0],
            vec![],
        )
        .is_err());
        // non-finite leaf
        assert!(RegressionTree::from_parts(vec![LEAF], vec![0.0], vec![0], vec![0], vec![f64::NAN], vec![]).is_err());
        // zero cover
        assert!(RegressionTree::from_parts(vec![LEAF], vec![0.0], vec![0], vec![0], vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let x = array![[0.1, 3.0], [0.2, 1.0], [0.3, 2.0], [0.4, 0.0]];
        let binned = Binned::new(x.view());
        let mut rows: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = grow_gradient_tree(
            &binned,
            &mut rows,
            &[0.1, -0.7, 0.3, 0.9],
            &[1.0; 4],
            &[0, 1],
            &ls_params(2),
            &mut rng,
        );
        let text = serde_json::to_string(&t).unwrap();
        let back: RegressionTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
