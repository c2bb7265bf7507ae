use crate::ensemble::RegressionTree;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: i64,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

/// Cover-weighted mean leaf value of one tree.
pub(crate) fn expected_value(tree: &RegressionTree) -> Result<f64> {
    require_cover(tree)?;
    let root = tree.cover(0).expect("cover checked");
    Ok((0..tree.n_nodes())
        .filter(|&i| tree.is_leaf(i))
        .map(|i| tree.value(i) * tree.cover(i).expect("cover checked") / root)
        .sum())
}

pub(crate) fn require_cover(tree: &RegressionTree) -> Result<()> {
    if !tree.has_cover() {
        return Err(Error::MissingCover { node: 0 });
    }
    Ok(())
}

/// Adds the path-dependent Shapley values of `tree` at `x` into `phi`.
pub(crate) fn tree_shap_into(tree: &RegressionTree, x: &[f64], phi: &mut [f64]) -> Result<()> {
    require_cover(tree)?;
    recurse(tree, x, phi, 0, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, -1);
    Ok(())
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: i64) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    let df = d as f64;
    for i in (0..d).rev() {
        let wi = path[i].weight;
        path[i + 1].weight += one_fraction * wi * (i as f64 + 1.0) / (df + 1.0);
        path[i].weight = zero_fraction * wi * (df - i as f64) / (df + 1.0);
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let d = path.len() - 1;
    let df = d as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (df + 1.0) / ((i as f64 + 1.0) * one);
            next = tmp - path[i].weight * zero * (df - i as f64) / (df + 1.0);
        } else {
            path[i].weight = path[i].weight * (df + 1.0) / (zero * (df - i as f64));
        }
    }
    for i in index..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let d = path.len() - 1;
    let df = d as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (df + 1.0) / ((i as f64 + 1.0) * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (df - i as f64) / (df + 1.0);
        } else {
            total += path[i].weight / zero / ((df - i as f64) / (df + 1.0));
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &RegressionTree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: i64,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    let Some(split) = tree.feature(node) else {
        let v = tree.value(node);
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature as usize] += w * (e.one_fraction - e.zero_fraction) * v;
        }
        return;
    };
    let (l, r) = tree.children(node);
    let (hot, cold) = if x[split] <= tree.threshold(node) { (l, r) } else { (r, l) };
    let cover = tree.cover(node).expect("cover checked");
    let hot_zero = tree.cover(hot).expect("cover checked") / cover;
    let cold_zero = tree.cover(cold).expect("cover checked") / cover;
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = path.iter().position(|e| e.feature == split as i64) {
        in_zero = path[k].zero_fraction;
        in_one = path[k].one_fraction;
        unwind(&mut path, k);
    }
    recurse(tree, x, phi, hot, path.clone(), hot_zero * in_zero, in_one, split as i64);
    recurse(tree, x, phi, cold, path, cold_zero * in_zero, 0.0, split as i64);
}
