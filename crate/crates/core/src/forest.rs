//! Weighted regression forest: bootstrap resamples, random feature subsets
//! per split, squared-error splits and mean aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌈√P⌉.
    pub mtry: Option<usize>,
    /// Minimum number of (resampled) rows in a leaf.
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            mtry: None,
            min_leaf: 25,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| libm::ceil(libm::sqrt(p as f64)) as usize)
            .clamp(1, p.max(1))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig(String::from("n_trees must be at least 1")));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig(String::from("min_leaf must be at least 1")));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return Err(Error::InvalidConfig(format!("mtry {m} outside 1..={p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in an arena; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Weighted out-of-bag mean squared error, when bootstrapping.
    pub oob_error: Option<f64>,
    /// Summed weighted-SSE reduction per feature.
    pub split_gain: Vec<f64>,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Predictions for row-major `x`; consecutive identical rows are
    /// evaluated once.
    pub fn predict(&self, x: &[f64], n_cols: usize) -> Vec<f64> {
        let n = if n_cols == 0 { 0 } else { x.len() / n_cols };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * n_cols..(i + 1) * n_cols];
            if i > 0 && row == &x[(i - 1) * n_cols..i * n_cols] {
                let last = out[i - 1];
                out.push(last);
            } else {
                out.push(self.predict_row(row));
            }
        }
        out
    }

    /// Adds `delta` to every leaf, shifting all predictions by `delta`.
    pub fn shift(&mut self, delta: f64) {
        for t in &mut self.trees {
            for n in &mut t.nodes {
                if let Node::Leaf { value } = n {
                    *value += delta;
                }
            }
        }
    }
}

/// Consecutive identical rows, merged.
struct Patterns<'a> {
    x: &'a [f64],
    p: usize,
    /// First row of each pattern and the row range it spans.
    spans: Vec<(usize, usize)>,
}

impl<'a> Patterns<'a> {
    fn new(x: &'a [f64], p: usize, n: usize) -> Self {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            let same = match spans.last() {
                Some(&(s, _)) => p == 0 || x[s * p..(s + 1) * p] == x[i * p..(i + 1) * p],
                None => false,
            };
            if same {
                spans.last_mut().unwrap().1 = i + 1;
            } else {
                spans.push((i, i + 1));
            }
        }
        Self { x, p, spans }
    }

    fn value(&self, pat: usize, feature: usize) -> f64 {
        self.x[self.spans[pat].0 * self.p + feature]
    }
}

/// Sufficient statistics of one pattern within one tree's resample.
#[derive(Clone, Copy, Default)]
struct Stat {
    /// Σ w
    w: f64,
    /// Σ w·t
    s: f64,
    /// Resampled row count.
    n: usize,
}

struct Grower<'p, 'a> {
    pats: &'p Patterns<'a>,
    stats: Vec<Stat>,
    params: &'p ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    gain: Vec<f64>,
}

impl Grower<'_, '_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let (w, s, n) = idx.iter().fold((0.0, 0.0, 0usize), |a, &i| {
            let st = self.stats[i];
            (a.0 + st.w, a.1 + st.s, a.2 + st.n)
        });
        if w > 0.0 {
            s / w
        } else if n > 0 {
            0.0
        } else {
            0.0
        }
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if self.params.max_depth.is_some_and(|d| depth >= d) {
            None
        } else {
            self.best_split(idx)
        };
        match split {
            None => {
                self.nodes[me] = Node::Leaf {
                    value: self.leaf_value(idx),
                };
            }
            Some((feature, threshold, gain)) => {
                self.gain[feature] += gain;
                let mut k = 0;
                for i in 0..idx.len() {
                    if self.pats.value(idx[i], feature) <= threshold {
                        idx.swap(i, k);
                        k += 1;
                    }
                }
                let (l, r) = idx.split_at_mut(k);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[me] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        me
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let min_leaf = self.params.min_leaf;
        let total = idx.iter().fold(Stat::default(), |a, &i| {
            let s = self.stats[i];
            Stat {
                w: a.w + s.w,
                s: a.s + s.s,
                n: a.n + s.n,
            }
        });
        if total.n < 2 * min_leaf || total.w <= 0.0 {
            return None;
        }
        let base = total.s * total.s / total.w;
        let features = rand::seq::index::sample(&mut self.rng, self.pats.p, self.mtry);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in features.iter() {
            order.sort_by(|&a, &b| {
                self.pats
                    .value(a, f)
                    .total_cmp(&self.pats.value(b, f))
                    .then(a.cmp(&b))
            });
            let mut left = Stat::default();
            for k in 0..order.len() - 1 {
                let st = self.stats[order[k]];
                left.w += st.w;
                left.s += st.s;
                left.n += st.n;
                let (v, next) = (self.pats.value(order[k], f), self.pats.value(order[k + 1], f));
                if v == next || left.n < min_leaf {
                    continue;
                }
                let rn = total.n - left.n;
                if rn < min_leaf {
                    break;
                }
                let rw = total.w - left.w;
                if left.w <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let rs = total.s - left.s;
                let gain = left.s * left.s / left.w + rs * rs / rw - base;
                if gain > 1e-12 * (1.0 + libm::fabs(base)) && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, v + (next - v) / 2.0, gain));
                }
            }
        }
        best
    }
}

/// Grows `params.n_trees` trees on row-major `x` (`n_cols` features).
///
/// Tree `t` draws its bootstrap sample and feature subsets from a ChaCha8
/// stream keyed by `(seed, t)`, so the result does not depend on how trees
/// are scheduled across threads.
pub fn fit_forest(
    x: &[f64],
    n_cols: usize,
    targets: &[f64],
    weights: &[f64],
    params: &ForestParams,
) -> Result<ForestModel> {
    let n = targets.len();
    if n == 0 || weights.len() != n || x.len() != n * n_cols {
        return Err(Error::InvalidInput(String::from("forest inputs disagree in length")));
    }
    if targets.iter().chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidInput(String::from(
            "targets and weights must be finite, weights non-negative",
        )));
    }
    params.validate(n_cols.max(1))?;
    let pats = Patterns::new(x, n_cols, n);
    let mtry = params.resolved_mtry(n_cols);

    let build = |t: usize| -> (Tree, Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(t as u64);
        let mut count = vec![1usize; n];
        if params.bootstrap {
            count.iter_mut().for_each(|c| *c = 0);
            for _ in 0..n {
                count[rng.random_range(0..n)] += 1;
            }
        }
        let stats: Vec<Stat> = pats
            .spans
            .iter()
            .map(|&(s, e)| {
                let mut st = Stat::default();
                for i in s..e {
                    let c = count[i] as f64;
                    st.w += c * weights[i];
                    st.s += c * weights[i] * targets[i];
                    st.n += count[i];
                }
                st
            })
            .collect();
        let mut idx: Vec<usize> = (0..stats.len()).filter(|&k| stats[k].n > 0).collect();
        let oob: Vec<usize> = (0..stats.len()).filter(|&k| stats[k].n == 0).collect();
        let mut g = Grower {
            pats: &pats,
            stats,
            params,
            mtry: if n_cols == 0 { 0 } else { mtry },
            rng,
            nodes: Vec::new(),
            gain: vec![0.0; n_cols],
        };
        if n_cols == 0 {
            let v = g.leaf_value(&idx);
            g.nodes.push(Node::Leaf { value: v });
        } else {
            g.grow(&mut idx, 0);
        }
        (Tree { nodes: g.nodes }, g.gain, oob)
    };
    let grown = crate::par_map((0..params.n_trees).collect(), build);

    let mut split_gain = vec![0.0; n_cols];
    let mut oob_sum = vec![0.0; pats.spans.len()];
    let mut oob_cnt = vec![0usize; pats.spans.len()];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, gain, oob) in grown {
        for (a, b) in split_gain.iter_mut().zip(&gain) {
            *a += b;
        }
        for k in oob {
            let (s, _) = pats.spans[k];
            oob_sum[k] += tree.predict(&x[s * n_cols..(s + 1) * n_cols]);
            oob_cnt[k] += 1;
        }
        trees.push(tree);
    }
    let oob_error = if params.bootstrap {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &(s, e)) in pats.spans.iter().enumerate() {
            if oob_cnt[k] == 0 {
                continue;
            }
            let pred = oob_sum[k] / oob_cnt[k] as f64;
            for i in s..e {
                num += weights[i] * (targets[i] - pred) * (targets[i] - pred);
                den += weights[i];
            }
        }
        (den > 0.0).then(|| num / den)
    } else {
        None
    };
    Ok(ForestModel {
        n_features: n_cols,
        trees,
        oob_error,
        split_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_predicts_constant() {
        let x: Vec<f64> = (0..200).map(|i| f64::from(i % 17)).collect();
        let t = vec![2.5; 100];
        let w = vec![1.0; 100];
        let f = fit_forest(&x, 2, &t, &w, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        for p in f.predict(&x, 2) {
            assert!((p - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unbootstrapped_tree_interpolates() {
        let x: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.37).collect();
        let t: Vec<f64> = (0..50).map(|i| ((i * 7919) % 101) as f64).collect();
        let w = vec![1.0; 50];
        let params = ForestParams {
            n_trees: 1,
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let f = fit_forest(&x, 1, &t, &w, &params).unwrap();
        assert_eq!(f.predict(&x, 1), t);
    }

    #[test]
    fn step_function_is_learned() {
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = x.iter().map(|v| if *v < 0.4 { -1.0 } else { 2.0 }).collect();
        let w = vec![1.0; n];
        let f = fit_forest(&x, 1, &t, &w, &ForestParams { n_trees: 50, ..Default::default() }).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| (f64::from(i) + 0.5) / 200.0).collect();
        let truth: Vec<f64> = grid.iter().map(|v| if *v < 0.4 { -1.0 } else { 2.0 }).collect();
        let mean = truth.iter().sum::<f64>() / 200.0;
        let var = truth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 200.0;
        let mse = f
            .predict(&grid, 1)
            .iter()
            .zip(&truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / 200.0;
        assert!(mse < var / 10.0, "mse {mse} var {var}");
        assert!(f.oob_error.is_some());
    }

    #[test]
    fn same_seed_same_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..900).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..300).map(|i| x[3 * i] * 2.0 - x[3 * i + 2]).collect();
        let w = vec![1.0; 300];
        let p = ForestParams { n_trees: 20, min_leaf: 5, seed: 99, ..Default::default() };
        let a = fit_forest(&x, 3, &t, &w, &p).unwrap();
        let b = fit_forest(&x, 3, &t, &w, &p).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, 3, &t, &w, &ForestParams { seed: 100, ..p }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn merged_duplicate_rows_match_expanded_weights() {
        // Two identical rows weigh the same as one row of double weight.
        let x = [0.0, 0.0, 1.0, 2.0];
        let t = [1.0, 3.0, 5.0, 9.0];
        let w = [1.0, 1.0, 2.0, 1.0];
        let params = ForestParams { n_trees: 1, min_leaf: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, 1, &t, &w, &params).unwrap();
        assert_eq!(f.predict_row(&[0.0]), 2.0);
        let mut g = f.clone();
        g.shift(1.0);
        assert_eq!(g.predict_row(&[2.0]), 10.0);
    }

    #[test]
    fn rejects_bad_params() {
        let e = fit_forest(&[0.0], 1, &[0.0], &[1.0], &ForestParams { mtry: Some(3), ..Default::default() });
        assert!(e.is_err());
    }
}
