//! Regression forests with two leaf models.
//!
//! - [`LeafModel::Mean`]: ordinary regression trees, used for the nuisance
//!   functions `E[Y | X]` and `E[T | X]`.
//! - [`LeafModel::Linear`]: each leaf fits `y_k ~ theta_k . t` by ridge least
//!   squares, and splits minimise the summed residual error of those local
//!   fits. This is the effect forest; `theta` is the local treatment slope.
//!
//! Trees are grown on a subsample drawn without replacement, so every tree
//! also has out-of-bag rows. Every leaf remembers the bounding box of the
//! training rows that reached it, which lets predictions report how many
//! trees actually saw data around the query point.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_column(col: &[f64]) -> Self {
        Self::new(col.len(), 1, col.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LeafModel {
    Mean,
    /// Ridge-regularised local linear fit; the ridge is relative to the mean
    /// diagonal of `t' t` in the node.
    Linear { ridge: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` tries all of them.
    pub mtry: Option<usize>,
    /// Fraction of rows each tree is grown on (without replacement).
    pub sample_fraction: f64,
    /// Maximum candidate thresholds per feature (quantile bins).
    pub split_candidates: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            min_leaf: 5,
            max_depth: 24,
            mtry: None,
            sample_fraction: 0.5,
            split_candidates: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: u16,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Mean model: one value per output. Linear model: `outputs x treatments`
    /// slopes, row-major by output.
    pub values: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

impl Leaf {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    /// Training rows this tree never saw.
    #[serde(skip)]
    oob: Vec<usize>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf(l) => return &self.leaves[*l as usize],
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn oob_rows(&self) -> &[usize] {
        &self.oob
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub model: LeafModel,
    pub n_features: usize,
    pub n_outputs: usize,
    /// Width of the treatment design for linear leaves, 0 for mean leaves.
    pub n_treatments: usize,
    pub trees: Vec<Tree>,
}

/// Training data for one forest.
pub struct TrainSet<'a> {
    pub x: &'a Matrix,
    /// `n x outputs` targets.
    pub y: &'a Matrix,
    /// `n x treatments` design for linear leaves.
    pub t: Option<&'a Matrix>,
}

impl Forest {
    pub fn fit(data: &TrainSet<'_>, model: LeafModel, params: &ForestParams) -> Forest {
        let n = data.x.rows();
        assert_eq!(data.y.rows(), n);
        let n_treatments = match model {
            LeafModel::Mean => 0,
            LeafModel::Linear { .. } => {
                let t = data.t.expect("linear leaves need a treatment design");
                assert_eq!(t.rows(), n);
                t.cols()
            }
        };
        let grower = Grower::new(data, model, params, n_treatments.max(1));
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|b| grower.grow(b))
            .collect();
        Forest {
            model,
            n_features: data.x.cols(),
            n_outputs: data.y.cols(),
            n_treatments,
            trees,
        }
    }

    /// Mean-leaf prediction averaged over trees.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.trees.first().map_or(0, |t| t.leaves[0].values.len())];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(&tree.leaf(x).values) {
                *o += v;
            }
        }
        let b = self.trees.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= b);
        out
    }

    /// Leaf reached in every tree, in tree order.
    pub fn leaves<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = &'a Leaf> + 'a {
        self.trees.iter().map(move |t| t.leaf(x))
    }

    /// Out-of-bag mean prediction for training row `i`, if any tree left it out.
    pub fn oob_predict(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        let mut count = 0usize;
        for tree in &self.trees {
            if tree.oob.binary_search(&i).is_ok() {
                let vals = &tree.leaf(x).values;
                let a = acc.get_or_insert_with(|| vec![0.0; vals.len()]);
                for (s, v) in a.iter_mut().zip(vals) {
                    *s += v;
                }
                count += 1;
            }
        }
        acc.map(|mut a| {
            a.iter_mut().for_each(|v| *v /= count as f64);
            a
        })
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Per-feature split thresholds and every row's bin under them. Row `i`
/// falls in bin `b` of feature `j` when `x <= cuts[j][b]` and above every
/// earlier cut; the last bin holds values above all cuts.
struct Binned {
    cuts: Vec<Vec<f64>>,
    bins: Vec<u16>,
    n_features: usize,
}

impl Binned {
    fn new(x: &Matrix, max_bins: usize) -> Self {
        let f = x.cols();
        let mut cuts = Vec::with_capacity(f);
        for j in 0..f {
            let mut col = x.column(j);
            col.sort_unstable_by(f64::total_cmp);
            col.dedup();
            let c: Vec<f64> = if col.len() <= max_bins {
                col.windows(2)
                    .map(|w| {
                        let mid = w[0] + (w[1] - w[0]) / 2.0;
                        if mid < w[1] {
                            mid
                        } else {
                            w[0]
                        }
                    })
                    .collect()
            } else {
                let mut q: Vec<f64> = (1..max_bins)
                    .map(|i| col[i * col.len() / max_bins])
                    .collect();
                q.dedup();
                q
            };
            cuts.push(c);
        }
        let mut bins = vec![0u16; x.rows() * f];
        for i in 0..x.rows() {
            for j in 0..f {
                bins[i * f + j] = cuts[j].partition_point(|&c| c < x.get(i, j)) as u16;
            }
        }
        Self {
            cuts,
            bins,
            n_features: f,
        }
    }

    fn bin(&self, row: usize, feature: usize) -> usize {
        self.bins[row * self.n_features + feature] as usize
    }
}

struct Grower<'a> {
    data: &'a TrainSet<'a>,
    binned: Binned,
    model: LeafModel,
    params: &'a ForestParams,
    weights: Vec<f64>,
    /// Treatment width (1 for mean leaves, unused).
    d: usize,
    k: usize,
    /// Length of one flat statistics block.
    width: usize,
}

// Flat sufficient statistics, one block per row set:
//   mean:   [n, sum y_k (k), sum y_k^2 (k)]
//   linear: [n, sum y_k^2 (k), sum t t' (d*d), sum t y_k (k*d)]
impl<'a> Grower<'a> {
    fn new(data: &'a TrainSet<'a>, model: LeafModel, params: &'a ForestParams, d: usize) -> Self {
        let k = data.y.cols();
        let weights = (0..k)
            .map(|c| {
                let v = variance(&data.y.column(c));
                if v > 0.0 {
                    1.0 / v
                } else {
                    1.0
                }
            })
            .collect();
        let width = match model {
            LeafModel::Mean => 1 + 2 * k,
            LeafModel::Linear { .. } => 1 + k + d * d + k * d,
        };
        Self {
            data,
            binned: Binned::new(data.x, params.split_candidates.max(2)),
            model,
            params,
            weights,
            d,
            k,
            width,
        }
    }

    fn add(&self, s: &mut [f64], row: usize) {
        let y = self.data.y.row(row);
        let k = self.k;
        s[0] += 1.0;
        match self.model {
            LeafModel::Mean => {
                for (c, &v) in y.iter().enumerate() {
                    s[1 + c] += v;
                    s[1 + k + c] += v * v;
                }
            }
            LeafModel::Linear { .. } => {
                let d = self.d;
                let t = self.data.t.expect("treatments").row(row);
                let (yy, rest) = s[1..].split_at_mut(k);
                let (tt, ty) = rest.split_at_mut(d * d);
                for (c, &v) in y.iter().enumerate() {
                    yy[c] += v * v;
                    for i in 0..d {
                        ty[c * d + i] += t[i] * v;
                    }
                }
                for i in 0..d {
                    let ti = t[i];
                    for j in 0..d {
                        tt[i * d + j] += ti * t[j];
                    }
                }
            }
        }
    }

    /// Weighted residual sum of squares of the leaf model fitted to `s`.
    fn loss(&self, s: &[f64]) -> f64 {
        let n = s[0];
        if n == 0.0 {
            return 0.0;
        }
        let k = self.k;
        match self.model {
            LeafModel::Mean => (0..k)
                .map(|c| self.weights[c] * (s[1 + k + c] - s[1 + c] * s[1 + c] / n))
                .sum(),
            LeafModel::Linear { ridge } => {
                let d = self.d;
                let tt = &s[1 + k..1 + k + d * d];
                let Some(chol) = cholesky_ridge(tt, d, ridge) else {
                    return f64::INFINITY;
                };
                (0..k)
                    .map(|c| {
                        let b = &s[1 + k + d * d + c * d..1 + k + d * d + (c + 1) * d];
                        let theta = chol.solve(b);
                        let fit: f64 = theta.iter().zip(b).map(|(a, b)| a * b).sum();
                        self.weights[c] * (s[1 + c] - fit)
                    })
                    .sum()
            }
        }
    }

    fn leaf(&self, s: &[f64], rows: &[usize]) -> Leaf {
        let n = s[0];
        let k = self.k;
        let values = match self.model {
            LeafModel::Mean => (0..k).map(|c| s[1 + c] / n).collect(),
            LeafModel::Linear { ridge } => {
                let d = self.d;
                match cholesky_ridge(&s[1 + k..1 + k + d * d], d, ridge) {
                    Some(chol) => (0..k)
                        .flat_map(|c| {
                            chol.solve(&s[1 + k + d * d + c * d..1 + k + d * d + (c + 1) * d])
                        })
                        .collect(),
                    None => vec![0.0; k * d],
                }
            }
        };
        let f = self.data.x.cols();
        let mut lo = vec![f64::INFINITY; f];
        let mut hi = vec![f64::NEG_INFINITY; f];
        for &r in rows {
            for (j, &v) in self.data.x.row(r).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Leaf {
            values,
            lo,
            hi,
            n: rows.len(),
        }
    }

    fn grow(&self, tree_index: usize) -> Tree {
        let seed = self
            .params
            .seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(tree_index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.data.x.rows();
        let take = ((n as f64 * self.params.sample_fraction).round() as usize).clamp(1, n);
        let mut rows: Vec<usize> = sample(&mut rng, n, take).into_vec();
        rows.sort_unstable();
        let mut in_bag = vec![false; n];
        rows.iter().for_each(|&r| in_bag[r] = true);
        let oob = (0..n).filter(|&r| !in_bag[r]).collect();

        let mut tree = Tree {
            nodes: Vec::new(),
            leaves: Vec::new(),
            oob,
        };
        self.build(&mut tree, &mut rows, 0, &mut rng);
        tree
    }

    fn build(&self, tree: &mut Tree, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = tree.nodes.len() as u32;
        tree.nodes.push(Node::Leaf(0));
        let mut total = vec![0.0; self.width];
        for &r in rows.iter() {
            self.add(&mut total, r);
        }

        let split = if depth < self.params.max_depth && rows.len() >= 2 * self.params.min_leaf {
            self.best_split(rows, &total, rng)
        } else {
            None
        };

        match split {
            None => {
                tree.leaves.push(self.leaf(&total, rows));
                tree.nodes[id as usize] = Node::Leaf(tree.leaves.len() as u32 - 1);
            }
            Some((feature, bin)) => {
                let mid = partition(rows, |&r| self.binned.bin(r, feature) <= bin);
                let (l, r) = rows.split_at_mut(mid);
                let left = self.build(tree, l, depth + 1, rng);
                let right = self.build(tree, r, depth + 1, rng);
                tree.nodes[id as usize] = Node::Split {
                    feature: feature as u16,
                    threshold: self.binned.cuts[feature][bin],
                    left,
                    right,
                };
            }
        }
        id
    }

    /// Best `(feature, bin)` cut; rows in bins `<= bin` go left.
    fn best_split(
        &self,
        rows: &[usize],
        total: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Option<(usize, usize)> {
        let f = self.data.x.cols();
        let features: Vec<usize> = match self.params.mtry {
            Some(m) if m < f => {
                let mut picked = sample(rng, f, m.max(1)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..f).collect(),
        };
        let parent = self.loss(total);
        let min_leaf = self.params.min_leaf.max(1) as f64;
        let n = rows.len() as f64;
        let w = self.width;
        let mut best: Option<(f64, usize, usize)> = None;
        let mut left = vec![0.0; w];
        let mut right = vec![0.0; w];
        for feature in features {
            let n_cuts = self.binned.cuts[feature].len();
            if n_cuts == 0 {
                continue;
            }
            let mut hist = vec![0.0; (n_cuts + 1) * w];
            for &r in rows {
                let b = self.binned.bin(r, feature);
                self.add(&mut hist[b * w..(b + 1) * w], r);
            }
            left.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..n_cuts {
                let h = &hist[b * w..(b + 1) * w];
                if h[0] == 0.0 {
                    continue;
                }
                left.iter_mut().zip(h).for_each(|(l, v)| *l += v);
                if left[0] < min_leaf {
                    continue;
                }
                if n - left[0] < min_leaf {
                    break;
                }
                right
                    .iter_mut()
                    .zip(total.iter().zip(&left))
                    .for_each(|(r, (t, l))| *r = t - l);
                let gain = parent - self.loss(&left) - self.loss(&right);
                let better = best.is_none_or(|(g, ..)| gain > g);
                if gain.is_finite() && gain > 1e-12 * parent.abs() && better {
                    best = Some((gain, feature, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }
}

fn partition<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut i = 0;
    for j in 0..v.len() {
        if pred(&v[j]) {
            v.swap(i, j);
            i += 1;
        }
    }
    i
}

/// Cholesky factor of `a + lambda I` with `lambda = ridge * mean(diag a)`.
pub(crate) struct Cholesky {
    l: Vec<f64>,
    d: usize,
}

pub(crate) fn cholesky_ridge(a: &[f64], d: usize, ridge: f64) -> Option<Cholesky> {
    let mean_diag = (0..d).map(|i| a[i * d + i]).sum::<f64>() / d as f64;
    let lambda = ridge * mean_diag + 1e-12;
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j] + if i == j { lambda } else { 0.0 };
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(Cholesky { l, d })
}

impl Cholesky {
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * d + k] * z[k];
            }
            z[i] = s / self.l[i * d + i];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= self.l[k * d + i] * x[k];
            }
            x[i] = s / self.l[i * d + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid(n: usize) -> Matrix {
        Matrix::from_rows(&(0..n).map(|i| vec![i as f64 / n as f64]).collect::<Vec<_>>())
    }

    #[test]
    fn mean_forest_learns_a_step() {
        let x = grid(400);
        let y: Vec<f64> = (0..400).map(|i| if i < 200 { 1.0 } else { 5.0 }).collect();
        let y = Matrix::from_column(&y);
        let f = Forest::fit(
            &TrainSet { x: &x, y: &y, t: None },
            LeafModel::Mean,
            &ForestParams {
                n_trees: 20,
                ..Default::default()
            },
        );
        assert!((f.predict(&[0.1])[0] - 1.0).abs() < 1e-9);
        assert!((f.predict(&[0.9])[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_is_reproduced_exactly() {
        let x = grid(100);
        let y = Matrix::from_column(&[5.0; 100]);
        let f = Forest::fit(
            &TrainSet { x: &x, y: &y, t: None },
            LeafModel::Mean,
            &ForestParams::default(),
        );
        assert_eq!(f.predict(&[0.37])[0], 5.0);
        assert_eq!(f.trees[0].n_leaves(), 1);
    }

    #[test]
    fn linear_leaves_recover_heterogeneous_slopes() {
        // slope 1 on the left half, 4 on the right
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random();
            let t: f64 = rng.random::<f64>() - 0.5;
            let slope = if x < 0.5 { 1.0 } else { 4.0 };
            xs.push(vec![x]);
            ts.push(vec![t]);
            ys.push(slope * t);
        }
        let x = Matrix::from_rows(&xs);
        let t = Matrix::from_rows(&ts);
        let y = Matrix::from_column(&ys);
        let f = Forest::fit(
            &TrainSet {
                x: &x,
                y: &y,
                t: Some(&t),
            },
            LeafModel::Linear { ridge: 1e-6 },
            &ForestParams {
                n_trees: 20,
                min_leaf: 20,
                ..Default::default()
            },
        );
        let left = f.predict(&[0.2])[0];
        let right = f.predict(&[0.8])[0];
        assert!((left - 1.0).abs() < 0.05, "{left}");
        assert!((right - 4.0).abs() < 0.05, "{right}");
    }

    #[test]
    fn deterministic_given_seed() {
        let x = grid(300);
        let y = Matrix::from_column(&(0..300).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let p = ForestParams {
            n_trees: 10,
            seed: 3,
            ..Default::default()
        };
        let a = Forest::fit(&TrainSet { x: &x, y: &y, t: None }, LeafModel::Mean, &p);
        let b = Forest::fit(&TrainSet { x: &x, y: &y, t: None }, LeafModel::Mean, &p);
        assert_eq!(a, b);
        assert_eq!(a.predict(&[0.5]), b.predict(&[0.5]));
    }

    #[test]
    fn oob_rows_are_disjoint_from_the_sample() {
        let x = grid(100);
        let y = Matrix::from_column(&(0..100).map(|i| i as f64).collect::<Vec<_>>());
        let f = Forest::fit(
            &TrainSet { x: &x, y: &y, t: None },
            LeafModel::Mean,
            &ForestParams {
                n_trees: 5,
                ..Default::default()
            },
        );
        for t in &f.trees {
            assert_eq!(t.oob_rows().len(), 50);
        }
        assert!(f.oob_predict(3, x.row(3)).is_some());
    }

    #[test]
    fn cholesky_solves() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let c = cholesky_ridge(&a, 2, 0.0).unwrap();
        let x = c.solve(&[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-9);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-9);
    }
}
