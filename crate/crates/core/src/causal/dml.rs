//! Cross-fitted double machine learning with a local-linear effect forest.
//!
//! Given covariates `X`, a treatment design `T` (`n x d`) and outcomes `Y`
//! (`n x k`), the model is
//!
//! ```text
//! Y_k = g_k(X) + theta_k(X) . T + noise
//! ```
//!
//! Nuisances `E[Y_k | X]` and `E[T_j | X]` are fitted by mean forests on
//! `n_folds - 1` folds and evaluated on the held-out fold. The effect forest
//! then regresses the outcome residuals on the treatment residuals, with a
//! ridge least-squares fit in every leaf.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{variance, Forest, ForestParams, LeafModel, Matrix, TrainSet};
use crate::error::CausalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlParams {
    pub n_folds: usize,
    pub nuisance: ForestParams,
    pub effect: ForestParams,
    pub ridge: f64,
    pub min_rows: usize,
    pub seed: u64,
}

impl Default for DmlParams {
    fn default() -> Self {
        Self {
            n_folds: 3,
            nuisance: ForestParams {
                n_trees: 30,
                min_leaf: 10,
                ..ForestParams::default()
            },
            effect: ForestParams {
                n_trees: 60,
                min_leaf: 40,
                ..ForestParams::default()
            },
            ridge: 1e-3,
            min_rows: 200,
            seed: 0,
        }
    }
}

impl DmlParams {
    pub fn validate(&self) -> Result<(), CausalError> {
        let bad = |m: &str| Err(CausalError::InvalidConfig(m.to_string()));
        if self.n_folds < 2 {
            return bad("n_folds must be at least 2");
        }
        if self.nuisance.n_trees == 0 || self.effect.n_trees == 0 {
            return bad("forests need at least one tree");
        }
        if self.nuisance.min_leaf == 0 || self.effect.min_leaf == 0 {
            return bad("min_leaf must be at least 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be finite and non-negative");
        }
        if !(self.nuisance.sample_fraction > 0.0 && self.nuisance.sample_fraction <= 1.0)
            || !(self.effect.sample_fraction > 0.0 && self.effect.sample_fraction <= 1.0)
        {
            return bad("sample_fraction must be in (0, 1]");
        }
        Ok(())
    }
}

/// A fitted effect model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlModel {
    pub treatment_names: Vec<String>,
    pub outcome_names: Vec<String>,
    pub n_train: usize,
    effect: Forest,
}

/// Effect of a treatment change at one covariate point.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectPrediction {
    /// Forest-average effect, one per outcome.
    pub mean: Vec<f64>,
    /// Across-tree standard deviation of the per-tree effects.
    pub std: Vec<f64>,
    /// Fraction of trees whose leaf's training hull contains the point.
    pub coverage: f64,
}

impl EffectPrediction {
    /// `coverage / (1 + cv)`, with `cv = std / |mean|` and `cv = 0` when both
    /// are zero.
    pub fn confidence(&self, outcome: usize) -> f64 {
        let (m, s) = (self.mean[outcome], self.std[outcome]);
        let cv = if s == 0.0 {
            0.0
        } else if m == 0.0 {
            f64::INFINITY
        } else {
            s / m.abs()
        };
        (self.coverage / (1.0 + cv)).clamp(0.0, 1.0)
    }
}

pub struct DmlData<'a> {
    pub x: &'a Matrix,
    pub t: &'a Matrix,
    pub y: &'a Matrix,
    pub treatment_names: &'a [&'a str],
    pub outcome_names: &'a [&'a str],
}

/// Out-of-fold residuals `Y - m(X)` and `T - e(X)`.
pub struct Residuals {
    pub y: Matrix,
    pub t: Matrix,
}

pub fn cross_fit_residuals(
    x: &Matrix,
    t: &Matrix,
    y: &Matrix,
    params: &DmlParams,
) -> Residuals {
    let n = x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_f01d));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % params.n_folds;
    }

    // One job per (fold, target column): targets are outcomes then treatments.
    let targets: Vec<(bool, usize)> = (0..y.cols())
        .map(|k| (true, k))
        .chain((0..t.cols()).map(|j| (false, j)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..params.n_folds)
        .flat_map(|f| (0..targets.len()).map(move |c| (f, c)))
        .collect();

    let predictions: Vec<(usize, usize, Vec<(usize, f64)>)> = jobs
        .par_iter()
        .map(|&(fold, c)| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let (is_y, col) = targets[c];
            let src = if is_y { y } else { t };
            let xt = x.select_rows(&train);
            let yt = Matrix::from_column(&train.iter().map(|&i| src.get(i, col)).collect::<Vec<_>>());
            let mut fp = params.nuisance.clone();
            fp.seed = params
                .seed
                .wrapping_mul(31)
                .wrapping_add((fold * targets.len() + c) as u64 + 1);
            let forest = Forest::fit(&TrainSet { x: &xt, y: &yt, t: None }, LeafModel::Mean, &fp);
            let held: Vec<(usize, f64)> = (0..n)
                .filter(|&i| fold_of[i] == fold)
                .map(|i| (i, forest.predict(x.row(i))[0]))
                .collect();
            (fold, c, held)
        })
        .collect();

    let mut ry = y.clone();
    let mut rt = t.clone();
    for (_, c, held) in predictions {
        let (is_y, col) = targets[c];
        let dst = if is_y { &mut ry } else { &mut rt };
        for (i, pred) in held {
            let v = dst.get(i, col) - pred;
            dst.set(i, col, v);
        }
    }
    Residuals { y: ry, t: rt }
}

pub fn fit(data: &DmlData<'_>, params: &DmlParams) -> Result<DmlModel, CausalError> {
    params.validate()?;
    let n = data.x.rows();
    if n < params.min_rows.max(params.n_folds) {
        return Err(CausalError::InsufficientData {
            required: params.min_rows.max(params.n_folds),
            got: n,
        });
    }
    assert_eq!(data.t.rows(), n);
    assert_eq!(data.y.rows(), n);
    assert_eq!(data.treatment_names.len(), data.t.cols());
    assert_eq!(data.outcome_names.len(), data.y.cols());
    for i in 0..n {
        let finite = |m: &Matrix| m.row(i).iter().all(|v| v.is_finite());
        if !(finite(data.x) && finite(data.t) && finite(data.y)) {
            return Err(CausalError::NonFinite { row: i });
        }
    }
    for j in 0..data.t.cols() {
        if variance(&data.t.column(j)) == 0.0 {
            return Err(CausalError::DegenerateTreatment(
                data.treatment_names[j].to_string(),
            ));
        }
    }

    let res = cross_fit_residuals(data.x, data.t, data.y, params);

    for j in 0..data.t.cols() {
        let raw = variance(&data.t.column(j));
        let left = variance(&res.t.column(j));
        if !(left > 1e-9 * raw) {
            return Err(CausalError::DegenerateTreatment(
                data.treatment_names[j].to_string(),
            ));
        }
    }

    let mut ep = params.effect.clone();
    ep.seed = params.seed.wrapping_mul(0x9e37_79b9).wrapping_add(7);
    let effect = Forest::fit(
        &TrainSet {
            x: data.x,
            y: &res.y,
            t: Some(&res.t),
        },
        LeafModel::Linear { ridge: params.ridge },
        &ep,
    );
    Ok(DmlModel {
        treatment_names: data.treatment_names.iter().map(|s| s.to_string()).collect(),
        outcome_names: data.outcome_names.iter().map(|s| s.to_string()).collect(),
        n_train: n,
        effect,
    })
}

impl DmlModel {
    pub fn n_treatments(&self) -> usize {
        self.effect.n_treatments
    }

    pub fn n_outcomes(&self) -> usize {
        self.effect.n_outputs
    }

    pub fn n_features(&self) -> usize {
        self.effect.n_features
    }

    /// Forest-average slopes, `outcomes x treatments`, row-major.
    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        self.effect.predict(x)
    }

    /// Effect on every outcome of moving the treatment design by `dt`.
    pub fn effect(&self, x: &[f64], dt: &[f64]) -> EffectPrediction {
        let d = self.n_treatments();
        let k = self.n_outcomes();
        assert_eq!(dt.len(), d);
        let b = self.effect.trees.len() as f64;
        let mut sum = vec![0.0; k];
        let mut sq = vec![0.0; k];
        let mut inside = 0usize;
        for leaf in self.effect.leaves(x) {
            if leaf.contains(x) {
                inside += 1;
            }
            for o in 0..k {
                let tau: f64 = leaf.values[o * d..(o + 1) * d]
                    .iter()
                    .zip(dt)
                    .map(|(th, dv)| th * dv)
                    .sum();
                sum[o] += tau;
                sq[o] += tau * tau;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / b).collect();
        let std = (0..k)
            .map(|o| {
                if dt.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    (sq[o] / b - mean[o] * mean[o]).max(0.0).sqrt()
                }
            })
            .collect();
        EffectPrediction {
            mean,
            std,
            coverage: inside as f64 / b,
        }
    }
}

/// Ordinary least squares slope of `y` on `[1, t]`, for comparison with DML.
pub fn naive_slopes(t: &Matrix, y: &[f64]) -> Vec<f64> {
    let d = t.cols() + 1;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for i in 0..t.rows() {
        let row: Vec<f64> = std::iter::once(1.0).chain(t.row(i).iter().copied()).collect();
        for p in 0..d {
            b[p] += row[p] * y[i];
            for q in 0..d {
                a[p * d + q] += row[p] * row[q];
            }
        }
    }
    let chol = super::forest::cholesky_ridge(&a, d, 0.0).expect("full-rank design");
    chol.solve(&b)[1..].to_vec()
}
