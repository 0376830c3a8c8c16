//! Frozen-embedding evaluation: grouped stratified folds, linear probes,
//! classification and regression metrics, silhouette scores, per-user
//! distance statistics and a 2-D PCA projection.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub fold_of_user: BTreeMap<String, usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn fold_of(&self, user: &str) -> Option<usize> {
        self.fold_of_user.get(user).copied()
    }

    /// Fold index of every segment.
    pub fn segment_folds(&self, users: &[String]) -> Result<Vec<usize>> {
        users
            .iter()
            .map(|u| {
                self.fold_of(u)
                    .ok_or_else(|| Error::Contract(format!("user {u} has no fold")))
            })
            .collect()
    }
}

fn argmax_deficit(deficit: &[f64], segments: &[usize]) -> usize {
    (0..deficit.len())
        .max_by(|&a, &b| {
            deficit[a]
                .total_cmp(&deficit[b])
                .then(segments[b].cmp(&segments[a]))
                .then(b.cmp(&a))
        })
        .expect("k >= 1")
}

/// Assign whole users to `k` folds, balancing positives.
///
/// Users are taken in order of positive count (descending), then user id.
/// A user with positives goes to the fold furthest below its share of
/// positives; a user without goes to the fold furthest below its share of
/// negatives. Ties go to the fold with fewer segments, then the lower index.
pub fn make_folds(users: &[String], labels: &[bool], k: usize) -> Result<FoldPlan> {
    if users.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} users for {} labels",
            users.len(),
            labels.len()
        )));
    }
    if k < 2 {
        return Err(Error::config("need at least two folds"));
    }
    let mut per_user: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (u, &y) in users.iter().zip(labels) {
        let e = per_user.entry(u.as_str()).or_default();
        if y {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    if per_user.len() < k {
        return Err(Error::config(format!(
            "{} distinct users cannot fill {k} folds",
            per_user.len()
        )));
    }
    let total_pos: usize = per_user.values().map(|c| c.0).sum();
    let total_neg: usize = per_user.values().map(|c| c.1).sum();
    let mut order: Vec<(&str, usize, usize)> = per_user.iter().map(|(u, c)| (*u, c.0, c.1)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let (pos_share, neg_share) = (total_pos as f64 / k as f64, total_neg as f64 / k as f64);
    let mut positives = vec![0usize; k];
    let mut negatives = vec![0usize; k];
    let mut fold_of_user = BTreeMap::new();
    for (u, p, n) in order {
        let segs: Vec<usize> = (0..k).map(|f| positives[f] + negatives[f]).collect();
        let deficit: Vec<f64> = if p > 0 {
            positives.iter().map(|&x| pos_share - x as f64).collect()
        } else {
            negatives.iter().map(|&x| neg_share - x as f64).collect()
        };
        let f = argmax_deficit(&deficit, &segs);
        positives[f] += p;
        negatives[f] += n;
        fold_of_user.insert(u.to_string(), f);
    }

    let mut warnings = Vec::new();
    let global = total_pos as f64 / (total_pos + total_neg) as f64;
    for f in 0..k {
        let n = positives[f] + negatives[f];
        if n == 0 {
            warnings.push(format!("fold {f} is empty"));
            continue;
        }
        let frac = positives[f] as f64 / n as f64;
        if global > 0.0 && (frac - global).abs() > 0.1 * global {
            warnings.push(format!(
                "fold {f} positive fraction {frac:.3} deviates from global {global:.3} by more than 10%"
            ));
        }
    }
    Ok(FoldPlan {
        k,
        fold_of_user,
        positives,
        negatives,
        warnings,
    })
}

/// Error unless train and test users of every fold are disjoint.
pub fn check_no_leakage(users: &[String], folds: &[usize], k: usize) -> Result<()> {
    for f in 0..k {
        let test: BTreeSet<&str> = users
            .iter()
            .zip(folds)
            .filter(|(_, &g)| g == f)
            .map(|(u, _)| u.as_str())
            .collect();
        if let Some((u, _)) = users
            .iter()
            .zip(folds)
            .find(|(u, &g)| g != f && test.contains(u.as_str()))
        {
            return Err(Error::Contract(format!("user {u} appears in train and test of fold {f}")));
        }
    }
    Ok(())
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve from the Mann-Whitney rank sum.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Contract(format!(
            "auroc needs equal non-empty inputs, got {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "mae needs equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// F1 of the positive class. Zero when nothing is predicted positive while
/// positives exist.
pub fn f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "f1 needs equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp + fp + fne == 0 {
        return Err(Error::UndefinedMetric("F1 with no positives predicted or present".into()));
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
}

/// Per-feature standardization fitted on one set and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let d = x.first().map(Vec::len).ok_or_else(|| Error::config("no rows to fit"))?;
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; d];
        for row in x {
            std.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        std.iter_mut().for_each(|s| *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 });
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
    pub ridge_lambda: f64,
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 0.1,
            l2: 1e-3,
            ridge_lambda: 1e-3,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub scaler: Standardizer,
    pub w: Vec<f64>,
    pub b: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let x = self.scaler.apply(row);
        sigmoid(x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }
}

/// L2-regularized, class-reweighted logistic regression by full-batch
/// gradient descent on standardized features.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], cfg: &ProbeConfig) -> Result<LogisticModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Contract("logistic fit needs equal non-empty inputs".into()));
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    let n = y.len();
    if n_pos == 0 || n_pos == n {
        return Err(Error::UndefinedMetric("training labels have a single class".into()));
    }
    let scaler = Standardizer::fit(x)?;
    let d = scaler.mean.len();
    let xs: Vec<f64> = x.iter().flat_map(|r| scaler.apply(r)).collect();
    let (w_pos, w_neg) = (n as f64 / (2.0 * n_pos as f64), n as f64 / (2.0 * (n - n_pos) as f64));
    let cw: Vec<f64> = y.iter().map(|&v| if v { w_pos } else { w_neg }).collect();
    let cw_sum: f64 = cw.iter().sum();
    let cw: Vec<f64> = cw.iter().map(|c| c / cw_sum).collect();
    let yv: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let x_t = Tensor::from_rows(n, d, xs)?;
    let y_t = Tensor::from_rows(n, 1, yv)?;
    let c_t = Tensor::from_rows(n, 1, cw)?;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..cfg.iterations {
        let mut tape = Tape::new();
        let xv = tape.constant(x_t.clone());
        let yv = tape.constant(y_t.clone());
        let cv = tape.constant(c_t.clone());
        let wv = tape.param(Tensor::from_rows(d, 1, w.clone())?);
        let bv = tape.param(Tensor::scalar(b));
        let z = tape.matmul(xv, wv)?;
        let z = tape.add(z, bv)?;
        // Weighted cross-entropy: softplus(z) - y z.
        let sp = tape.softplus(z);
        let yz = tape.mul(yv, z)?;
        let ce = tape.sub(sp, yz)?;
        let wce = tape.mul(ce, cv)?;
        let data = tape.sum(wce);
        let ww = tape.mul(wv, wv)?;
        let reg = tape.sum(ww);
        let reg = tape.scale(reg, 0.5 * cfg.l2);
        let loss = tape.add(data, reg)?;
        tape.backward(loss)?;
        let gw = tape.grad(wv).expect("param").to_vec();
        let gb = tape.grad(bv).expect("param")[0];
        w.iter_mut().zip(&gw).for_each(|(a, g)| *a -= cfg.lr * g);
        b -= cfg.lr * gb;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numeric {
            layer: "logistic probe".into(),
        });
    }
    Ok(LogisticModel { scaler, w, b })
}

/// Solve `a x = b` for symmetric positive-definite `a` (row-major `d x d`).
pub fn cholesky_solve(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return Err(Error::Numeric {
                        layer: "cholesky: matrix not positive definite".into(),
                    });
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    let mut z = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * d + i];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub scaler: Standardizer,
    pub w: Vec<f64>,
    pub b: f64,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let x = self.scaler.apply(row);
        x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

/// Ridge regression in closed form on standardized features with an
/// unpenalized intercept.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Contract("ridge fit needs equal non-empty inputs".into()));
    }
    let scaler = Standardizer::fit(x)?;
    let d = scaler.mean.len();
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        let r = scaler.apply(row);
        for i in 0..d {
            xty[i] += r[i] * (t - y_mean);
            for j in 0..d {
                xtx[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        xtx[i * d + i] += lambda;
    }
    let w = cholesky_solve(&xtx, &xty, d)?;
    Ok(RidgeModel { scaler, w, b: y_mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Auroc,
    Mae,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub metric: MetricKind,
    /// `None` for folds that were skipped.
    pub per_fold: Vec<Option<f64>>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub warnings: Vec<String>,
}

impl ProbeReport {
    fn from_folds(metric: MetricKind, per_fold: Vec<Option<f64>>, warnings: Vec<String>) -> Result<Self> {
        let vals: Vec<f64> = per_fold.iter().flatten().copied().collect();
        if vals.is_empty() {
            return Err(Error::UndefinedMetric(format!("{metric:?}: every fold was skipped")));
        }
        Ok(Self {
            metric,
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            per_fold,
            warnings,
        })
    }
}

enum FoldOutcome {
    Skipped(String),
    Scores(Vec<Option<f64>>),
}

/// Train on `k - 1` folds and score the held-out one, for every fold.
/// Classification yields AUROC and F1 reports; regression yields MAE.
pub fn probe(
    embeddings: &[Vec<f64>],
    labels: &[f64],
    users: &[String],
    task: TaskKind,
    plan: &FoldPlan,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeReport>> {
    if embeddings.len() != labels.len() || users.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract("embeddings, labels and users differ in length".into()));
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: "probe input embeddings".into(),
        });
    }
    let folds = plan.segment_folds(users)?;
    check_no_leakage(users, &folds, plan.k)?;

    let outcomes: Vec<Result<FoldOutcome>> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| folds[i] != f);
            if test.is_empty() || train.is_empty() {
                return Ok(FoldOutcome::Skipped(format!("fold {f} has no test or train segments")));
            }
            let xtr: Vec<Vec<f64>> = train.iter().map(|&i| embeddings[i].clone()).collect();
            match task {
                TaskKind::Classification => {
                    let ytr: Vec<bool> = train.iter().map(|&i| labels[i] > 0.5).collect();
                    let model = match fit_logistic(&xtr, &ytr, cfg) {
                        Ok(m) => m,
                        Err(Error::UndefinedMetric(_)) => {
                            return Ok(FoldOutcome::Skipped(format!("fold {f}: single-class training set")))
                        }
                        Err(e) => return Err(e),
                    };
                    let p: Vec<f64> = test.iter().map(|&i| model.predict_proba(&embeddings[i])).collect();
                    let yte: Vec<bool> = test.iter().map(|&i| labels[i] > 0.5).collect();
                    let a = match auroc(&p, &yte) {
                        Ok(v) => Some(v),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    };
                    let hard: Vec<bool> = p.iter().map(|&v| v >= cfg.threshold).collect();
                    let f1v = match f1(&hard, &yte) {
                        Ok(v) => Some(v),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok(FoldOutcome::Scores(vec![a, f1v]))
                }
                TaskKind::Regression => {
                    let ytr: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
                    let model = fit_ridge(&xtr, &ytr, cfg.ridge_lambda)?;
                    let p: Vec<f64> = test.iter().map(|&i| model.predict(&embeddings[i])).collect();
                    let yte: Vec<f64> = test.iter().map(|&i| labels[i]).collect();
                    Ok(FoldOutcome::Scores(vec![Some(mae(&p, &yte)?)]))
                }
            }
        })
        .collect();

    let metrics = match task {
        TaskKind::Classification => vec![MetricKind::Auroc, MetricKind::F1],
        TaskKind::Regression => vec![MetricKind::Mae],
    };
    let mut per_metric: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(plan.k); metrics.len()];
    let mut warnings = plan.warnings.clone();
    for (f, o) in outcomes.into_iter().enumerate() {
        match o? {
            FoldOutcome::Skipped(w) => {
                warnings.push(w);
                per_metric.iter_mut().for_each(|m| m.push(None));
            }
            FoldOutcome::Scores(s) => {
                for (m, (v, kind)) in per_metric.iter_mut().zip(s.into_iter().zip(&metrics)) {
                    if v.is_none() {
                        warnings.push(format!("fold {f}: {kind:?} undefined on the test split"));
                    }
                    m.push(v);
                }
            }
        }
    }
    metrics
        .into_iter()
        .zip(per_metric)
        .map(|(kind, vals)| ProbeReport::from_folds(kind, vals, warnings.clone()))
        .collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub score: f64,
    pub n_points: usize,
    pub excluded: usize,
    pub warnings: Vec<String>,
}

/// Mean silhouette over points of groups with at least two members.
pub fn silhouette(points: &[Vec<f64>], groups: &[usize]) -> Result<Silhouette> {
    if points.len() != groups.len() {
        return Err(Error::Contract("points and groups differ in length".into()));
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    let mut warnings = Vec::new();
    let keep: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let ok = sizes[&groups[i]] >= 2;
            if !ok {
                warnings.push(format!("point {i} is alone in group {}; excluded", groups[i]));
            }
            ok
        })
        .collect();
    let kept_groups: BTreeSet<usize> = keep.iter().map(|&i| groups[i]).collect();
    if kept_groups.len() < 2 {
        return Err(Error::config("silhouette needs at least two groups with two or more members"));
    }
    let scores: Vec<f64> = keep
        .par_iter()
        .map(|&i| {
            let mut sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for &j in &keep {
                if j != i {
                    let e = sum.entry(groups[j]).or_default();
                    e.0 += euclidean(&points[i], &points[j]);
                    e.1 += 1;
                }
            }
            let (sa, na) = sum[&groups[i]];
            let a = sa / na as f64;
            let b = sum
                .iter()
                .filter(|(g, _)| **g != groups[i])
                .map(|(_, (s, n))| s / *n as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(Silhouette {
        score: scores.iter().sum::<f64>() / scores.len() as f64,
        n_points: keep.len(),
        excluded: points.len() - keep.len(),
        warnings,
    })
}

/// Heart-rate group: 0 for normal (60-90 bpm), 1 for elevated (90-130 bpm).
pub fn hr_group(hr_bpm: f64) -> Option<usize> {
    if (60.0..=90.0).contains(&hr_bpm) {
        Some(0)
    } else if hr_bpm > 90.0 && hr_bpm <= 130.0 {
        Some(1)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p50: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDistances {
    pub users: Vec<String>,
    /// `(i, j, distance)` over user index pairs `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub summary: Summary,
}

impl UserDistances {
    /// Equal-width histogram of the distances as `(lo, hi, count)`.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let bins = bins.max(1);
        let (lo, hi) = (self.summary.min, self.summary.max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &(_, _, d) in &self.pairs {
            let b = (((d - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
            .collect()
    }
}

/// Distances between per-user mean embeddings.
pub fn pairwise_user_distances(embeddings: &[Vec<f64>], users: &[String]) -> Result<UserDistances> {
    if embeddings.len() != users.len() {
        return Err(Error::Contract("embeddings and users differ in length".into()));
    }
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (e, u) in embeddings.iter().zip(users) {
        let entry = sums.entry(u.as_str()).or_insert_with(|| (vec![0.0; e.len()], 0));
        entry.0.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        entry.1 += 1;
    }
    if sums.len() < 2 {
        return Err(Error::config("pairwise distances need at least two users"));
    }
    let names: Vec<String> = sums.keys().map(|s| s.to_string()).collect();
    let means: Vec<Vec<f64>> = sums
        .values()
        .map(|(s, n)| s.iter().map(|v| v / *n as f64).collect())
        .collect();
    let mut pairs = Vec::new();
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            pairs.push((i, j, euclidean(&means[i], &means[j])));
        }
    }
    let d: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    Ok(UserDistances {
        users: names,
        summary: summarize(&d),
        pairs,
    })
}

fn summarize(x: &[f64]) -> Summary {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    Summary {
        count: x.len(),
        mean,
        std,
        min: s[0],
        p50: percentile_sorted(&s, 50.0),
        max: s[s.len() - 1],
    }
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `[mean, std, p25, p50, p75, min, max]` of a waveform.
pub fn stat_features(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Contract("statistics of an empty signal".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(vec![
        mean,
        std,
        percentile_sorted(&s, 25.0),
        percentile_sorted(&s, 50.0),
        percentile_sorted(&s, 75.0),
        s[0],
        s[s.len() - 1],
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

fn project_out(v: &mut [f64], axis: Option<&[f64]>) {
    if let Some(a) = axis {
        let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Leading eigenpair of `cov`, restricted to the complement of `axis` when
/// given.
fn power_iteration(cov: &[f64], d: usize, axis: Option<&[f64]>) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
    project_out(&mut v, axis);
    if normalize(&mut v) < 1e-12 {
        // Start vector parallel to the excluded axis; use a basis vector.
        v = (0..d).map(|i| if i == d - 1 { 1.0 } else { 0.0 }).collect();
        project_out(&mut v, axis);
        normalize(&mut v);
    }
    let apply = |v: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect() };
    for _ in 0..100_000 {
        let mut w = apply(&v);
        project_out(&mut w, axis);
        if normalize(&mut w) < 1e-300 {
            break;
        }
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < 1e-14 {
            break;
        }
    }
    let lambda: f64 = apply(&v).iter().zip(&v).map(|(a, b)| a * b).sum();
    let k = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (lambda.max(0.0), v)
}

/// Projection onto the two leading principal axes, found by power iteration
/// with deflation on the sample covariance.
pub fn pca2(points: &[Vec<f64>]) -> Result<Pca2> {
    let n = points.len();
    if n < 3 {
        return Err(Error::config("PCA needs at least three points"));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::shape("PCA needs equal-length points of dimension >= 2"));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n as f64);
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for c in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j] / (n - 1) as f64;
            }
        }
    }
    let total_variance = (0..d).map(|i| cov[i * d + i]).sum();
    let (l1, v1) = power_iteration(&cov, d, None);
    let (l2, v2) = power_iteration(&cov, d, Some(&v1));
    let coords = centered
        .iter()
        .map(|c| {
            [
                c.iter().zip(&v1).map(|(a, b)| a * b).sum(),
                c.iter().zip(&v2).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    Ok(Pca2 {
        coords,
        components: [v1, v2],
        explained_variance: [l1, l2],
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn ids(n: usize, per: usize) -> Vec<String> {
        (0..n).flat_map(|u| std::iter::repeat_n(format!("u{u:02}"), per)).collect()
    }

    fn brute_auroc(s: &[f64], y: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        wins += 1.0;
                    } else if s[i] == s[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    fn brute_silhouette(p: &[Vec<f64>], g: &[usize]) -> f64 {
        let groups: BTreeSet<usize> = g.iter().copied().collect();
        let mut total = 0.0;
        for i in 0..p.len() {
            let mean_to = |grp: usize| {
                let d: Vec<f64> = (0..p.len())
                    .filter(|&j| j != i && g[j] == grp)
                    .map(|j| euclidean(&p[i], &p[j]))
                    .collect();
                d.iter().sum::<f64>() / d.len() as f64
            };
            let a = mean_to(g[i]);
            let b = groups
                .iter()
                .filter(|&&x| x != g[i])
                .map(|&x| mean_to(x))
                .fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        total / p.len() as f64
    }

    #[test]
    fn folds_balance_equal_users() {
        let users = ids(10, 4);
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let plan = make_folds(&users, &labels, 5).unwrap();
        let mut per_fold = [0; 5];
        for f in plan.fold_of_user.values() {
            per_fold[*f] += 1;
        }
        assert_eq!(per_fold, [2; 5]);
        let folds = plan.segment_folds(&users).unwrap();
        check_no_leakage(&users, &folds, 5).unwrap();
        assert!(plan.warnings.is_empty(), "{:?}", plan.warnings);
    }

    #[test]
    fn folds_keep_users_whole_and_stratify() {
        let mut rng = crate::rng::rng(3);
        let mut users = Vec::new();
        let mut labels = Vec::new();
        for u in 0..40 {
            let n = rng.random_range(2..8);
            let hi = u % 2 == 0;
            for _ in 0..n {
                users.push(format!("user{u}"));
                labels.push(hi);
            }
        }
        let plan = make_folds(&users, &labels, 5).unwrap();
        let folds = plan.segment_folds(&users).unwrap();
        for (i, u) in users.iter().enumerate() {
            for (j, v) in users.iter().enumerate() {
                if u == v {
                    assert_eq!(folds[i], folds[j]);
                }
            }
        }
        let global = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
        for f in 0..5 {
            let frac = plan.positives[f] as f64 / (plan.positives[f] + plan.negatives[f]) as f64;
            assert!((frac - global).abs() <= 0.1 * global + 0.05, "fold {f}: {frac} vs {global}");
        }
    }

    #[test]
    fn single_positive_user_warns() {
        let users = ids(6, 3);
        let labels: Vec<bool> = (0..18).map(|i| i < 3).collect();
        let plan = make_folds(&users, &labels, 5).unwrap();
        assert!(!plan.warnings.is_empty());
        assert!(matches!(make_folds(&ids(3, 2), &[false; 6], 5), Err(Error::Config(_))));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = crate::rng::rng(5);
        for _ in 0..300 {
            let n = rng.random_range(2..40);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 3.0).collect();
            let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            y[0] = true;
            y[1] = false;
            assert!((auroc(&s, &y).unwrap() - brute_auroc(&s, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_monotone_invariance() {
        let mut rng = crate::rng::rng(6);
        let s: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let base = auroc(&s, &y).unwrap();
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let a: Vec<f64> = s.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_eq!(auroc(&e, &y).unwrap(), base);
        assert_eq!(auroc(&a, &y).unwrap(), base);
    }

    #[test]
    fn mae_and_f1_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let t = [true, false, true];
        assert_eq!(f1(&t, &t).unwrap(), 1.0);
        assert_eq!(f1(&[false; 3], &t).unwrap(), 0.0);
        assert!(matches!(mae(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn informative_features_probe_perfectly() {
        let users = ids(20, 5);
        let labels: Vec<f64> = (0..100).map(|i| ((i / 5) % 2) as f64).collect();
        let emb: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y, y]).collect();
        let yb: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
        let plan = make_folds(&users, &yb, 5).unwrap();
        let reports = probe(&emb, &labels, &users, TaskKind::Classification, &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(reports[0].metric, MetricKind::Auroc);
        assert!(reports[0].per_fold.iter().all(|v| *v == Some(1.0)));
        assert!(reports[0].min <= reports[0].mean && reports[0].mean <= reports[0].max);
        assert_eq!(reports[0].per_fold.len(), 5);
    }

    #[test]
    fn random_embeddings_give_chance_auroc() {
        let mut means = Vec::new();
        for seed in 0..20 {
            let mut rng = crate::rng::rng(100 + seed);
            let users = ids(40, 5);
            let labels: Vec<f64> = (0..200).map(|i| ((i / 5) % 2) as f64).collect();
            let emb: Vec<Vec<f64>> = (0..200).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let yb: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
            let plan = make_folds(&users, &yb, 5).unwrap();
            let r = probe(&emb, &labels, &users, TaskKind::Classification, &plan, &ProbeConfig::default()).unwrap();
            means.push(r[0].mean);
        }
        let m = means.iter().sum::<f64>() / means.len() as f64;
        assert!((0.4..=0.6).contains(&m), "{m}");
    }

    #[test]
    fn ridge_interpolates_linear_targets() {
        let mut rng = crate::rng::rng(7);
        let users = ids(10, 6);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 4.0).collect();
        let plan = make_folds(&users, &[false; 60], 5).unwrap();
        let cfg = ProbeConfig {
            ridge_lambda: 1e-12,
            ..ProbeConfig::default()
        };
        let r = probe(&x, &y, &users, TaskKind::Regression, &plan, &cfg).unwrap();
        assert_eq!(r[0].metric, MetricKind::Mae);
        assert!(r[0].max < 1e-6, "{:?}", r[0]);
    }

    #[test]
    fn cholesky_against_nalgebra() {
        let mut rng = crate::rng::rng(8);
        let d = 6;
        let m: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = nalgebra::DMatrix::from_row_slice(d, d, &m);
        let spd = &a * a.transpose() + nalgebra::DMatrix::identity(d, d);
        let b: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let flat: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| spd[(i, j)]).collect();
        let x = cholesky_solve(&flat, &b, d).unwrap();
        let oracle = spd.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..d {
            assert!((x[i] - oracle[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn silhouette_separated_blobs() {
        let mut rng = crate::rng::rng(9);
        let n = Normal::new(0.0, 0.1).unwrap();
        let mut p = Vec::new();
        let mut g = Vec::new();
        for i in 0..40 {
            let c = if i < 20 { 0.0 } else { 10.0 };
            p.push(vec![c + n.sample(&mut rng), n.sample(&mut rng)]);
            g.push(usize::from(i >= 20));
        }
        let s = silhouette(&p, &g).unwrap();
        assert!(s.score > 0.9);
        assert!((s.score - brute_silhouette(&p, &g)).abs() < 1e-12);
    }

    #[test]
    fn silhouette_null_and_hand_example() {
        for seed in 0..20 {
            let mut rng = crate::rng::rng(200 + seed);
            let n = Normal::new(0.0, 1.0).unwrap();
            let p: Vec<Vec<f64>> = (0..60).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
            let g: Vec<usize> = (0..60).map(|i| i % 2).collect();
            let s = silhouette(&p, &g).unwrap().score;
            assert!(s.abs() < 0.1, "{s}");
            assert!((-1.0..=1.0).contains(&s));
        }
        let p = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.0], vec![3.0, 2.0]];
        let g = vec![0, 0, 1, 1];
        assert!((silhouette(&p, &g).unwrap().score - brute_silhouette(&p, &g)).abs() < 1e-12);
    }

    #[test]
    fn silhouette_excludes_singletons() {
        let p = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.1], vec![9.0]];
        let s = silhouette(&p, &[0, 0, 1, 1, 2]).unwrap();
        assert_eq!((s.excluded, s.n_points), (1, 4));
        assert!(matches!(silhouette(&p[..3], &[0, 0, 1]), Err(Error::Config(_))));
    }

    #[test]
    fn user_distance_geometry() {
        let users: Vec<String> = ["a", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let e = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 0.0]];
        let d = pairwise_user_distances(&e, &users).unwrap();
        let mut v: Vec<f64> = d.pairs.iter().map(|p| p.2).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![2.0, 2.0, 4.0]);
        let hist = d.histogram(2);
        assert_eq!(hist.iter().map(|h| h.2).sum::<usize>(), 3);

        let same = vec![vec![1.0, 1.0]; 4];
        let users: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        let d = pairwise_user_distances(&same, &users).unwrap();
        assert_eq!(d.pairs.len(), 6);
        assert!(d.pairs.iter().all(|p| p.2 == 0.0));
    }

    #[test]
    fn pca_on_a_line_and_isometry() {
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca2(&line).unwrap();
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-9), "{p:?}");
        assert!(p.explained_variance[0] >= p.explained_variance[1]);

        let mut rng = crate::rng::rng(11);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)]).collect();
        let p = pca2(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let a = euclidean(&pts[i], &pts[j]);
                let b = euclidean(&p.coords[i], &p.coords[j]);
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_variance_matches_dense_eigensolver() {
        let mut rng = crate::rng::rng(12);
        let scales = [5.0, 3.0, 1.0, 0.5, 0.2];
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let p = pca2(&pts).unwrap();
        let n = pts.len();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, 5);
        for (i, r) in pts.iter().enumerate() {
            for j in 0..5 {
                m[(i, j)] = r[j];
            }
        }
        let mean = m.row_mean();
        for i in 0..n {
            let row = m.row(i) - &mean;
            m.set_row(i, &row);
        }
        let cov = m.transpose() * &m / (n - 1) as f64;
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        assert!((p.explained_variance[0] - eig[0]).abs() < 1e-8);
        assert!((p.explained_variance[1] - eig[1]).abs() < 1e-8);
        assert!((p.total_variance - eig.iter().sum::<f64>()).abs() < 1e-8);
    }

    #[test]
    fn stat_feature_vector() {
        let f = stat_features(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(f, vec![3.0, 2f64.sqrt(), 2.0, 3.0, 4.0, 1.0, 5.0]);
    }

    #[test]
    fn hr_groups() {
        assert_eq!(hr_group(72.0), Some(0));
        assert_eq!(hr_group(115.0), Some(1));
        assert_eq!(hr_group(150.0), None);
    }
}
