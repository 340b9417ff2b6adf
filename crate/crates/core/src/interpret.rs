//! Which scene features separate the best- and worst-scoring images.
//!
//! Images in the top and bottom score deciles are labelled, their
//! segmentation/detection features are standardized, and an L2-regularized
//! logistic regression is cross-validated. The signed coefficients on the
//! standardized scale are the interpretable output. An L1-penalized fit
//! screens features beforehand.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::quantile_deciles;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_L2: f64 = 1.0;
const GRAD_TOL: f64 = 1e-8;
/// Coefficients below this magnitude count as zero in the L1 screen.
const ZERO_COEF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Share of image pixels with a segmentation label, in `[0, 1]`.
    Fraction,
    /// Number of detected objects, `>= 0`.
    Count,
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(FeatureKind::Fraction),
            "count" => Ok(FeatureKind::Count),
            other => Err(Error::invalid(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Fraction => "fraction",
            FeatureKind::Count => "count",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    /// Reads `image_id,<name_1>,...,<name_p>` and its `feature,kind` sidecar.
    pub fn read<R: Read, M: Read>(table: R, meta: M, source: &Path) -> Result<Self> {
        let mut kinds_by_name = HashMap::new();
        let mut mr = csv::Reader::from_reader(meta);
        for (i, rec) in mr.records().enumerate() {
            let rec = rec?;
            let kind = rec
                .get(1)
                .ok_or_else(|| Error::invalid(format!("feature metadata line {} lacks a kind", i + 2)))?
                .parse::<FeatureKind>()?;
            kinds_by_name.insert(rec[0].to_string(), kind);
        }

        let mut rdr = csv::Reader::from_reader(table);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("image_id") {
            return Err(Error::parse(source, 1, "first column must be image_id"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let kinds = names
            .iter()
            .map(|n| {
                kinds_by_name
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("feature `{n}` missing from metadata")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source, line, e.to_string()))?;
            for ((v, k), n) in vals.iter().zip(&kinds).zip(&names) {
                let ok = match k {
                    FeatureKind::Fraction => (0.0..=1.0).contains(v),
                    FeatureKind::Count => *v >= 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(Error::parse(source, line, format!("{n} = {v} invalid for a {k}")));
                }
            }
            if rows.insert(rec[0].to_string(), vals).is_some() {
                return Err(Error::DuplicateImage(rec[0].to_string()));
            }
        }
        Ok(FeatureTable { names, kinds, rows })
    }

    /// Restricts the table to the named columns, in the given order.
    pub fn select(&self, keep: &[String]) -> Result<FeatureTable> {
        let idx = keep
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::invalid(format!("unknown feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            names: keep.to_vec(),
            kinds: idx.iter().map(|&i| self.kinds[i]).collect(),
            rows: self
                .rows
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Top,
    Bottom,
}

/// Labels images in the lowest and highest score deciles.
pub fn label_extremes(scaled: &BTreeMap<String, f64>) -> Result<BTreeMap<String, Extreme>> {
    if scaled.len() < 20 {
        return Err(Error::invalid(format!("need at least 20 scored images, got {}", scaled.len())));
    }
    let values: Vec<f64> = scaled.values().copied().collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::Degenerate("all scores are identical".into()));
    }
    let deciles = quantile_deciles(&values);
    Ok(scaled
        .keys()
        .zip(deciles)
        .filter_map(|(id, d)| match d {
            1 => Some((id.clone(), Extreme::Bottom)),
            10 => Some((id.clone(), Extreme::Top)),
            _ => None,
        })
        .collect())
}

/// Labelled design matrix, rows sorted by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    /// `true` for the top decile.
    pub y: Vec<bool>,
}

impl Dataset {
    /// Joins features with labels; labelled images without features are skipped.
    pub fn join(features: &FeatureTable, labels: &BTreeMap<String, Extreme>) -> Dataset {
        let mut ds = Dataset {
            ids: Vec::new(),
            feature_names: features.names.clone(),
            x: Vec::new(),
            y: Vec::new(),
        };
        for (id, label) in labels {
            if let Some(row) = features.rows.get(id) {
                ds.ids.push(id.clone());
                ds.x.push(row.clone());
                ds.y.push(*label == Extreme::Top);
            }
        }
        ds
    }

    pub fn new(ids: Vec<String>, feature_names: Vec<String>, x: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Dataset> {
        if ids.len() != x.len() || ids.len() != y.len() {
            return Err(Error::invalid("ids, rows and labels differ in length"));
        }
        if x.iter().any(|r| r.len() != feature_names.len()) {
            return Err(Error::invalid("row width does not match feature names"));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        Ok(Dataset {
            ids: order.iter().map(|&i| ids[i].clone()).collect(),
            feature_names,
            x: order.iter().map(|&i| x[i].clone()).collect(),
            y: order.iter().map(|&i| y[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn check_classes(&self) -> Result<(usize, usize)> {
        let pos = self.y.iter().filter(|&&b| b).count();
        let neg = self.y.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::invalid("logistic regression needs both classes"));
        }
        Ok((pos, neg))
    }
}

/// Per-column centring and scaling learned on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Standardizer {
        let p = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // constant columns are centred but left unscaled
        let scale = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Penalized negative log-likelihood
/// `sum_i log(1 + exp(-s_i eta_i)) + l2/2 |w|^2` with `s_i = +-1` and an
/// unpenalized intercept `params[0]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [bool],
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn eta(&self, params: &[f64], row: &[f64]) -> f64 {
        params[0] + row.iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let mut f = 0.0;
        for (row, &y) in self.x.iter().zip(self.y) {
            let eta = self.eta(params, row);
            f += if y { log1p_exp(-eta) } else { log1p_exp(eta) };
        }
        f + 0.5 * self.l2 * params[1..].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        for (row, &y) in self.x.iter().zip(self.y) {
            let r = sigmoid(self.eta(params, row)) - f64::from(u8::from(y));
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        for (gj, wj) in g[1..].iter_mut().zip(&params[1..]) {
            *gj += self.l2 * wj;
        }
        g
    }

    fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let d = params.len();
        let mut h = DMatrix::zeros(d, d);
        let mut aug = vec![1.0; d];
        for row in self.x {
            let p = sigmoid(self.eta(params, row));
            let w = p * (1.0 - p);
            aug[1..].copy_from_slice(row);
            for a in 0..d {
                let wa = w * aug[a];
                for b in a..d {
                    h[(a, b)] += wa * aug[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..d {
            h[(j, j)] += self.l2;
        }
        h
    }

    /// Newton's method with backtracking, until the gradient norm falls
    /// below `1e-8`. Returns `[intercept, w_1, ..., w_p]`.
    pub fn minimize(&self) -> Result<Vec<f64>> {
        let d = self.x.first().map_or(0, |r| r.len()) + 1;
        let mut params = vec![0.0; d];
        let mut f = self.value(&params);
        for _ in 0..200 {
            let g = self.gradient(&params);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < GRAD_TOL {
                return Ok(params);
            }
            let mut h = self.hessian(&params);
            // tiny ridge on the intercept keeps the system solvable
            h[(0, 0)] += 1e-12;
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::invalid("logistic Hessian is not positive definite"))?;
            let step = chol.solve(&DVector::from_vec(g.clone()));
            let slope: f64 = g.iter().zip(step.iter()).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
                let fc = self.value(&cand);
                // near the optimum the decrease drops below the rounding of f
                let noise = 8.0 * f64::EPSILON * f.abs();
                if fc <= f - 1e-4 * t * slope + noise || t < 1e-10 {
                    params = cand;
                    f = fc;
                    break;
                }
                t *= 0.5;
            }
        }
        let g = self.gradient(&params);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < GRAD_TOL * 1e3 {
            Ok(params)
        } else {
            Err(Error::invalid("logistic regression did not converge"))
        }
    }
}

/// Standardizes on `train`, fits, returns the model pieces.
fn fit_standardized(ds: &Dataset, train: &[usize], l2: f64) -> Result<(Standardizer, Vec<f64>)> {
    let rows: Vec<&[f64]> = train.iter().map(|&i| ds.x[i].as_slice()).collect();
    let st = Standardizer::fit(&rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
    let y: Vec<bool> = train.iter().map(|&i| ds.y[i]).collect();
    let params = LogisticObjective { x: &x, y: &y, l2 }.minimize()?;
    Ok((st, params))
}

fn predict(st: &Standardizer, params: &[f64], row: &[f64]) -> bool {
    let z = st.apply(row);
    params[0] + z.iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>() > 0.0
}

/// Stratified fold index per row. Rows are taken in id order, so the folds
/// do not depend on input row order.
pub fn stratified_folds(ds: &Dataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; ds.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.y[i] == class).collect();
        idx.sort_by(|&a, &b| ds.ids[a].cmp(&ds.ids[b]));
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: usize,
    pub l2: f64,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub n: usize,
    pub intercept: f64,
    /// (feature, coefficient on the standardized scale) from the full-data fit.
    pub coefficients: Vec<(String, f64)>,
}

impl CvReport {
    /// Writes `feature,coef,abs_rank` with rank 1 the largest |coef|.
    pub fn write_coefficients<W: Write>(&self, writer: W) -> Result<()> {
        let mut order: Vec<usize> = (0..self.coefficients.len()).collect();
        order.sort_by(|&a, &b| {
            self.coefficients[b]
                .1
                .abs()
                .total_cmp(&self.coefficients[a].1.abs())
                .then(a.cmp(&b))
        });
        let mut rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r + 1;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "coef", "abs_rank"])?;
        for ((name, c), r) in self.coefficients.iter().zip(rank) {
            w.write_record([name.clone(), c.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stratified k-fold cross-validation of the L2 logistic model, plus the
/// coefficients of a fit on all rows.
pub fn fit_logistic_cv(ds: &Dataset, folds: usize, l2: f64, seed: u64) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    if !(l2 >= 0.0) {
        return Err(Error::invalid("l2 must be non-negative"));
    }
    let ds = Dataset::new(ds.ids.clone(), ds.feature_names.clone(), ds.x.clone(), ds.y.clone())?;
    let (pos, neg) = ds.check_classes()?;
    if pos < folds || neg < folds {
        return Err(Error::invalid(format!(
            "each class needs at least {folds} rows for stratified folds (have {pos} top, {neg} bottom)"
        )));
    }
    let fold_of = stratified_folds(&ds, folds, seed);
    let mut fold_accuracy = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] == f).collect();
        let (st, params) = fit_standardized(&ds, &train, l2)?;
        let correct = test.iter().filter(|&&i| predict(&st, &params, &ds.x[i]) == ds.y[i]).count();
        fold_accuracy.push(correct as f64 / test.len() as f64);
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let (_, params) = fit_standardized(&ds, &all, l2)?;
    Ok(CvReport {
        folds,
        l2,
        mean_accuracy: fold_accuracy.iter().sum::<f64>() / folds as f64,
        fold_accuracy,
        n: ds.len(),
        intercept: params[0],
        coefficients: ds.feature_names.iter().cloned().zip(params[1..].iter().copied()).collect(),
    })
}

/// Out-of-fold predictions, for checks that compare models fold by fold.
pub fn cv_predictions(ds: &Dataset, folds: usize, l2: f64, seed: u64) -> Result<BTreeMap<String, bool>> {
    let ds = Dataset::new(ds.ids.clone(), ds.feature_names.clone(), ds.x.clone(), ds.y.clone())?;
    ds.check_classes()?;
    let fold_of = stratified_folds(&ds, folds, seed);
    let mut out = BTreeMap::new();
    for f in 0..folds {
        let train: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != f).collect();
        let (st, params) = fit_standardized(&ds, &train, l2)?;
        for i in (0..ds.len()).filter(|&i| fold_of[i] == f) {
            out.insert(ds.ids[i].clone(), predict(&st, &params, &ds.x[i]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub l1_strength: f64,
    pub retained: Vec<String>,
    /// L1 coefficients on the standardized scale, one per input feature.
    pub coefficients: Vec<(String, f64)>,
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Mean log-loss plus `l1 * |w|_1` on standardized features, minimized by
/// iteratively reweighted least squares with cyclic coordinate descent.
fn l1_logistic(x: &[Vec<f64>], y: &[bool], l1: f64) -> Vec<f64> {
    let n = x.len();
    let p = x.first().map_or(0, |r| r.len());
    let nf = n as f64;
    let yv: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    let objective = |b0: f64, w: &[f64]| -> f64 {
        let mut f = 0.0;
        for (row, &yi) in x.iter().zip(&yv) {
            let eta = b0 + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            f += log1p_exp(eta) - yi * eta;
        }
        f / nf + l1 * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut b0 = 0.0;
    let mut w = vec![0.0; p];
    let mut f = objective(b0, &w);
    for _ in 0..100 {
        let eta: Vec<f64> = x
            .iter()
            .map(|row| b0 + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let wt: Vec<f64> = prob.iter().map(|&q| (q * (1.0 - q)).max(1e-5)).collect();
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (yv[i] - prob[i]) / wt[i]).collect();

        let (mut nb0, mut nw) = (b0, w.clone());
        let mut resid: Vec<f64> = (0..n)
            .map(|i| z[i] - nb0 - x[i].iter().zip(&nw).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let denom: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| wt[i] * x[i][j] * x[i][j]).sum::<f64>() / nf)
            .collect();
        let wsum: f64 = wt.iter().sum::<f64>() / nf;
        for _ in 0..1000 {
            let mut max_delta = 0.0f64;
            let d0 = (0..n).map(|i| wt[i] * resid[i]).sum::<f64>() / nf / wsum;
            nb0 += d0;
            for r in resid.iter_mut() {
                *r -= d0;
            }
            max_delta = max_delta.max(d0.abs());
            for j in 0..p {
                if denom[j] == 0.0 {
                    continue;
                }
                let old = nw[j];
                let rho = (0..n).map(|i| wt[i] * x[i][j] * (resid[i] + x[i][j] * old)).sum::<f64>() / nf;
                let new = soft_threshold(rho, l1) / denom[j];
                if new != old {
                    let d = new - old;
                    for i in 0..n {
                        resid[i] -= x[i][j] * d;
                    }
                    nw[j] = new;
                    max_delta = max_delta.max(d.abs());
                }
            }
            if max_delta < 1e-10 {
                break;
            }
        }

        // damp the Newton-like step if it overshoots
        let mut t = 1.0;
        let (mut cb0, mut cw) = (nb0, nw.clone());
        let mut fc = objective(cb0, &cw);
        while fc > f && t > 1e-6 {
            t *= 0.5;
            cb0 = b0 + t * (nb0 - b0);
            cw = w.iter().zip(&nw).map(|(a, b)| a + t * (b - a)).collect();
            fc = objective(cb0, &cw);
        }
        let change = (cb0 - b0).abs().max(cw.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        b0 = cb0;
        w = cw;
        let rel = (f - fc).abs() / f.abs().max(1e-300);
        f = fc;
        if change < 1e-9 || rel < 1e-12 {
            break;
        }
    }
    w
}

/// Keeps the features with non-zero coefficients in an L1-penalized
/// logistic fit on standardized features.
pub fn select_features(ds: &Dataset, l1_strength: f64) -> Result<Selection> {
    if !(l1_strength >= 0.0) {
        return Err(Error::invalid("l1_strength must be non-negative"));
    }
    let ds = Dataset::new(ds.ids.clone(), ds.feature_names.clone(), ds.x.clone(), ds.y.clone())?;
    ds.check_classes()?;
    let rows: Vec<&[f64]> = ds.x.iter().map(Vec::as_slice).collect();
    let st = Standardizer::fit(&rows);
    let mut x: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
    // lasso ties between identical (or negated) columns are degenerate;
    // keep the first copy by zeroing the rest
    let p = ds.feature_names.len();
    for j in 1..p {
        let copy = (0..j).any(|k| {
            x.iter().all(|r| r[j] == r[k]) || x.iter().all(|r| r[j] == -r[k])
        });
        if copy {
            x.iter_mut().for_each(|r| r[j] = 0.0);
        }
    }
    let w = l1_logistic(&x, &ds.y, l1_strength);
    let coefficients: Vec<(String, f64)> = ds.feature_names.iter().cloned().zip(w).collect();
    let retained: Vec<String> = coefficients
        .iter()
        .filter(|(_, c)| c.abs() > ZERO_COEF)
        .map(|(n, _)| n.clone())
        .collect();
    if retained.is_empty() {
        return Err(Error::invalid(format!(
            "every coefficient shrank to zero at l1_strength = {l1_strength}; try a weaker penalty"
        )));
    }
    Ok(Selection {
        l1_strength,
        retained,
        coefficients,
    })
}
