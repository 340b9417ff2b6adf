//! Multilevel logistic model for repeated-pair votes, and image-level score
//! correlations.
//!
//! The probability that a rater picks the designated right image of pair
//! `j` is `sigmoid(beta0 + u)`, where `u ~ N(0, sigma_u^2)` is a random
//! intercept for the pair (baseline model) or for each (group, pair) cell.
//! The marginal likelihood integrates `u` out with adaptive Gauss-Hermite
//! quadrature centred on each cell's posterior mode. Parameters are found by
//! projected Newton steps on `(beta0, sigma_u)`; effects are empirical-Bayes
//! posterior means with posterior standard deviations as standard errors.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::z_for_level;
use crate::votes::{Grouping, PairKey, Rater, Vote};

pub const DEFAULT_NODES: usize = 25;
pub const MIN_NODES: usize = 15;
const REL_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;
/// Beyond this random-effect scale the fit is treated as separated.
const SIGMA_DIVERGED: f64 = 50.0;
/// Prior variance of the weak Gaussian penalty used under separation.
pub const SEPARATION_PENALTY_VAR: f64 = 100.0;

/// Gauss-Hermite nodes and weights for the weight function `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Votes on one pair from one group: `k` of `n` picked the right image.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub pair: PairKey,
    pub group: Option<String>,
    pub n: usize,
    pub k: usize,
}

impl Cell {
    pub fn is_separated(&self) -> bool {
        self.k == 0 || self.k == self.n
    }
}

/// Orientation of each pair: the image that counts as "right". Pairs not
/// listed use the lexicographically larger id.
pub type Orientation = HashMap<PairKey, String>;

/// Groups decisive votes into model cells. With a grouping, votes from
/// sessions that did not report the attribute are dropped.
pub fn build_cells(
    votes: &[Vote],
    grouping: Option<(Grouping, &[Rater])>,
    orientation: &Orientation,
) -> Vec<Cell> {
    let levels: Option<HashMap<&str, &'static str>> = grouping.map(|(g, raters)| {
        raters
            .iter()
            .filter_map(|r| Some((r.session_id.as_str(), g.level(r.demographics.as_ref()?)?)))
            .collect()
    });
    let mut cells: BTreeMap<(PairKey, Option<&'static str>), (usize, usize)> = BTreeMap::new();
    for v in votes {
        let Some(winner) = v.winner() else { continue };
        let group = match &levels {
            None => None,
            Some(map) => match map.get(v.session_id.as_str()) {
                Some(&l) => Some(l),
                None => continue,
            },
        };
        let key = v.pair();
        let right = orientation.get(&key).map_or(key.1.as_str(), String::as_str);
        let y = usize::from(winner == right);
        let e = cells.entry((key.clone(), group)).or_default();
        e.0 += 1;
        e.1 += y;
    }
    cells
        .into_iter()
        .map(|((pair, group), (n, k))| Cell {
            pair,
            group: group.map(str::to_string),
            n,
            k,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct CellEval {
    log_lik: f64,
    d_beta: f64,
    d_sigma: f64,
    mean_z: f64,
    sd_z: f64,
}

/// Quadrature rule for one cell's marginal likelihood.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("quadrature needs at least one node"));
        }
        let (x, w) = gauss_hermite(n);
        let log_weights = x.iter().zip(&w).map(|(x, w)| w.ln() + x * x).collect();
        Ok(Quadrature { nodes: x, log_weights })
    }

    fn eval(&self, k: f64, n: f64, beta: f64, sigma: f64) -> CellEval {
        // log integrand in the standardized effect z, up to -log(2 pi)/2
        let g = |z: f64| {
            let eta = beta + sigma * z;
            k * eta - n * softplus(eta) - 0.5 * z * z
        };
        let mut z = 0.0;
        for _ in 0..100 {
            let p = sigmoid(beta + sigma * z);
            let grad = sigma * (k - n * p) - z;
            let curv = sigma * sigma * n * p * (1.0 - p) + 1.0;
            let step = grad / curv;
            z += step;
            if step.abs() < 1e-13 * (1.0 + z.abs()) {
                break;
            }
        }
        let p = sigmoid(beta + sigma * z);
        let curv = sigma * sigma * n * p * (1.0 - p) + 1.0;
        let scale = std::f64::consts::SQRT_2 / curv.sqrt();

        let zs: Vec<f64> = self.nodes.iter().map(|x| z + scale * x).collect();
        let lw: Vec<f64> = zs.iter().zip(&self.log_weights).map(|(&zm, lw)| lw + g(zm)).collect();
        let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lw.iter().map(|l| (l - top).exp()).sum();
        let log_int = top + sum.ln();

        let (mut d_beta, mut d_sigma, mut m1, mut m2) = (0.0, 0.0, 0.0, 0.0);
        for (&zm, &l) in zs.iter().zip(&lw) {
            let om = (l - log_int).exp();
            let resid = k - n * sigmoid(beta + sigma * zm);
            d_beta += om * resid;
            d_sigma += om * zm * resid;
            m1 += om * zm;
            m2 += om * zm * zm;
        }
        CellEval {
            log_lik: scale.ln() + log_int - 0.5 * (2.0 * PI).ln(),
            d_beta,
            d_sigma,
            mean_z: m1,
            sd_z: (m2 - m1 * m1).max(0.0).sqrt(),
        }
    }
}

/// Marginal log-likelihood and its gradient in `(beta0, sigma_u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub log_lik: f64,
    pub grad: [f64; 2],
}

/// The objective the fitter maximises, exposed for diagnostics.
pub fn marginal(cells: &[Cell], beta0: f64, sigma_u: f64, quad: &Quadrature, penalty_var: Option<f64>) -> Marginal {
    let mut out = Marginal {
        log_lik: 0.0,
        grad: [0.0; 2],
    };
    for c in cells {
        let e = quad.eval(c.k as f64, c.n as f64, beta0, sigma_u);
        out.log_lik += e.log_lik;
        out.grad[0] += e.d_beta;
        out.grad[1] += e.d_sigma;
    }
    if let Some(v) = penalty_var {
        out.log_lik -= (beta0 * beta0 + sigma_u * sigma_u) / (2.0 * v);
        out.grad[0] -= beta0 / v;
        out.grad[1] -= sigma_u / v;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effect {
    pub pair: String,
    pub group: Option<String>,
    pub n: usize,
    pub k: usize,
    pub estimate: f64,
    pub se: f64,
    /// Unanimous cell.
    pub separation: bool,
}

impl Effect {
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let z = z_for_level(level);
        (self.estimate - z * self.se, self.estimate + z * self.se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlmFit {
    /// Global log-odds of choosing the right image.
    pub beta0: f64,
    pub sigma_u: f64,
    pub log_lik: f64,
    pub converged: bool,
    /// The separation penalty was needed to keep estimates finite.
    pub penalized: bool,
    pub iterations: usize,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, Copy)]
pub struct MlmOptions {
    pub nodes: usize,
}

impl Default for MlmOptions {
    fn default() -> Self {
        MlmOptions { nodes: DEFAULT_NODES }
    }
}

struct Optimum {
    beta0: f64,
    sigma: f64,
    log_lik: f64,
    converged: bool,
    iterations: usize,
}

fn maximize(cells: &[Cell], quad: &Quadrature, penalty: Option<f64>) -> Optimum {
    let total_n: usize = cells.iter().map(|c| c.n).sum();
    let total_k: usize = cells.iter().map(|c| c.k).sum();
    let pooled = (total_k as f64 + 0.5) / (total_n as f64 + 1.0);
    let mut x = [(pooled / (1.0 - pooled)).ln(), 0.5];
    let eval = |x: [f64; 2]| marginal(cells, x[0], x[1], quad, penalty);
    let mut cur = eval(x);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let g = cur.grad;
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            let step = 1e-5 * (1.0 + x[i].abs());
            let (mut up, mut dn) = (x, x);
            up[i] += step;
            dn[i] -= step;
            let (gu, gd) = (eval(up).grad, eval(dn).grad);
            for j in 0..2 {
                h[j][i] = (gu[j] - gd[j]) / (2.0 * step);
            }
        }
        let sym = 0.5 * (h[0][1] + h[1][0]);
        let det = h[0][0] * h[1][1] - sym * sym;
        let dir = if h[0][0] < 0.0 && det > 0.0 {
            [
                -(h[1][1] * g[0] - sym * g[1]) / det,
                -(-sym * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            // not concave here: scaled gradient ascent
            let s0 = 1.0 / (h[0][0].abs() + 1.0);
            let s1 = 1.0 / (h[1][1].abs() + 1.0);
            [g[0] * s0, g[1] * s1]
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            // the likelihood is even in sigma, so reflecting keeps sigma >= 0
            let cand = [x[0] + t * dir[0], (x[1] + t * dir[1]).abs()];
            let e = eval(cand);
            if e.log_lik.is_finite() && e.log_lik >= cur.log_lik - 1e-12 * cur.log_lik.abs() {
                accepted = Some((cand, e));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, e)) = accepted else {
            converged = true;
            break;
        };
        let rel = (e.log_lik - cur.log_lik).abs() / cur.log_lik.abs().max(1e-300);
        x = cand;
        cur = e;
        if x[1] > SIGMA_DIVERGED {
            break;
        }
        if rel < REL_TOL && t == 1.0 {
            converged = true;
            break;
        }
    }
    Optimum {
        beta0: x[0],
        sigma: x[1],
        log_lik: cur.log_lik,
        converged,
        iterations,
    }
}

/// Fits the model to prepared cells.
pub fn fit_cells(cells: &[Cell], options: MlmOptions) -> Result<MlmFit> {
    if options.nodes < MIN_NODES {
        return Err(Error::invalid(format!("need at least {MIN_NODES} quadrature nodes")));
    }
    let mut pairs: HashMap<&PairKey, usize> = HashMap::new();
    for c in cells {
        *pairs.entry(&c.pair).or_default() += c.n;
    }
    if pairs.values().filter(|&&n| n >= 2).count() < 2 {
        return Err(Error::invalid("need at least two image pairs with two or more votes each"));
    }
    let quad = Quadrature::new(options.nodes)?;

    let mut penalized = false;
    let mut opt = maximize(cells, &quad, None);
    if !(opt.converged && opt.sigma <= SIGMA_DIVERGED && opt.beta0.abs() <= SIGMA_DIVERGED) {
        opt = maximize(cells, &quad, Some(SEPARATION_PENALTY_VAR));
        penalized = true;
    }

    let effects = cells
        .iter()
        .map(|c| {
            let e = quad.eval(c.k as f64, c.n as f64, opt.beta0, opt.sigma);
            Effect {
                pair: c.pair.to_string(),
                group: c.group.clone(),
                n: c.n,
                k: c.k,
                estimate: opt.sigma * e.mean_z,
                se: opt.sigma * e.sd_z,
                separation: c.is_separated(),
            }
        })
        .collect();
    Ok(MlmFit {
        beta0: opt.beta0,
        sigma_u: opt.sigma,
        log_lik: opt.log_lik,
        converged: opt.converged,
        penalized,
        iterations: opt.iterations,
        effects,
    })
}

/// Builds cells from votes and fits the model.
pub fn fit_mlm(
    votes: &[Vote],
    grouping: Option<(Grouping, &[Rater])>,
    orientation: &Orientation,
    options: MlmOptions,
) -> Result<MlmFit> {
    fit_cells(&build_cells(votes, grouping, orientation), options)
}

/// Cells whose interval at `level` excludes zero, by decreasing |estimate|.
pub fn significant_effects(fit: &MlmFit, level: f64) -> Vec<&Effect> {
    let mut out: Vec<&Effect> = fit
        .effects
        .iter()
        .filter(|e| {
            let (lo, hi) = e.interval(level);
            lo > 0.0 || hi < 0.0
        })
        .collect();
    out.sort_by(|a, b| b.estimate.abs().total_cmp(&a.estimate.abs()));
    out
}

/// Writes `pair_id,group,estimate,se,ci_lo,ci_hi,significant` at 95%.
pub fn write_effects<W: Write>(fit: &MlmFit, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair_id", "group", "estimate", "se", "ci_lo", "ci_hi", "significant"])?;
    for e in &fit.effects {
        let (lo, hi) = e.interval(0.95);
        w.write_record([
            e.pair.clone(),
            e.group.clone().unwrap_or_default(),
            e.estimate.to_string(),
            e.se.to_string(),
            lo.to_string(),
            hi.to_string(),
            (lo > 0.0 || hi < 0.0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrMatrix {
    pub names: Vec<String>,
    /// `None` where a table has zero variance on the shared ids.
    pub r: Vec<Vec<Option<f64>>>,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between every pair of named score tables, each on
/// the ids the two tables share.
pub fn pearson_corr(tables: &[(String, BTreeMap<String, f64>)]) -> Result<CorrMatrix> {
    if tables.len() < 2 {
        return Err(Error::invalid("need at least two score tables"));
    }
    let m = tables.len();
    let mut r = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let (a, b): (Vec<f64>, Vec<f64>) = tables[i]
                .1
                .iter()
                .filter_map(|(id, &x)| tables[j].1.get(id).map(|&y| (x, y)))
                .unzip();
            if a.len() < 3 {
                return Err(Error::invalid(format!(
                    "tables `{}` and `{}` share fewer than 3 image ids",
                    tables[i].0, tables[j].0
                )));
            }
            let v = if i == j {
                pearson(&a, &b).map(|_| 1.0)
            } else {
                pearson(&a, &b)
            };
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(CorrMatrix {
        names: tables.iter().map(|t| t.0.clone()).collect(),
        r,
    })
}

impl CorrMatrix {
    /// Square CSV with a leading name column; undefined entries are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["table".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.r) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
