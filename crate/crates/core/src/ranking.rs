//! TrueSkill scores for images from pairwise games, plus score scaling and
//! decile-balancing weights.
//!
//! Each image holds a Gaussian belief `N(mu, sigma^2)` over its latent
//! appeal. A game compares noisy performances `p = s + N(0, beta^2)`; the
//! winner's performance exceeds the loser's by more than the draw margin.
//! The posterior after one game is projected back to independent Gaussians
//! by moment matching, which yields the familiar `v`/`w` update.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::stats::{mean, normal_cdf, normal_pdf, quantile_deciles};
use crate::votes::Vote;

pub const MU0: f64 = 25.0;
pub const SIGMA0: f64 = 25.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillScore {
    pub mu: f64,
    pub sigma: f64,
}

impl SkillScore {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("invalid skill ({mu}, {sigma})")));
        }
        Ok(SkillScore { mu, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingParams {
    pub mu0: f64,
    pub sigma0: f64,
    /// Performance noise.
    pub beta: f64,
    /// Dynamics noise added to each prior before a game.
    pub tau: f64,
    /// Draw margin. Draws are never scored, so this is normally zero.
    pub epsilon: f64,
}

impl Default for RankingParams {
    fn default() -> Self {
        RankingParams {
            mu0: MU0,
            sigma0: SIGMA0,
            beta: SIGMA0 / 2.0,
            tau: 0.0,
            epsilon: 0.0,
        }
    }
}

impl RankingParams {
    pub fn prior(&self) -> SkillScore {
        SkillScore {
            mu: self.mu0,
            sigma: self.sigma0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.mu0, self.sigma0, self.beta, self.tau, self.epsilon]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.sigma0 <= 0.0 || self.beta <= 0.0 || self.tau < 0.0 || self.epsilon < 0.0 {
            return Err(Error::invalid("ranking parameters need sigma0 > 0, beta > 0, tau >= 0, epsilon >= 0"));
        }
        Ok(())
    }
}

/// Below this the normal CDF is evaluated through the Mills-ratio continued
/// fraction instead of `phi / Phi`.
const TAIL_CUTOFF: f64 = -8.0;
const CF_TERMS: usize = 64;

/// Continued fraction `x + 1/(x + 2/(x + 3/(x + ...)))` evaluated from the
/// tail. Returns the full value and the value one level down, so callers can
/// form `v + t` without cancellation.
fn mills_fraction(x: f64) -> (f64, f64) {
    let mut tail = x;
    for k in (2..=CF_TERMS).rev() {
        tail = x + k as f64 / tail;
    }
    (x + 1.0 / tail, tail)
}

/// `v(t) = phi(t) / Phi(t)`: additive mean correction for a win.
pub fn v_win(t: f64) -> f64 {
    if t < TAIL_CUTOFF {
        mills_fraction(-t).0
    } else {
        normal_pdf(t) / normal_cdf(t)
    }
}

/// `w(t) = v(t) (v(t) + t)`: multiplicative variance correction, in `(0, 1)`.
pub fn w_win(t: f64) -> f64 {
    if t < TAIL_CUTOFF {
        let (v, tail) = mills_fraction(-t);
        // v + t == 1 / tail exactly in the continued fraction
        v / tail
    } else {
        let v = v_win(t);
        v * (v + t)
    }
}

/// Posterior beliefs after `winner` beats `loser`.
pub fn update(winner: SkillScore, loser: SkillScore, params: &RankingParams) -> Result<(SkillScore, SkillScore)> {
    params.validate()?;
    for s in [winner, loser] {
        if !(s.mu.is_finite() && s.sigma.is_finite() && s.sigma > 0.0) {
            return Err(Error::invalid(format!("non-finite skill ({}, {})", s.mu, s.sigma)));
        }
    }
    let tau2 = params.tau * params.tau;
    let var_w = winner.sigma * winner.sigma + tau2;
    let var_l = loser.sigma * loser.sigma + tau2;
    let c2 = 2.0 * params.beta * params.beta + var_w + var_l;
    let c = c2.sqrt();
    let t = (winner.mu - loser.mu - params.epsilon) / c;
    let v = v_win(t);
    let w = w_win(t);

    let mu_w = winner.mu + var_w / c * v;
    let mu_l = loser.mu - var_l / c * v;
    let sigma_w = (var_w * (1.0 - var_w / c2 * w)).sqrt();
    let sigma_l = (var_l * (1.0 - var_l / c2 * w)).sqrt();
    Ok((
        SkillScore { mu: mu_w, sigma: sigma_w },
        SkillScore { mu: mu_l, sigma: sigma_l },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub scores: BTreeMap<String, SkillScore>,
    pub mean_sigma: f64,
    pub games: usize,
}

/// Scores every image from its prior through all decisive votes, applied in
/// `server_ts` order with ties broken by `vote_id`.
pub fn rank_all(votes: &[Vote], images: &[String], params: &RankingParams) -> Result<Ranking> {
    params.validate()?;
    let mut scores: HashMap<&str, SkillScore> = images.iter().map(|id| (id.as_str(), params.prior())).collect();
    let mut order: Vec<&Vote> = votes.iter().filter(|v| v.choice.is_decisive()).collect();
    order.sort_by(|a, b| a.server_ts.cmp(&b.server_ts).then(a.vote_id.cmp(&b.vote_id)));
    for v in &order {
        let (w_id, l_id) = (v.winner().unwrap(), v.loser().unwrap());
        let w = *scores.get(w_id).ok_or_else(|| Error::UnknownImage(w_id.to_string()))?;
        let l = *scores.get(l_id).ok_or_else(|| Error::UnknownImage(l_id.to_string()))?;
        let (w2, l2) = update(w, l, params)?;
        scores.insert(w_id, w2);
        scores.insert(l_id, l2);
    }
    let scores: BTreeMap<String, SkillScore> = scores.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mean_sigma = if scores.is_empty() {
        params.sigma0
    } else {
        mean(&scores.values().map(|s| s.sigma).collect::<Vec<_>>())
    };
    Ok(Ranking {
        scores,
        mean_sigma,
        games: order.len(),
    })
}

/// Affine map of `mu` onto `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreScale {
    pub min: f64,
    pub max: f64,
}

impl ScoreScale {
    pub fn fit<'a>(mus: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &m in mus {
            min = min.min(m);
            max = max.max(m);
        }
        if !(max > min) {
            return Err(Error::Degenerate("all scores are identical".into()));
        }
        Ok(ScoreScale { min, max })
    }

    pub fn apply(&self, mu: f64) -> f64 {
        10.0 * (mu - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        self.min + scaled / 10.0 * (self.max - self.min)
    }
}

pub fn scale_scores(scores: &BTreeMap<String, SkillScore>) -> Result<(BTreeMap<String, f64>, ScoreScale)> {
    let mus: Vec<f64> = scores.values().map(|s| s.mu).collect();
    let scale = ScoreScale::fit(&mus)?;
    Ok((scores.iter().map(|(k, s)| (k.clone(), scale.apply(s.mu))).collect(), scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileWeights {
    pub decile: BTreeMap<String, u8>,
    /// `N / (10 * n_decile)`: each occupied decile carries total weight N/10.
    pub weight: BTreeMap<String, f64>,
}

/// Oversampling weights that give each score decile equal total weight.
pub fn decile_weights(scaled: &BTreeMap<String, f64>) -> Result<DecileWeights> {
    if scaled.len() < 10 {
        return Err(Error::invalid(format!("decile weights need at least 10 images, got {}", scaled.len())));
    }
    let values: Vec<f64> = scaled.values().copied().collect();
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 10 {
        log::warn!(
            "only {} distinct scores; tied deciles are collapsed into shared buckets",
            distinct.len()
        );
    }
    let deciles = quantile_deciles(&values);
    let mut counts = [0usize; 11];
    for &d in &deciles {
        counts[d as usize] += 1;
    }
    let n = values.len() as f64;
    let mut decile = BTreeMap::new();
    let mut weight = BTreeMap::new();
    for (id, &d) in scaled.keys().zip(&deciles) {
        decile.insert(id.clone(), d);
        weight.insert(id.clone(), n / (10.0 * counts[d as usize] as f64));
    }
    Ok(DecileWeights { decile, weight })
}

/// Writes `image_id,mu,sigma,scaled,decile,weight`.
pub fn write_scores<W: Write>(
    ranking: &Ranking,
    scaled: &BTreeMap<String, f64>,
    weights: &DecileWeights,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "mu", "sigma", "scaled", "decile", "weight"])?;
    for (id, s) in &ranking.scores {
        w.write_record([
            id.clone(),
            s.mu.to_string(),
            s.sigma.to_string(),
            scaled[id].to_string(),
            weights.decile[id].to_string(),
            weights.weight[id].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> SkillScore {
        RankingParams::default().prior()
    }

    #[test]
    fn fresh_scores_are_exact() {
        let p = prior();
        assert_eq!(p.mu, 25.0);
        assert_eq!(p.sigma, 25.0 / 3.0);
        let images: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let r = rank_all(&[], &images, &RankingParams::default()).unwrap();
        assert_eq!(r.mean_sigma, 25.0 / 3.0);
        assert!(r.scores.values().all(|s| *s == p));
    }

    #[test]
    fn symmetric_update_from_equal_priors() {
        let (w, l) = update(prior(), prior(), &RankingParams::default()).unwrap();
        assert!(((w.mu - 25.0) + (l.mu - 25.0)).abs() < 1e-12);
        assert_eq!(w.sigma, l.sigma);
        assert!(w.mu > 25.0 && l.mu < 25.0);
        assert!(w.sigma < prior().sigma);
    }

    #[test]
    fn upsets_move_more() {
        let params = RankingParams::default();
        let strong = SkillScore { mu: 32.0, sigma: 5.0 };
        let weak = SkillScore { mu: 18.0, sigma: 5.0 };
        let (w_exp, _) = update(strong, weak, &params).unwrap();
        let (w_up, _) = update(weak, strong, &params).unwrap();
        assert!((w_up.mu - weak.mu).abs() > (w_exp.mu - strong.mu).abs());
    }

    #[test]
    fn tail_branch_is_continuous() {
        let below = v_win(TAIL_CUTOFF - 1e-9);
        let above = v_win(TAIL_CUTOFF + 1e-9);
        assert!((below - above).abs() < 1e-7);
        let wb = w_win(TAIL_CUTOFF - 1e-9);
        let wa = w_win(TAIL_CUTOFF + 1e-9);
        assert!((wb - wa).abs() < 1e-7);
        // deep tail stays finite and in range
        let w = w_win(-60.0);
        assert!(w > 0.0 && w < 1.0);
        assert!((v_win(-60.0) - 60.0).abs() < 0.02);
    }

    #[test]
    fn rejects_non_finite() {
        let bad = SkillScore { mu: f64::NAN, sigma: 1.0 };
        assert!(update(bad, prior(), &RankingParams::default()).is_err());
    }

    #[test]
    fn scaling_examples() {
        let scores: BTreeMap<String, SkillScore> = [("a", 20.0), ("b", 25.0), ("c", 30.0)]
            .into_iter()
            .map(|(k, mu)| (k.to_string(), SkillScore { mu, sigma: 1.0 }))
            .collect();
        let (scaled, _) = scale_scores(&scores).unwrap();
        assert_eq!(scaled["a"], 0.0);
        assert_eq!(scaled["b"], 5.0);
        assert_eq!(scaled["c"], 10.0);

        let flat: BTreeMap<String, SkillScore> =
            (0..3).map(|i| (i.to_string(), SkillScore { mu: 1.0, sigma: 1.0 })).collect();
        assert!(matches!(scale_scores(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn uniform_scores_weigh_one() {
        let scaled: BTreeMap<String, f64> = (0..1000).map(|i| (format!("{i:04}"), i as f64 / 100.0)).collect();
        let dw = decile_weights(&scaled).unwrap();
        assert!(dw.weight.values().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn heavy_decile_weighs_point_two() {
        // half the images tie at the bottom and share one bucket
        let mut scaled = BTreeMap::new();
        for i in 0..100 {
            let v = if i < 50 { 0.0 } else { i as f64 };
            scaled.insert(format!("{i:03}"), v);
        }
        let dw = decile_weights(&scaled).unwrap();
        assert!((dw.weight["000"] - 0.2).abs() < 1e-12);
        let mut totals = BTreeMap::new();
        for (id, d) in &dw.decile {
            *totals.entry(*d).or_insert(0.0) += dw.weight[id];
        }
        for t in totals.values() {
            assert!((t - 10.0).abs() < 1e-9, "{totals:?}");
        }
        assert!(decile_weights(&BTreeMap::from([("a".to_string(), 1.0)])).is_err());
    }
}
