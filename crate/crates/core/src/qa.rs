//! Vote quality assurance: turns raw survey votes into usable games and
//! reports agreement and throughput statistics.
//!
//! Filter order is fixed: undecided votes (`not_comparable`, `not_shown`)
//! are set aside first, then duplicate games are dropped, then sessions with
//! a one-sided click bias are removed using the deduplicated votes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::votes::{Choice, Grouping, PairKey, Rater, Vote};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaParams {
    /// Sessions whose majority side exceeds this share are removed.
    pub one_sided_threshold: f64,
    /// Sessions with fewer decisive votes are never judged one-sided.
    pub one_sided_min_games: usize,
    pub duplicate_window_s: f64,
    /// Repeated pairs need strictly more decisive games than this.
    pub agreement_min_games: usize,
}

impl Default for QaParams {
    fn default() -> Self {
        QaParams {
            one_sided_threshold: 0.9,
            one_sided_min_games: 10,
            duplicate_window_s: 60.0,
            agreement_min_games: 10,
        }
    }
}

impl QaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.one_sided_threshold > 0.5 && self.one_sided_threshold <= 1.0) {
            return Err(Error::invalid("one-sided threshold must lie in (0.5, 1]"));
        }
        if !(self.duplicate_window_s > 0.0) {
            return Err(Error::invalid("duplicate window must be positive"));
        }
        if self.agreement_min_games == 0 {
            return Err(Error::invalid("agreement min_games must be at least 1"));
        }
        Ok(())
    }
}

fn seconds_between(a: &Vote, b: &Vote) -> f64 {
    (b.server_ts - a.server_ts).num_microseconds().unwrap_or(i64::MAX) as f64 / 1e6
}

/// Drops a vote when an earlier vote by the same session on the same
/// unordered pair lies less than `window_s` seconds before it. Input order
/// is preserved.
pub fn filter_duplicates(votes: &[Vote], window_s: f64) -> Vec<Vote> {
    let mut groups: HashMap<(&str, PairKey), Vec<usize>> = HashMap::new();
    for (i, v) in votes.iter().enumerate() {
        groups.entry((v.session_id.as_str(), v.pair())).or_default().push(i);
    }
    let mut drop = vec![false; votes.len()];
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            votes[a]
                .server_ts
                .cmp(&votes[b].server_ts)
                .then(votes[a].vote_id.cmp(&votes[b].vote_id))
        });
        // sorted by time, so the closest earlier vote is the predecessor
        for w in idx.windows(2) {
            if seconds_between(&votes[w[0]], &votes[w[1]]) < window_s {
                drop[w[1]] = true;
            }
        }
    }
    votes
        .iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(v, _)| v.clone())
        .collect()
}

/// Removes every vote of sessions that chose one side more than
/// `threshold` of the time over at least `min_games` decisive votes.
pub fn filter_one_sided(votes: &[Vote], threshold: f64, min_games: usize) -> (Vec<Vote>, BTreeSet<String>) {
    let mut sides: HashMap<&str, (usize, usize)> = HashMap::new();
    for v in votes {
        let e = sides.entry(v.session_id.as_str()).or_default();
        match v.choice {
            Choice::Left => e.0 += 1,
            Choice::Right => e.1 += 1,
            _ => {}
        }
    }
    let removed: BTreeSet<String> = sides
        .into_iter()
        .filter(|&(_, (l, r))| {
            let n = l + r;
            n >= min_games && n > 0 && l.max(r) as f64 / n as f64 > threshold
        })
        .map(|(s, _)| s.to_string())
        .collect();
    let kept = votes
        .iter()
        .filter(|v| !removed.contains(&v.session_id))
        .cloned()
        .collect();
    (kept, removed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub total: usize,
    pub not_comparable: usize,
    pub not_shown: usize,
    pub one_sided: usize,
    pub duplicate: usize,
    pub usable: usize,
}

impl Provenance {
    pub fn balances(&self) -> bool {
        self.not_comparable + self.not_shown + self.one_sided + self.duplicate + self.usable == self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsableGames {
    pub votes: Vec<Vote>,
    pub provenance: Provenance,
    pub one_sided_sessions: BTreeSet<String>,
}

pub fn usable_games(votes: &[Vote], params: &QaParams) -> Result<UsableGames> {
    params.validate()?;
    let mut prov = Provenance {
        total: votes.len(),
        ..Default::default()
    };
    let mut decisive = Vec::with_capacity(votes.len());
    for v in votes {
        match v.choice {
            Choice::NotComparable => prov.not_comparable += 1,
            Choice::NotShown => prov.not_shown += 1,
            _ => decisive.push(v.clone()),
        }
    }
    let deduped = filter_duplicates(&decisive, params.duplicate_window_s);
    prov.duplicate = decisive.len() - deduped.len();
    let (kept, sessions) = filter_one_sided(&deduped, params.one_sided_threshold, params.one_sided_min_games);
    prov.one_sided = deduped.len() - kept.len();
    prov.usable = kept.len();
    debug_assert!(prov.balances());
    Ok(UsableGames {
        votes: kept,
        provenance: prov,
        one_sided_sessions: sessions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAgreement {
    pub pair: String,
    pub games: usize,
    pub majority_image: String,
    pub agreement: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgreementReport {
    pub pairs: Vec<PairAgreement>,
    /// Unweighted mean over qualifying pairs; `None` when none qualify.
    pub mean: Option<f64>,
    /// Distinct sessions that voted on a qualifying pair.
    pub raters: usize,
}

/// Majority share per unordered pair with more than `min_games` decisive
/// votes. Ties name the lexicographically first image as the majority.
pub fn agreement(votes: &[Vote], min_games: usize) -> AgreementReport {
    let mut tallies: BTreeMap<PairKey, (usize, usize, BTreeSet<&str>)> = BTreeMap::new();
    for v in votes {
        let Some(winner) = v.winner() else { continue };
        let key = v.pair();
        let e = tallies.entry(key.clone()).or_default();
        if winner == key.0 {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
        e.2.insert(v.session_id.as_str());
    }
    let mut raters = BTreeSet::new();
    let pairs: Vec<PairAgreement> = tallies
        .into_iter()
        .filter(|(_, (a, b, _))| a + b > min_games)
        .map(|(key, (a, b, sessions))| {
            raters.extend(sessions);
            let games = a + b;
            let (majority_image, count) = if a >= b { (key.0.clone(), a) } else { (key.1.clone(), b) };
            PairAgreement {
                pair: key.to_string(),
                games,
                majority_image,
                agreement: count as f64 / games as f64,
            }
        })
        .collect();
    let mean = (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.agreement).sum::<f64>() / pairs.len() as f64);
    AgreementReport {
        pairs,
        mean,
        raters: raters.len(),
    }
}

/// Agreement computed separately within each level of a session attribute.
/// Sessions that did not report the attribute are left out.
pub fn group_agreement(
    votes: &[Vote],
    sessions: &[Rater],
    grouping: Grouping,
    min_games: usize,
) -> BTreeMap<String, AgreementReport> {
    let level: HashMap<&str, &'static str> = sessions
        .iter()
        .filter_map(|r| Some((r.session_id.as_str(), grouping.level(r.demographics.as_ref()?)?)))
        .collect();
    let mut split: BTreeMap<&'static str, Vec<Vote>> = BTreeMap::new();
    for v in votes {
        if let Some(&l) = level.get(v.session_id.as_str()) {
            split.entry(l).or_default().push(v.clone());
        }
    }
    split
        .into_iter()
        .map(|(l, vs)| (l.to_string(), agreement(&vs, min_games)))
        .collect()
}

/// Decisive games per image.
pub fn games_multiplier(votes: &[Vote], n_images: usize) -> Result<f64> {
    if n_images == 0 {
        return Err(Error::invalid("games multiplier needs at least one image"));
    }
    let games = votes.iter().filter(|v| v.choice.is_decisive()).count();
    Ok(games as f64 / n_images as f64)
}

/// Summary written as `qa_report.json`, one field per descriptive row.
#[derive(Debug, Clone, Serialize)]
pub struct QaReport {
    pub images_in_database: usize,
    pub pairwise_ratings: usize,
    pub not_comparable: usize,
    pub not_shown: usize,
    pub one_sided_clicks: usize,
    pub duplicate_choices: usize,
    pub usable_games: usize,
    pub users: usize,
    pub users_with_demographics: usize,
    pub games_per_user_mean: f64,
    pub images_per_user_mean: f64,
    pub repeated_image_pairs: usize,
    pub games_per_repeated_pair_mean: Option<f64>,
    pub repeated_pairs_agreement: Option<f64>,
    pub repeated_pairs_users: usize,
    pub games_multiplier: f64,
    pub one_sided_sessions: Vec<String>,
    pub group_agreement: BTreeMap<String, BTreeMap<String, AgreementReport>>,
}

impl QaReport {
    pub fn build(usable: &UsableGames, sessions: &[Rater], n_images: usize, params: &QaParams) -> Result<Self> {
        let votes = &usable.votes;
        let mut per_user: BTreeMap<&str, (usize, BTreeSet<&str>)> = BTreeMap::new();
        for v in votes {
            let e = per_user.entry(v.session_id.as_str()).or_default();
            e.0 += 1;
            e.1.insert(&v.left_image);
            e.1.insert(&v.right_image);
        }
        let users = per_user.len();
        let mean_of = |f: fn(&(usize, BTreeSet<&str>)) -> usize| {
            if users == 0 {
                0.0
            } else {
                per_user.values().map(f).sum::<usize>() as f64 / users as f64
            }
        };
        let agree = agreement(votes, params.agreement_min_games);
        let games_per_pair = (!agree.pairs.is_empty())
            .then(|| agree.pairs.iter().map(|p| p.games).sum::<usize>() as f64 / agree.pairs.len() as f64);
        let mut groups = BTreeMap::new();
        for (name, g) in [
            ("source", Grouping::Source),
            ("location", Grouping::Location),
            ("gender", Grouping::Gender),
            ("activity", Grouping::Activity),
        ] {
            groups.insert(name.to_string(), group_agreement(votes, sessions, g, params.agreement_min_games));
        }
        let p = usable.provenance;
        Ok(QaReport {
            images_in_database: n_images,
            pairwise_ratings: p.total,
            not_comparable: p.not_comparable,
            not_shown: p.not_shown,
            one_sided_clicks: p.one_sided,
            duplicate_choices: p.duplicate,
            usable_games: p.usable,
            users,
            users_with_demographics: sessions.iter().filter(|r| r.demographics.is_some()).count(),
            games_per_user_mean: mean_of(|e| e.0),
            images_per_user_mean: mean_of(|e| e.1.len()),
            repeated_image_pairs: agree.pairs.len(),
            games_per_repeated_pair_mean: games_per_pair,
            repeated_pairs_agreement: agree.mean,
            repeated_pairs_users: agree.raters,
            games_multiplier: games_multiplier(votes, n_images)?,
            one_sided_sessions: usable.one_sided_sessions.iter().cloned().collect(),
            group_agreement: groups,
        })
    }
}
