//! Pair scheduling for the survey.
//!
//! Each request either serves a designated repeated pair (used to measure
//! rater agreement) or draws a fresh pair. Fresh pairs come from a single
//! cluster with probability `alpha` and from the whole survey set otherwise,
//! which lifts the share of within-cluster comparisons above what uniform
//! pairing gives.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::votes::PairKind;

pub const DEFAULT_REPEAT_RATE: f64 = 0.05;
pub const DEFAULT_REPEATED_PAIRS: usize = 14;
pub const DEFAULT_WITHIN_TARGET: f64 = 0.20;

const MAX_DRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub alpha: f64,
    pub repeat_rate: f64,
    pub repeated_pairs: Vec<(String, String)>,
    pub seed: u64,
    /// `image_id,cluster` table listing the survey images.
    pub survey_set: Option<PathBuf>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            alpha: 0.0,
            repeat_rate: DEFAULT_REPEAT_RATE,
            repeated_pairs: Vec::new(),
            seed: 0,
            survey_set: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    repeat_rate: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    repeated_pairs: Option<PathBuf>,
    #[serde(default)]
    survey_set: Option<PathBuf>,
}

impl SchedulerConfig {
    /// Reads a `key = value` config file. Relative `repeated_pairs` and
    /// `survey_set` paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ConfigFile =
            toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut cfg = SchedulerConfig::default();
        if let Some(a) = file.alpha {
            cfg.alpha = a;
        }
        if let Some(r) = file.repeat_rate {
            cfg.repeat_rate = r;
        }
        if let Some(s) = file.seed {
            cfg.seed = s;
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(rel) = file.repeated_pairs {
            let p = dir.join(rel);
            cfg.repeated_pairs = read_pairs(fs::File::open(&p)?, &p)?;
        }
        cfg.survey_set = file.survey_set.map(|rel| dir.join(rel));
        cfg.validate_rates()?;
        Ok(cfg)
    }

    fn validate_rates(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("repeat_rate", self.repeat_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Reads an `image_id,cluster` table into parallel id and label lists.
pub fn read_survey_set<R: Read>(reader: R, source: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let (mut ids, mut clusters) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(source, line, "expected image_id,cluster"));
        }
        let c = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::parse(source, line, format!("cluster: {e}")))?;
        ids.push(rec[0].to_string());
        clusters.push(c);
    }
    Ok((ids, clusters))
}

/// Reads `left_id,right_id` rows.
pub fn read_pairs<R: Read>(reader: R, source: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(source, i as u64 + 2, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(source, i as u64 + 2, "expected left_id,right_id"));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// Fraction of within-cluster pairs produced by uniform pairing.
pub fn baseline_within_fraction(cluster_sizes: &[usize]) -> f64 {
    let total: usize = cluster_sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    cluster_sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / total as f64;
            p * p
        })
        .sum()
}

/// Within-cluster fraction for a given mixing coefficient.
pub fn expected_within_fraction(cluster_sizes: &[usize], alpha: f64) -> f64 {
    let base = baseline_within_fraction(cluster_sizes);
    alpha + (1.0 - alpha) * base
}

/// Mixing coefficient that yields `target` within-cluster pairs on average.
pub fn calibrate_alpha(cluster_sizes: &[usize], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("target fraction {target} outside [0, 1]")));
    }
    let base = baseline_within_fraction(cluster_sizes);
    if target < base - 1e-12 {
        return Err(Error::invalid(format!(
            "target {target} is below the uniform-pairing baseline {base}"
        )));
    }
    if base >= 1.0 {
        return Ok(0.0);
    }
    Ok(((target - base) / (1.0 - base)).clamp(0.0, 1.0))
}

/// Draws `count` distinct unordered pairs uniformly from `images`.
pub fn designate_repeated_pairs(images: &[String], count: usize, seed: u64) -> Result<Vec<(String, String)>> {
    let n = images.len();
    let available = n * n.saturating_sub(1) / 2;
    if count > available {
        return Err(Error::invalid(format!("cannot pick {count} pairs from {n} images")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            out.push((images[a].clone(), images[b].clone()));
        }
    }
    Ok(out)
}

/// Per-session scheduling state: pairs already served and the request count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionPairs {
    seen: HashSet<(usize, usize)>,
    pub requests: u64,
}

impl SessionPairs {
    pub fn mark(&mut self, a: usize, b: usize) {
        self.seen.insert((a.min(b), a.max(b)));
    }

    pub fn has_seen(&self, a: usize, b: usize) -> bool {
        self.seen.contains(&(a.min(b), a.max(b)))
    }

    pub fn served(&self) -> usize {
        self.seen.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextPair {
    Pair { left: usize, right: usize, kind: PairKind },
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct PairScheduler {
    images: Vec<String>,
    index: HashMap<String, usize>,
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    eligible: Vec<usize>,
    repeated: Vec<(usize, usize)>,
    config: SchedulerConfig,
    seed_key: [u8; 32],
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl PairScheduler {
    /// `images` and `clusters` are parallel; cluster labels are arbitrary
    /// non-negative integers.
    pub fn new(images: Vec<String>, clusters: &[usize], config: SchedulerConfig) -> Result<Self> {
        config.validate_rates()?;
        if images.len() < 2 {
            return Err(Error::invalid("survey set needs at least two images"));
        }
        if clusters.len() != images.len() {
            return Err(Error::invalid("cluster labels do not match the image list"));
        }
        let mut index = HashMap::with_capacity(images.len());
        for (i, id) in images.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateImage(id.clone()));
            }
        }
        let k = clusters.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &c) in clusters.iter().enumerate() {
            members[c].push(i);
        }
        let eligible = (0..k).filter(|&c| members[c].len() >= 2).collect();

        let mut repeated = Vec::with_capacity(config.repeated_pairs.len());
        for (a, b) in &config.repeated_pairs {
            let ia = *index.get(a).ok_or_else(|| Error::UnknownImage(a.clone()))?;
            let ib = *index.get(b).ok_or_else(|| Error::UnknownImage(b.clone()))?;
            if ia == ib {
                return Err(Error::invalid(format!("repeated pair ({a}, {b}) has identical members")));
            }
            repeated.push((ia, ib));
        }

        let mut seed_key = [0u8; 32];
        seed_key[..8].copy_from_slice(&config.seed.to_le_bytes());
        Ok(PairScheduler {
            images,
            index,
            cluster_of: clusters.to_vec(),
            members,
            eligible,
            repeated,
            config,
            seed_key,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &str {
        &self.images[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn total_pairs(&self) -> usize {
        let n = self.images.len();
        n * (n - 1) / 2
    }

    /// RNG for one request: keyed by (seed, session), one stream per request.
    fn request_rng(&self, session_id: &str, request: u64) -> ChaCha8Rng {
        let mut key = self.seed_key;
        key[8..16].copy_from_slice(&fnv1a(session_id.as_bytes()).to_le_bytes());
        key[16..24].copy_from_slice(&(session_id.len() as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(request);
        rng
    }

    fn draw_distinct(&self, pool: &[usize], rng: &mut ChaCha8Rng) -> (usize, usize) {
        let a = *pool.choose(rng).expect("pool has at least two members");
        loop {
            let b = *pool.choose(rng).expect("pool has at least two members");
            if b != a {
                return (a, b);
            }
        }
    }

    fn draw_fresh(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let within = rng.random_bool(self.config.alpha);
        if within && !self.eligible.is_empty() {
            let c = *self.eligible.choose(rng).unwrap();
            self.draw_distinct(&self.members[c], rng)
        } else {
            let n = self.images.len();
            let a = rng.random_range(0..n);
            loop {
                let b = rng.random_range(0..n);
                if b != a {
                    return (a, b);
                }
            }
        }
    }

    /// Next pair for a session. Marks the pair as served and advances the
    /// session's request counter.
    pub fn next_pair(&self, session_id: &str, state: &mut SessionPairs) -> NextPair {
        if state.served() >= self.total_pairs() {
            return NextPair::Exhausted;
        }
        let mut rng = self.request_rng(session_id, state.requests);
        state.requests += 1;

        let mut picked = None;
        if rng.random_bool(self.config.repeat_rate) {
            let open: Vec<_> = self.repeated.iter().filter(|&&(a, b)| !state.has_seen(a, b)).collect();
            if let Some(&&(a, b)) = open.choose(&mut rng) {
                picked = Some((a, b, PairKind::Repeated));
            }
        }
        if picked.is_none() {
            for _ in 0..MAX_DRAWS {
                let (a, b) = self.draw_fresh(&mut rng);
                if !state.has_seen(a, b) {
                    picked = Some((a, b, PairKind::Fresh));
                    break;
                }
            }
        }
        let (a, b, kind) = match picked {
            Some(p) => p,
            None => {
                // nearly exhausted: choose among the remaining pairs directly
                let n = self.images.len();
                let open: Vec<(usize, usize)> = (0..n)
                    .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                    .filter(|&(a, b)| !state.has_seen(a, b))
                    .collect();
                let &(a, b) = open.choose(&mut rng).expect("not exhausted");
                (a, b, PairKind::Fresh)
            }
        };
        state.mark(a, b);
        let (left, right) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        NextPair::Pair { left, right, kind }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:04}")).collect()
    }

    #[test]
    fn calibrate_boundaries() {
        let sizes = [10; 10];
        assert!(calibrate_alpha(&sizes, 0.1).unwrap().abs() < 1e-12);
        assert!((calibrate_alpha(&sizes, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((calibrate_alpha(&sizes, 0.2).unwrap() - 1.0 / 9.0).abs() < 1e-12);
        assert!(calibrate_alpha(&sizes, 0.05).is_err());
    }

    #[test]
    fn forced_within_cluster() {
        let clusters: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let cfg = SchedulerConfig {
            alpha: 1.0,
            repeat_rate: 0.0,
            ..Default::default()
        };
        let s = PairScheduler::new(ids(40), &clusters, cfg).unwrap();
        let mut st = SessionPairs::default();
        for _ in 0..100 {
            match s.next_pair("sess", &mut st) {
                NextPair::Pair { left, right, .. } => assert_eq!(s.cluster_of(left), s.cluster_of(right)),
                NextPair::Exhausted => panic!("not exhausted"),
            }
        }
    }

    #[test]
    fn repeated_pair_served_once() {
        let images = ids(20);
        let cfg = SchedulerConfig {
            alpha: 0.0,
            repeat_rate: 1.0,
            repeated_pairs: vec![(images[0].clone(), images[1].clone())],
            seed: 3,
            ..Default::default()
        };
        let s = PairScheduler::new(images, &[0; 20], cfg).unwrap();
        let mut st = SessionPairs::default();
        let kinds: Vec<PairKind> = (0..30)
            .map(|_| match s.next_pair("x", &mut st) {
                NextPair::Pair { kind, .. } => kind,
                NextPair::Exhausted => panic!(),
            })
            .collect();
        assert_eq!(kinds[0], PairKind::Repeated);
        assert!(kinds[1..].iter().all(|k| *k == PairKind::Fresh));
    }

    #[test]
    fn exhaustion_after_all_pairs() {
        let s = PairScheduler::new(ids(5), &[0, 0, 1, 1, 2], SchedulerConfig::default()).unwrap();
        let mut st = SessionPairs::default();
        let mut seen = HashSet::new();
        for _ in 0..10 {
            match s.next_pair("s", &mut st) {
                NextPair::Pair { left, right, .. } => {
                    assert_ne!(left, right);
                    assert!(seen.insert((left.min(right), left.max(right))));
                }
                NextPair::Exhausted => panic!("exhausted early"),
            }
        }
        assert_eq!(s.next_pair("s", &mut st), NextPair::Exhausted);
    }

    #[test]
    fn deterministic_per_session() {
        let clusters: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let cfg = SchedulerConfig { alpha: 0.3, seed: 11, ..Default::default() };
        let s = PairScheduler::new(ids(50), &clusters, cfg).unwrap();
        let run = |sid: &str| {
            let mut st = SessionPairs::default();
            (0..20).map(|_| s.next_pair(sid, &mut st)).collect::<Vec<_>>()
        };
        assert_eq!(run("a"), run("a"));
        assert_ne!(run("a"), run("b"));
    }

    #[test]
    fn invalid_config() {
        let bad = SchedulerConfig { alpha: 1.5, ..Default::default() };
        assert!(PairScheduler::new(ids(3), &[0, 0, 0], bad).is_err());
        let selfpair = SchedulerConfig {
            repeated_pairs: vec![("img0000".into(), "img0000".into())],
            ..Default::default()
        };
        assert!(PairScheduler::new(ids(3), &[0, 0, 0], selfpair).is_err());
        let unknown = SchedulerConfig {
            repeated_pairs: vec![("img0000".into(), "nope".into())],
            ..Default::default()
        };
        assert!(PairScheduler::new(ids(3), &[0, 0, 0], unknown).is_err());
        assert!(PairScheduler::new(ids(1), &[0], SchedulerConfig::default()).is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("pairs.csv"), "left_id,right_id\na,b\nc,d\n").unwrap();
        let cfg_path = dir.path().join("scheduler.toml");
        fs::write(&cfg_path, "alpha = 0.25\nrepeat_rate = 0.1\nseed = 7\nrepeated_pairs = \"pairs.csv\"\n").unwrap();
        let cfg = SchedulerConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.repeated_pairs.len(), 2);
    }
}
