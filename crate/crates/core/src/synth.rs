//! A small synthetic city with known ground truth.
//!
//! Everything the pipeline consumes is generated from one seed: a street
//! grid, image records with appearance features, segmentation features
//! driven by a latent walkability field, census-style areas, rater
//! sessions, and survey votes drawn through the real pair scheduler. The
//! latent field is kept so tests can check what the pipeline recovers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{kmeans, write_features, Corpus, ImageRecord, KMeansParams, DEFAULT_K};
use crate::error::Result;
use crate::geo::{GeoPoint, RoadPoint};
use crate::geomap::{write_areas, OutputArea};
use crate::interpret::{FeatureKind, FeatureTable};
use crate::scheduler::{calibrate_alpha, designate_repeated_pairs, NextPair, PairScheduler, SchedulerConfig, SessionPairs};
use crate::votes::{
    write_sessions, write_votes, Activity, Choice, Demographics, Gender, Location, PairKey, Rater, Source, Vote,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CityParams {
    pub seed: u64,
    /// Camera positions; each yields two images facing opposite sides.
    pub locations: usize,
    pub sessions: usize,
    pub votes_per_session: usize,
    pub repeat_rate: f64,
    pub repeated_pairs: usize,
    /// Logit scale applied to latent score differences when raters choose.
    pub discrimination: f64,
    /// Pairs, by index into the repeated list, where women and men disagree.
    pub group_effect_pairs: usize,
    pub group_effect: f64,
}

impl Default for CityParams {
    fn default() -> Self {
        CityParams {
            seed: 2019,
            locations: 100,
            sessions: 120,
            votes_per_session: 30,
            repeat_rate: 0.1,
            repeated_pairs: 14,
            discrimination: 1.5,
            group_effect_pairs: 2,
            group_effect: 2.5,
        }
    }
}

pub const SW: GeoPoint = GeoPoint { lat: 51.500, lon: -0.140 };
pub const NE: GeoPoint = GeoPoint { lat: 51.520, lon: -0.110 };
const STREETS_PER_AXIS: usize = 6;
const ROAD_STEP_DEG: f64 = 0.0001;
const AREAS_PER_AXIS: usize = 5;
const APPEARANCE_DIM: usize = 8;
const ONE_SIDED_SESSION: usize = 5;
const DUPLICATING_SESSIONS: usize = 8;

pub const SEGMENTATION_FEATURES: [(&str, FeatureKind); 10] = [
    ("sidewalk", FeatureKind::Fraction),
    ("terrain", FeatureKind::Fraction),
    ("road", FeatureKind::Fraction),
    ("building", FeatureKind::Fraction),
    ("vegetation", FeatureKind::Fraction),
    ("sky", FeatureKind::Fraction),
    ("car", FeatureKind::Count),
    ("truck", FeatureKind::Count),
    ("bus", FeatureKind::Count),
    ("person", FeatureKind::Count),
];

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub params: CityParams,
    pub roads: Vec<RoadPoint>,
    pub corpus: Corpus,
    /// True walkability per image.
    pub latent: BTreeMap<String, f64>,
    pub segmentation: FeatureTable,
    pub areas: Vec<OutputArea>,
    pub raters: Vec<Rater>,
    pub votes: Vec<Vote>,
    pub repeated_pairs: Vec<(String, String)>,
    /// Repeated pairs with a planted gender effect on the larger-id image.
    pub planted_pairs: Vec<PairKey>,
    pub one_sided_session: String,
    pub duplicate_vote_ids: Vec<u64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn walkability(p: GeoPoint) -> f64 {
    let x = (p.lon - SW.lon) / (NE.lon - SW.lon);
    let y = (p.lat - SW.lat) / (NE.lat - SW.lat);
    2.0 * (2.0 * PI * x).sin() + 1.5 * (1.5 * PI * y).cos()
}

fn streets() -> Vec<RoadPoint> {
    let mut roads = Vec::new();
    for i in 0..STREETS_PER_AXIS {
        let f = (i as f64 + 0.5) / STREETS_PER_AXIS as f64;
        let lat = SW.lat + f * (NE.lat - SW.lat);
        let n = ((NE.lon - SW.lon) / ROAD_STEP_DEG).round() as usize;
        for j in 0..=n {
            roads.push(RoadPoint {
                id: format!("ew{i}-{j:04}"),
                point: GeoPoint { lat, lon: SW.lon + j as f64 * ROAD_STEP_DEG },
                bearing: 90.0,
            });
        }
        let lon = SW.lon + f * (NE.lon - SW.lon);
        let n = ((NE.lat - SW.lat) / ROAD_STEP_DEG).round() as usize;
        for j in 0..=n {
            roads.push(RoadPoint {
                id: format!("ns{i}-{j:04}"),
                point: GeoPoint { lat: SW.lat + j as f64 * ROAD_STEP_DEG, lon },
                bearing: 0.0,
            });
        }
    }
    roads
}

fn areas() -> Result<Vec<OutputArea>> {
    let dlat = (NE.lat - SW.lat) / AREAS_PER_AXIS as f64;
    let dlon = (NE.lon - SW.lon) / AREAS_PER_AXIS as f64;
    let mut out = Vec::new();
    for r in 0..AREAS_PER_AXIS {
        for c in 0..AREAS_PER_AXIS {
            let (lat0, lon0) = (SW.lat + r as f64 * dlat, SW.lon + c as f64 * dlon);
            let (lat1, lon1) = (lat0 + dlat, lon0 + dlon);
            let ring = vec![
                GeoPoint { lat: lat0, lon: lon0 },
                GeoPoint { lat: lat0, lon: lon1 },
                GeoPoint { lat: lat1, lon: lon1 },
                GeoPoint { lat: lat1, lon: lon0 },
                GeoPoint { lat: lat0, lon: lon0 },
            ];
            out.push(OutputArea::new(format!("E{:08}", r * AREAS_PER_AXIS + c + 1), vec![vec![ring]])?);
        }
    }
    Ok(out)
}

fn segmentation_row(rng: &mut ChaCha8Rng, latent: f64) -> Vec<f64> {
    let frac = |base: f64, slope: f64, sd: f64, rng: &mut ChaCha8Rng| {
        let v = base + slope * latent + sd * normal(rng);
        (v.clamp(0.0, 1.0) * 1e6).round() / 1e6
    };
    let count = |base: f64, slope: f64, sd: f64, rng: &mut ChaCha8Rng| (base + slope * latent + sd * normal(rng)).round().max(0.0);
    vec![
        frac(0.12, 0.035, 0.02, rng),
        frac(0.06, 0.015, 0.015, rng),
        frac(0.25, 0.010, 0.03, rng),
        frac(0.30, 0.000, 0.05, rng),
        frac(0.15, 0.005, 0.04, rng),
        frac(0.20, -0.035, 0.03, rng),
        count(3.0, 0.3, 1.0, rng),
        count(1.0, -0.45, 0.6, rng),
        count(0.8, -0.35, 0.5, rng),
        count(2.0, 0.0, 1.0, rng),
    ]
}

fn demographics(rng: &mut ChaCha8Rng) -> Option<Demographics> {
    if rng.random::<f64>() < 0.2 {
        return None;
    }
    let gender = match rng.random::<f64>() {
        u if u < 0.45 => Gender::Female,
        u if u < 0.9 => Gender::Male,
        _ => Gender::Other,
    };
    Some(Demographics {
        location: Some(if rng.random::<f64>() < 0.6 { Location::London } else { Location::NotLondon }),
        gender: Some(gender),
        activity: Some(if rng.random::<f64>() < 0.5 { Activity::High } else { Activity::Low }),
        source: Some(if rng.random::<f64>() < 0.5 { Source::Amt } else { Source::Network }),
    })
}

impl SyntheticCity {
    pub fn generate(params: CityParams) -> Result<SyntheticCity> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let roads = streets();

        // camera positions on distinct road points, in road order
        let mut picks = sample(&mut rng, roads.len(), params.locations).into_vec();
        picks.sort_unstable();
        let prototypes: Vec<Vec<f64>> = (0..DEFAULT_K)
            .map(|_| (0..APPEARANCE_DIM).map(|_| 3.0 * normal(&mut rng)).collect())
            .collect();
        let mut records = Vec::new();
        let mut latent = BTreeMap::new();
        let mut seg_rows = BTreeMap::new();
        for (loc, &ri) in picks.iter().enumerate() {
            let point = roads[ri].point;
            let year = 2008 + rng.random_range(0..12);
            for side in ["a", "b"] {
                let id = format!("L{loc:03}{side}");
                let z = walkability(point) + 0.5 * normal(&mut rng);
                let proto = &prototypes[rng.random_range(0..DEFAULT_K)];
                let mut feature: Vec<f64> = proto.iter().map(|c| c + normal(&mut rng)).collect();
                feature[APPEARANCE_DIM - 1] += 0.5 * z;
                let feature = feature.into_iter().map(|v| (v * 1e6).round() / 1e6).collect();
                seg_rows.insert(id.clone(), segmentation_row(&mut rng, z));
                latent.insert(id.clone(), z);
                records.push(ImageRecord {
                    image_id: id,
                    location: GeoPoint {
                        lat: (point.lat * 1e7).round() / 1e7,
                        lon: (point.lon * 1e7).round() / 1e7,
                    },
                    year,
                    feature,
                    cluster: None,
                });
            }
        }
        let corpus = Corpus::from_records(records)?;
        let segmentation = FeatureTable {
            names: SEGMENTATION_FEATURES.iter().map(|(n, _)| n.to_string()).collect(),
            kinds: SEGMENTATION_FEATURES.iter().map(|(_, k)| *k).collect(),
            rows: seg_rows,
        };

        let fit = kmeans(
            &corpus.features(),
            KMeansParams {
                k: DEFAULT_K,
                seed: params.seed,
                ..KMeansParams::default()
            },
        )?;
        let ids: Vec<String> = corpus.images().iter().map(|r| r.image_id.clone()).collect();
        let sizes = {
            let mut s = vec![0; DEFAULT_K];
            for &a in &fit.assignments {
                s[a] += 1;
            }
            s
        };
        let repeated_pairs = designate_repeated_pairs(&ids, params.repeated_pairs, params.seed)?;
        let planted_pairs: Vec<PairKey> = repeated_pairs
            .iter()
            .take(params.group_effect_pairs)
            .map(|(a, b)| PairKey::new(a, b))
            .collect();
        let scheduler = PairScheduler::new(
            ids.clone(),
            &fit.assignments,
            SchedulerConfig {
                alpha: calibrate_alpha(&sizes, crate::scheduler::DEFAULT_WITHIN_TARGET)?,
                repeat_rate: params.repeat_rate,
                repeated_pairs: repeated_pairs.clone(),
                seed: params.seed,
                survey_set: None,
            },
        )?;

        let start: DateTime<Utc> = Utc.with_ymd_and_hms(2019, 6, 1, 10, 0, 0).unwrap();
        let mut raters = Vec::new();
        let mut raw: Vec<(DateTime<Utc>, Vote, bool)> = Vec::new();
        for s in 0..params.sessions {
            let session_id = format!("s{s:04}");
            let created_at = start + Duration::seconds(420 * s as i64);
            let demo = demographics(&mut rng);
            let gender_shift = match demo.as_ref().and_then(|d| d.gender) {
                Some(Gender::Female) => params.group_effect,
                Some(Gender::Male) => -params.group_effect,
                _ => 0.0,
            };
            let mut state = SessionPairs::default();
            let mut t = created_at;
            for _ in 0..params.votes_per_session {
                let NextPair::Pair { left, right, kind } = scheduler.next_pair(&session_id, &mut state) else {
                    break;
                };
                t += Duration::milliseconds(12_000 + rng.random_range(0..16_000));
                let (l, r) = (scheduler.image(left).to_string(), scheduler.image(right).to_string());
                let key = PairKey::new(&l, &r);
                let u: f64 = rng.random();
                let choice = if s == ONE_SIDED_SESSION {
                    Choice::Left
                } else if u < 0.03 {
                    Choice::NotComparable
                } else if u < 0.04 {
                    Choice::NotShown
                } else {
                    let mut logit = params.discrimination * (latent[&r] - latent[&l]);
                    if planted_pairs.contains(&key) {
                        // planted effect favours the larger id of the pair
                        logit += if r == key.1 { gender_shift } else { -gender_shift };
                    }
                    if rng.random::<f64>() < sigmoid(logit) {
                        Choice::Right
                    } else {
                        Choice::Left
                    }
                };
                let vote = Vote {
                    vote_id: 0,
                    session_id: session_id.clone(),
                    left_image: l,
                    right_image: r,
                    choice,
                    pair_kind: kind,
                    client_ts: Some(t - Duration::milliseconds(300)),
                    server_ts: t,
                };
                if s < DUPLICATING_SESSIONS && s != ONE_SIDED_SESSION && choice.is_decisive() && raw.iter().all(|(_, v, dup)| !dup || v.session_id != session_id) {
                    let mut again = vote.clone();
                    again.server_ts = t + Duration::milliseconds(2_500);
                    again.client_ts = again.client_ts.map(|c| c + Duration::milliseconds(2_500));
                    raw.push((again.server_ts, again, true));
                }
                raw.push((t, vote, false));
            }
            raters.push(Rater {
                session_id,
                created_at,
                demographics: demo,
            });
        }
        raw.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.session_id.cmp(&b.1.session_id)));
        let mut votes = Vec::with_capacity(raw.len());
        let mut duplicate_vote_ids = Vec::new();
        for (i, (_, mut v, dup)) in raw.into_iter().enumerate() {
            v.vote_id = i as u64 + 1;
            if dup {
                duplicate_vote_ids.push(v.vote_id);
            }
            votes.push(v);
        }

        Ok(SyntheticCity {
            params,
            roads,
            corpus,
            latent,
            segmentation,
            areas: areas()?,
            raters,
            votes,
            repeated_pairs,
            planted_pairs,
            one_sided_session: format!("s{ONE_SIDED_SESSION:04}"),
            duplicate_vote_ids,
        })
    }

    /// Writes the input files of the pipeline into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };

        let mut w = csv::Writer::from_writer(create("roads.csv")?);
        w.write_record(["id", "lat", "lon", "bearing"])?;
        for r in &self.roads {
            w.write_record([
                r.id.clone(),
                format!("{:.7}", r.point.lat),
                format!("{:.7}", r.point.lon),
                format!("{:.1}", r.bearing),
            ])?;
        }
        w.flush()?;

        write_features(&self.corpus, create("features.csv")?)?;

        let mut w = csv::Writer::from_writer(create("segmentation.csv")?);
        let mut header = vec!["image_id".to_string()];
        header.extend(self.segmentation.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in &self.segmentation.rows {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(create("segmentation_meta.csv")?);
        w.write_record(["feature", "kind"])?;
        for (n, k) in self.segmentation.names.iter().zip(&self.segmentation.kinds) {
            w.write_record([n.clone(), k.to_string()])?;
        }
        w.flush()?;

        write_areas(&self.areas, create("areas.geojson")?)?;
        write_votes(&self.votes, create("votes.csv")?)?;
        write_sessions(&self.raters, create("sessions.csv")?)?;

        let mut w = csv::Writer::from_writer(create("repeated_pairs.csv")?);
        w.write_record(["left_id", "right_id"])?;
        for (a, b) in &self.repeated_pairs {
            w.write_record([a, b])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(create("truth.csv")?);
        w.write_record(["image_id", "score"])?;
        for (id, z) in &self.latent {
            w.write_record([id.clone(), format!("{z:.6}")])?;
        }
        w.flush()?;
        let mut f = create("planted_pairs.txt")?;
        for p in &self.planted_pairs {
            writeln!(f, "{p}")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_city() {
        let p = CityParams {
            sessions: 10,
            ..CityParams::default()
        };
        let a = SyntheticCity::generate(p.clone()).unwrap();
        let b = SyntheticCity::generate(p).unwrap();
        assert_eq!(a.votes, b.votes);
        assert_eq!(a.corpus.len(), 200);
        assert_eq!(a.areas.len(), 25);
    }
}
