//! Survey back-end: rater sessions, pair serving and durable vote capture.
//!
//! The [`state::Survey`] state machine decides what each request means,
//! [`store`] persists the resulting events before they take effect, and
//! [`http`] exposes the whole thing as JSON endpoints.

pub mod error;
pub mod http;
pub mod service;
pub mod state;
pub mod store;

use std::fs::{self, File};
use std::path::Path;

use streetpulse::scheduler::{read_survey_set, PairScheduler, SchedulerConfig};

pub use error::{Result, SurveyError};
pub use service::Service;

/// Builds the scheduler from a config file, falling back to every image in
/// `images_dir` as a single cluster when the config names no survey set.
pub fn load_scheduler(config: Option<&Path>, images_dir: Option<&Path>) -> Result<PairScheduler> {
    let cfg = match config {
        Some(p) => SchedulerConfig::load(p)?,
        None => SchedulerConfig::default(),
    };
    let (ids, clusters) = match (&cfg.survey_set, images_dir) {
        (Some(set), _) => read_survey_set(File::open(set)?, set)?,
        (None, Some(dir)) => {
            let mut ids: Vec<String> = fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
                .filter_map(|e| {
                    let p = e.path();
                    let ext = p.extension()?.to_str()?.to_ascii_lowercase();
                    ["jpg", "jpeg", "png", "webp"]
                        .contains(&ext.as_str())
                        .then(|| p.file_stem()?.to_str().map(str::to_string))?
                })
                .collect();
            ids.sort();
            ids.dedup();
            let n = ids.len();
            (ids, vec![0; n])
        }
        (None, None) => {
            return Err(SurveyError::Invalid(
                "no survey set: give a scheduler config with survey_set or an images directory".into(),
            ))
        }
    };
    Ok(PairScheduler::new(ids, &clusters, cfg)?)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/survey.md")]
pub struct Guide;
