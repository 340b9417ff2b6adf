use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use streetpulse::geo::{GeoPoint, DEFAULT_MAX_SNAP_M, DEFAULT_SPACING_M};
use streetpulse::interpret::{DEFAULT_FOLDS, DEFAULT_L2};
use streetpulse::mlm::DEFAULT_NODES;
use streetpulse::qa::QaParams;
use streetpulse::ranking::RankingParams;
use streetpulse::scheduler::{DEFAULT_REPEATED_PAIRS, DEFAULT_REPEAT_RATE, DEFAULT_WITHIN_TARGET};

/// Input locations. Relative paths are resolved against the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub roads: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub segmentation: Option<PathBuf>,
    pub segmentation_meta: Option<PathBuf>,
    pub areas: Option<PathBuf>,
    /// Exported survey votes; when set, `serve` imports them instead of listening.
    pub votes: Option<PathBuf>,
    pub sessions: Option<PathBuf>,
    /// Survey event store used by `serve`.
    pub store: Option<PathBuf>,
    pub images: Option<PathBuf>,
    /// Fixed repeated pairs; designated at random when absent.
    pub repeated_pairs: Option<PathBuf>,
    /// External per-image scores for `map`, instead of the ranking output.
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// `[lat, lon]` corners; the road extent is used when absent.
    pub sw: Option<[f64; 2]>,
    pub ne: Option<[f64; 2]>,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default = "default_snap")]
    pub max_snap_m: f64,
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING_M
}
fn default_snap() -> f64 {
    DEFAULT_MAX_SNAP_M
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub survey_size: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: streetpulse::corpus::DEFAULT_K,
            survey_size: streetpulse::corpus::DEFAULT_SURVEY_SIZE,
            max_iter: streetpulse::corpus::DEFAULT_MAX_ITER,
            tol: streetpulse::corpus::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    /// Fixed mixing coefficient; calibrated to `within_target` when absent.
    pub alpha: Option<f64>,
    pub within_target: f64,
    pub repeat_rate: f64,
    pub repeated_pairs: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            alpha: None,
            within_target: DEFAULT_WITHIN_TARGET,
            repeat_rate: DEFAULT_REPEAT_RATE,
            repeated_pairs: DEFAULT_REPEATED_PAIRS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaConfig {
    pub one_sided_threshold: f64,
    pub one_sided_min_games: usize,
    pub duplicate_window_s: f64,
    pub agreement_min_games: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        let p = QaParams::default();
        QaConfig {
            one_sided_threshold: p.one_sided_threshold,
            one_sided_min_games: p.one_sided_min_games,
            duplicate_window_s: p.duplicate_window_s,
            agreement_min_games: p.agreement_min_games,
        }
    }
}

impl QaConfig {
    pub fn params(&self) -> QaParams {
        QaParams {
            one_sided_threshold: self.one_sided_threshold,
            one_sided_min_games: self.one_sided_min_games,
            duplicate_window_s: self.duplicate_window_s,
            agreement_min_games: self.agreement_min_games,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    pub beta: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        let p = RankingParams::default();
        RankConfig {
            beta: p.beta,
            tau: p.tau,
            epsilon: p.epsilon,
        }
    }
}

impl RankConfig {
    pub fn params(&self) -> RankingParams {
        RankingParams {
            beta: self.beta,
            tau: self.tau,
            epsilon: self.epsilon,
            ..RankingParams::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmConfig {
    pub groupings: Vec<String>,
    pub nodes: usize,
    pub level: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            groupings: ["source", "location", "gender", "activity"].map(String::from).to_vec(),
            nodes: DEFAULT_NODES,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretConfig {
    pub folds: usize,
    pub l2: f64,
    pub l1_strength: f64,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            folds: DEFAULT_FOLDS,
            l2: DEFAULT_L2,
            l1_strength: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub serve: ServeConfig,
    #[serde(default)]
    pub qa: QaConfig,
    #[serde(default)]
    pub rank: RankConfig,
    #[serde(default)]
    pub mlm: MlmConfig,
    #[serde(default)]
    pub interpret: InterpretConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            sw: None,
            ne: None,
            spacing_m: DEFAULT_SPACING_M,
            max_snap_m: DEFAULT_MAX_SNAP_M,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Resolves an optional input path, failing with `what` when unset.
    pub fn input(&self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        match path {
            Some(p) => {
                let full = self.base.join(p);
                if !full.exists() {
                    bail!("{what} file {} does not exist", full.display());
                }
                Ok(full)
            }
            None => bail!("config has no paths.{what}"),
        }
    }

    pub fn bbox(&self) -> Option<(GeoPoint, GeoPoint)> {
        match (self.sample.sw, self.sample.ne) {
            (Some(sw), Some(ne)) => Some((GeoPoint { lat: sw[0], lon: sw[1] }, GeoPoint { lat: ne[0], lon: ne[1] })),
            _ => None,
        }
    }
}
