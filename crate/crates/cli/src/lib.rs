//! The `streetpulse` pipeline: config, staged runs and their manifests.

pub mod config;
pub mod manifest;
pub mod stages;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use streetpulse::geomap::read_scores;
use streetpulse::mlm::pearson_corr;
use streetpulse::synth::{CityParams, SyntheticCity, NE, SW};

pub use config::PipelineConfig;
pub use stages::{Pipeline, ServeMode, Stage};

/// Writes a synthetic city and a pipeline config that runs on it.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<()> {
    let city = SyntheticCity::generate(CityParams {
        seed,
        ..CityParams::default()
    })?;
    city.write_to(dir)?;
    let config = format!(
        r#"seed = {seed}

[paths]
roads = "roads.csv"
features = "features.csv"
segmentation = "segmentation.csv"
segmentation_meta = "segmentation_meta.csv"
areas = "areas.geojson"
votes = "votes.csv"
sessions = "sessions.csv"
repeated_pairs = "repeated_pairs.csv"

[sample]
sw = [{}, {}]
ne = [{}, {}]

[cluster]
k = 8
survey_size = {}

[scheduler]
repeat_rate = {}
"#,
        SW.lat,
        SW.lon,
        NE.lat,
        NE.lon,
        city.corpus.len(),
        city.params.repeat_rate,
    );
    fs::write(dir.join("config.toml"), config)?;
    Ok(())
}

/// Pearson correlation across named score tables, written as `corr.csv`.
pub fn correlate(tables: &[(String, PathBuf)], out: &Path) -> Result<()> {
    let mut loaded = Vec::with_capacity(tables.len());
    for (name, path) in tables {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let scores: BTreeMap<String, f64> = read_scores(BufReader::new(file), path)?;
        loaded.push((name.clone(), scores));
    }
    let corr = pearson_corr(&loaded)?;
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("corr.csv"))?);
    corr.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
pub struct Guide;
