//! Pipeline stages. Each reads files, writes files under `<out>/<stage>/`
//! and records a manifest of what it read and wrote.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use streetpulse::corpus::{ingest_features, kmeans, stratified_sample, write_assignments, KMeansParams};
use streetpulse::geo::{dedupe_images, generate_grid, read_roads, snap_to_roads, GeoPoint, SamplePlan};
use streetpulse::geomap::{aggregate, assign_deciles, assign_points, export_geojson, read_areas, read_scores, write_aggregates_csv};
use streetpulse::interpret::{fit_logistic_cv, label_extremes, select_features, Dataset, Extreme, FeatureTable};
use streetpulse::mlm::{fit_mlm, significant_effects, write_effects, MlmFit, MlmOptions, Orientation};
use streetpulse::qa::{usable_games, QaReport};
use streetpulse::ranking::{decile_weights, rank_all, scale_scores, write_scores};
use streetpulse::scheduler::{calibrate_alpha, designate_repeated_pairs, read_pairs, read_survey_set};
use streetpulse::votes::{read_sessions, read_votes, write_sessions, write_votes, Grouping, PairKind};
use streetpulse_survey::http::{serve, AppState};
use streetpulse_survey::service::{Service, DEFAULT_SNAPSHOT_EVERY};
use streetpulse_survey::store::FileStore;

use crate::config::PipelineConfig;
use crate::manifest::{FileDigest, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Sample,
    Cluster,
    Serve,
    Qa,
    Rank,
    Mlm,
    Interpret,
    Map,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Sample,
        Stage::Cluster,
        Stage::Serve,
        Stage::Qa,
        Stage::Rank,
        Stage::Mlm,
        Stage::Interpret,
        Stage::Map,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Cluster => "cluster",
            Stage::Serve => "serve",
            Stage::Qa => "qa",
            Stage::Rank => "rank",
            Stage::Mlm => "mlm",
            Stage::Interpret => "interpret",
            Stage::Map => "map",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| anyhow!("unknown stage `{s}`"))
    }
}

/// How `serve` behaves when the config names no exported votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeMode {
    /// Listen for raters until Ctrl-C, then export.
    Listen,
    /// Export whatever the store already holds.
    ExportOnly,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

/// Bookkeeping for one stage run.
struct Run<'a> {
    pipeline: &'a Pipeline,
    stage: Stage,
    dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl Run<'_> {
    /// A file named in the config.
    fn external(&mut self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let full = self.pipeline.cfg.input(path, what)?;
        let label = path.as_ref().expect("resolved").display().to_string();
        self.inputs.push(FileDigest::of(&label, &full)?);
        Ok(full)
    }

    /// A file written by an earlier stage.
    fn upstream(&mut self, stage: Stage, file: &str) -> Result<PathBuf> {
        let path = self.pipeline.out.join(stage.name()).join(file);
        if !path.is_file() {
            bail!(
                "stage `{}` needs {} from stage `{stage}`, which has not been run; run `streetpulse run {stage}` first",
                self.stage,
                path.display()
            );
        }
        self.inputs.push(FileDigest::of(&format!("{stage}/{file}"), &path)?);
        Ok(path)
    }

    fn create(&mut self, file: &str) -> Result<BufWriter<File>> {
        self.outputs.push(file.to_string());
        let path = self.dir.join(file);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let mut w = self.create(file)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn finish(self, parameters: serde_json::Value) -> Result<()> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for f in &self.outputs {
            outputs.push(FileDigest::of(f, &self.dir.join(f))?);
        }
        let manifest = Manifest {
            stage: self.stage.name().to_string(),
            seed: self.pipeline.cfg.seed,
            parameters,
            inputs: self.inputs,
            outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.dir.join("manifest.json"), bytes)?;
        log::info!("{}: wrote {}", self.stage, self.dir.display());
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Pipeline {
        Pipeline { cfg, out }
    }

    fn begin(&self, stage: Stage) -> Result<Run<'_>> {
        let dir = self.out.join(stage.name());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run {
            pipeline: self,
            stage,
            dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Runs every stage in order, serving in export-only mode.
    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage, ServeMode::ExportOnly)
                .with_context(|| format!("stage `{stage}` failed"))?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage, mode: ServeMode) -> Result<()> {
        log::info!("running stage {stage}");
        match stage {
            Stage::Sample => self.sample(),
            Stage::Cluster => self.cluster(),
            Stage::Serve => self.serve(mode),
            Stage::Qa => self.qa(),
            Stage::Rank => self.rank(),
            Stage::Mlm => self.mlm(),
            Stage::Interpret => self.interpret(),
            Stage::Map => self.map(),
        }
    }

    fn sample(&self) -> Result<()> {
        let mut run = self.begin(Stage::Sample)?;
        let c = &self.cfg.sample;
        let roads_path = run.external(&self.cfg.paths.roads, "roads")?;
        let roads = read_roads(open(&roads_path)?, &roads_path)?;
        let (sw, ne) = match self.cfg.bbox() {
            Some(b) => b,
            None => road_extent(&roads.iter().map(|r| r.point).collect::<Vec<_>>())?,
        };
        let grid = generate_grid(sw, ne, c.spacing_m)?;
        let snaps = snap_to_roads(&grid, &roads, c.max_snap_m)?;
        let plan = SamplePlan::from_snaps(&roads, &snaps, c.spacing_m)?;
        plan.write_csv(run.create("plan.csv")?)?;

        let assigned: BTreeMap<String, Option<String>> = roads
            .iter()
            .map(|r| (r.id.clone(), snaps.get(&r.id).map(|s| format!("c{}", s.candidate))))
            .collect();
        let dedup = dedupe_images(&assigned);
        let summary = json!({
            "road_points": roads.len(),
            "candidates": grid.len(),
            "snapped_road_points": snaps.len(),
            "locations": dedup.images.len(),
            "images": 2 * dedup.images.len(),
            "coverage": dedup.coverage,
        });
        run.write_json("summary.json", &summary)?;
        run.finish(json!({
            "sw": [sw.lat, sw.lon],
            "ne": [ne.lat, ne.lon],
            "spacing_m": c.spacing_m,
            "max_snap_m": c.max_snap_m,
        }))
    }

    fn cluster(&self) -> Result<()> {
        let mut run = self.begin(Stage::Cluster)?;
        let c = &self.cfg.cluster;
        let seed = self.cfg.seed;
        let features = run.external(&self.cfg.paths.features, "features")?;
        let corpus = ingest_features(&features)?;
        let fit = kmeans(
            &corpus.features(),
            KMeansParams {
                k: c.k,
                seed,
                max_iter: c.max_iter,
                tol: c.tol,
            },
        )?;
        write_assignments(&corpus, &fit.assignments, run.create("assignments.csv")?)?;

        let n = c.survey_size.min(corpus.len());
        let mut picked = stratified_sample(&fit.assignments, n, seed)?;
        picked.sort_unstable();
        let ids: Vec<String> = picked.iter().map(|&i| corpus.images()[i].image_id.clone()).collect();
        let mut survey_sizes = vec![0usize; c.k];
        {
            let mut w = run.create("survey_set.csv")?;
            writeln!(w, "image_id,cluster")?;
            for &i in &picked {
                let k = fit.assignments[i];
                survey_sizes[k] += 1;
                writeln!(w, "{},{k}", corpus.images()[i].image_id)?;
            }
            w.flush()?;
        }

        let s = &self.cfg.scheduler;
        let occupied: Vec<usize> = survey_sizes.iter().copied().filter(|&n| n > 0).collect();
        let alpha = match s.alpha {
            Some(a) => a,
            None => calibrate_alpha(&occupied, s.within_target)?,
        };
        let pairs = match &self.cfg.paths.repeated_pairs {
            Some(_) => {
                let p = run.external(&self.cfg.paths.repeated_pairs, "repeated_pairs")?;
                read_pairs(open(&p)?, &p)?
            }
            None => designate_repeated_pairs(&ids, s.repeated_pairs, seed)?,
        };
        {
            let mut w = run.create("repeated_pairs.csv")?;
            writeln!(w, "left_id,right_id")?;
            for (a, b) in &pairs {
                writeln!(w, "{a},{b}")?;
            }
            w.flush()?;
        }
        let scheduler = json!({
            "alpha": alpha,
            "repeat_rate": s.repeat_rate,
            "seed": seed,
            "repeated_pairs": "repeated_pairs.csv",
            "survey_set": "survey_set.csv",
        });
        {
            let mut w = run.create("scheduler.toml")?;
            w.write_all(toml::to_string(&scheduler)?.as_bytes())?;
            w.flush()?;
        }

        let mut corpus_sizes = vec![0usize; c.k];
        for &k in &fit.assignments {
            corpus_sizes[k] += 1;
        }
        run.write_json(
            "clusters.json",
            &json!({
                "k": c.k,
                "iterations": fit.iterations,
                "wcss_history": fit.wcss_history,
                "corpus_sizes": corpus_sizes,
                "survey_sizes": survey_sizes,
                "alpha": alpha,
                "centroids": fit.model.centroids,
            }),
        )?;
        run.finish(json!({
            "cluster": c,
            "scheduler": s,
            "alpha": alpha,
        }))
    }

    fn serve(&self, mode: ServeMode) -> Result<()> {
        let mut run = self.begin(Stage::Serve)?;
        let scheduler_toml = run.upstream(Stage::Cluster, "scheduler.toml")?;
        run.upstream(Stage::Cluster, "survey_set.csv")?;
        let paths = &self.cfg.paths;

        if paths.votes.is_some() {
            let votes_path = run.external(&paths.votes, "votes")?;
            let sessions_path = run.external(&paths.sessions, "sessions")?;
            let votes = read_votes(open(&votes_path)?, &votes_path)?;
            let sessions = read_sessions(open(&sessions_path)?, &sessions_path)?;
            let scheduler = streetpulse_survey::load_scheduler(Some(&scheduler_toml), None)?;
            for v in &votes {
                for id in [&v.left_image, &v.right_image] {
                    if scheduler.index_of(id).is_none() {
                        bail!("vote {} names image `{id}`, which is not in the survey set", v.vote_id);
                    }
                }
            }
            write_votes(&votes, run.create("votes.csv")?)?;
            write_sessions(&sessions, run.create("sessions.csv")?)?;
            return run.finish(json!({ "source": "import" }));
        }

        let store_dir = match &paths.store {
            Some(p) => self.cfg.base.join(p),
            None => run.dir.join("store"),
        };
        let images = paths.images.as_ref().map(|p| self.cfg.base.join(p));
        let scheduler = streetpulse_survey::load_scheduler(Some(&scheduler_toml), images.as_deref())?;
        let store = FileStore::open(&store_dir).with_context(|| format!("opening {}", store_dir.display()))?;
        let service = Service::open(scheduler, Box::new(store), DEFAULT_SNAPSHOT_EVERY)?;
        let state = AppState::new(service, images);
        if mode == ServeMode::Listen {
            let addr = format!("{}:{}", self.cfg.serve.host, self.cfg.serve.port);
            let rt = tokio::runtime::Runtime::new()?;
            let app = state.clone();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                serve(listener, app).await?;
                anyhow::Ok(())
            })?;
        }
        let service = state.service.lock().unwrap_or_else(|p| p.into_inner());
        service.export_votes(run.create("votes.csv")?)?;
        service.export_sessions(run.create("sessions.csv")?)?;
        drop(service);
        run.finish(json!({ "source": "store", "store": store_dir }))
    }

    fn qa(&self) -> Result<()> {
        let mut run = self.begin(Stage::Qa)?;
        let params = self.cfg.qa.params();
        let votes_path = run.upstream(Stage::Serve, "votes.csv")?;
        let sessions_path = run.upstream(Stage::Serve, "sessions.csv")?;
        let set_path = run.upstream(Stage::Cluster, "survey_set.csv")?;
        let votes = read_votes(open(&votes_path)?, &votes_path)?;
        let sessions = read_sessions(open(&sessions_path)?, &sessions_path)?;
        let (ids, _) = read_survey_set(open(&set_path)?, &set_path)?;

        let usable = usable_games(&votes, &params)?;
        write_votes(&usable.votes, run.create("usable_votes.csv")?)?;
        let report = QaReport::build(&usable, &sessions, ids.len(), &params)?;
        run.write_json(
            "qa_report.json",
            &json!({ "provenance": usable.provenance, "report": report }),
        )?;
        run.finish(serde_json::to_value(&self.cfg.qa)?)
    }

    fn rank(&self) -> Result<()> {
        let mut run = self.begin(Stage::Rank)?;
        let params = self.cfg.rank.params();
        let votes_path = run.upstream(Stage::Qa, "usable_votes.csv")?;
        let set_path = run.upstream(Stage::Cluster, "survey_set.csv")?;
        let votes = read_votes(open(&votes_path)?, &votes_path)?;
        let (ids, _) = read_survey_set(open(&set_path)?, &set_path)?;

        let ranking = rank_all(&votes, &ids, &params)?;
        let (scaled, scale) = scale_scores(&ranking.scores)?;
        let weights = decile_weights(&scaled)?;
        write_scores(&ranking, &scaled, &weights, run.create("scores.csv")?)?;
        run.write_json(
            "ranking.json",
            &json!({
                "images": ranking.scores.len(),
                "games": ranking.games,
                "games_multiplier": ranking.games as f64 / ids.len() as f64,
                "mean_sigma": ranking.mean_sigma,
                "scale": { "min_mu": scale.min, "max_mu": scale.max },
            }),
        )?;
        run.finish(serde_json::to_value(&self.cfg.rank)?)
    }

    fn mlm(&self) -> Result<()> {
        let mut run = self.begin(Stage::Mlm)?;
        let c = &self.cfg.mlm;
        let votes_path = run.upstream(Stage::Qa, "usable_votes.csv")?;
        let sessions_path = run.upstream(Stage::Serve, "sessions.csv")?;
        let votes = read_votes(open(&votes_path)?, &votes_path)?;
        let sessions = read_sessions(open(&sessions_path)?, &sessions_path)?;
        let repeated: Vec<_> = votes.into_iter().filter(|v| v.pair_kind == PairKind::Repeated).collect();
        let orientation = Orientation::new();
        let options = MlmOptions { nodes: c.nodes };

        // the baseline is fitted with no grouping; each grouping gets its own file
        let mut models: Vec<(String, Option<Grouping>, String)> = vec![("baseline".into(), None, "mlm_effects.csv".into())];
        for name in &c.groupings {
            models.push((name.clone(), Some(name.parse()?), format!("mlm_effects_{name}.csv")));
        }
        let mut report = serde_json::Map::new();
        for (name, grouping, file) in models {
            match fit_mlm(&repeated, grouping.map(|g| (g, sessions.as_slice())), &orientation, options) {
                Ok(fit) => {
                    write_effects(&fit, run.create(&file)?)?;
                    report.insert(name, fit_summary(&fit, c.level, &file));
                }
                Err(e) => {
                    log::warn!("mlm: {name} model not fitted: {e}");
                    report.insert(name, json!({ "error": e.to_string() }));
                }
            }
        }
        run.write_json(
            "mlm_report.json",
            &json!({ "repeated_votes": repeated.len(), "level": c.level, "models": report }),
        )?;
        run.finish(serde_json::to_value(c)?)
    }

    fn interpret(&self) -> Result<()> {
        let mut run = self.begin(Stage::Interpret)?;
        let c = &self.cfg.interpret;
        let scores_path = run.upstream(Stage::Rank, "scores.csv")?;
        let table_path = run.external(&self.cfg.paths.segmentation, "segmentation")?;
        let meta_path = run.external(&self.cfg.paths.segmentation_meta, "segmentation_meta")?;
        let scores = read_scores(open(&scores_path)?, &scores_path)?;
        let labels = label_extremes(&scores)?;
        let table = FeatureTable::read(open(&table_path)?, open(&meta_path)?, &table_path)?;

        let full = Dataset::join(&table, &labels);
        let selection = select_features(&full, c.l1_strength)?;
        let ds = Dataset::join(&table.select(&selection.retained)?, &labels);
        let report = fit_logistic_cv(&ds, c.folds, c.l2, self.cfg.seed)?;
        report.write_coefficients(run.create("coefficients.csv")?)?;

        let kinds: BTreeMap<&str, String> = table
            .names
            .iter()
            .zip(&table.kinds)
            .map(|(n, k)| (n.as_str(), k.to_string()))
            .collect();
        let top = labels.values().filter(|&&l| l == Extreme::Top).count();
        run.write_json(
            "cv_report.json",
            &json!({
                "labelled": { "top": top, "bottom": labels.len() - top, "with_features": ds.len() },
                "cv": report,
                "feature_kinds": kinds,
                "selection": selection,
            }),
        )?;
        run.finish(serde_json::to_value(c)?)
    }

    fn map(&self) -> Result<()> {
        let mut run = self.begin(Stage::Map)?;
        let scores_path = match &self.cfg.paths.scores {
            Some(_) => run.external(&self.cfg.paths.scores, "scores")?,
            None => run.upstream(Stage::Rank, "scores.csv")?,
        };
        let features = run.external(&self.cfg.paths.features, "features")?;
        let areas_path = run.external(&self.cfg.paths.areas, "areas")?;
        let scores = read_scores(open(&scores_path)?, &scores_path)?;
        let corpus = ingest_features(&features)?;
        let areas = read_areas(open(&areas_path)?, &areas_path)?;

        let points: Vec<(String, GeoPoint)> = corpus
            .images()
            .iter()
            .filter(|r| scores.contains_key(&r.image_id))
            .map(|r| (r.image_id.clone(), r.location))
            .collect();
        let unlocated = scores.len() - points.len();
        let assignment = assign_points(&points, &areas)?;
        let (mut aggregates, summary) = aggregate(&scores, &assignment, &areas);
        assign_deciles(&mut aggregates)?;

        export_geojson(&aggregates, &areas, run.create("map.geojson")?)?;
        write_aggregates_csv(&aggregates, run.create("map.csv")?)?;
        run.write_json(
            "summary.json",
            &json!({
                "summary": summary,
                "images_without_location": unlocated,
                "images_outside_areas": points.len() - assignment.len(),
            }),
        )?;
        run.finish(json!({}))
    }
}

fn road_extent(points: &[GeoPoint]) -> Result<(GeoPoint, GeoPoint)> {
    if points.is_empty() {
        bail!("no road points");
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo.lat = lo.lat.min(p.lat);
        lo.lon = lo.lon.min(p.lon);
        hi.lat = hi.lat.max(p.lat);
        hi.lon = hi.lon.max(p.lon);
    }
    Ok((lo, hi))
}

fn fit_summary(fit: &MlmFit, level: f64, file: &str) -> serde_json::Value {
    let significant: Vec<_> = significant_effects(fit, level)
        .into_iter()
        .map(|e| {
            let (lo, hi) = e.interval(level);
            json!({
                "pair": e.pair,
                "group": e.group,
                "n": e.n,
                "estimate": e.estimate,
                "se": e.se,
                "ci": [lo, hi],
                "separation": e.separation,
            })
        })
        .collect();
    json!({
        "effects": file,
        "beta0": fit.beta0,
        "sigma_u": fit.sigma_u,
        "log_lik": fit.log_lik,
        "converged": fit.converged,
        "penalized": fit.penalized,
        "iterations": fit.iterations,
        "cells": fit.effects.len(),
        "significant": significant,
    })
}
