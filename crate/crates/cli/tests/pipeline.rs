use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/city200")
}

fn streetpulse(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_streetpulse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn streetpulse")
}

fn run_all(out: &Path) -> Duration {
    let config = fixture_dir().join("config.toml");
    let start = Instant::now();
    let o = streetpulse(&["run", "all", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let took = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    took
}

/// Relative path and contents of every file under `dir`.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bundled_fixture_matches_generator() {
    let tmp = tempfile::tempdir().unwrap();
    streetpulse_cli::write_fixture(tmp.path(), 2019).unwrap();
    let fresh = tree(tmp.path());
    let bundled = tree(&fixture_dir());
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(&fresh), names(&bundled));
    for ((name, a), (_, b)) in fresh.iter().zip(&bundled) {
        assert!(a == b, "{} differs from the generator output", name.display());
    }
}

#[test]
fn run_all_is_fast_complete_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let took = run_all(&a);
    assert!(took < Duration::from_secs(60), "run all took {took:?}");
    run_all(&b);

    let expected = [
        "sample/plan.csv",
        "sample/summary.json",
        "cluster/assignments.csv",
        "cluster/survey_set.csv",
        "cluster/scheduler.toml",
        "cluster/repeated_pairs.csv",
        "cluster/clusters.json",
        "serve/votes.csv",
        "serve/sessions.csv",
        "qa/usable_votes.csv",
        "qa/qa_report.json",
        "rank/scores.csv",
        "rank/ranking.json",
        "mlm/mlm_report.json",
        "mlm/mlm_effects.csv",
        "mlm/mlm_effects_gender.csv",
        "interpret/coefficients.csv",
        "interpret/cv_report.json",
        "map/map.geojson",
        "map/map.csv",
        "map/summary.json",
    ];
    for f in expected {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    for stage in ["sample", "cluster", "serve", "qa", "rank", "mlm", "interpret", "map"] {
        let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join(stage).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["stage"], stage);
        assert_eq!(m["seed"], 2019);
        for o in m["outputs"].as_array().unwrap() {
            assert!(a.join(stage).join(o["path"].as_str().unwrap()).is_file());
        }
    }

    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), tb.len());
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        assert!(x == y, "{} differs between runs", name.display());
    }
}

#[test]
fn seed_override_reaches_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_dir().join("config.toml");
    let out = tmp.path().to_str().unwrap();
    let o = streetpulse(&["run", "cluster", "--config", config.to_str().unwrap(), "--out", out, "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("cluster/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    let toml = fs::read_to_string(tmp.path().join("cluster/scheduler.toml")).unwrap();
    assert!(toml.contains("seed = 7"), "{toml}");
}

#[test]
fn missing_upstream_names_the_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_dir().join("config.toml");
    let o = streetpulse(&["run", "rank", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("from stage `qa`"), "{err}");
    assert!(!tmp.path().join("rank/scores.csv").exists());
}

#[test]
fn unknown_stage_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_dir().join("config.toml");
    let o = streetpulse(&["run", "rnak", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown stage `rnak`"));
}

#[test]
fn corr_compares_ranking_with_truth() {
    let tmp = tempfile::tempdir().unwrap();
    run_all(tmp.path());
    let scores = tmp.path().join("rank/scores.csv");
    let truth = fixture_dir().join("truth.csv");
    let out = tmp.path().join("corr");
    let o = streetpulse(&[
        "corr",
        "--table",
        &format!("trueskill={}", scores.display()),
        "--table",
        &format!("truth={}", truth.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("corr.csv")).unwrap();
    let r: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(r > 0.7, "ranking barely tracks the planted scores: r = {r}");
}
