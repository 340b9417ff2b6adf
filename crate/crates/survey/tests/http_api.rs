mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use reqwest::StatusCode;
use serde_json::{json, Value};
use streetpulse::votes::{read_votes, Choice};
use streetpulse_survey::http::{router, AppState};
use streetpulse_survey::service::Service;
use streetpulse_survey::store::FileStore;

async fn start(n_images: usize, store: &Path, images: Option<&Path>) -> String {
    let service = Service::open(common::scheduler(n_images), Box::new(FileStore::open(store).unwrap()), 50).unwrap();
    let app = router(AppState::new(service, images.map(Path::to_path_buf)));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test]
async fn session_and_demographics_contract() {
    let store = tempfile::tempdir().unwrap();
    let base = start(10, store.path(), None).await;
    let c = reqwest::Client::new();

    let r = c.post(format!("{base}/session")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let bare: Value = r.json().await.unwrap();
    assert!(bare["demographics"].is_null());
    assert_eq!(bare["session_id"].as_str().unwrap().len(), 32);

    let demo = json!({"location": "london", "gender": "female", "activity": "high", "source": "network"});
    let r = c.post(format!("{base}/session")).json(&json!({ "demographics": demo })).send().await.unwrap();
    let made: Value = r.json().await.unwrap();
    let id = made["session_id"].as_str().unwrap();
    let back: Value = c.get(format!("{base}/session/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(back["demographics"], demo);

    let bad = json!({ "demographics": { "gender": "maybe" } });
    let r = c.post(format!("{base}/session")).json(&bad).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let sid = bare["session_id"].as_str().unwrap();
    let set = json!({ "session_id": sid, "demographics": { "location": "london", "activity": "high" } });
    let r = c.post(format!("{base}/demographics")).json(&set).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let clash = json!({ "session_id": sid, "demographics": { "location": "not_london" } });
    let r = c.post(format!("{base}/demographics")).json(&clash).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    let r = c.get(format!("{base}/pair?session=ghost")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn pair_vote_cycle_and_exports() {
    let store = tempfile::tempdir().unwrap();
    let images = tempfile::tempdir().unwrap();
    std::fs::write(images.path().join("img000.jpg"), b"\xff\xd8fake").unwrap();
    let base = start(3, store.path(), Some(images.path())).await;
    let c = reqwest::Client::new();
    let s: Value = c.post(format!("{base}/session")).send().await.unwrap().json().await.unwrap();
    let id = s["session_id"].as_str().unwrap().to_string();

    let p1: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
    let p1again: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(p1, p1again);
    assert_eq!(p1["status"], "pair");
    assert_ne!(p1["left"]["image_id"], p1["right"]["image_id"]);
    assert!(p1["left"]["url"].as_str().unwrap().starts_with("/images/"));

    let vote = |token: &str, choice: &str| json!({ "session_id": id, "pair_token": token, "choice": choice });
    let token = p1["pair_token"].as_str().unwrap();
    let a: Value = c.post(format!("{base}/vote")).json(&vote(token, "not_shown")).send().await.unwrap().json().await.unwrap();
    let b: Value = c.post(format!("{base}/vote")).json(&vote(token, "not_shown")).send().await.unwrap().json().await.unwrap();
    assert_eq!(a["vote_id"], 1);
    assert_eq!(b["vote_id"], 1);
    assert_eq!(b["replayed"], true);
    let r = c.post(format!("{base}/vote")).json(&vote("stale", "left")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let r = c.post(format!("{base}/vote")).json(&vote(token, "sideways")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    for _ in 0..2 {
        let p: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
        let t = p["pair_token"].as_str().unwrap();
        c.post(format!("{base}/vote")).json(&vote(t, "left")).send().await.unwrap();
    }
    let done: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(done, json!({ "status": "complete" }));

    let stats: Value = c.get(format!("{base}/admin/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(stats["votes_total"], 3);
    assert_eq!(stats["votes"]["not_shown"], 1);
    assert_eq!(stats["votes"]["left"], 2);
    assert!((stats["games_multiplier"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

    let csv = c.get(format!("{base}/admin/export/votes")).send().await.unwrap().text().await.unwrap();
    let votes = read_votes(csv.as_bytes(), Path::new("votes.csv")).unwrap();
    assert_eq!(votes.len(), 3);
    assert_eq!(votes[0].choice, Choice::NotShown);

    let img = c.get(format!("{base}/images/img000")).send().await.unwrap();
    assert_eq!(img.status(), StatusCode::OK);
    assert_eq!(img.bytes().await.unwrap().as_ref(), b"\xff\xd8fake");
    let r = c.get(format!("{base}/images/..%2Fsecret")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn hundred_concurrent_sessions_keep_a_clean_log() {
    const SESSIONS: usize = 100;
    const ROUNDS: usize = 12;
    let store = tempfile::tempdir().unwrap();
    let base = start(60, store.path(), None).await;
    let c = reqwest::Client::new();

    let mut tasks = Vec::new();
    for i in 0..SESSIONS {
        let (c, base) = (c.clone(), base.clone());
        tasks.push(tokio::spawn(async move {
            let s: Value = c.post(format!("{base}/session")).send().await.unwrap().json().await.unwrap();
            let id = s["session_id"].as_str().unwrap().to_string();
            let mut acked = Vec::new();
            for r in 0..ROUNDS {
                let p: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
                // an extra fetch in between must not change the pair
                if (i + r) % 3 == 0 {
                    let again: Value = c.get(format!("{base}/pair?session={id}")).send().await.unwrap().json().await.unwrap();
                    assert_eq!(p, again);
                }
                let token = p["pair_token"].as_str().unwrap().to_string();
                let body = json!({ "session_id": id, "pair_token": token, "choice": if (i + r) % 2 == 0 { "left" } else { "right" } });
                let ack: Value = c.post(format!("{base}/vote")).json(&body).send().await.unwrap().json().await.unwrap();
                if (i * r) % 5 == 1 {
                    let dup: Value = c.post(format!("{base}/vote")).json(&body).send().await.unwrap().json().await.unwrap();
                    assert_eq!(dup["vote_id"], ack["vote_id"]);
                    assert_eq!(dup["replayed"], true);
                }
                let pair = (p["left"]["image_id"].as_str().unwrap().to_string(), p["right"]["image_id"].as_str().unwrap().to_string());
                acked.push((ack["vote_id"].as_u64().unwrap(), pair));
            }
            (id, acked)
        }));
    }
    let mut expected: BTreeMap<u64, (String, (String, String))> = BTreeMap::new();
    for t in tasks {
        let (id, acked) = t.await.unwrap();
        for (vid, pair) in acked {
            assert!(expected.insert(vid, (id.clone(), pair)).is_none(), "vote id {vid} acknowledged twice");
        }
    }

    let csv = c.get(format!("{base}/admin/export/votes")).send().await.unwrap().text().await.unwrap();
    let votes = read_votes(csv.as_bytes(), Path::new("votes.csv")).unwrap();
    assert_eq!(votes.len(), SESSIONS * ROUNDS);
    let ids: Vec<u64> = votes.iter().map(|v| v.vote_id).collect();
    assert_eq!(ids, (1..=(SESSIONS * ROUNDS) as u64).collect::<Vec<_>>(), "vote ids must be gap-free");
    assert!(votes.windows(2).all(|w| w[0].server_ts <= w[1].server_ts));
    for v in &votes {
        let (sid, (l, r)) = &expected[&v.vote_id];
        assert_eq!(&v.session_id, sid);
        assert_eq!((&v.left_image, &v.right_image), (l, r));
    }
    let mut per_session: BTreeMap<&str, BTreeSet<(String, String)>> = BTreeMap::new();
    for v in &votes {
        let key = if v.left_image < v.right_image { (v.left_image.clone(), v.right_image.clone()) } else { (v.right_image.clone(), v.left_image.clone()) };
        assert!(per_session.entry(&v.session_id).or_default().insert(key), "pair served twice to a session");
    }
    assert_eq!(per_session.len(), SESSIONS);
}
