use std::path::Path as FsPath;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use super::*;
use crate::pipeline::{execute_run, RunConfigFile};
use crate::riskeval::RiskReport;

fn toy_file(name: &str) -> String {
    std::fs::read_to_string(FsPath::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy").join(name)).unwrap()
}

struct Harness {
    _dir: tempfile::TempDir,
    state: AppState,
}

impl Harness {
    fn new(parallelism: usize, capacity: usize) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let state = start(dir.path().join("store"), parallelism, capacity).unwrap();
        Harness { _dir: dir, state }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(v) => req
                .header("content-type", "application/json")
                .body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, b) = self.call(method, uri, body).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn seed_inputs(&self) {
        let (s, _) = self
            .json(
                Method::POST,
                "/datasets",
                Some(json!({
                    "name": "toy",
                    "catalog": toy_file("catalog.csv"),
                    "interactions": toy_file("interactions.csv"),
                    "labels": toy_file("labels.csv"),
                })),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED);
        let (s, _) = self
            .json(
                Method::POST,
                "/taxonomies",
                Some(json!({ "name": "toy", "taxonomy": toy_file("taxonomy.txt"), "lexicon": toy_file("lexicon.csv") })),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED);
        let spec: Value = serde_json::from_str(&toy_file("cohort_general.json")).unwrap();
        let (s, _) = self.json(Method::POST, "/cohorts", Some(spec)).await;
        assert_eq!(s, StatusCode::CREATED);
    }

    async fn submit(&self, steps: u64, seed: u64, extra: Value) -> (StatusCode, Value) {
        let mut body = json!({
            "dataset": "toy",
            "taxonomy": "toy",
            "cohorts": ["general"],
            "simulation": { "steps": steps, "k": 5, "seed": seed, "recommender": { "algorithm": "popularity" } },
            "report": { "flagged": ["harmful"] },
        });
        if let (Some(b), Some(e)) = (body.as_object_mut(), extra.as_object()) {
            for (k, v) in e {
                b.insert(k.clone(), v.clone());
            }
        }
        self.json(Method::POST, "/runs", Some(body)).await
    }

    async fn wait(&self, run_id: &str) -> RunRecord {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let r = self.state.store.run(run_id).unwrap();
            if r.status.is_terminal() {
                return r;
            }
            assert!(Instant::now() < deadline, "run {run_id} did not finish");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}

#[tokio::test]
async fn unknown_run_is_404_naming_the_id() {
    let h = Harness::new(1, 8);
    for uri in ["/runs/deadbeef", "/runs/deadbeef/report", "/runs/deadbeef/timeseries"] {
        let (s, b) = h.json(Method::GET, uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert!(b["error"].as_str().unwrap().contains("deadbeef"));
        assert_eq!(b["id"], "deadbeef");
    }
    let (s, _) = h.json(Method::DELETE, "/runs/deadbeef", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.json(Method::GET, "/cohorts/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn uploads_validate_and_reject_duplicates() {
    let h = Harness::new(1, 8);
    h.seed_inputs().await;

    let (s, b) = h.json(Method::GET, "/taxonomies/toy", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["categories"], json!(["news", "sports", "music", "harmful", "unknown"]));
    let (_, b) = h.json(Method::GET, "/datasets/toy", None).await;
    assert_eq!((b["items"].as_u64(), b["events"].as_u64()), (Some(40), Some(166)));

    let (s, b) = h
        .json(Method::POST, "/taxonomies", Some(json!({ "name": "toy", "taxonomy": "a\n", "lexicon": "" })))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["id"], "toy");

    let spec: Value = serde_json::from_str(&toy_file("cohort_general.json")).unwrap();
    let (s, _) = h.json(Method::POST, "/cohorts", Some(spec.clone())).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let mut bad = spec.clone();
    bad["name"] = json!("other");
    bad["p_active"] = json!(1.5);
    let (s, b) = h.json(Method::POST, "/cohorts", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "p_active");

    let mut bad = spec;
    bad["name"] = json!("other");
    bad["size"] = json!("many");
    let (s, b) = h.json(Method::POST, "/cohorts", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "size");

    let (s, b) = h
        .json(Method::POST, "/datasets", Some(json!({ "name": "dup", "catalog": "item_id,title\na,x\na,y\n" })))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "catalog");
    let (s, _) = h.json(Method::GET, "/datasets/dup", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, b) = h.json(Method::POST, "/datasets", Some(json!({ "name": "../x", "catalog": "" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "name");

    let (_, b) = h.json(Method::GET, "/cohorts", None).await;
    assert_eq!(b["cohorts"], json!(["general"]));
}

#[tokio::test]
async fn marginal_pair_endpoint() {
    let h = Harness::new(1, 8);
    h.seed_inputs().await;
    let (s, b) = h
        .json(Method::POST, "/cohorts/general/marginal-pair", Some(json!({ "target": "harmful", "delta": 0.05, "taxonomy": "toy" })))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(b["ctrl"]["name"], "general-ctrl");
    assert_eq!(b["perturbed"]["perturbation"]["delta"], 0.05);
    let (_, stored) = h.json(Method::GET, "/cohorts/general-perturbed", None).await;
    assert_eq!(stored, b["perturbed"]);

    let (s, _) = h
        .json(Method::POST, "/cohorts/general/marginal-pair", Some(json!({ "target": "harmful", "delta": 0.05 })))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, b) = h
        .json(Method::POST, "/cohorts/general/marginal-pair", Some(json!({ "target": "harmful", "delta": 2.0 })))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "delta");
    let (s, b) = h
        .json(Method::POST, "/cohorts/general/marginal-pair", Some(json!({ "target": "politics", "delta": 0.1, "taxonomy": "toy" })))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "target");
    let (s, _) = h
        .json(Method::POST, "/cohorts/nope/marginal-pair", Some(json!({ "target": "harmful", "delta": 0.1 })))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn run_lifecycle_and_artifacts() {
    let h = Harness::new(2, 8);
    h.seed_inputs().await;
    let (s, b) = h.submit(10, 7, json!({})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = b["run_id"].as_str().unwrap().to_string();
    let (s, r) = h.json(Method::GET, &format!("/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(["queued", "running", "done"].contains(&r["status"].as_str().unwrap()));

    let rec = h.wait(&id).await;
    assert_eq!(rec.status, RunStatus::Done, "{:?}", rec.error_message);
    assert!(rec.started_at.unwrap() >= rec.submitted_at);
    assert!(rec.finished_at.unwrap() >= rec.started_at.unwrap());

    let (s, report) = h.call(Method::GET, &format!("/runs/{id}/report"), None).await;
    assert_eq!(s, StatusCode::OK);
    let parsed = RiskReport::from_json(std::str::from_utf8(&report).unwrap()).unwrap();
    assert_eq!(parsed.metadata.seed, 7);

    let cfg = RunConfigFile::load(&h.state.store.run_dir(&id).join("config.json")).unwrap();
    let offline = execute_run(&cfg).unwrap();
    assert_eq!(report, offline.report.as_bytes());
    let (_, log) = h.call(Method::GET, &format!("/runs/{id}/log"), None).await;
    assert_eq!(log, offline.log);

    let (s, ts) = h.json(Method::GET, &format!("/runs/{id}/timeseries?cohort=general"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ts["window"].as_u64(), Some(parsed.metadata.window as u64));
    assert_eq!(ts["series"][0], serde_json::to_value(&parsed.cohorts[0].series).unwrap());
    let (s, csv) = h.call(Method::GET, &format!("/runs/{id}/timeseries?window=5&format=csv"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 2 * 5);
    let (s, b) = h.json(Method::GET, &format!("/runs/{id}/timeseries?cohort=zzz"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "cohort");
    let (s, _) = h.json(Method::GET, &format!("/runs/{id}/timeseries?window=0"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, list) = h.json(Method::GET, "/runs", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (s, _) = h.call(Method::DELETE, &format!("/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = h.json(Method::GET, &format!("/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(!h.state.store.run_dir(&id).exists());
}

#[tokio::test]
async fn bad_run_requests() {
    let h = Harness::new(1, 8);
    h.seed_inputs().await;
    let (s, b) = h.submit(10, 1, json!({ "dataset": "nope" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "dataset");
    let (s, b) = h.submit(10, 1, json!({ "cohorts": ["general", "ghost"] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "cohorts[1]");
    let (s, b) = h.submit(10, 1, json!({ "simulation": { "steps": "x" } })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "simulation.steps");
    let (s, b) = h.json(Method::POST, "/runs", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["field"], "body");
    assert!(h.state.store.runs().is_empty());
}

#[tokio::test]
async fn invalid_cohort_fails_the_run_naming_the_field() {
    let h = Harness::new(1, 8);
    h.seed_inputs().await;
    let mut spec: Value = serde_json::from_str(&toy_file("cohort_general.json")).unwrap();
    spec["name"] = json!("bad");
    spec["perturbation"] = json!({ "target": "harmful", "delta": 1.5 });
    let extra = json!({ "cohorts": [], "simulation": { "steps": 5, "k": 5, "seed": 1, "cohorts": [spec] } });
    let (s, b) = h.submit(5, 1, extra).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let rec = h.wait(b["run_id"].as_str().unwrap()).await;
    assert_eq!(rec.status, RunStatus::Failed);
    let msg = rec.error_message.unwrap();
    assert!(msg.contains("simulation.cohorts[0].perturbation.delta"), "{msg}");
    let (s, b) = h.json(Method::GET, &format!("/runs/{}/report", rec.run_id), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["status"], "failed");
}

#[tokio::test]
async fn single_worker_runs_in_submission_order() {
    let h = Harness::new(1, 8);
    h.seed_inputs().await;
    let mut ids = Vec::new();
    for seed in 0..3 {
        let (s, b) = h.submit(15, seed, json!({})).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        ids.push(b["run_id"].as_str().unwrap().to_string());
    }
    let recs: Vec<RunRecord> = {
        let mut v = Vec::new();
        for id in &ids {
            v.push(h.wait(id).await);
        }
        v
    };
    for w in recs.windows(2) {
        assert!(w[0].finished_at.unwrap() <= w[1].started_at.unwrap());
    }
    let order: Vec<String> = h.state.store.runs().into_iter().map(|r| r.run_id).collect();
    assert_eq!(order, ids);
}

#[tokio::test]
async fn identical_submissions_give_identical_reports() {
    let h = Harness::new(2, 8);
    h.seed_inputs().await;
    let (_, a) = h.submit(12, 5, json!({})).await;
    let (_, b) = h.submit(12, 5, json!({})).await;
    let (a, b) = (a["run_id"].as_str().unwrap(), b["run_id"].as_str().unwrap());
    assert_ne!(a, b);
    h.wait(a).await;
    h.wait(b).await;
    let ra = h.call(Method::GET, &format!("/runs/{a}/report"), None).await.1;
    let rb = h.call(Method::GET, &format!("/runs/{b}/report"), None).await.1;
    assert_eq!(ra, rb);
}

#[tokio::test]
async fn full_queue_is_503() {
    let h = Harness::new(1, 1);
    h.seed_inputs().await;
    let mut statuses = Vec::new();
    for seed in 0..6 {
        statuses.push(h.submit(3000, seed, json!({})).await.0);
    }
    assert!(statuses.contains(&StatusCode::SERVICE_UNAVAILABLE), "{statuses:?}");
    let accepted = statuses.iter().filter(|s| **s == StatusCode::ACCEPTED).count();
    assert_eq!(h.state.store.runs().len(), accepted);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_all_finish_without_collisions() {
    let h = std::sync::Arc::new(Harness::new(4, 64));
    h.seed_inputs().await;
    let mut tasks = Vec::new();
    for seed in 0..50u64 {
        let h = std::sync::Arc::clone(&h);
        tasks.push(tokio::spawn(async move { h.submit(2, seed, json!({})).await }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for t in tasks {
        let (s, b) = t.await.unwrap();
        assert_eq!(s, StatusCode::ACCEPTED);
        ids.insert(b["run_id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.len(), 50);
    for id in &ids {
        assert_eq!(h.wait(id).await.status, RunStatus::Done);
    }
}

#[test]
fn restart_marks_interrupted_runs_failed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let ids = {
        let store = Store::open(&root).unwrap();
        let cfg = RunConfigFile::load(&FsPath::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/config.json")).unwrap();
        let a = store.create_run("toy", "toy", &cfg).unwrap().run_id;
        let b = store.create_run("toy", "toy", &cfg).unwrap().run_id;
        let c = store.create_run("toy", "toy", &cfg).unwrap().run_id;
        store.start_run(&b).unwrap().unwrap();
        store.start_run(&c).unwrap().unwrap();
        store.finish_run(&c, b"log", "report").unwrap();
        std::fs::remove_file(store.run_dir(&c).join("report.json")).unwrap();
        [a, b, c]
    };
    let store = Store::open(&root).unwrap();
    for id in &ids {
        let r = store.run(id).unwrap();
        assert_eq!(r.status, RunStatus::Failed);
        assert!(r.error_message.unwrap().contains("restart"));
        assert_eq!(r.report, None);
    }
}
