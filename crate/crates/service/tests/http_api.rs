use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chimera_core::bench::{compute_metrics, EpisodeLog, MetricsSummary};
use chimera_core::causal::{generate_corpus, CausalEngine, CorpusConfig, EngineConfig};
use chimera_core::guardian::{validate_action, ConstraintSet};
use chimera_core::sim::SimConfig;
use chimera_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(cfg: &ServiceConfig, engine: Option<Arc<CausalEngine>>) -> Router {
    router(AppState::with_engine(cfg, engine), cfg.cors_origin.as_deref())
}

fn app() -> Router {
    app_with(&ServiceConfig::default(), None)
}

fn small_engine() -> Arc<CausalEngine> {
    let engine = EngineConfig {
        n_trees: 8,
        nuisance_trees: 8,
        min_observations: 50,
        ..EngineConfig::default()
    };
    let corpus = CorpusConfig {
        episodes: 40,
        weeks: 12,
        seed: 3,
    };
    let data = generate_corpus(&SimConfig::default(), &ConstraintSet::default(), &corpus, &engine).unwrap();
    Arc::new(CausalEngine::fit(&data, &engine).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn create(app: &Router, body: Option<Value>) -> String {
    let (status, v) = call(app, "POST", "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn empty_body_gives_default_initial_conditions() {
    let app = app();
    let (status, v) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["state"]["trust"], 0.7);
    assert_eq!(v["state"]["cumulative_profit"], 0.0);
    assert_eq!(v["state"]["price"], 100.0);
    assert_eq!(v["state"]["week"], 0);
    assert_eq!(v["horizon"], 52);
}

#[tokio::test]
async fn ids_are_distinct_and_opaque() {
    let app = app();
    let a = create(&app, None).await;
    let b = create(&app, None).await;
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
}

#[tokio::test]
async fn overrides_are_applied_and_checked() {
    let app = app();
    let (status, v) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"overrides": {"initial_price": 90, "weeks": 52, "max_price": "140"}})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["state"]["price"], 90.0);
    assert_eq!(v["horizon"], 52);

    for bad in [
        json!({"overrides": {"no_such_key": 1}}),
        json!({"overrides": {"base_demand": -5}}),
        json!({"weeks": 0}),
        json!({"bogus": true}),
    ] {
        let (status, v) = call(&app, "POST", "/sessions", Some(bad)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(v["code"].is_string() && v["message"].is_string(), "{v}");
    }
}

#[tokio::test]
async fn validate_reports_and_repairs_without_advancing() {
    let app = app();
    let id = create(&app, None).await;
    let uri = format!("/sessions/{id}/validate");
    let (status, v) = call(&app, "POST", &uri, Some(json!({"price_change": 60, "ad_spend": 0}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["verdict"]["is_valid"], false);
    assert_eq!(v["repair"]["safe_action"]["price_change_pct"], 50.0);

    let (_, v) = call(&app, "POST", &uri, Some(json!({"price_change_pct": 0, "ad_spend": 0}))).await;
    assert_eq!(v["verdict"]["is_valid"], true);
    assert_eq!(v["repair"]["repairs"], json!([]));

    let (_, h) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    assert_eq!(h["records"], json!([]));
}

#[tokio::test]
async fn estimate_needs_an_engine() {
    let app = app();
    let id = create(&app, None).await;
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/estimate"),
        Some(json!({"price_change": -5, "ad_spend": 500})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "engine_unavailable");
}

#[tokio::test]
async fn estimate_fields_and_reference_action() {
    let app = app_with(&ServiceConfig::default(), Some(small_engine()));
    let id = create(&app, Some(json!({"trust_multiplier": 100000}))).await;
    let uri = format!("/sessions/{id}/estimate");

    let (status, hold) = call(&app, "POST", &uri, Some(json!({"price_change": 0, "ad_spend": 0}))).await;
    assert_eq!(status, StatusCode::OK, "{hold}");
    assert_eq!(hold["profit_change"], 0.0);
    assert_eq!(hold["trust_change"], 0.0);
    assert_eq!(hold["long_term_value"], 0.0);

    let body = json!({"price_change": -10, "ad_spend": 1500});
    let (_, a) = call(&app, "POST", &uri, Some(body.clone())).await;
    let (_, b) = call(&app, "POST", &uri, Some(body)).await;
    assert_eq!(a, b);
    let mut keys: Vec<&str> = a.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["long_term_value", "profit_change", "profit_confidence", "trust_change", "trust_confidence"]
    );
    let ltv = a["profit_change"].as_f64().unwrap() + 100_000.0 * a["trust_change"].as_f64().unwrap();
    assert!((a["long_term_value"].as_f64().unwrap() - ltv).abs() < 1e-9);
}

#[tokio::test]
async fn act_advances_one_week_and_rejects_stale_weeks() {
    let app = app();
    let id = create(&app, None).await;
    let uri = format!("/sessions/{id}/act");
    let body = json!({"price_change": -5, "ad_spend": 500, "week": 0});
    let (status, v) = call(&app, "POST", &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["week"], 1);
    assert_eq!(v["state"]["week"], 1);
    assert!(v["outcome"]["profit"].is_number());

    let (status, v) = call(&app, "POST", &uri, Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "week_mismatch");

    let (_, h) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    assert_eq!(h["records"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_acts_for_the_same_week_admit_one() {
    let app = app();
    let id = create(&app, None).await;
    let uri = format!("/sessions/{id}/act");
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, uri) = (app.clone(), uri.clone());
            tokio::spawn(async move {
                call(&app, "POST", &uri, Some(json!({"price_change": 1, "ad_spend": 100, "week": 0})))
                    .await
                    .0
            })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 1);
}

#[tokio::test]
async fn horizon_is_enforced() {
    let app = app();
    let id = create(&app, Some(json!({"weeks": 2}))).await;
    let uri = format!("/sessions/{id}/act");
    for _ in 0..2 {
        let (s, _) = call(&app, "POST", &uri, Some(json!({"price_change": 0, "ad_spend": 0}))).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, v) = call(&app, "POST", &uri, Some(json!({"price_change": 0, "ad_spend": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "horizon_reached");
}

#[tokio::test]
async fn repaired_history_replays_clean_and_metrics_match() {
    let app = app();
    let id = create(&app, None).await;
    let moves = [60.0, -70.0, 10.0, -30.0, 45.0, 0.0, -5.0, 20.0];
    for (i, pct) in moves.iter().enumerate() {
        let ad = 1500.0 * i as f64;
        let (s, _) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/act"),
            Some(json!({"price_change": pct, "ad_spend": ad, "mode": "repaired"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, h) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    let log: EpisodeLog = serde_json::from_value(h).unwrap();
    assert_eq!(log.records.len(), moves.len());
    let cs = ConstraintSet::default();
    for r in &log.records {
        assert!(validate_action(&r.executed_action, &r.state_before, &cs).is_valid);
    }
    assert!(log.records.iter().any(|r| !r.repairs.is_empty()));

    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    let served: MetricsSummary = serde_json::from_value(m).unwrap();
    assert_eq!(served, compute_metrics(&log).unwrap());
    assert_eq!(served.violation_weeks, 0);
}

#[tokio::test]
async fn raw_mode_records_violations() {
    let app = app();
    let id = create(&app, None).await;
    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/act"),
        Some(json!({"price_change": 60, "ad_spend": 0, "mode": "raw"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["record"]["executed_action"]["price_change_pct"], 60.0);
    assert_eq!(v["state"]["price"], 160.0);
    let (_, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["violation_weeks"], 1);
}

#[tokio::test]
async fn fresh_metrics_are_null_and_unknown_ids_404() {
    let app = app();
    let id = create(&app, None).await;
    let (s, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!((s, m), (StatusCode::OK, Value::Null));
    for (method, path) in [
        ("POST", "validate"),
        ("POST", "estimate"),
        ("POST", "act"),
        ("GET", "history"),
        ("GET", "metrics"),
    ] {
        let body = (method == "POST").then(|| json!({"price_change": 0, "ad_spend": 0}));
        let (s, v) = call(&app, method, &format!("/sessions/nope/{path}"), body).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(v["code"], "unknown_session");
    }
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/act"), Some(json!({"price_change": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_body");
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = create(&app, None).await;
    let b = create(&app, None).await;
    call(&app, "POST", &format!("/sessions/{a}/act"), Some(json!({"price_change": -10, "ad_spend": 800}))).await;
    let (_, hb) = call(&app, "GET", &format!("/sessions/{b}/history"), None).await;
    assert_eq!(hb["records"], json!([]));
}

#[tokio::test]
async fn persisted_sessions_replay_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        persist_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let first = router(AppState::new(&cfg).unwrap(), None);
    let id = create(&first, Some(json!({"overrides": {"noise_sigma": 0.05, "seed": 9}}))).await;
    for (pct, mode) in [(-8.0, "repaired"), (70.0, "raw"), (3.0, "repaired")] {
        call(
            &first,
            "POST",
            &format!("/sessions/{id}/act"),
            Some(json!({"price_change": pct, "ad_spend": 900, "mode": mode})),
        )
        .await;
    }
    let (_, before) = call(&first, "GET", &format!("/sessions/{id}/history"), None).await;
    drop(first);

    let second = router(AppState::new(&cfg).unwrap(), None);
    let (s, after) = call(&second, "GET", &format!("/sessions/{id}/history"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    // the replayed session keeps journaling
    let (s, v) = call(&second, "POST", &format!("/sessions/{id}/act"), Some(json!({"price_change": 0, "ad_spend": 0, "week": 3}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let third = AppState::new(&cfg).unwrap();
    assert_eq!(third.session_count(), 1);
}

#[test]
fn torn_journal_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        persist_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let mut s = chimera_service::Session::new("abc".into(), Default::default()).unwrap();
    s.persist_to(dir.path()).unwrap();
    s.act(chimera_core::sim::Action::new(-2.0, 100.0), chimera_service::ActMode::Repaired)
        .unwrap();
    let path = s.journal_path().unwrap().to_path_buf();
    drop(s);
    std::fs::write(&path, std::fs::read_to_string(&path).unwrap() + "{\"op\":\"act\",\"act").unwrap();

    let mut back = chimera_service::replay(&path).unwrap();
    assert_eq!(back.state.week, 1);
    back.act(chimera_core::sim::Action::new(0.0, 0.0), chimera_service::ActMode::Raw)
        .unwrap();
    drop(back);
    let again = AppState::new(&cfg).unwrap();
    assert_eq!(again.session_count(), 1);
    assert_eq!(chimera_service::replay(&path).unwrap().state.week, 2);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        ttl: Duration::from_millis(50),
        persist_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let state = AppState::new(&cfg).unwrap();
    let app = router(state.clone(), None);
    let id = create(&app, None).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[tokio::test]
async fn shared_token_and_cors() {
    let cfg = ServiceConfig {
        token: Some("s3cret".into()),
        cors_origin: Some("http://cockpit.local".into()),
        ..ServiceConfig::default()
    };
    let app = app_with(&cfg, None);
    let (s, v) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["code"], "unauthorized");

    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("authorization", "Bearer s3cret")
        .header("origin", "http://cockpit.local")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    assert_eq!(
        resp.headers()["access-control-allow-origin"],
        "http://cockpit.local"
    );

    let preflight = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://cockpit.local")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(preflight).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key("access-control-allow-methods"));
}
