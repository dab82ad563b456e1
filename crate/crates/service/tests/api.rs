use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use icmse_core::designer::testfns::xi_1d;
use icmse_service::api::router;
use icmse_service::campaign::Campaign;
use icmse_service::store::campaign_json;
use icmse_service::{CampaignService, ServiceOptions};
use serde_json::{json, Value};
use tower::ServiceExt;

fn service(dir: &std::path::Path) -> Arc<CampaignService> {
    CampaignService::open(dir, ServiceOptions::default()).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn config_1d(c: Value) -> Value {
    json!({
        "p": 1, "n_ini": 6, "n_seq": 4, "c": c, "bifidelity": false,
        "method": "icmse", "restarts": 3, "seed": 11
    })
}

/// Creates the censored 1D campaign and answers its initial design with the
/// noise-free physical mean, sending raw readings above the limit.
async fn answered_1d(app: &Router) -> String {
    let (status, c) = call(app, "POST", "/api/campaigns", Some(json!({ "config": config_1d(json!(0.55)) }))).await;
    assert_eq!(status, StatusCode::CREATED, "{c}");
    let id = c["id"].as_str().unwrap().to_string();
    let xs: Vec<f64> = c["proposals"].as_array().unwrap().iter().map(|p| p["x"][0].as_f64().unwrap()).collect();
    assert_eq!(xs.len(), 6);
    for x in xs {
        let y = xi_1d(x);
        let (status, r) = call(
            app,
            "POST",
            &format!("/api/campaigns/{id}/observations"),
            Some(json!({ "x": [x], "value": y, "censored": y > 0.55 })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{r}");
        assert_eq!(r["normalized"], json!(y > 0.55));
    }
    id
}

#[tokio::test]
async fn censored_campaign_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let app = router(svc.clone());
    let id = answered_1d(&app).await;

    let (status, c) = call(&app, "GET", &format!("/api/campaigns/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["status"], "ReadyToPropose");
    let censored: Vec<&Value> = c["observations"].as_array().unwrap().iter().filter(|o| o["censored"] == true).collect();
    assert!(!censored.is_empty());
    for o in censored {
        assert_eq!(o["value"].as_f64(), Some(0.55));
    }

    let (status, a) = call(&app, "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let x = a["x_next"][0].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&x));
    let lambda = a["diagnostics"]["lambda"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&lambda));
    assert_eq!(a["high_censoring_risk"], json!(lambda > 0.5));
    let (_, b) = call(&app, "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_eq!(a, b);
    let (_, c) = call(&app, "GET", &format!("/api/campaigns/{id}"), None).await;
    assert_eq!(c["status"], "AwaitingObservation");

    // the snapshot on disk, a replay of the log and a cold restart agree
    let text = svc.snapshot_text(&id).unwrap();
    let replayed = Campaign::replay(&svc.events(&id).unwrap()).unwrap();
    assert_eq!(campaign_json(&replayed).unwrap(), text);
    let cold = service(dir.path());
    assert_eq!(campaign_json(&cold.get(&id).unwrap().campaign).unwrap(), text);
    let (_, again) = call(&router(cold), "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_eq!(again, a);

    // answering the proposal invalidates the cache
    let y = xi_1d(x).min(0.55);
    let (status, r) = call(
        &app,
        "POST",
        &format!("/api/campaigns/{id}/observations"),
        Some(json!({ "x": [x], "value": y, "censored": xi_1d(x) > 0.55 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["campaign"]["status"], "ReadyToPropose");
    let n_props = r["campaign"]["proposals"].as_array().unwrap().len();
    assert!(r["campaign"]["proposals"][n_props - 1]["answered_by"].is_number());
    let (_, next) = call(&app, "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_ne!(next["x_next"], a["x_next"]);
}

#[tokio::test]
async fn predictions_flag_the_censored_region() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path()));
    let id = answered_1d(&app).await;
    let grid: Vec<String> = (0..=100).map(|i| format!("{}", i as f64 / 100.0)).collect();
    let uri = format!("/api/campaigns/{id}/predictions?grid={}", grid.join(";"));
    let (status, preds) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK, "{preds}");
    let preds = preds.as_array().unwrap();
    assert_eq!(preds.len(), 101);
    let mut above = 0;
    for p in preds {
        let mean = p["mean"].as_f64().unwrap();
        let var = p["var"].as_f64().unwrap();
        let lam = p["lambda_point"].as_f64().unwrap();
        assert!(var >= 0.0);
        assert!((0.0..=1.0).contains(&lam));
        if (mean - 0.55).abs() > 1e-9 {
            assert_eq!(lam > 0.5, mean > 0.55, "mean {mean} lambda {lam}");
        }
        above += usize::from(lam > 0.5);
    }
    assert!(above > 0 && above < 101);

    let (status, crit) = call(&app, "GET", &format!("/api/campaigns/{id}/criterion?grid=0.1;0.5;0.9"), None).await;
    assert_eq!(status, StatusCode::OK, "{crit}");
    for c in crit.as_array().unwrap() {
        assert!(c["value"].as_f64().unwrap().is_finite());
        assert!((0.0..=1.0).contains(&c["lambda"].as_f64().unwrap()));
    }

    let (status, err) = call(&app, "GET", &format!("/api/campaigns/{id}/predictions?grid=0.2;1.5"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "validation");
    assert_eq!(err["field"], "grid[1][0]");
    let (status, err) = call(&app, "GET", &format!("/api/campaigns/{id}/criterion"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "grid");
}

#[tokio::test]
async fn no_limit_means_no_censoring_risk() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path()));
    let obs: Vec<Value> = (0..6)
        .map(|i| {
            let x = i as f64 / 5.0;
            json!({ "x": [x], "value": xi_1d(x) })
        })
        .collect();
    let (status, c) = call(
        &app,
        "POST",
        "/api/campaigns",
        Some(json!({ "config": config_1d(Value::Null), "observations": obs })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{c}");
    assert_eq!(c["status"], "ReadyToPropose");
    assert!(c["config"]["c"].is_null());
    let id = c["id"].as_str().unwrap();
    let (_, preds) = call(&app, "GET", &format!("/api/campaigns/{id}/predictions?grid=0;0.25;0.5;0.75;1"), None).await;
    for p in preds.as_array().unwrap() {
        assert_eq!(p["lambda_point"].as_f64(), Some(0.0));
    }
    let (status, r) = call(
        &app,
        "POST",
        &format!("/api/campaigns/{id}/observations"),
        Some(json!({ "x": [0.3], "value": 1.0, "censored": true })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(r["field"], "censored");
}

#[tokio::test]
async fn errors_carry_codes_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path()));

    let mut bad = config_1d(json!(0.55));
    bad["n_ini"] = json!(0);
    let (status, err) = call(&app, "POST", "/api/campaigns", Some(json!({ "config": bad }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err, json!({ "code": "validation", "message": "n_ini must be at least 2, got 0", "field": "config.n_ini" }));

    let (status, err) = call(&app, "POST", "/api/campaigns", Some(json!({ "config": { "p": 1 } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "validation");

    let (status, err) = call(&app, "GET", "/api/campaigns/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    let (status, _) = call(
        &app,
        "POST",
        "/api/campaigns/nope/observations",
        Some(json!({ "x": [0.5], "value": 0.1 })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/campaigns/nope/proposal", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, c) = call(&app, "POST", "/api/campaigns", Some(json!({ "config": config_1d(json!(0.55)) }))).await;
    let id = c["id"].as_str().unwrap();
    let obs_uri = format!("/api/campaigns/{id}/observations");
    let (status, err) = call(&app, "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");

    let (status, err) = call(&app, "POST", &obs_uri, Some(json!({ "x": [0.5], "value": 0.9 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "value");
    let (status, err) = call(&app, "POST", &obs_uri, Some(json!({ "x": [0.5, 0.5], "value": 0.1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "x");

    let body = json!({ "x": [0.0], "value": 0.1, "token": "run-1" });
    let (status, _) = call(&app, "POST", &obs_uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = call(&app, "POST", &obs_uri, Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");
    let (_, c) = call(&app, "GET", &format!("/api/campaigns/{id}"), None).await;
    assert_eq!(c["observations"].as_array().unwrap().len(), 1);

    let (_, list) = call(&app, "GET", "/api/campaigns", None).await;
    assert_eq!(list, json!([id]));
}

#[tokio::test]
async fn bifidelity_campaign_from_computer_runs() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path()));
    let pts = icmse_core::designer::initial_design(25, 3, 5).unwrap();
    let obs: Vec<Value> = pts
        .iter()
        .map(|x| {
            let y = (3.0 * x[0]).sin() + x[1] * x[2] - 0.5 * x[1];
            json!({ "x": x, "value": y, "fidelity": "computer" })
        })
        .collect();
    let config = json!({
        "p": 3, "n_ini": 25, "n_seq": 3, "c": 1.0, "bifidelity": true,
        "method": "icmse", "restarts": 2, "seed": 3
    });
    let (status, c) = call(&app, "POST", "/api/campaigns", Some(json!({ "config": config, "observations": obs }))).await;
    assert_eq!(status, StatusCode::CREATED, "{c}");
    assert_eq!(c["status"], "ReadyToPropose");
    assert!(c["proposals"].as_array().unwrap().is_empty());
    let id = c["id"].as_str().unwrap();
    let (status, p) = call(&app, "GET", &format!("/api/campaigns/{id}/proposal"), None).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    let x: Vec<f64> = serde_json::from_value(p["x_next"].clone()).unwrap();
    assert_eq!(x.len(), 3);
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[tokio::test]
async fn saturated_space_still_gets_a_flagged_proposal() {
    use icmse_core::gpmodel::{FittedModel, Hyperparams, ModelMode, Observation};
    use icmse_core::kernels::LengthscaleParams;
    use icmse_service::{EventKind, EventRecord};

    // a constructed model whose mean sits six prior sds above the limit
    let dir = tempfile::tempdir().unwrap();
    let c = -3.0;
    let data: Vec<Observation> = (0..5).map(|i| Observation::censored(vec![i as f64 / 4.0], c)).collect();
    let params = Hyperparams::single(3.0, 1.0, LengthscaleParams::from_rates(vec![2.0]).unwrap(), 1e-4).unwrap();
    let model = FittedModel::new(params, data.clone(), c, ModelMode::CensoredSingle).unwrap();
    let files = icmse_service::store::CampaignFiles::create(dir.path(), "saturated").unwrap();
    let config = serde_json::from_value(config_1d(json!(c))).unwrap();
    let at = |s: i64| chrono::DateTime::from_timestamp(1_700_000_000 + s, 0).unwrap();
    files
        .append(&EventRecord {
            seq: 1,
            timestamp: at(1),
            kind: EventKind::Created {
                id: "saturated".into(),
                config,
                observations: data,
                initial_design: vec![],
            },
        })
        .unwrap();
    files
        .append(&EventRecord {
            seq: 2,
            timestamp: at(2),
            kind: EventKind::ModelRefit { snapshot: model.snapshot() },
        })
        .unwrap();

    let app = router(service(dir.path()));
    let (_, camp) = call(&app, "GET", "/api/campaigns/saturated", None).await;
    assert_eq!(camp["status"], "ReadyToPropose", "{camp}");
    let grid: Vec<String> = (0..=20).map(|i| format!("{}", i as f64 / 20.0)).collect();
    let (_, preds) = call(&app, "GET", &format!("/api/campaigns/saturated/predictions?grid={}", grid.join(";")), None).await;
    for p in preds.as_array().unwrap() {
        assert!(p["lambda_point"].as_f64().unwrap() > 0.999, "{p}");
    }
    let (status, p) = call(&app, "GET", "/api/campaigns/saturated/proposal", None).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    let x = p["x_next"][0].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&x));
    assert!(p["diagnostics"]["lambda"].as_f64().unwrap() > 0.999, "{p}");
    assert_eq!(p["high_censoring_risk"], true);
}

#[tokio::test]
async fn floats_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let app = router(svc.clone());
    let (_, c) = call(&app, "POST", "/api/campaigns", Some(json!({ "config": config_1d(json!(0.55)) }))).await;
    let id = c["id"].as_str().unwrap();
    let values: [f64; 4] = [0.1 + 0.2, 1.0 / 3.0, -2.220446049250313e-16, 0.549_999_999_999_999_9];
    for (i, v) in values.iter().enumerate() {
        let x = (i as f64 + 0.5) / 7.0;
        call(&app, "POST", &format!("/api/campaigns/{id}/observations"), Some(json!({ "x": [x], "value": v }))).await;
    }
    let stored = Campaign::replay(&svc.events(id).unwrap()).unwrap();
    for (o, v) in stored.observations.iter().zip(values) {
        assert_eq!(o.value.to_bits(), v.to_bits());
    }
}
