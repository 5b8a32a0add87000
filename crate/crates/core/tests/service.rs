use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use beas_core::service::{router, AppState, ServiceConfig, SLICE_DIMS, VOLUME_HEADER};
use beas_core::volume::io::{encode_payload, VolumeHeader};
use beas_core::volume::{generate_phantom, save_volume, Phantom, PhantomSpec};
use beas_core::{dice, SessionOp, VoxelVolume};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn ball() -> Phantom {
    generate_phantom(&PhantomSpec {
        dims: [40; 3],
        center: [20.0; 3],
        radii: [9.0; 3],
        blur_sigma_mm: 1.0,
        noise_sigma: 0.05,
        seed: 5,
        ..PhantomSpec::default()
    })
    .unwrap()
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Bytes,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {:?}", self.body))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, headers, body }
}

fn post_json(uri: &str, v: Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(v.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn upload(v: &VoxelVolume) -> Request<Body> {
    let header = serde_json::to_string(&VolumeHeader::for_volume(v, "upload.raw")).unwrap();
    Request::post("/volumes")
        .header(VOLUME_HEADER, header)
        .body(Body::from(encode_payload(v.data())))
        .unwrap()
}

async fn app_with_ball(cfg: ServiceConfig) -> (Router, Phantom, String, String) {
    let ph = ball();
    let app = router(AppState::new(cfg));
    let r = send(&app, upload(&ph.prob)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let prob_id = r.json()["volume_id"].as_str().unwrap().to_string();
    let r = send(&app, upload(&ph.image)).await;
    let image_id = r.json()["volume_id"].as_str().unwrap().to_string();
    (app, ph, prob_id, image_id)
}

async fn create_session(app: &Router, prob_id: &str, image_id: &str) -> String {
    let r = send(
        app,
        post_json("/sessions", json!({"prob_id": prob_id, "image_id": image_id, "mesh": {"t": 12, "p": 16}})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{:?}", r.body);
    let v = r.json();
    assert_eq!(v["version"], 1);
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_flow() {
    let (app, ph, prob_id, image_id) = app_with_ball(ServiceConfig::default()).await;
    let sid = create_session(&app, &prob_id, &image_id).await;

    let r = send(&app, get(&format!("/sessions/{sid}"))).await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(v["metrics"]["components"], 1);
    assert_eq!(v["metrics"]["cavities"], 0);
    assert_eq!(v["points"].as_array().unwrap().len(), 0);

    let r = send(&app, post_json(&format!("/sessions/{sid}/points"), json!({"x_mm": 31.0, "y_mm": 20.0, "z_mm": 20.0}))).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    let v = r.json();
    assert_eq!(v["version"], 2);
    let pid = v["point_id"].as_u64().unwrap();
    assert!(v["residual_mm"].as_f64().unwrap() < 0.5, "{v}");

    let r = send(&app, get(&format!("/sessions/{sid}/log"))).await;
    let log: Vec<SessionOp> = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(log, vec![SessionOp::Add { x_mm: 31.0, y_mm: 20.0, z_mm: 20.0 }]);

    let r = send(&app, Request::delete(format!("/sessions/{sid}/points/{pid}")).body(Body::empty()).unwrap()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["version"], 3);

    let r = send(&app, Request::delete(format!("/sessions/{sid}/points/{pid}")).body(Body::empty()).unwrap()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = send(&app, post_json(&format!("/sessions/{sid}/undo"), json!({}))).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = send(&app, get(&format!("/sessions/{sid}"))).await;
    assert_eq!(r.json()["points"].as_array().unwrap().len(), 1);

    let r = send(&app, get(&format!("/sessions/{sid}/slice?axis=2&index=20&layer=mask"))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[SLICE_DIMS], "40,40");
    assert_eq!(r.body.len(), 40 * 40 * 4);
    let r = send(&app, get(&format!("/sessions/{sid}/slice?axis=2&index=99&layer=mask"))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = send(&app, get(&format!("/sessions/{sid}/slice?axis=0&index=3&layer=bogus"))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = send(&app, get(&format!("/sessions/{sid}/mesh"))).await;
    let obj = String::from_utf8(r.body.to_vec()).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("v ")) && obj.lines().any(|l| l.starts_with("f ")));

    let r = send(&app, get(&format!("/sessions/{sid}/mask"))).await;
    let header: VolumeHeader = serde_json::from_slice(r.headers[VOLUME_HEADER].as_bytes()).unwrap();
    let mask = beas_core::volume::io::volume_from_parts(&header, &r.body).unwrap();
    assert!(dice(&mask, &ph.truth).unwrap() > 0.9);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_mutation_is_rejected() {
    let (app, _ph, prob_id, image_id) = app_with_ball(ServiceConfig::default()).await;
    let sid = create_session(&app, &prob_id, &image_id).await;
    let uri = format!("/sessions/{sid}/points");
    let (a, b) = tokio::join!(
        send(&app, post_json(&uri, json!({"x_mm": 31.0, "y_mm": 20.0, "z_mm": 20.0}))),
        send(&app, post_json(&uri, json!({"x_mm": 20.0, "y_mm": 31.0, "z_mm": 20.0}))),
    );
    let mut statuses = [a.status, b.status];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);

    let r = send(&app, get(&format!("/sessions/{sid}"))).await;
    let v = r.json();
    assert_eq!(v["points"].as_array().unwrap().len(), 1);
    assert_eq!(v["version"], 2);
}

#[tokio::test]
async fn invalid_requests() {
    let (app, _ph, prob_id, _image_id) = app_with_ball(ServiceConfig {
        max_sessions: 1,
        ..ServiceConfig::default()
    })
    .await;

    let r = send(&app, Request::post("/sessions").body(Body::from("{not json")).unwrap()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.json()["error"].as_str().unwrap().contains("invalid payload"));

    let r = send(&app, post_json("/sessions", json!({"prob_id": "nope"}))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = send(&app, post_json("/sessions", json!({"prob_id": prob_id, "mesh": {"t": 2, "p": 16}}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = send(&app, get("/sessions/s999")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let sid = create_session(&app, &prob_id, &prob_id).await;
    let r = send(&app, post_json("/sessions", json!({"prob_id": prob_id}))).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);

    let r = send(&app, post_json(&format!("/sessions/{sid}/points"), json!({"x_mm": "a"}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = send(&app, post_json(&format!("/sessions/{sid}/points"), json!({"x_mm": 20.0, "y_mm": 20.0, "z_mm": 20.0}))).await;
    assert!(r.status.is_client_error(), "point at the origin: {}", r.status);
    let r = send(&app, post_json(&format!("/sessions/{sid}/undo"), json!({}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let bad = Request::post("/volumes")
        .header(VOLUME_HEADER, r#"{"dims":[4,4,4],"spacing_mm":[1,1,1],"kind":"mask","dtype":"f32le","data":"x"}"#)
        .body(Body::from(vec![0u8; 12]))
        .unwrap();
    assert_eq!(send(&app, bad).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn volumes_by_path_stay_in_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let ph = ball();
    save_volume(&ph.prob, dir.path().join("prob")).unwrap();
    let app = router(AppState::new(ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    }));
    let r = send(&app, post_json("/volumes", json!({"path": "prob.json"}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = send(&app, post_json("/volumes", json!({"path": "../prob.json"}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = send(&app, post_json("/volumes", json!({"path": "missing.json"}))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_allowlist() {
    let state = AppState::new(ServiceConfig {
        cors_allowlist: vec!["http://viewer.local".into()],
        ..ServiceConfig::default()
    });
    let app = router(Arc::clone(&state));
    let req = Request::get("/sessions/s1")
        .header("origin", "http://viewer.local")
        .body(Body::empty())
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.headers["access-control-allow-origin"], "http://viewer.local");
    let req = Request::get("/sessions/s1")
        .header("origin", "http://elsewhere")
        .body(Body::empty())
        .unwrap();
    assert!(send(&app, req).await.headers.get("access-control-allow-origin").is_none());
}
