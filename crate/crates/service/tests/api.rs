use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tmcsim::capability::{HttpFetcher, HttpResponse, TransportError};
use tmcsim::pipeline::DataSource;
use tmcsim_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn fixture_manifest() -> Value {
    json!({
        "intersection_ids": ["13446"],
        "network": { "path": fixture("fourway.net.xml") },
        "data": { "path": fixture("fourway_1bin.csv") },
        "window": { "start": "2023-05-01T08:00:00", "end": "2023-05-01T08:15:00" }
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<(&str, Vec<u8>)>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some((ct, bytes)) => {
            req = req.header(header::CONTENT_TYPE, ct);
            Body::from(bytes)
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ct = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ct)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = call(app, method, uri, body.map(|v| ("application/json", v.to_string().into_bytes()))).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn wait_built(app: &Router, id: &str) -> Value {
    for _ in 0..500 {
        let (status, v) = call_json(app, "GET", &format!("/scenarios/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if v["building"] == false {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("build of {id} never finished");
}

fn offline_app(dir: &std::path::Path) -> Router {
    let mut config = ServiceConfig::offline(dir);
    config.timerange_data = Some(DataSource::Path(fixture("fourway_1bin.csv").to_string_lossy().into_owned()));
    router(AppState::new(config).unwrap())
}

#[tokio::test]
async fn create_build_get_lists_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let app = offline_app(dir.path());
    let (status, created) = call_json(&app, "POST", "/scenarios", Some(fixture_manifest())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["status"], "draft");
    let id = created["id"].as_str().unwrap().to_string();

    let (status, started) = call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(started["building"], true);

    let record = wait_built(&app, &id).await;
    assert_eq!(record["status"], "built", "{record}");
    let artifacts = record["artifacts"].as_object().unwrap();
    assert_eq!(artifacts.keys().collect::<Vec<_>>(), ["config", "network", "routes"]);

    let (status, bytes, ct) = call(&app, "GET", &format!("/scenarios/{id}/artifacts/routes"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("application/xml"));
    let routes = String::from_utf8(bytes).unwrap();
    assert!(routes.contains(r#"id="f_13446_NL_car_0" from="S2C" to="C2W" begin="0" end="900" number="150""#));

    // the service output equals a direct pipeline build
    let direct = tempfile::tempdir().unwrap();
    let m = tmcsim::pipeline::PipelineManifest::from_json(&fixture_manifest().to_string()).unwrap();
    let built = tmcsim::pipeline::build_scenario(&m, dir.path(), direct.path(), &tmcsim::pipeline::BuildEnv::offline()).unwrap();
    assert_eq!(std::fs::read_to_string(built.artifacts.routes).unwrap(), routes);
}

#[tokio::test]
async fn uploaded_inputs_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let app = offline_app(dir.path());
    let manifest = json!({
        "intersection_ids": ["13446"],
        "network": { "path": "net.xml" },
        "data": { "path": "counts.csv" },
        "window": { "start": "2023-05-01T08:00:00", "end": "2023-05-01T08:15:00" }
    });
    let (_, created) = call_json(&app, "POST", "/scenarios", Some(manifest)).await;
    let id = created["id"].as_str().unwrap().to_string();
    for (name, file) in [("net.xml", "fourway.net.xml"), ("counts.csv", "fourway_1bin.csv")] {
        let bytes = std::fs::read(fixture(file)).unwrap();
        let (status, _, _) = call(&app, "PUT", &format!("/scenarios/{id}/inputs/{name}"), Some(("application/octet-stream", bytes))).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, _, _) = call(&app, "PUT", &format!("/scenarios/{id}/inputs/..evil"), Some(("text/plain", vec![1]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
    assert_eq!(wait_built(&app, &id).await["status"], "built");
}

/// Fetcher that blocks until released, then answers 503.
struct GatedFetcher {
    open: Mutex<bool>,
    cv: Condvar,
}

impl GatedFetcher {
    fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl HttpFetcher for GatedFetcher {
    fn get(&self, _url: &str) -> Result<HttpResponse, TransportError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        Ok(HttpResponse { status: 503, body: b"down".to_vec() })
    }
}

#[tokio::test]
async fn concurrent_build_conflicts_and_upstream_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Arc::new(GatedFetcher { open: Mutex::new(false), cv: Condvar::new() });
    let mut config = ServiceConfig::offline(dir.path());
    config.http = Some(gate.clone());
    let app = router(AppState::new(config).unwrap());
    let mut manifest = fixture_manifest();
    manifest["data"] = json!("auto_fetch");
    let (_, created) = call_json(&app, "POST", "/scenarios", Some(manifest)).await;
    let id = created["id"].as_str().unwrap().to_string();

    let (first, _) = call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
    let (second, body) = call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
    assert_eq!(first, StatusCode::ACCEPTED);
    assert_eq!(second, StatusCode::CONFLICT, "{body}");
    // still the last completed state while the build runs
    let (_, during) = call_json(&app, "GET", &format!("/scenarios/{id}"), None).await;
    assert_eq!((during["status"].as_str(), during["building"].as_bool()), (Some("draft"), Some(true)));

    gate.release();
    let record = wait_built(&app, &id).await;
    assert_eq!(record["status"], "failed");
    assert!(!record["diagnostics"].as_array().unwrap().is_empty());
    assert_eq!(record["error"]["category"], "upstream");
    assert_eq!(record["artifacts"], json!({}));
}

#[tokio::test]
async fn timerange_unknown_id_is_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let app = offline_app(dir.path());
    let (status, v) = call_json(&app, "GET", "/intersections/timerange?ids=13446,424242", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["ranges"]["424242"], json!([]));
    assert_eq!(v["ranges"]["13446"][0]["start"], "2023-05-01T08:00:00");
}

struct FailingFetcher;

impl HttpFetcher for FailingFetcher {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        Err(TransportError { url: url.to_string(), message: "connection refused".into() })
    }
}

#[tokio::test]
async fn timerange_upstream_failure_is_502_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::offline(dir.path());
    config.timerange_data = Some(DataSource::AutoFetch);
    config.http = Some(Arc::new(FailingFetcher));
    let app = router(AppState::new(config).unwrap());
    let (status, v) = call_json(&app, "GET", "/intersections/timerange?ids=13446", None).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(v["category"], "upstream");
    assert_eq!(v["exit_code"], 8);
}

#[tokio::test]
async fn schema_violations_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = offline_app(dir.path());
    let (status, v) = call_json(&app, "POST", "/scenarios", Some(json!({ "intersection_ids": [] , "data": "auto_fetch"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["category"], "usage");
    let (status, _) = call_json(&app, "POST", "/scenarios", Some(json!({ "nonsense": true }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call_json(&app, "GET", "/scenarios/does-not-exist", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "POST", "/scenarios/does-not-exist/build", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/scenarios/..%2F..%2Fetc/artifacts/routes", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn validate_upload_gives_zero_diff_report() {
    let dir = tempfile::tempdir().unwrap();
    let app = offline_app(dir.path());
    let (_, created) = call_json(&app, "POST", "/scenarios", Some(fixture_manifest())).await;
    let id = created["id"].as_str().unwrap().to_string();

    let vehroutes = std::fs::read(fixture("fourway_1bin.vehroute.xml")).unwrap();
    let (status, _, _) = call(&app, "POST", &format!("/scenarios/{id}/validate"), Some(("application/xml", vehroutes.clone()))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "not built yet");

    call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
    wait_built(&app, &id).await;
    let (status, bytes, _) = call(&app, "POST", &format!("/scenarios/{id}/validate"), Some(("application/xml", vehroutes))).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let rows = v["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| r["abs_diff"] == 0));

    let (status, _, ct) = call(&app, "GET", &format!("/scenarios/{id}/artifacts/report"), None).await;
    assert_eq!((status, ct.as_deref()), (StatusCode::OK, Some("application/json")));

    let (status, v) =
        call_json(&app, "POST", &format!("/scenarios/{id}/validate"), Some(json!({ "traci_endpoint": "127.0.0.1:1", "steps": 1 })))
            .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(v["category"], "protocol");
}

#[tokio::test]
async fn records_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let app = offline_app(dir.path());
        let (_, created) = call_json(&app, "POST", "/scenarios", Some(fixture_manifest())).await;
        let id = created["id"].as_str().unwrap().to_string();
        call_json(&app, "POST", &format!("/scenarios/{id}/build"), None).await;
        wait_built(&app, &id).await;
        id
    };
    let app = offline_app(dir.path());
    let (status, v) = call_json(&app, "GET", &format!("/scenarios/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "built");
    let (_, list) = call_json(&app, "GET", "/scenarios", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (status, _) = call_json(&app, "PUT", &format!("/scenarios/{id}"), Some(fixture_manifest())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, v) = call_json(&app, "GET", &format!("/scenarios/{id}"), None).await;
    assert_eq!(v["status"], "draft");
    let (status, _) = call_json(&app, "DELETE", &format!("/scenarios/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call_json(&app, "GET", &format!("/scenarios/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_assets_served_from_one_origin() {
    let dir = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>ui</html>").unwrap();
    let mut config = ServiceConfig::offline(dir.path());
    config.static_dir = Some(web.path().to_path_buf());
    let app = router(AppState::new(config).unwrap());
    let (status, bytes, _) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<html>ui</html>");
    let (status, _) = call_json(&app, "GET", "/scenarios", None).await;
    assert_eq!(status, StatusCode::OK);
}
