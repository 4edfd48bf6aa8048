#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::Router;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use matchscope_core::store::{write_spatial_tensor, SpatialFeatureMap};
use matchscope_server::{AppState, DataRoot, ServerConfig};

pub const BOUNDARY: &str = "matchscope-test-boundary";

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> SpatialFeatureMap {
    SpatialFeatureMap::new(0, h, w, c, (0..h * w * c).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn record(image_id: u64, hotel_id: u64, chain_id: u64, lat: f64, lon: f64, terms: &[&str]) -> String {
    serde_json::json!({
        "image_id": image_id,
        "hotel_id": hotel_id,
        "chain_id": chain_id,
        "latitude": lat,
        "longitude": lon,
        "source": "crowdsourced",
        "captured_at": "2019-06-01T12:00:00Z",
        "terms": terms,
    })
    .to_string()
}

/// Twelve images over four hotels, 2×2×4 tensors, index built and written.
/// Image 99 is catalogued with a 1×2×4 tensor stored after the build, so
/// explaining it hits a grid mismatch.
pub fn populate(root: &Path) -> Vec<SpatialFeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut lines = Vec::new();
    let mut maps = Vec::new();
    let data = DataRoot::new(root);
    std::fs::create_dir_all(data.features_dir()).unwrap();
    for id in 1..=12u64 {
        let hotel = (id - 1) / 3 + 1;
        let terms: &[&str] = if id % 2 == 0 { &["pool", "lobby"] } else { &["room"] };
        lines.push(record(id, hotel, hotel % 2, 38.6 + hotel as f64, -90.2, terms));
        let map = random_map(&mut rng, 2, 2, 4).with_image_id(id);
        write_spatial_tensor(&map, &data.feature_path(id)).unwrap();
        maps.push(map);
    }
    lines.push(record(99, 9, 0, 0.0, 0.0, &["room"]));
    std::fs::write(data.catalog_path(), lines.join("\n") + "\n").unwrap();
    let catalog = data.load_catalog().unwrap();
    data.build_index(&catalog, None).unwrap();
    write_spatial_tensor(&random_map(&mut rng, 1, 2, 4), &data.feature_path(99)).unwrap();
    maps
}

pub fn app(root: &Path, tweak: impl FnOnce(&mut ServerConfig)) -> (Arc<AppState>, Router) {
    let mut config = ServerConfig::new(root);
    tweak(&mut config);
    let state = AppState::load(config).unwrap();
    (state.clone(), matchscope_server::router(state))
}

pub struct Part<'a> {
    pub name: &'a str,
    pub content_type: &'a str,
    pub bytes: Vec<u8>,
}

pub fn multipart(parts: &[Part<'_>]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{}\"; filename=\"{}\"\r\n", p.name, p.name).as_bytes(),
        );
        body.extend_from_slice(format!("Content-Type: {}\r\n\r\n", p.content_type).as_bytes());
        body.extend_from_slice(&p.bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn tensor_part(map: &SpatialFeatureMap) -> Part<'static> {
    Part { name: "tensor", content_type: "application/octet-stream", bytes: map.to_sfm1_bytes() }
}

pub fn json_part<'a>(name: &'a str, json: &str) -> Part<'a> {
    Part { name, content_type: "application/json", bytes: json.as_bytes().to_vec() }
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not json ({e}): {:?}", String::from_utf8_lossy(&self.body)))
    }

    /// Error replies carry exactly `{code, message}`.
    pub fn error_code(&self) -> String {
        let v = self.json();
        let obj = v.as_object().expect("error body is an object");
        assert_eq!(obj.len(), 2, "error body {v}");
        assert!(obj["message"].is_string());
        obj["code"].as_str().unwrap().to_string()
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, content_type, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_query(app: &Router, parts: &[Part<'_>]) -> Reply {
    let req = Request::post("/api/v1/queries")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    send(app, req).await
}

pub async fn send_json(app: &Router, method: &str, uri: &str, json: &str) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(json.to_string()))
        .unwrap();
    send(app, req).await
}

/// Serves `reply` to every POST on `/extract` from a local port.
pub async fn stub_extractor(status: StatusCode, reply: Vec<u8>) -> String {
    let app = Router::new().route(
        "/extract",
        post(move || {
            let reply = reply.clone();
            async move { (status, reply) }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/extract")
}

/// A local URL with nothing listening on it.
pub async fn dead_url() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/extract")
}
