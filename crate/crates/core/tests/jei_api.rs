use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use logismos::columns::{build_columns, ColumnParams};
use logismos::graph::{build_graph, ConstraintSpec, CostTable, SurfaceSolution};
use logismos::jei::server::app;
use logismos::jei::GraphFile;
use logismos::mesh::icosphere;
use logismos::volume::Volume3D;
use logismos::Vec3;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "lgsboundary";

fn toy() -> (GraphFile, Volume3D) {
    let m = icosphere(1);
    let m = m.with_vertices(m.vertices.iter().map(|v| v * 10.0 + Vec3::new(20.0, 20.0, 20.0)).collect()).unwrap();
    let cs = build_columns(&m, &ColumnParams::new(11, 0.5), 0).unwrap();
    let costs = (0..cs.n_columns() * 11).map(|i| ((i % 11) as f64 - 5.0).abs()).collect();
    let mut spec = ConstraintSpec::gradient();
    spec.node_spacing_mm = 0.5;
    spec.smoothness_mm = vec![10.0];
    let g = build_graph(&[vec![cs.clone()]], &CostTable { n_nodes: 11, costs: vec![vec![vec![costs]]] }, &spec).unwrap();
    let vol = Volume3D::from_fn([40, 40, 40], [1.0; 3], [0.0; 3], |i, j, k| (i + j + k) as f32).unwrap();
    (GraphFile::from_graph(&g, vec![vec![cs]]), vol)
}

fn multipart(parts: &[(&str, Vec<u8>)]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n").as_bytes());
        body.extend(data);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let r = app.clone().oneshot(req).await.unwrap();
    let s = r.status();
    (s, to_bytes(r.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, v: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(v.to_string())).unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn create(app: &Router) -> String {
    let (gf, vol) = toy();
    let req = multipart(&[
        ("graph", gf.to_bytes().unwrap()),
        ("volume_header", serde_json::to_vec(&vol.header()).unwrap()),
        ("volume", vol.to_le_bytes()),
    ]);
    let (s, b) = send(app, req).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    serde_json::from_slice::<Value>(&b).unwrap()["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn session_lifecycle() {
    let app = app();
    let (s, _) = send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let id = create(&app).await;

    let (s, v) = get_json(&app, &format!("/sessions/{id}/surfaces")).await;
    assert_eq!(s, StatusCode::OK);
    let before: SurfaceSolution = serde_json::from_value(v).unwrap();
    assert!(before.surface(0, 0, 0).iter().all(|&k| k == 5));

    let (s, v) = get_json(&app, &format!("/sessions/{id}/slice?axis=z&index=20")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["width"], 40);
    assert!(!v["png_base64"].as_str().unwrap().is_empty());
    assert!(!v["contours"].as_array().unwrap().is_empty());

    // a point on the column through the top vertex, a few nodes past the current choice
    let (s, v) = post_json(&app, &format!("/sessions/{id}/corrections"), json!({"x": 20.0, "y": 20.0, "z": 32.0, "object": 0, "surface": 0, "radius": 0.5})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(!v["solution_delta"].as_array().unwrap().is_empty());

    let (s, _) = post_json(&app, &format!("/sessions/{id}/undo"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = get_json(&app, &format!("/sessions/{id}/surfaces")).await;
    let after: SurfaceSolution = serde_json::from_value(v).unwrap();
    assert_eq!(after.k, before.k);

    // download and reload
    let (s, saved) = send(&app, Request::get(format!("/sessions/{id}/session")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let (s, b) = send(&app, multipart(&[("session", saved)])).await;
    assert_eq!(s, StatusCode::OK);
    let id2 = serde_json::from_slice::<Value>(&b).unwrap()["id"].as_str().unwrap().to_string();
    assert_ne!(id2, id);
    let (_, v) = get_json(&app, &format!("/sessions/{id2}/surfaces")).await;
    let reloaded: SurfaceSolution = serde_json::from_value(v).unwrap();
    assert_eq!(reloaded.k, before.k);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app();
    let (s, v) = get_json(&app, "/sessions/nope/surfaces").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");

    let (s, v) = send(&app, multipart(&[("graph", b"garbage".to_vec())])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&v));

    let (s, _) = send(&app, multipart(&[("other", b"x".to_vec())])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = create(&app).await;
    let (s, v) = get_json(&app, &format!("/sessions/{id}/slice?axis=w&index=1")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_input");
    let (s, _) = get_json(&app, &format!("/sessions/{id}/slice?axis=z&index=999")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = post_json(&app, &format!("/sessions/{id}/corrections"), json!({"x": 20.0, "y": 20.0, "z": 31.0, "object": 4, "surface": 0})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(&app, &format!("/sessions/{id}/undo"), json!({})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
