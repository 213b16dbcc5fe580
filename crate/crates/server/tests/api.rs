use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use dins_core::volume::{encode_raw, Dims, Mask, RawHeader, Volume, VoxelIndex};
use dins_harness::backend::{BackendKind, BackendParams};
use dins_harness::phantom::{generate_phantom, PhantomConfig};
use dins_server::{app, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn server() -> Router {
    app(AppState::new(ServerConfig::new(BackendKind::GraphCut, BackendParams::default(), None)))
}

fn phantom() -> (Volume, Mask) {
    let p = generate_phantom(&PhantomConfig { dims: Dims::new(4, 32, 32), radius: [4.0, 6.0], ..PhantomConfig::default() }, 0).unwrap();
    (p.image, p.label)
}

fn raw(v: &Volume) -> Value {
    json!({ "header": RawHeader::for_volume(v), "payload_b64": B64.encode(encode_raw(v)) })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, bytes) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, v: &Volume) -> u64 {
    let (s, body) = call_json(app, "POST", "/sessions", Some(raw(v))).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    body["id"].as_u64().unwrap()
}

fn inside(label: &Mask) -> VoxelIndex {
    label.voxels().next().unwrap()
}

#[tokio::test]
async fn create_echoes_dims_and_ids_are_distinct() {
    let app = server();
    let (v, _) = phantom();
    let (s, a) = call_json(&app, "POST", "/sessions", Some(raw(&v))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(a["dims"], json!([4, 32, 32]));
    assert_eq!(a["spacing"], json!(v.spacing().as_array()));
    assert_eq!(a["revision"], 0);
    let b = create(&app, &v).await;
    assert_ne!(a["id"].as_u64().unwrap(), b);
}

#[tokio::test]
async fn truncated_payload_is_rejected_without_a_session() {
    let app = server();
    let (v, _) = phantom();
    let mut body = raw(&v);
    let bytes = encode_raw(&v);
    body["payload_b64"] = json!(B64.encode(&bytes[..bytes.len() - 4]));
    let (s, err) = call_json(&app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(err["error"].is_string());
    assert_eq!(call(&app, "GET", "/sessions/1", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/sessions", Some(json!({"header": 3}))).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn click_then_undo_restores_clicks_and_advances_twice() {
    let app = server();
    let (v, label) = phantom();
    let id = create(&app, &v).await;
    let (_, before) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    let at = inside(&label);
    let (s, after) = call_json(&app, "POST", &format!("/sessions/{id}/clicks"), Some(json!({"revision": 0, "polarity": "positive", "at": at}))).await;
    assert_eq!(s, StatusCode::OK, "{after}");
    assert_eq!(after["revision"], 1);
    assert!(after["prediction_voxels"].as_u64().unwrap() > 0);
    let (_, undone) = call_json(&app, "POST", &format!("/sessions/{id}/undo"), Some(json!({"revision": 1}))).await;
    assert_eq!(undone["revision"], 2);
    assert_eq!(undone["click_set"], before["click_set"]);
    assert_eq!(undone["prediction_voxels"], 0);
}

#[tokio::test]
async fn bad_mutations_leave_the_revision_unchanged() {
    let app = server();
    let (v, _) = phantom();
    let id = create(&app, &v).await;
    let uri = format!("/sessions/{id}/clicks");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"revision": 0, "polarity": "positive", "at": [4, 0, 0]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = call_json(&app, "POST", &uri, Some(json!({"revision": 7, "polarity": "positive", "at": [0, 0, 0]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["revision"], 0);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/undo"), Some(json!({"revision": 0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/sessions/99/undo", Some(json!({"revision": 0}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["revision"], 0);
}

#[tokio::test]
async fn sigma_and_boxes_are_echoed() {
    let app = server();
    let (v, _) = phantom();
    let id = create(&app, &v).await;
    let (_, s) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["sigma"], json!([1.0, 5.0, 5.0]));
    let (st, s) = call_json(&app, "POST", &format!("/sessions/{id}/sigma"), Some(json!({"revision": 0, "sigma": [1.5, 6.0, 6.0]}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["sigma"], json!([1.5, 6.0, 6.0]));
    let b = json!([{"min": [0, 0, 0], "max": [3, 15, 15]}]);
    let (st, s) = call_json(&app, "POST", &format!("/sessions/{id}/boxes"), Some(json!({"revision": 1, "boxes": b}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["boxes"], b);
    let outside = json!([{"min": [0, 0, 0], "max": [4, 15, 15]}]);
    let (st, _) = call_json(&app, "POST", &format!("/sessions/{id}/boxes"), Some(json!({"revision": 2, "boxes": outside}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn slices_are_deterministic_and_contour_the_masks() {
    let app = server();
    let (v, _) = phantom();
    let id = create(&app, &v).await;
    let uri = format!("/sessions/{id}/slice?axis=z&index=1");
    let (s, a) = call(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, call(&app, "GET", &uri, None).await.1);
    let view: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(view["contours"], json!([]));
    assert_eq!((view["rows"].as_u64(), view["cols"].as_u64()), (Some(32), Some(32)));

    let mut dot = Mask::empty(v.dims(), v.spacing());
    dot.set(VoxelIndex::new(1, 5, 9), true);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/groundtruth"), Some(json!({"revision": 0, "header": RawHeader::for_volume(&v), "payload_b64": B64.encode(encode_raw(&dot.to_volume()))}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, view) = call_json(&app, "GET", &uri, None).await;
    let loops = view["ground_truth_contours"].as_array().unwrap();
    assert_eq!(loops.len(), 1);
    assert_eq!(loops[0].as_array().unwrap().len(), 5);

    let (_, yv) = call_json(&app, "GET", &format!("/sessions/{id}/slice?axis=y&index=5&window=0,1"), None).await;
    assert_eq!(yv["window"], json!([0.0, 1.0]));
    assert_eq!(yv["ground_truth_contours"].as_array().unwrap().len(), 1);
    for bad in ["axis=z&index=4", "axis=q&index=0", "axis=z&index=0&window=1,0"] {
        assert_eq!(call(&app, "GET", &format!("/sessions/{id}/slice?{bad}"), None).await.0, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test]
async fn click_markers_are_in_slice_coordinates() {
    let app = server();
    let (v, label) = phantom();
    let id = create(&app, &v).await;
    let at = inside(&label);
    call_json(&app, "POST", &format!("/sessions/{id}/clicks"), Some(json!({"revision": 0, "polarity": "positive", "at": at}))).await;
    let (_, view) = call_json(&app, "GET", &format!("/sessions/{id}/slice?axis=x&index={}", at.x), None).await;
    assert_eq!(view["clicks"], json!([{"polarity": "positive", "row": at.z, "col": at.y}]));
    assert!(!view["contours"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn metrics_need_ground_truth() {
    let app = server();
    let (v, label) = phantom();
    let id = create(&app, &v).await;
    let (s, body) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "no ground truth");

    let empty = Mask::empty(v.dims(), v.spacing()).to_volume();
    call_json(&app, "POST", &format!("/sessions/{id}/groundtruth"), Some(json!({"revision": 0, "header": RawHeader::for_volume(&v), "payload_b64": B64.encode(encode_raw(&empty))}))).await;
    let (_, m) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["dsc"], 1.0);

    let at = inside(&label);
    call_json(&app, "POST", &format!("/sessions/{id}/clicks"), Some(json!({"revision": 1, "polarity": "positive", "at": at}))).await;
    let (_, mask) = call_json(&app, "GET", &format!("/sessions/{id}/mask"), None).await;
    assert_eq!(mask["revision"], 2);
    let gt = json!({"revision": 2, "header": mask["header"], "payload_b64": mask["payload_b64"]});
    call_json(&app, "POST", &format!("/sessions/{id}/groundtruth"), Some(gt)).await;
    let (_, m) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["dsc"], 1.0);
    assert_eq!(m["revision"], 3);

    let small = Mask::empty(Dims::new(1, 2, 2), v.spacing()).to_volume();
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/groundtruth"), Some(json!({"revision": 3, "header": RawHeader::for_volume(&small), "payload_b64": B64.encode(encode_raw(&small))}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn replaying_events_on_a_fresh_session_gives_the_same_mask() {
    let app = server();
    let (v, label) = phantom();
    let pos: Vec<VoxelIndex> = label.voxels().step_by(7).take(2).collect();
    let bodies = |r: u64| match r {
        0 => ("clicks", json!({"revision": 0, "polarity": "positive", "at": pos[0]})),
        1 => ("sigma", json!({"revision": 1, "sigma": [1.5, 6.0, 6.0]})),
        2 => ("clicks", json!({"revision": 2, "polarity": "negative", "at": [0, 0, 0]})),
        3 => ("clicks", json!({"revision": 3, "polarity": "positive", "at": pos[1]})),
        _ => ("undo", json!({"revision": 4})),
    };
    let mut masks = Vec::new();
    for _ in 0..2 {
        let id = create(&app, &v).await;
        for r in 0..5 {
            let (path, body) = bodies(r);
            let (s, out) = call_json(&app, "POST", &format!("/sessions/{id}/{path}"), Some(body)).await;
            assert_eq!(s, StatusCode::OK, "{out}");
        }
        let (_, m) = call_json(&app, "GET", &format!("/sessions/{id}/mask"), None).await;
        masks.push(m["payload_b64"].clone());
    }
    assert_eq!(masks[0], masks[1]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_are_serialized_without_gaps() {
    let app = server();
    let (v, label) = phantom();
    let id = create(&app, &v).await;
    let other = create(&app, &v).await;
    let targets: Vec<VoxelIndex> = label.voxels().step_by(5).take(8).collect();
    // Every writer races for revision 0; exactly one may win.
    let tasks: Vec<_> = targets
        .iter()
        .map(|&at| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, "POST", &format!("/sessions/{id}/clicks"), Some(json!({"revision": 0, "polarity": "positive", "at": at}))).await.0
            })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert!(statuses.iter().all(|s| *s == StatusCode::OK || *s == StatusCode::CONFLICT));
    // Writers that re-read the revision before each attempt all land, one revision each.
    let tasks: Vec<_> = targets
        .iter()
        .skip(1)
        .map(|&at| {
            let app = app.clone();
            tokio::spawn(async move {
                loop {
                    let (_, s) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
                    let body = json!({"revision": s["revision"], "polarity": "positive", "at": at});
                    let (status, out) = call_json(&app, "POST", &format!("/sessions/{id}/clicks"), Some(body)).await;
                    match status {
                        StatusCode::OK => return out["revision"].as_u64().unwrap(),
                        StatusCode::BAD_REQUEST => return 0,
                        _ => tokio::task::yield_now().await,
                    }
                }
            })
        })
        .collect();
    let mut revisions = Vec::new();
    for t in tasks {
        revisions.push(t.await.unwrap());
    }
    revisions.retain(|&r| r > 0);
    revisions.sort_unstable();
    let expected: Vec<u64> = (2..2 + revisions.len() as u64).collect();
    assert_eq!(revisions, expected);
    let (_, s) = call_json(&app, "GET", &format!("/sessions/{other}"), None).await;
    assert_eq!(s["revision"], 0);
}

#[tokio::test]
async fn sessions_can_be_deleted() {
    let app = server();
    let (v, _) = phantom();
    let id = create(&app, &v).await;
    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn network_backends_need_a_model() {
    let app = server();
    let (v, _) = phantom();
    let mut body = raw(&v);
    body["backend"] = json!("din");
    assert_eq!(call(&app, "POST", "/sessions", Some(body)).await.0, StatusCode::BAD_REQUEST);
}
