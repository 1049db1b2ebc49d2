use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dilseg::data::load_pairs;
use dilseg::raster::encode_png;
use dilseg::Plane;
use dilseg_cli::annotate::{router, AppState, CommitResult, FrameList, Preview};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SAMPLES: usize = 120;

fn frame_dir(ids: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for id in ids {
        let img = Plane::from_fn(128, 128, |r, c| ((r * 7 + c * 3) % 97) as f32 / 96.0);
        std::fs::write(dir.path().join(format!("{id}.png")), encode_png(&img.to_gray8())).unwrap();
    }
    dir
}

fn state(dir: &Path) -> Arc<AppState> {
    Arc::new(AppState::new(dir, SAMPLES, None))
}

async fn call(st: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(st.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn four_markers() -> Value {
    json!({ "markers": [[10.0, 60.0], [40.0, 50.5], [80.0, 70.0], [118.0, 64.0]] })
}

#[tokio::test]
async fn posting_four_markers_returns_the_preview_polyline() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    let (status, body) = call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let p: Preview = serde_json::from_slice(&body).unwrap();
    assert_eq!(p.polyline.len(), SAMPLES);
    assert_eq!(p.sample_count, SAMPLES);
    assert_eq!(p.degree, 3);
    assert_eq!(p.polyline[0], (10.0, 60.0));
    assert_eq!(*p.polyline.last().unwrap(), (118.0, 64.0));

    let (status, body) = call(&st, "GET", "/frames/f1/markers", None).await;
    assert_eq!(status, StatusCode::OK);
    let stored: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(stored["frame_id"], "f1");
    assert_eq!(stored["markers"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn invalid_markers_are_unprocessable() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    let one = json!({ "markers": [[5.0, 5.0]] });
    assert_eq!(call(&st, "POST", "/frames/f1/markers", Some(one)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let outside = json!({ "markers": [[5.0, 5.0], [500.0, 5.0]] });
    assert_eq!(call(&st, "POST", "/frames/f1/markers", Some(outside)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let dup = json!({ "markers": [[5.0, 5.0], [5.0, 5.0], [9.0, 9.0]] });
    assert_eq!(call(&st, "POST", "/frames/f1/markers", Some(dup)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let garbage = json!({ "points": 3 });
    assert_eq!(call(&st, "POST", "/frames/f1/markers", Some(garbage)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    // nothing persisted, so nothing to commit
    assert!(!dir.path().join("f1.markers.json").exists());
    assert_eq!(call(&st, "POST", "/frames/f1/commit", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_frames_are_not_found() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    for (method, uri) in [
        ("GET", "/frames/nope/image"),
        ("GET", "/frames/nope/markers"),
        ("GET", "/frames/f1/markers"),
        ("GET", "/frames/f1_mask/image"),
        ("GET", "/frames/..%2Ff1/image"),
    ] {
        assert_eq!(call(&st, method, uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, _) = call(&st, "POST", "/frames/nope/markers", Some(four_markers())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&st, "POST", "/frames/nope/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frame_list_and_image_bytes() {
    let dir = frame_dir(&["b", "a"]);
    let st = state(dir.path());
    call(&st, "POST", "/frames/b/markers", Some(four_markers())).await;
    let (status, body) = call(&st, "GET", "/frames", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: FrameList = serde_json::from_slice(&body).unwrap();
    let ids: Vec<(&str, bool, bool)> = list.frames.iter().map(|f| (f.id.as_str(), f.annotated, f.has_markers)).collect();
    assert_eq!(ids, [("a", false, false), ("b", false, true)]);

    let (status, body) = call(&st, "GET", "/frames/a/image", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read(dir.path().join("a.png")).unwrap());
}

#[tokio::test]
async fn commit_writes_a_mask_load_pairs_accepts() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    let (status, body) = call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let r: CommitResult = serde_json::from_slice(&body).unwrap();
    assert_eq!((r.mask.as_str(), r.status.as_str()), ("f1_mask.png", "ok"));
    assert!(r.foreground > 0);

    let ds = load_pairs(dir.path()).unwrap();
    assert_eq!(ds.len(), 1);
    let s = ds.samples().next().unwrap();
    assert_eq!(s.id, "f1");
    assert_eq!(s.mask.count(), r.foreground);
    // the stroke passes through the first marker (x 10, y 60)
    assert!(s.mask.get(60, 10));

    let (_, body) = call(&st, "GET", "/frames", None).await;
    let list: FrameList = serde_json::from_slice(&body).unwrap();
    assert!(list.frames[0].annotated);
}

#[tokio::test]
async fn recommitting_the_same_markers_is_byte_identical() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await;
    let first = std::fs::read(dir.path().join("f1_mask.png")).unwrap();
    // same markers posted again (new timestamp), then committed again
    call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    let (status, _) = call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(std::fs::read(dir.path().join("f1_mask.png")).unwrap(), first);
}

#[tokio::test]
async fn commit_while_the_frame_is_locked_conflicts() {
    let dir = frame_dir(&["f1", "f2"]);
    let st = state(dir.path());
    call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    call(&st, "POST", "/frames/f2/markers", Some(four_markers())).await;
    let guard = st.lock_frame("f1").await;
    let (status, _) = call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(!dir.path().join("f1_mask.png").exists());
    // other frames are unaffected
    let (status, _) = call(&st, "POST", "/frames/f2/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
    drop(guard);
    let (status, _) = call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_commits_never_interleave() {
    let dir = frame_dir(&["f1"]);
    let st = state(dir.path());
    call(&st, "POST", "/frames/f1/markers", Some(four_markers())).await;
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let st = st.clone();
            tokio::spawn(async move { call(&st, "POST", "/frames/f1/commit", Some(json!({ "thickness": 3 }))).await.0 })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        let s = t.await.unwrap();
        assert!(s == StatusCode::OK || s == StatusCode::CONFLICT, "{s}");
        ok += (s == StatusCode::OK) as usize;
    }
    assert!(ok >= 1);
    assert_eq!(load_pairs(dir.path()).unwrap().len(), 1);
}

#[tokio::test]
async fn root_serves_the_ui_bundle() {
    let dir = frame_dir(&["f1"]);
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ui</html>").unwrap();
    std::fs::create_dir(ui.path().join("assets")).unwrap();
    std::fs::write(ui.path().join("assets/app.js"), "console.log(1)").unwrap();
    let st = Arc::new(AppState::new(dir.path(), SAMPLES, Some(ui.path().to_path_buf())));
    assert_eq!(call(&st, "GET", "/", None).await, (StatusCode::OK, b"<html>ui</html>".to_vec()));
    assert_eq!(call(&st, "GET", "/assets/app.js", None).await.0, StatusCode::OK);
    assert_eq!(call(&st, "GET", "/assets/../index.html", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&st, "GET", "/missing.js", None).await.0, StatusCode::NOT_FOUND);

    let bare = state(dir.path());
    assert_eq!(call(&bare, "GET", "/", None).await.0, StatusCode::OK);
}
