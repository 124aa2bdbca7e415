use std::fs;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use movidnn_subjective::http::router;
use movidnn_subjective::{Catalog, SessionStore};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dirs: [tempfile::TempDir; 3],
    app: Router,
    store: Arc<SessionStore>,
}

/// Two clips, each with an original and an `espcn` output whose bytes
/// identify them.
fn fixture() -> Fixture {
    let orig = tempfile::tempdir().unwrap();
    let enh = tempfile::tempdir().unwrap();
    let results = tempfile::tempdir().unwrap();
    for v in ["a", "b"] {
        fs::write(orig.path().join(format!("{v}.y4m")), format!("original {v} payload")).unwrap();
        fs::write(enh.path().join(format!("{v}__espcn.y4m")), format!("espcn {v} payload")).unwrap();
    }
    let cat = Catalog::scan(orig.path(), enh.path()).unwrap();
    let store = Arc::new(SessionStore::open(cat, results.path(), None).unwrap());
    Fixture {
        app: router(Arc::clone(&store)),
        store,
        _dirs: [orig, enh, results],
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, _, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, _, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, who: &str, seed: u64) -> String {
    let (s, v) = post(app, "/api/sessions", json!({"participant": who, "seed": seed})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["playlist_length"], 4);
    assert_eq!(v["seed"], seed);
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn full_session_over_http() {
    let f = fixture();
    let id = new_session(&f.app, "alice", 11).await;
    let mut seen = Vec::new();
    for i in 0..4 {
        let (s, next) = get_json(&f.app, &format!("/api/sessions/{id}/next")).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(next["done"], false);
        assert_eq!(next["index"], i);
        assert!(next.get("condition").is_none());
        let token = next["media_token"].as_str().unwrap();
        assert!(!token.contains("espcn") && !token.contains("original"));
        let (s, h, body) = call(&f.app, Request::get(format!("/api/media/{token}")).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(h[header::ACCEPT_RANGES], "bytes");
        let text = String::from_utf8(body).unwrap();
        assert!(text.ends_with(&format!("{} payload", next["video_id"].as_str().unwrap())));
        seen.push(text);

        let (s, ack) = post(&f.app, &format!("/api/sessions/{id}/ratings"), json!({"index": i, "rating": 4})).await;
        assert_eq!(s, StatusCode::OK, "{ack}");
        assert_eq!(ack["cursor"], i + 1);
        assert_eq!(ack["complete"], i == 3);
    }
    seen.sort();
    assert_eq!(seen, ["espcn a payload", "espcn b payload", "original a payload", "original b payload"]);

    let (_, next) = get_json(&f.app, &format!("/api/sessions/{id}/next")).await;
    assert_eq!(next, json!({"done": true, "playlist_length": 4}));
    let (s, _) = post(&f.app, &format!("/api/sessions/{id}/ratings"), json!({"index": 4, "rating": 4})).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, h, body) = call(&f.app, Request::get("/api/report").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(h[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/csv"));
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.lines().next().unwrap(), "video_id,condition,n,mos,stddev,ci95_lo,ci95_hi");
    assert_eq!(text.lines().nth(1).unwrap(), "a,espcn,1,4.0,0.0,4.0,4.0");
    assert_eq!(text.lines().count(), 5);
}

#[tokio::test]
async fn rejected_submissions() {
    let f = fixture();
    let id = new_session(&f.app, "bob", 3).await;
    let rate = |index: i64, rating: i64| json!({"index": index, "rating": rating});
    let url = format!("/api/sessions/{id}/ratings");
    assert_eq!(post(&f.app, &url, rate(1, 3)).await.0, StatusCode::CONFLICT);
    assert_eq!(post(&f.app, &url, rate(0, 0)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&f.app, &url, rate(0, 6)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, body) = post(&f.app, &url, rate(0, -1)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("outside 1..=5"));
    assert_eq!(post(&f.app, &url, rate(0, 5)).await.0, StatusCode::OK);
    assert_eq!(post(&f.app, &url, rate(0, 5)).await.0, StatusCode::CONFLICT);
    assert_eq!(f.store.session(&id).unwrap().cursor(), 1);

    assert_eq!(post(&f.app, "/api/sessions/nope/ratings", rate(0, 3)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&f.app, "/api/sessions/nope/next").await.0, StatusCode::NOT_FOUND);
    let (s, _) = post(&f.app, "/api/sessions", json!({"participant": "x", "videos": []})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&f.app, "/api/sessions", json!({"participant": "x", "conditions": ["srcnn"]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&f.app, Request::get("/api/report").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = call(&f.app, Request::get("/api/media/bogus").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn media_supports_byte_ranges() {
    let f = fixture();
    let id = new_session(&f.app, "carol", 5).await;
    let (_, next) = get_json(&f.app, &format!("/api/sessions/{id}/next")).await;
    let uri = format!("/api/media/{}", next["media_token"].as_str().unwrap());
    let (_, _, full) = call(&f.app, Request::get(&uri).body(Body::empty()).unwrap()).await;
    let len = full.len();

    let ranged = |r: &str| Request::get(&uri).header(header::RANGE, r).body(Body::empty()).unwrap();
    let (s, h, body) = call(&f.app, ranged("bytes=2-5")).await;
    assert_eq!(s, StatusCode::PARTIAL_CONTENT);
    assert_eq!(body, &full[2..6]);
    assert_eq!(h[header::CONTENT_RANGE], format!("bytes 2-5/{len}"));
    assert_eq!(h[header::CONTENT_LENGTH], "4");

    let (s, _, body) = call(&f.app, ranged("bytes=-7")).await;
    assert_eq!(s, StatusCode::PARTIAL_CONTENT);
    assert_eq!(body, &full[len - 7..]);

    let (s, h, _) = call(&f.app, ranged(&format!("bytes={len}-"))).await;
    assert_eq!(s, StatusCode::RANGE_NOT_SATISFIABLE);
    assert_eq!(h[header::CONTENT_RANGE], format!("bytes */{len}"));

    // the current item can be replayed, but not once it has been rated
    assert_eq!(call(&f.app, Request::get(&uri).body(Body::empty()).unwrap()).await.0, StatusCode::OK);
    post(&f.app, &format!("/api/sessions/{id}/ratings"), json!({"index": 0, "rating": 2})).await;
    assert_eq!(call(&f.app, Request::get(&uri).body(Body::empty()).unwrap()).await.0, StatusCode::GONE);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_isolated() {
    let f = fixture();
    let ids: Vec<String> = create_sessions(&f.app, 6).await;
    // interleave: every round submits one rating to each session concurrently
    for round in 0..4 {
        let mut tasks = Vec::new();
        for (k, id) in ids.iter().enumerate() {
            let app = f.app.clone();
            let id = id.clone();
            tasks.push(tokio::spawn(async move {
                let (_, next) = get_json(&app, &format!("/api/sessions/{id}/next")).await;
                assert_eq!(next["index"], round);
                let rating = (k + round) % 5 + 1;
                let (s, ack) = post(&app, &format!("/api/sessions/{id}/ratings"), json!({"index": round, "rating": rating})).await;
                assert_eq!(s, StatusCode::OK);
                assert_eq!(ack["cursor"], round + 1);
            }));
        }
        for t in tasks {
            t.await.unwrap();
        }
    }
    for (k, id) in ids.iter().enumerate() {
        let s = f.store.session(id).unwrap();
        let got: Vec<u8> = s.ratings().iter().map(|r| r.value).collect();
        let want: Vec<u8> = (0..4).map(|round| ((k + round) % 5 + 1) as u8).collect();
        assert_eq!(got, want);
    }
    assert_eq!(f.store.finalized_records().len(), 24);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn racing_submissions_for_one_item_store_exactly_one() {
    let f = fixture();
    let id = new_session(&f.app, "dave", 8).await;
    let tasks: Vec<_> = (0..16)
        .map(|k| {
            let app = f.app.clone();
            let url = format!("/api/sessions/{id}/ratings");
            tokio::spawn(async move { post(&app, &url, json!({"index": 0, "rating": k % 5 + 1})).await.0 })
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
    assert_eq!(f.store.session(&id).unwrap().cursor(), 1);
}

async fn create_sessions(app: &Router, n: usize) -> Vec<String> {
    let mut ids = Vec::new();
    for i in 0..n {
        ids.push(new_session(app, &format!("rater{i}"), i as u64 + 100).await);
    }
    ids
}
