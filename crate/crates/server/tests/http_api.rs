mod common;

use std::sync::Arc;

use common::{b64_png, manual_clock, start, Options};
use facegame_core::engine::{EngineConfig, SessionState};
use facegame_core::testing::{face_showing, load_stats, write_manifest, RedChannelClassifier};
use facegame_core::{Emotion, FaceImage};
use facegame_server::{ErrorCode, FrameResponse, SessionView, StatsResponse, TemplateAck};
use serde_json::json;

fn red() -> Arc<RedChannelClassifier> {
    Arc::new(RedChannelClassifier::default())
}

fn tiny_png() -> String {
    use base64::Engine as _;
    let mut bytes = Vec::new();
    image::RgbImage::from_pixel(8, 8, image::Rgb([1, 2, 3]))
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .unwrap();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn other_than(e: Emotion) -> Emotion {
    Emotion::ALL[(e.index() + 3) % 7]
}

#[tokio::test]
async fn general_session_lifecycle() {
    let clock = manual_clock();
    let server = start(red(), Options { clock: Some(clock.clone()), ..Default::default() }).await;

    let view: SessionView = server.post("/api/sessions", &json!({"mode": "general", "seed": 42})).await.unwrap();
    assert_eq!(view.lives, 5);
    assert_eq!(view.initial_lives, 5);
    assert_eq!(view.score, 0);
    assert_eq!(view.state, SessionState::Running);
    let target = view.target.clone().unwrap();
    assert_eq!(target.deadline_ms, 10_000);
    assert_eq!(target.remaining_ms, 10_000);

    let stats: StatsResponse = server.get("/api/stats").await.unwrap();
    assert_eq!(stats.total, 0);
    assert_eq!(stats.counts.0, [0; 7]);

    clock.set(1_000);
    let frames = format!("/api/sessions/{}/frames", view.session_id);
    let image = b64_png(&face_showing(target.emotion, 1, 64, 64));
    let out: FrameResponse = server.post(&frames, &json!({"image": image, "timestamp": 123})).await.unwrap();
    assert!(out.matched);
    assert!(out.face_detected);
    assert_eq!(out.target, target.emotion);
    assert_eq!(out.score, 1);
    assert_eq!(out.lives, 5);
    assert_eq!(out.threshold, Some(0.5));
    assert_eq!(out.client_timestamp, Some(123));
    assert!((out.scores.unwrap()[target.emotion] - 0.9).abs() < 1e-12);
    let next = out.next_target.unwrap();
    assert_eq!(next.spawned_at_ms, 1_000);
    assert!(out.record_id.is_some());

    let stats: StatsResponse = server.get("/api/stats").await.unwrap();
    assert_eq!(stats.total, 1);
    assert_eq!(stats.counts[target.emotion], 1);

    // replay inside the rate window is rejected and not double-scored
    clock.set(1_200);
    let (status, err) = server.post::<FrameResponse>(&frames, &json!({"image": image})).await.unwrap_err();
    assert_eq!((status, err.code, err.retryable), (429, ErrorCode::RateLimited, true));

    clock.set(1_700);
    let miss = b64_png(&face_showing(other_than(next.emotion), 2, 64, 64));
    let out: FrameResponse = server.post(&frames, &json!({"image": miss})).await.unwrap();
    assert!(!out.matched);
    assert!(out.next_target.is_none());
    assert_eq!(out.session.target.unwrap().emotion, next.emotion);

    let blank = b64_png(&FaceImage::filled(64, 64, [128, 128, 128]).unwrap());
    clock.set(2_300);
    let out: FrameResponse = server.post(&frames, &json!({"image": blank})).await.unwrap();
    assert!(!out.face_detected);
    assert!(out.scores.is_none());

    // let every target expire
    clock.set(1_000_000);
    let view: SessionView = server.get(&format!("/api/sessions/{}", view.session_id)).await.unwrap();
    assert_eq!(view.state, SessionState::Over);
    assert_eq!(view.lives, 0);
    assert_eq!(view.score, 1);
    assert!(view.target.is_none());

    let (status, err) = server.post::<FrameResponse>(&frames, &json!({"image": image})).await.unwrap_err();
    assert_eq!((status, err.code, err.retryable), (409, ErrorCode::SessionOver, false));
    let (status, err) = server.get::<SessionView>("/api/sessions/nope").await.unwrap_err();
    assert_eq!((status, err.code), (404, ErrorCode::SessionOver));

    // a replayed create makes a new session
    let again: SessionView = server.post("/api/sessions", &json!({"mode": "general", "seed": 42})).await.unwrap();
    assert_ne!(again.session_id, view.session_id);
    assert_eq!(again.target.unwrap().emotion, target.emotion);
}

#[tokio::test]
async fn malformed_requests_are_invalid_image() {
    let server = start(red(), Options { max_payload: 4_000, ..Default::default() }).await;
    let view: SessionView = server.post("/api/sessions", &json!({"mode": "general"})).await.unwrap();
    let frames = format!("/api/sessions/{}/frames", view.session_id);

    let cases = [
        json!({"image": "%%% not base64"}),
        json!({"image": "aGVsbG8="}),
        json!({"picture": "aGVsbG8="}),
        json!({"image": tiny_png()}),
    ];
    for body in cases {
        let (status, err) = server.post::<FrameResponse>(&frames, &body).await.unwrap_err();
        assert_eq!((status, err.code, err.retryable), (400, ErrorCode::InvalidImage, false), "{body}");
    }

    let big = b64_png(&face_showing(Emotion::Sad, 1, 200, 200));
    let (status, err) = server.post::<FrameResponse>(&frames, &json!({"image": big})).await.unwrap_err();
    assert_eq!((status, err.code), (413, ErrorCode::InvalidImage));

    let resp = server
        .client
        .post(server.url("/api/sessions"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    let (status, err) = common::decode::<SessionView>(resp).await.unwrap_err();
    assert_eq!((status, err.code), (400, ErrorCode::InvalidImage));

    let (status, err) = server.post::<SessionView>("/api/sessions", &json!({"mode": "arcade"})).await.unwrap_err();
    assert_eq!((status, err.code), (400, ErrorCode::InvalidImage));
}

#[tokio::test]
async fn registration_flow_and_customized_session() {
    let server = start(red(), Options {
        config: EngineConfig { min_frame_interval_ms: 0, ..Default::default() },
        ..Default::default()
    })
    .await;

    let (status, err) = server
        .post::<SessionView>("/api/sessions", &json!({"mode": "customized", "player_id": "zoe"}))
        .await
        .unwrap_err();
    assert_eq!((status, err.code, err.retryable), (404, ErrorCode::UnregisteredPlayer, false));

    let (status, err) = server.post::<TemplateAck>("/api/players/zoe/templates/complete", &json!({})).await.unwrap_err();
    assert_eq!((status, err.code), (409, ErrorCode::IncompleteRegistration));

    let ack: TemplateAck = server
        .post("/api/players/zoe/templates/happy", &json!({"image": b64_png(&face_showing(Emotion::Happy, 1, 48, 48))}))
        .await
        .unwrap();
    assert_eq!(ack.captured, Some(Emotion::Happy));
    assert_eq!(ack.registered, [Emotion::Happy]);
    assert_eq!(ack.missing.len(), 6);
    assert!(!ack.complete);

    let blank = b64_png(&FaceImage::filled(48, 48, [0, 0, 0]).unwrap());
    let (status, err) = server.post::<TemplateAck>("/api/players/zoe/templates/sad", &json!({"image": blank})).await.unwrap_err();
    assert_eq!((status, err.code, err.retryable), (422, ErrorCode::NoFace, true));
    assert!(err.message.contains("Sad"), "{}", err.message);

    let (status, err) = server
        .post::<TemplateAck>("/api/players/zoe/templates/joy", &json!({"image": blank}))
        .await
        .unwrap_err();
    assert_eq!((status, err.code), (400, ErrorCode::InvalidImage));

    let (status, err) = server.post::<TemplateAck>("/api/players/zoe/templates/complete", &json!({})).await.unwrap_err();
    assert_eq!((status, err.code), (409, ErrorCode::IncompleteRegistration));
    assert!(err.message.contains("angry") && err.message.contains("surprise") && !err.message.contains("happy"));

    for e in Emotion::ALL {
        let ack: TemplateAck = server
            .post(
                &format!("/api/players/zoe/templates/{}", e.label()),
                &json!({"image": b64_png(&face_showing(e, 10 + e.index() as u64, 48, 48))}),
            )
            .await
            .unwrap();
        assert_eq!(ack.captured, Some(e));
    }
    for _ in 0..2 {
        let resp = server.client.post(server.url("/api/players/zoe/templates/complete")).send().await.unwrap();
        let ack: TemplateAck = common::decode(resp).await.unwrap();
        assert!(ack.complete);
        assert_eq!(ack.registered, Emotion::ALL);
        assert!(ack.missing.is_empty());
    }

    let view: SessionView = server
        .post("/api/sessions", &json!({"mode": "customized", "player_id": "zoe", "seed": 1}))
        .await
        .unwrap();
    assert_eq!(view.player_id.as_deref(), Some("zoe"));
    let target = view.target.unwrap().emotion;
    let frames = format!("/api/sessions/{}/frames", view.session_id);
    let out: FrameResponse = server
        .post(&frames, &json!({"image": b64_png(&face_showing(other_than(target), 3, 48, 48))}))
        .await
        .unwrap();
    assert_eq!(out.matched_emotion, Some(other_than(target)));
    assert!(!out.matched);
    assert!(out.threshold.is_none());
    let out: FrameResponse = server
        .post(&frames, &json!({"image": b64_png(&face_showing(target, 4, 48, 48))}))
        .await
        .unwrap();
    assert!(out.matched);
    assert_eq!(out.score, 1);
}

#[tokio::test]
async fn stats_reflect_a_preloaded_manifest() {
    let gamo = load_stats("gamo_stats.json");
    let counts = gamo.counts;
    let server = start(red(), Options {
        seed_store: Some(Box::new(move |root| {
            write_manifest(root, &counts, 3).unwrap();
        })),
        ..Default::default()
    })
    .await;
    let stats: StatsResponse = server.get("/api/stats").await.unwrap();
    assert_eq!(stats.counts.0, [1945, 1838, 1586, 3185, 2741, 1898, 2262]);
    assert_eq!(stats.total, 15_455);
}

#[tokio::test]
async fn static_bundle_is_served() {
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>game</html>").unwrap();
    std::fs::write(web.path().join("app.js"), "let x = 1;").unwrap();
    let server = start(red(), Options { static_dir: Some(web.path().to_path_buf()), ..Default::default() }).await;

    let resp = server.client.get(server.url("/")).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    assert_eq!(resp.text().await.unwrap(), "<html>game</html>");
    let resp = server.client.get(server.url("/app.js")).send().await.unwrap();
    assert!(resp.headers()["content-type"].to_str().unwrap().contains("javascript"));
    let resp = server.client.get(server.url("/missing.css")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let resp = server.client.get(server.url("/%2e%2e/secret")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    // API routes still win
    let stats: StatsResponse = server.get("/api/stats").await.unwrap();
    assert_eq!(stats.total, 0);
}
