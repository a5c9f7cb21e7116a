use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proptest::prelude::*;
use rul_core::artifact::ModelArtifact;
use rul_core::controller::{Mode, Relay};
use rul_core::data::{argmax, label_table, synth_generate, Feature, RulClass};
use rul_core::gbdt::GbdtConfig;
use rul_core::link::{DeviceSim, HostLink, SimTransport};
use rul_core::model::{train_holdout, ModelConfig};
use rul_telemetry::{
    router, AppState, EventBody, Hub, HubConfig, ManualClock, Notice, PinBoard, PinId, PredictRequest, RelayMode,
    RelayRequest, TOKEN_HEADER,
};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    model: ModelArtifact,
    /// One feature row per class, each predicted as that class.
    rows: [serde_json::Map<String, Value>; 3],
}

fn fixture() -> &'static Fixture {
    static CELL: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let mut table = synth_generate(6, 200, 31);
        label_table(&mut table).unwrap();
        let cfg = ModelConfig::Gbdt(GbdtConfig {
            iterations: 30,
            ..GbdtConfig::default()
        });
        let r = train_holdout(&cfg, &table, 0.2, 42).unwrap();
        let model = ModelArtifact::from_holdout(cfg, table.feature_names.clone(), None, &r, 42, 0.2);
        let row_for = |class: RulClass| {
            let i = (0..table.n_rows())
                .find(|&i| {
                    let raw = table.features.row(i).to_vec();
                    table.labels()[i] == class && argmax(&model.predict_row(&raw).unwrap()) == class.index()
                })
                .expect("a confidently classified row");
            Feature::ALL
                .iter()
                .zip(table.features.row(i))
                .map(|(f, v)| (f.name().to_string(), json!(v)))
                .collect()
        };
        let rows = [row_for(RulClass::Low), row_for(RulClass::Mid), row_for(RulClass::High)];
        Fixture { model, rows }
    })
}

struct Service {
    app: AppState,
    clock: Arc<ManualClock>,
    router: Router,
}

fn service(with_model: bool, token: Option<&str>) -> Service {
    let clock = Arc::new(ManualClock::default());
    let link = HostLink::new(Box::new(SimTransport::new(DeviceSim::new(1.0, 0.0))));
    let config = HubConfig {
        token: token.map(str::to_string),
        ..HubConfig::default()
    };
    let model = with_model.then(|| fixture().model.clone());
    let app = AppState::new(Hub::new(config, model, link, 0.0), clock.clone());
    let router = router(app.clone(), None);
    Service { app, clock, router }
}

async fn call(s: &Service, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = s.router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn predict_body(class: RulClass) -> Value {
    json!({ "features": fixture().rows[class.index()] })
}

async fn predict(s: &Service, class: RulClass) -> (StatusCode, Value) {
    call(s, "POST", "/api/predict", Some(predict_body(class)), &[]).await
}

async fn relay(s: &Service, body: Value) -> (StatusCode, Value) {
    call(s, "POST", "/api/relay", Some(body), &[]).await
}

fn replay_matches(s: &Service) {
    let hub = s.app.hub();
    assert_eq!(&PinBoard::replay(hub.events()), hub.board());
}

/// Reads SSE frames until `n` events arrived or the deadline passes.
async fn read_sse(body: Body, n: usize) -> Vec<(String, u64, Value)> {
    let mut body = body;
    let mut text = String::new();
    let mut events = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while events.len() < n {
        let frame = tokio::time::timeout_at(deadline, body.frame()).await;
        let Ok(Some(Ok(frame))) = frame else { break };
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = text.find("\n\n") {
            let block: String = text.drain(..end + 2).collect();
            let mut kind = String::new();
            let mut id = 0;
            let mut data = Value::Null;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    kind = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().unwrap();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = serde_json::from_str(v.trim()).unwrap();
                }
            }
            if !kind.is_empty() {
                events.push((kind, id, data));
            }
        }
    }
    events
}

async fn open_stream(s: &Service, uri: &str, headers: &[(&str, &str)]) -> Body {
    let mut req = Request::builder().uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = s.router.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    resp.into_body()
}

#[tokio::test]
async fn fresh_server_has_empty_pins() {
    let s = service(true, None);
    let (status, body) = call(&s, "GET", "/api/pins", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let pins = body["pins"].as_array().unwrap();
    assert_eq!(pins.len(), 11);
    assert!(pins.iter().all(|p| p["value"].is_null()));
    assert_eq!(pins[0]["pin"], "V0");
    assert_eq!(pins[10]["name"], "relay");
    assert_eq!(body["mode"], "AUTO");
    assert_eq!(body["relay"], "off");
}

#[tokio::test]
async fn low_rul_row_switches_relay_on() {
    let s = service(true, None);
    let (status, body) = predict(&s, RulClass::Low).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["class"], 0);
    assert_eq!(body["relay"], "on");
    assert_eq!(body["commands"], json!(["SET_RELAY_ON", "NOTIFY_CHARGE_NEEDED"]));
    let p: Vec<f64> = serde_json::from_value(body["probabilities"].clone()).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let (_, pins) = call(&s, "GET", "/api/pins", None, &[]).await;
    let pins = pins["pins"].as_array().unwrap();
    for (i, f) in Feature::ALL.iter().enumerate() {
        assert_eq!(pins[i]["value"], fixture().rows[0][f.name()]);
    }
    assert_eq!(pins[9]["value"], 0.0);
    assert_eq!(pins[10]["value"], 1.0);
    replay_matches(&s);

    let device_on = s.app.hub().simulator().unwrap().relay_on();
    assert!(device_on);
}

#[tokio::test]
async fn missing_and_invalid_features_are_rejected() {
    let s = service(true, None);
    let mut row = fixture().rows[0].clone();
    row.remove("charging_time_s");
    let (status, body) = call(&s, "POST", "/api/predict", Some(json!({ "features": row })), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("charging_time_s"));

    let mut row = fixture().rows[0].clone();
    row.insert("discharge_time_s".into(), json!("fast"));
    let (status, body) = call(&s, "POST", "/api/predict", Some(json!({ "features": row })), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("discharge_time_s"));

    let (status, _) = call(&s, "POST", "/api/predict", Some(json!({"rows": []})), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(s.app.hub().events().is_empty());
}

#[tokio::test]
async fn no_model_is_conflict() {
    let s = service(false, None);
    let (status, _) = predict(&s, RulClass::Low).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&s, "GET", "/api/model", None, &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn link_fault_blocks_writes() {
    let s = service(true, None);
    s.app.hub().simulator().unwrap().set_heartbeats_enabled(false);
    for t in 1..=4 {
        s.clock.set(t as f64);
        s.app.tick().unwrap();
    }
    let (_, pins) = call(&s, "GET", "/api/pins", None, &[]).await;
    assert_eq!(pins["mode"], "FAULT");
    let (status, body) = predict(&s, RulClass::Low).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    let (status, _) = relay(&s, json!({"state": "on", "mode": "manual"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    s.app.hub().simulator().unwrap().set_heartbeats_enabled(true);
    s.clock.set(5.0);
    s.app.tick().unwrap();
    let (status, _) = predict(&s, RulClass::Low).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn token_guards_writes_only() {
    let s = service(true, Some("hunter2"));
    let (status, _) = predict(&s, RulClass::High).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = relay(&s, json!({"mode": "release"})).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&s, "GET", "/api/pins", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&s, "POST", "/api/predict", Some(predict_body(RulClass::High)), &[(TOKEN_HEADER, "hunter2")]).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(
        &s,
        "POST",
        "/api/relay",
        Some(json!({"mode": "release"})),
        &[("authorization", "Bearer hunter2")],
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn manual_override_and_release() {
    let s = service(true, None);
    predict(&s, RulClass::Low).await;
    let (status, body) = relay(&s, json!({"state": "off", "mode": "manual"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"relay": "off", "mode": "MANUAL_OVERRIDE"}));

    let (_, body) = predict(&s, RulClass::Low).await;
    assert_eq!(body["class"], 0);
    assert_eq!(body["relay"], "off");

    let (_, body) = relay(&s, json!({"state": "on", "mode": "manual"})).await;
    assert_eq!(body["relay"], "on");
    let before = s.app.hub().events().len();
    let (_, again) = relay(&s, json!({"state": "on", "mode": "manual"})).await;
    assert_eq!(again, body);
    assert_eq!(s.app.hub().events().len(), before);

    let (_, body) = relay(&s, json!({"mode": "release"})).await;
    assert_eq!(body["mode"], "AUTO");
    let (status, _) = relay(&s, json!({"mode": "manual"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    replay_matches(&s);
}

#[tokio::test]
async fn one_notification_per_switch_on() {
    let s = service(true, None);
    for class in [RulClass::Low, RulClass::Low, RulClass::Low, RulClass::High, RulClass::Low, RulClass::Low] {
        predict(&s, class).await;
    }
    let hub = s.app.hub();
    let notes = hub
        .events()
        .iter()
        .filter(|e| matches!(e.body, EventBody::Notification { .. }))
        .count();
    assert_eq!(notes, 2);
}

#[tokio::test]
async fn stream_delivers_pins_then_notification() {
    let s = service(true, None);
    let body = open_stream(&s, "/api/events", &[]).await;
    predict(&s, RulClass::Low).await;
    let events = read_sse(body, 13).await;
    let kinds: Vec<&str> = events.iter().map(|e| e.0.as_str()).collect();
    let mut want = vec!["pin"; 11];
    want.extend(["relay", "notification"]);
    assert_eq!(kinds, want);
    assert_eq!(events[12].2["payload"]["notice"], "charge_needed");
    let ids: Vec<u64> = events.iter().map(|e| e.1).collect();
    assert_eq!(ids, (1..=13).collect::<Vec<_>>());
    assert_eq!(events[9].2["payload"], json!({"pin": "V9", "value": 0.0}));
}

#[tokio::test]
async fn stream_resumes_after_sequence() {
    let s = service(true, None);
    predict(&s, RulClass::Low).await;
    predict(&s, RulClass::High).await;
    let total = s.app.hub().events().len() as u64;

    let resumed = read_sse(open_stream(&s, "/api/events?since=5", &[]).await, (total - 5) as usize).await;
    assert_eq!(resumed.first().unwrap().1, 6);
    assert_eq!(resumed.last().unwrap().1, total);

    let by_header = read_sse(open_stream(&s, "/api/events", &[("last-event-id", "12")]).await, (total - 12) as usize).await;
    assert!(by_header.iter().all(|e| e.1 > 12));
    assert_eq!(by_header.len() as u64, total - 12);
}

#[tokio::test]
async fn concurrent_clients_see_the_same_stream() {
    let s = service(true, None);
    predict(&s, RulClass::Mid).await;
    let a = open_stream(&s, "/api/events", &[]).await;
    let b = open_stream(&s, "/api/events?since=0", &[]).await;
    predict(&s, RulClass::Low).await;
    relay(&s, json!({"state": "off", "mode": "manual"})).await;
    let n = s.app.hub().events().len();
    let (ea, eb) = tokio::join!(read_sse(a, n), read_sse(b, n));
    assert_eq!(ea.len(), n);
    assert_eq!(ea, eb);
}

#[tokio::test]
async fn model_metadata_and_ui() {
    let s = service(true, None);
    let (status, body) = call(&s, "GET", "/api/model", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["kind"], "gbdt");
    assert_eq!(body["schema"], "model.v1");
    assert_eq!(body["features"].as_array().unwrap().len(), 9);
    assert_eq!(body["features"][0]["pin"], "V0");
    assert_eq!(body["link"], "simulator");

    let resp = s
        .router
        .clone()
        .oneshot(Request::builder().uri("/ui").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    let with_ui = router(s.app.clone(), Some(dir.path().to_path_buf()));
    let resp = with_ui
        .oneshot(Request::builder().uri("/ui/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let text = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&text[..], b"<h1>console</h1>");
}

#[derive(Debug, Clone)]
enum Op {
    Predict(RulClass),
    Manual(Relay),
    Release,
    Tick { heartbeats: bool },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0usize..3).prop_map(|c| Op::Predict(RulClass::ALL[c])),
        1 => any::<bool>().prop_map(|on| Op::Manual(Relay::from_on(on))),
        1 => Just(Op::Release),
        2 => any::<bool>().prop_map(|heartbeats| Op::Tick { heartbeats }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_log_folds_to_snapshot(ops in prop::collection::vec(op(), 1..40)) {
        let link = HostLink::new(Box::new(SimTransport::new(DeviceSim::new(1.0, 0.0))));
        let mut hub = Hub::new(HubConfig::default(), Some(fixture().model.clone()), link, 0.0);
        let mut now = 0.0;
        for op in ops {
            now += 0.75;
            let _ = match op {
                Op::Predict(c) => {
                    let req = PredictRequest { features: fixture().rows[c.index()].clone().into_iter().collect() };
                    hub.predict(&req, now).map(|_| ())
                }
                Op::Manual(r) => hub.relay(&RelayRequest { state: Some(r), mode: RelayMode::Manual }, now).map(|_| ()),
                Op::Release => hub.relay(&RelayRequest { state: None, mode: RelayMode::Release }, now).map(|_| ()),
                Op::Tick { heartbeats } => {
                    hub.simulator().unwrap().set_heartbeats_enabled(heartbeats);
                    hub.tick(now).map_err(Into::into)
                }
            };
        }
        let events = hub.events();
        prop_assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
        prop_assert_eq!(&PinBoard::replay(events), hub.board());

        // Relay and mode from the last relay event match the controller.
        let last_relay = events.iter().rev().find_map(|e| match e.body {
            EventBody::Relay { relay, mode } => Some((relay, mode)),
            _ => None,
        });
        let (relay, mode) = last_relay.unwrap_or((Relay::Off, Mode::Auto));
        prop_assert_eq!((relay, mode), (hub.state().relay, hub.state().mode));
        prop_assert_eq!(hub.board().get(PinId(10)).unwrap_or(0.0) == 1.0, relay.is_on());

        // A notification follows exactly the automatic OFF -> ON switches.
        let mut on = false;
        let mut auto_switches = 0;
        for e in events {
            if let EventBody::Relay { relay, mode } = e.body {
                if relay.is_on() && !on && mode == Mode::Auto {
                    auto_switches += 1;
                }
                on = relay.is_on();
            }
        }
        let notes = events.iter().filter(|e| e.body == EventBody::Notification { notice: Notice::ChargeNeeded }).count();
        prop_assert_eq!(notes, auto_switches);
    }
}
