use std::time::Duration;

use futures::{SinkExt, StreamExt};
use teamcook_server::wire::ServerMessage;
use teamcook_server::{router, AppState, CreateSession, ServeConfig};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

async fn start(replays: &std::path::Path, timeout: Option<Duration>) -> (String, AppState) {
    let mut cfg = ServeConfig::new(0, replays, replays);
    cfg.step_timeout = timeout;
    let state = AppState::new(&cfg);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, state)
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: &str) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Ws, v: serde_json::Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn http(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    let status = out[9..12].parse().unwrap();
    (status, out)
}

#[tokio::test]
async fn two_humans_and_a_machine_step_in_lockstep() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(dir.path(), None).await;
    let (status, body) = http(&addr, "POST", "/sessions", r#"{"layout":"fc-3","slots":["human","human","random"]}"#).await;
    assert_eq!(status, 201, "{body}");
    assert!(body.contains(r#""session":"s1""#));

    let mut a = connect(&addr).await;
    let mut b = connect(&addr).await;
    send(&mut a, serde_json::json!({"type":"join","session":"s1","slot":0})).await;
    assert!(matches!(recv(&mut a).await, ServerMessage::State { step: 0, .. }));
    send(&mut b, serde_json::json!({"type":"join","session":"s1","slot":1})).await;
    // Game start broadcast.
    assert!(matches!(recv(&mut a).await, ServerMessage::State { step: 0, .. }));
    assert!(matches!(recv(&mut b).await, ServerMessage::State { step: 0, .. }));

    send(&mut a, serde_json::json!({"type":"action","step":0,"slot":0,"action":"north"})).await;
    send(&mut a, serde_json::json!({"type":"action","step":7,"slot":0,"action":"north"})).await;
    match recv(&mut a).await {
        ServerMessage::Error { current_step, .. } => assert_eq!(current_step, Some(0)),
        m => panic!("{m:?}"),
    }
    send(&mut b, serde_json::json!({"type":"action","step":0,"slot":1,"action":"stay"})).await;
    assert!(matches!(recv(&mut b).await, ServerMessage::StepResult { step: 0, .. }));
    assert!(matches!(recv(&mut b).await, ServerMessage::State { step: 1, .. }));

    let (status, _) = http(&addr, "POST", "/sessions/s1/stop", "").await;
    assert_eq!(status, 200);
    assert!(matches!(recv(&mut a).await, ServerMessage::StepResult { .. }));
    assert!(matches!(recv(&mut a).await, ServerMessage::State { .. }));
    assert_eq!(
        recv(&mut a).await,
        ServerMessage::GameOver {
            score: 0,
            replay_id: "s1".into(),
            truncated: true
        }
    );
    let log = teamcook::env::ReplayLog::from_jsonl(&std::fs::read_to_string(dir.path().join("s1.jsonl")).unwrap()).unwrap();
    assert_eq!(log.steps.len(), 1);
    assert!(log.truncated);
}

#[tokio::test]
async fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(dir.path(), None).await;
    let (status, body) = http(&addr, "POST", "/sessions", r#"{"layout":"pl-2","slots":["human","policy:gone.ckpt"]}"#).await;
    assert_eq!(status, 400);
    assert!(body.contains("gone.ckpt"), "{body}");
    assert!(body.contains(r#""type":"error""#));
}

#[tokio::test]
async fn step_timeout_fills_absent_humans() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, state) = start(dir.path(), Some(Duration::from_millis(20))).await;
    let id = state
        .create_session(&CreateSession {
            layout: "pl-2".into(),
            n: None,
            slots: vec!["human".into(), "stay".into()],
            seed: 0,
            step_timeout_ms: None,
        })
        .unwrap();
    let mut a = connect(&addr).await;
    send(&mut a, serde_json::json!({"type":"join","session":id,"slot":0})).await;
    assert!(matches!(recv(&mut a).await, ServerMessage::State { step: 0, .. }));
    assert!(matches!(recv(&mut a).await, ServerMessage::StepResult { step: 0, .. }));
}
