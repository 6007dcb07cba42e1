use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use thurston_core::config::Config;
use thurston_service::{NavCommand, Session};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(thurston_service::serve(listener));
    addr.to_string()
}

async fn connect(addr: &str) -> Client {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    ws
}

async fn send(ws: &mut Client, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Client) -> Value {
    let next = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("server went quiet");
    match next.unwrap().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("unexpected message {other:?}"),
    }
}

fn small_config() -> Config {
    let mut c = Config::defaults();
    c.render.width = 32;
    c.render.height = 32;
    c
}

fn commands() -> Vec<NavCommand> {
    (0..20)
        .map(|k| {
            let k = k as f64;
            NavCommand {
                forward: 0.3 * (0.7 * k).sin(),
                right: 0.2 * (1.3 * k).cos(),
                up: 0.1,
                yaw: 0.4 * (0.5 * k).sin(),
                pitch: 0.2 * (0.9 * k).cos(),
                dt: 0.016,
            }
        })
        .collect()
}

fn nav_json(c: &NavCommand) -> Value {
    json!({"type": "nav", "forward": c.forward, "right": c.right, "up": c.up, "yaw": c.yaw, "pitch": c.pitch, "dt": c.dt})
}

fn pose_vectors(frame: &Value) -> Vec<f64> {
    ["position", "forward", "up", "right"]
        .iter()
        .flat_map(|k| frame["camera"][k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>())
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_answers_ok() {
    let addr = start().await;
    let mut tcp = TcpStream::connect(&addr).await.unwrap();
    tcp.write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut reply = String::new();
    tcp.read_to_string(&mut reply).await.unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.ends_with("ok"), "{reply}");
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_session_streams_ordered_frames_and_replays() {
    let addr = start().await;
    let mut ws = connect(&addr).await;
    let config = small_config();
    send(&mut ws, json!({"type": "open", "config": serde_json::to_value(&config).unwrap()})).await;
    let cmds = commands();
    for c in &cmds {
        send(&mut ws, nav_json(c)).await;
    }
    send(&mut ws, json!({"type": "close"})).await;

    let mut frames = Vec::new();
    loop {
        let m = recv(&mut ws).await;
        match m["type"].as_str().unwrap() {
            "opened" => assert!(m["session"].as_u64().unwrap() > 0),
            "frame" => frames.push(m),
            "closed" => break,
            other => panic!("unexpected {other}: {m}"),
        }
    }
    assert!(frames.len() >= 21, "only {} frames", frames.len());
    let ids: Vec<u64> = frames.iter().map(|f| f["id"].as_u64().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]), "{ids:?}");
    for f in &frames {
        assert_eq!(f["format"], "png-base64");
        assert!(!f["data"].as_str().unwrap().is_empty());
    }

    let mut replay = Session::open(&config).unwrap();
    for c in &cmds {
        replay.apply_nav(c).unwrap();
    }
    let expected = thurston_service::protocol::CameraPose::from(&replay.camera);
    let expected = serde_json::to_value(expected).unwrap();
    let got = pose_vectors(frames.last().unwrap());
    let want = pose_vectors(&json!({ "camera": expected }));
    let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "final camera differs from replay by {diff}");
}

#[tokio::test(flavor = "multi_thread")]
async fn nav_yields_preview_then_full_and_refresh_resends_it() {
    let addr = start().await;
    let mut ws = connect(&addr).await;
    send(&mut ws, json!({"type": "open", "config": serde_json::to_value(small_config()).unwrap()})).await;
    let mut full = None;
    while full.is_none() {
        let m = recv(&mut ws).await;
        if m["type"] == "frame" && m["quality"] == "full" {
            full = Some(m);
        }
    }
    send(&mut ws, json!({"type": "nav", "forward": 0.25})).await;
    let preview = recv(&mut ws).await;
    assert_eq!(preview["quality"], "preview");
    assert_eq!(preview["w"], 8);
    let full = recv(&mut ws).await;
    assert_eq!(full["quality"], "full");
    assert_eq!(full["w"], 32);
    assert!(full["id"].as_u64() > preview["id"].as_u64());

    send(&mut ws, json!({"type": "refresh"})).await;
    let again = recv(&mut ws).await;
    assert_eq!(again["id"], full["id"]);
    assert_eq!(again["data"], full["data"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_are_reported_with_codes() {
    let addr = start().await;
    let mut ws = connect(&addr).await;
    send(&mut ws, json!({"type": "nav", "forward": 0.1})).await;
    assert_eq!(recv(&mut ws).await["code"], "no-session");
    send(&mut ws, json!({"type": "open", "config": "klein-bottle"})).await;
    assert_eq!(recv(&mut ws).await["code"], "unknown-manifold");
    send(&mut ws, json!({"type": "open", "config": "[render]\nwidth = -3\n"})).await;
    assert_eq!(recv(&mut ws).await["code"], "config-error");
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert_eq!(recv(&mut ws).await["code"], "bad-request");
    send(&mut ws, json!({"type": "list"})).await;
    let list = recv(&mut ws).await;
    assert!(list["configs"].as_array().unwrap().iter().any(|c| c == "flat-torus"));
}
