#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use semswarm_core::evolution::EvolutionConfig;
use semswarm_service::ecosystem::EcosystemConfig;
use semswarm_service::protocol::{parse_server, ClientMessage, ServerMessage};
use semswarm_service::{RunningServer, ServerConfig};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const TIMEOUT: Duration = Duration::from_secs(120);

pub fn small_runs() -> EvolutionConfig {
    EvolutionConfig {
        n_agents: 64,
        sim_steps: 30,
        generations: 4,
        image_size: 32,
        ..EvolutionConfig::default()
    }
}

pub async fn start(store: &std::path::Path, evolution: EvolutionConfig) -> RunningServer {
    let config = ServerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        store_dir: store.to_path_buf(),
        evolution,
        ecosystem: EcosystemConfig {
            capacity: 2_000,
            seed: 5,
            steps_per_second: 20.0,
        },
        admit_agents: 50,
        ..ServerConfig::default()
    };
    semswarm_service::spawn(config).await.unwrap()
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
    last_server_seq: u64,
    pub session_id: String,
}

impl Client {
    pub async fn connect(addr: SocketAddr) -> Client {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/v1/ws")).await.unwrap();
        let mut c = Client {
            ws,
            seq: 0,
            last_server_seq: 0,
            session_id: String::new(),
        };
        match c.recv().await {
            ServerMessage::Session { session_id } => c.session_id = session_id,
            other => panic!("expected a session message first, got {other:?}"),
        }
        c
    }

    /// Sends with the next seq and returns it.
    pub async fn send(&mut self, m: ClientMessage) -> u64 {
        self.seq += 1;
        self.ws.send(Message::text(m.encode(self.seq))).await.unwrap();
        self.seq
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_string())).await.unwrap();
    }

    /// Next server message; checks that server seqs strictly increase.
    pub async fn recv(&mut self) -> ServerMessage {
        self.try_recv(TIMEOUT).await.expect("timed out waiting for the server")
    }

    pub async fn try_recv(&mut self, wait: Duration) -> Option<ServerMessage> {
        loop {
            let frame = tokio::time::timeout(wait, self.ws.next()).await.ok()?;
            let frame = frame.expect("connection closed").expect("websocket error");
            if let Message::Text(text) = frame {
                let (seq, msg) = parse_server(text.as_str()).unwrap();
                assert!(seq > self.last_server_seq, "server seq {seq} after {}", self.last_server_seq);
                self.last_server_seq = seq;
                return Some(msg);
            }
        }
    }

    /// Reads until `pred` matches, returning the skipped messages and the match.
    pub async fn recv_until(&mut self, pred: impl Fn(&ServerMessage) -> bool) -> (Vec<ServerMessage>, ServerMessage) {
        let mut skipped = Vec::new();
        loop {
            let m = self.recv().await;
            if pred(&m) {
                return (skipped, m);
            }
            skipped.push(m);
        }
    }

    /// The reply to the message sent with `seq`.
    pub async fn reply_to(&mut self, seq: u64) -> (Vec<ServerMessage>, ServerMessage) {
        self.recv_until(|m| in_reply_to(m) == Some(seq)).await
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

pub fn in_reply_to(m: &ServerMessage) -> Option<u64> {
    match m {
        ServerMessage::Ack { in_reply_to, .. } | ServerMessage::Pong { in_reply_to } => Some(*in_reply_to),
        ServerMessage::Error { in_reply_to, .. } => *in_reply_to,
        _ => None,
    }
}

pub fn is_finished(m: &ServerMessage) -> bool {
    matches!(m, ServerMessage::RunFinished { .. })
}

pub async fn http_get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
    let url = format!("http://{addr}{path}");
    tokio::task::spawn_blocking(move || {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let mut resp = agent.get(&url).call().unwrap();
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(64 << 20).read_to_vec().unwrap();
        (status, body)
    })
    .await
    .unwrap()
}

pub async fn http_json(addr: SocketAddr, path: &str) -> (u16, serde_json::Value) {
    let (status, body) = http_get(addr, path).await;
    (status, serde_json::from_slice(&body).unwrap())
}
