mod common;

use std::time::Duration;

use base64::Engine;
use common::*;
use semswarm_core::evolution::RunHistory;
use semswarm_core::render::PNG_SIGNATURE;
use semswarm_service::protocol::{ClientMessage, ErrorCode, RunStatus, ServerMessage};
use semswarm_service::{ServiceError, SessionRegistry};
use serde_json::json;

fn start_run(prompt: &str, config: serde_json::Value) -> ClientMessage {
    ClientMessage::StartRun {
        prompt: prompt.into(),
        config: Some(config),
    }
}

fn error_code(m: &ServerMessage) -> ErrorCode {
    match m {
        ServerMessage::Error { code, .. } => *code,
        other => panic!("expected an error, got {other:?}"),
    }
}

fn acked_run_id(m: &ServerMessage) -> String {
    match m {
        ServerMessage::Ack {
            run_id: Some(id), ..
        } => id.clone(),
        other => panic!("expected an ack with a run id, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_run_streams_one_persisted_update_per_generation() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;

    let seq = c.send(start_run("cluster", json!({ "run_seed": 3 }))).await;
    let (_, ack) = c.reply_to(seq).await;
    let run_id = acked_run_id(&ack);

    let (skipped, done) = c.recv_until(is_finished).await;
    let updates: Vec<_> = skipped
        .into_iter()
        .filter_map(|m| match m {
            ServerMessage::GenerationUpdate(u) => Some(u),
            _ => None,
        })
        .collect();
    assert_eq!(
        done,
        ServerMessage::RunFinished {
            run_id: run_id.clone(),
            status: RunStatus::Completed,
            generations: 4,
            error: None,
        }
    );
    assert_eq!(updates.len(), 4);
    for (g, u) in updates.iter().enumerate() {
        assert_eq!(u.run_id, run_id);
        assert_eq!(u.generation, g as u64);
        assert_eq!(u.candidate_losses.len(), 16);
        let png = base64::engine::general_purpose::STANDARD.decode(&u.frame_png).unwrap();
        assert_eq!(png[..8], PNG_SIGNATURE);
    }

    let (status, body) = http_get(server.addr, &format!("/v1/runs/{run_id}")).await;
    assert_eq!(status, 200);
    let history: RunHistory = serde_json::from_slice(&body).unwrap();
    assert_eq!(history.records.len(), updates.len());
    for (r, u) in history.records.iter().zip(&updates) {
        assert_eq!((r.generation, r.best_loss, r.best_params), (u.generation, u.best_loss, u.best_params));
    }
    assert_eq!(history.config.run_seed, 3);
    c.close().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_are_rejected_and_the_session_stays_usable() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;

    c.send_raw("{ this is not json").await;
    assert_eq!(error_code(&c.recv().await), ErrorCode::BadJson);
    c.send_raw(r#"{"v":1,"type":"dance","seq":1,"payload":{}}"#).await;
    assert_eq!(error_code(&c.recv().await), ErrorCode::UnknownType);

    let seq = c.send(ClientMessage::Refine { prompt: "swirl".into() }).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NoRun);
    let seq = c.send(ClientMessage::Pause).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NoRun);
    let seq = c.send(start_run("cluster", json!({ "n_agents": 10_000_000 }))).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::BadPayload);
    let seq = c.send(ClientMessage::Admit { run_id: "feedface".into(), n_agents: None }).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NotFound);

    // A repeated seq is refused.
    c.send_raw(&ClientMessage::Ping.encode(seq)).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::BadSeq);

    let seq = c.send(ClientMessage::Ping).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::Pong { in_reply_to: seq });
    let seq = c.send(start_run("cluster", json!({ "generations": 1 }))).await;
    acked_run_id(&c.reply_to(seq).await.1);
    c.recv_until(is_finished).await;
    c.close().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_holds_at_a_boundary_and_refine_only_while_paused() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;

    let seq = c.send(start_run("cluster", json!({ "generations": 40 }))).await;
    let run_id = acked_run_id(&c.reply_to(seq).await.1);
    c.recv_until(|m| matches!(m, ServerMessage::GenerationUpdate(_))).await;

    let seq = c.send(ClientMessage::Refine { prompt: "swirl".into() }).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NotPaused);

    let seq = c.send(ClientMessage::Pause).await;
    let (_, ack) = c.reply_to(seq).await;
    assert_eq!(ack, ServerMessage::ack("pause", seq));
    // The generation in flight may still land; after that, silence.
    let mut late = 0;
    while let Some(m) = c.try_recv(Duration::from_millis(1500)).await {
        assert!(matches!(m, ServerMessage::GenerationUpdate(_)), "{m:?}");
        late += 1;
    }
    assert!(late <= 1, "{late} updates after pause");
    let (_, paused) = http_json(server.addr, &format!("/v1/runs/{run_id}")).await;
    let paused_at = paused["records"].as_array().unwrap().len();
    assert!(paused_at < 40);
    let seq = c.send(ClientMessage::Pause).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NotRunning);

    let seq = c.send(ClientMessage::Refine { prompt: "swirl".into() }).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::ack("refine", seq));
    let seq = c.send(ClientMessage::Resume).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::ack("resume", seq));
    let seq = c.send(ClientMessage::Resume).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NotPaused);

    let (_, done) = c.recv_until(is_finished).await;
    assert!(matches!(done, ServerMessage::RunFinished { status: RunStatus::Completed, generations: 40, .. }));
    let (_, history) = http_json(server.addr, &format!("/v1/runs/{run_id}")).await;
    let revisions = history["prompt_revisions"].as_array().unwrap();
    assert_eq!(revisions.len(), 1);
    assert_eq!(revisions[0]["prompt"], "swirl");
    assert_eq!(revisions[0]["generation"].as_u64().unwrap() as usize, paused_at);
    c.close().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn branch_and_admit_after_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;

    let seq = c.send(start_run("cluster", json!({ "run_seed": 9 }))).await;
    let parent = acked_run_id(&c.reply_to(seq).await.1);
    c.recv_until(is_finished).await;

    let seq = c
        .send(ClientMessage::Branch {
            run_id: None,
            generation: 2,
            candidate: 5,
        })
        .await;
    let child = acked_run_id(&c.reply_to(seq).await.1);
    assert_ne!(child, parent);
    let seq = c.send(start_run("cluster", json!({}))).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::RunActive);
    c.recv_until(is_finished).await;
    let (_, history) = http_json(server.addr, &format!("/v1/runs/{child}")).await;
    assert_eq!(history["parent"]["parent_run_id"], parent.as_str());
    assert_eq!(history["parent"]["candidate_index"], 5);

    let seq = c
        .send(ClientMessage::Branch {
            run_id: Some(parent.clone()),
            generation: 99,
            candidate: 0,
        })
        .await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::NotFound);

    let seq = c
        .send(ClientMessage::Admit {
            run_id: parent.clone(),
            n_agents: Some(40),
        })
        .await;
    let lifeform = match c.reply_to(seq).await.1 {
        ServerMessage::Ack {
            lifeform_id: Some(id), ..
        } => id,
        other => panic!("{other:?}"),
    };
    let (status, state) = http_json(server.addr, "/v1/ecosystem/state").await;
    assert_eq!(status, 200);
    let lifeforms = state["lifeforms"].as_array().unwrap();
    assert!(lifeforms.iter().any(|l| l["id"] == lifeform.as_str() && l["owner"] == c.session_id.as_str()));
    assert_eq!(state["n_agents"], 40);

    let seq = c.send(ClientMessage::Admit { run_id: parent, n_agents: Some(1_000_000) }).await;
    assert_eq!(error_code(&c.reply_to(seq).await.1), ErrorCode::CapacityExceeded);
    c.close().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn closing_the_socket_stops_the_run_and_keeps_its_history() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;
    let session = c.session_id.clone();
    assert!(server.app.sessions.get(&session).is_some());

    let seq = c.send(start_run("cluster", json!({ "generations": 200 }))).await;
    let run_id = acked_run_id(&c.reply_to(seq).await.1);
    c.recv_until(|m| matches!(m, ServerMessage::GenerationUpdate(_))).await;
    c.close().await;

    let deadline = tokio::time::Instant::now() + TIMEOUT;
    while server.app.sessions.get(&session).is_some() {
        assert!(tokio::time::Instant::now() < deadline, "session never closed");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(matches!(server.app.sessions.close(&session), Err(ServiceError::NotFound(_))));
    let history = server.app.runs.store.load_run(&run_id).unwrap();
    assert!(!history.records.is_empty() && history.records.len() < 200);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_surface() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let (status, health) = http_json(server.addr, "/healthz").await;
    assert_eq!((status, health["status"].as_str()), (200, Some("ok")));
    assert_eq!(health["embedder"], "oracle-v1");

    let (status, body) = http_json(server.addr, "/v1/runs/0123456789abcdef").await;
    assert_eq!((status, body["error"].as_str()), (404, Some("not_found")));
    let (status, _) = http_json(server.addr, "/v1/runs/..%2Fsecret").await;
    assert_eq!(status, 404);
    let (status, runs) = http_json(server.addr, "/v1/runs").await;
    assert_eq!((status, runs["runs"].as_array().map(Vec::len)), (200, Some(0)));

    let (status, state) = http_json(server.addr, "/v1/ecosystem/state").await;
    assert_eq!(status, 200);
    assert_eq!(state["capacity"], 2_000);
    let (status, png) = http_get(server.addr, "/v1/ecosystem/snapshot.png?size=64").await;
    assert_eq!(status, 200);
    assert_eq!(png[..8], PNG_SIGNATURE);
}

#[test]
fn registry_tokens_are_unique_and_close_once() {
    let reg = SessionRegistry::default();
    let ids: std::collections::HashSet<String> = (0..1000).map(|_| reg.create()).collect();
    assert_eq!(ids.len(), 1000);
    assert_eq!(reg.len(), 1000);
    let id = ids.into_iter().next().unwrap();
    assert_eq!(reg.close(&id).unwrap().id, id);
    assert!(matches!(reg.close(&id), Err(ServiceError::NotFound(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_client_drives_every_control() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), small_runs()).await;
    let mut c = Client::connect(server.addr).await;
    let update = |m: &ServerMessage| matches!(m, ServerMessage::GenerationUpdate(_));

    let seq = c.send(start_run("cluster", json!({ "generations": 60 }))).await;
    let first = acked_run_id(&c.reply_to(seq).await.1);
    c.recv_until(update).await;
    let seq = c.send(ClientMessage::Pause).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::ack("pause", seq));
    let seq = c.send(ClientMessage::Refine { prompt: "scatter".into() }).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::ack("refine", seq));
    let seq = c.send(ClientMessage::Resume).await;
    assert_eq!(c.reply_to(seq).await.1, ServerMessage::ack("resume", seq));
    c.recv_until(update).await;

    // Branching from a live run replaces it.
    let seq = c
        .send(ClientMessage::Branch {
            run_id: None,
            generation: 0,
            candidate: 3,
        })
        .await;
    let (skipped, ack) = c.reply_to(seq).await;
    let second = acked_run_id(&ack);
    let mut seen = skipped;
    let (more, done) = c.recv_until(|m| matches!(m, ServerMessage::RunFinished { run_id, .. } if *run_id == second)).await;
    seen.extend(more);
    assert!(matches!(done, ServerMessage::RunFinished { status: RunStatus::Completed, generations: 60, .. }));
    let stopped = seen.iter().find_map(|m| match m {
        ServerMessage::RunFinished { run_id, status, .. } if *run_id == first => Some(*status),
        _ => None,
    });
    assert_eq!(stopped, Some(RunStatus::Stopped));
    let mut last_gen = None;
    for m in &seen {
        if let ServerMessage::GenerationUpdate(u) = m {
            if u.run_id == second {
                assert!(last_gen.is_none_or(|g| u.generation > g));
                last_gen = Some(u.generation);
            }
        }
    }

    let seq = c.send(ClientMessage::Admit { run_id: second, n_agents: None }).await;
    assert!(matches!(c.reply_to(seq).await.1, ServerMessage::Ack { lifeform_id: Some(_), .. }));
    let (_, state) = http_json(server.addr, "/v1/ecosystem/state").await;
    assert_eq!(state["n_agents"], 50);
    c.close().await;
}
