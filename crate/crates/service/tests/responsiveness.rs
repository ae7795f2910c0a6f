//! Ping round trips while a full-size run keeps the CPU busy.

mod common;

use std::time::{Duration, Instant};

use common::*;
use semswarm_core::evolution::EvolutionConfig;
use semswarm_service::protocol::{ClientMessage, ServerMessage};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pings_stay_under_100ms_during_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), EvolutionConfig::default()).await;
    let mut c = Client::connect(server.addr).await;

    let seq = c
        .send(ClientMessage::StartRun {
            prompt: "cluster".into(),
            config: None,
        })
        .await;
    c.reply_to(seq).await;

    let mut rtts = Vec::new();
    let mut updates_during = 0;
    let started = Instant::now();
    while rtts.len() < 30 || updates_during == 0 {
        assert!(started.elapsed() < TIMEOUT, "run produced no generation while pinging");
        tokio::time::sleep(Duration::from_millis(50)).await;
        let sent = Instant::now();
        let seq = c.send(ClientMessage::Ping).await;
        let (skipped, pong) = c.reply_to(seq).await;
        rtts.push(sent.elapsed());
        assert_eq!(pong, ServerMessage::Pong { in_reply_to: seq });
        updates_during += skipped
            .iter()
            .filter(|m| matches!(m, ServerMessage::GenerationUpdate(_)))
            .count();
        assert!(!skipped.iter().any(is_finished), "run finished before the measurement ended");
    }
    let worst = rtts.iter().max().unwrap();
    println!("ping rtt over {} pings: worst {:?}", rtts.len(), worst);
    assert!(*worst < Duration::from_millis(100), "worst ping round trip {worst:?}");
    c.close().await;
}
