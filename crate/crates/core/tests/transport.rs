use std::time::{Duration, Instant};

use ald::pipeline::transport::{Client, Server};
use ald::trajectory::Trajectory;

fn segment(actor_id: u32, seq: u64, t: usize) -> Trajectory {
    let (obs_dim, a) = (3, 4);
    Trajectory {
        actor_id,
        seq,
        actor_version: seq / 2,
        obs_dim,
        num_actions: a,
        observations: (0..(t + 1) * obs_dim).map(|i| i as f32 * 0.5 - seq as f32).collect(),
        actions: (0..t).map(|i| (i % a) as u32).collect(),
        rewards: (0..t).map(|i| if i + 1 == t { 1.0 } else { 0.0 }).collect(),
        dones: (0..t).map(|i| i + 1 == t).collect(),
        first: seq == 0,
        behaviour_logits: (0..t * a).map(|i| (i as f32).sin()).collect(),
        actor_state: vec![actor_id as f32; 6],
        annotation: None,
    }
}

fn wait_for(mut cond: impl FnMut() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < Duration::from_secs(10), "timed out");
        std::thread::sleep(Duration::from_millis(5));
    }
}

#[test]
fn trajectories_cross_a_loopback_connection_intact() {
    let (tx, rx) = crossbeam_channel::unbounded();
    let server = Server::bind("127.0.0.1:0", tx).unwrap();
    assert!(server.running());
    let clients: Vec<Client> = (0..3)
        .map(|id| Client::connect(server.addr, id, Duration::from_secs(60)).unwrap())
        .collect();
    let mut sent = Vec::new();
    for seq in 0..5 {
        for (id, c) in clients.iter().enumerate() {
            let t = segment(id as u32, seq, 2 + seq as usize);
            c.send(&t).unwrap();
            sent.push(t);
        }
    }
    let mut got: Vec<Trajectory> = (0..sent.len())
        .map(|_| rx.recv_timeout(Duration::from_secs(10)).unwrap())
        .collect();
    got.sort_by_key(|t| (t.seq, t.actor_id));
    assert_eq!(got, sent);
    assert_eq!(
        server.received.load(std::sync::atomic::Ordering::Relaxed),
        sent.len() as u64
    );
    for c in clients {
        c.close().unwrap();
    }
}

#[test]
fn heartbeats_arrive_while_idle() {
    let (tx, _rx) = crossbeam_channel::unbounded();
    let server = Server::bind("127.0.0.1:0", tx).unwrap();
    let client = Client::connect(server.addr, 9, Duration::from_millis(20)).unwrap();
    wait_for(|| server.heartbeats.load(std::sync::atomic::Ordering::Relaxed) >= 3);
    drop(client);
}
