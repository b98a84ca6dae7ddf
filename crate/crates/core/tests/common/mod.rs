#![allow(dead_code)]

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

pub const BIN: &str = env!("CARGO_BIN_EXE_distseq");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A peers file listing `count` loopback ports that were free a moment ago.
pub fn peers_file(dir: &tempfile::TempDir, count: usize) -> PathBuf {
    let listeners: Vec<TcpListener> = (0..count).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let text: String = listeners.iter().map(|l| format!("{}\n", l.local_addr().unwrap())).collect();
    drop(listeners);
    let path = dir.path().join("peers.txt");
    std::fs::write(&path, text).unwrap();
    path
}

/// Starts one process per rank with `args` plus the socket backend flags and
/// waits for all of them.
pub fn run_socket_world(count: usize, args: &[&str]) -> Vec<Output> {
    let dir = tempfile::tempdir().unwrap();
    let peers = peers_file(&dir, count);
    let children: Vec<_> = (0..count)
        .map(|rank| {
            Command::new(BIN)
                .args(args)
                .args(["--backend", "socket", "--rank", &rank.to_string(), "--peers"])
                .arg(&peers)
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
                .expect("rank process starts")
        })
        .collect();
    children.into_iter().map(|c| c.wait_with_output().unwrap()).collect()
}
