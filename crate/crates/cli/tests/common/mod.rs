#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn cog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cog")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Value {
    let out = cog(args);
    assert!(
        out.status.success(),
        "cog {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

pub fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// The first `n` records of the bundled demo corpus as a JSONL file.
pub fn demo_subset(dir: &Path, n: usize) -> PathBuf {
    let text: String = cog_cli::pipeline::DEMO_CORPUS.lines().take(n).map(|l| format!("{l}\n")).collect();
    let path = dir.join("input.jsonl");
    std::fs::write(&path, text).unwrap();
    path
}

/// Deterministic stand-in for the encoder service: every value is a
/// function of the token surfaces, positions and the model name.
pub struct MockSidecar {
    pub url: String,
}

fn unit(seed: &str, i: usize) -> f32 {
    let mut h: u64 = 1469598103934665603;
    for b in seed.bytes().chain(i.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(1099511628211);
    }
    ((h >> 11) as f64 / (1u64 << 53) as f64 - 0.5) as f32
}

fn respond(model: &str, d: usize, body: &Value) -> Value {
    let tokens: Vec<String> =
        body["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()).collect();
    let ctx = |t: usize| format!("{model}|{}", tokens[..=t].join(" "));
    match body["kind"].as_str().unwrap() {
        "document" => {
            let rows = |tag: &str| -> Vec<Vec<f32>> {
                (0..tokens.len()).map(|t| (0..d / 2).map(|j| unit(&format!("{tag}{}", ctx(t)), j)).collect()).collect()
            };
            json!({ "d": d, "d_t": d, "start": rows("s"), "end": rows("e"), "fingerprint": model })
        }
        _ => {
            let q: Vec<f32> = (0..d).map(|j| unit(&format!("q{}", ctx(tokens.len() - 1)), j)).collect();
            json!({ "q": q, "fingerprint": model })
        }
    }
}

fn serve(stream: TcpStream, model: &str, d: usize) -> std::io::Result<()> {
    let mut r = BufReader::new(stream.try_clone()?);
    let mut w = stream;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let request_line = line.clone();
    let mut len = 0usize;
    loop {
        line.clear();
        r.read_line(&mut line)?;
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let reply = if request_line.starts_with("GET /health") {
        json!({ "status": "ok", "fingerprint": model })
    } else {
        respond(model, d, &serde_json::from_slice(&body).expect("request is JSON"))
    };
    let bytes = reply.to_string();
    write!(
        w,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{bytes}",
        bytes.len()
    )?;
    w.flush()
}

impl MockSidecar {
    pub fn start(model: &str, d: usize) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let model = model.to_string();
        std::thread::spawn(move || {
            for s in listener.incoming().flatten() {
                let _ = serve(s, &model, d);
            }
        });
        Self { url }
    }
}
