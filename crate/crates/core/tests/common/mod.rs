//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use witforge::agents::{prompts, AgentBackend, AgentRequest, AgentRole, Message, MockBackend, PromptContext};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every file under `dir`, keyed by its relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A chat-completion endpoint on localhost that answers with the mock
/// backend. The first `fail_first` requests get `fail_status` instead.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(fail_first: usize, fail_status: u16) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        let ctx = PromptContext::default();
        let systems: Arc<Vec<(String, AgentRole)>> = Arc::new(
            AgentRole::ALL
                .iter()
                .map(|r| (prompts::render(*r, &prompts::substitutions(&ctx)).unwrap(), *r))
                .collect(),
        );
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let systems = systems.clone();
                std::thread::spawn(move || {
                    let fail = (n < fail_first).then_some(fail_status);
                    let _ = serve(stream, fail, &systems);
                });
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve(mut stream: TcpStream, fail: Option<u16>, systems: &[(String, AgentRole)]) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;

    let (status, reply) = match fail {
        Some(s) => (s, json!({ "error": { "message": "try later" } })),
        None => match answer(&body, systems) {
            Ok(text) => (
                200,
                json!({
                    "choices": [{ "message": { "role": "assistant", "content": text } }],
                    "usage": { "prompt_tokens": 1, "completion_tokens": 1 }
                }),
            ),
            Err(m) => (400, json!({ "error": { "message": m } })),
        },
    };
    let reply = reply.to_string();
    write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}

fn answer(body: &[u8], systems: &[(String, AgentRole)]) -> Result<String, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let messages: Vec<Message> = serde_json::from_value(v["messages"].clone()).map_err(|e| e.to_string())?;
    let system = messages.first().map(|m| m.content.as_str()).unwrap_or("");
    let role = systems.iter().find(|(s, _)| s == system).map(|(_, r)| *r).ok_or("unknown system prompt")?;
    let req = AgentRequest { role, messages, temperature: v["temperature"].as_f64().unwrap_or(0.0), seed: None };
    MockBackend::new().complete(&req).map(|r| r.raw_text).map_err(|e| e.to_string())
}
