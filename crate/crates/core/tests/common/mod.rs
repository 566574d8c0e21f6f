#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden(name: &str) -> String {
    fs::read_to_string(fixtures().join("golden").join(name)).unwrap()
}

pub fn seed_prompt() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/seed_prompt.toml")
}

/// Copies the fixture tree into a fresh temporary directory.
pub fn tree_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("tree"), dir.path());
    dir
}

pub fn copy_dir(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(from).unwrap();
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).unwrap();
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// (kind, name, root-relative file) triples from the hand-written manifest.
pub fn manifest() -> BTreeSet<(String, String, String)> {
    fs::read_to_string(fixtures().join("tree_manifest.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            assert_eq!(parts.len(), 3, "bad manifest line {l:?}");
            (parts[0].to_owned(), parts[1].to_owned(), parts[2].to_owned())
        })
        .collect()
}

/// Directories (root-relative, `.` for the root) holding a Fortran file,
/// counted independently of the indexer.
pub fn fortran_dirs(root: &Path) -> BTreeSet<String> {
    let mut dirs = BTreeSet::new();
    for entry in walkdir::WalkDir::new(root).into_iter().filter_entry(|e| {
        e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.')
    }) {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = name.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
        if entry.file_type().is_file() && ["f", "F", "f90", "F90"].contains(&ext) {
            let rel = entry.path().parent().unwrap().strip_prefix(root).unwrap();
            let s = rel.to_string_lossy().replace('\\', "/");
            dirs.insert(if s.is_empty() { ".".to_owned() } else { s });
        }
    }
    dirs
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub body: Value,
    pub authorization: Option<String>,
}

/// Minimal HTTP/1.1 server that records request bodies and the peak number
/// of requests being served at once.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
    pub max_in_flight: Arc<AtomicUsize>,
}

pub type Handler = dyn Fn(&Value, usize) -> (u16, String) + Send + Sync;

impl StubServer {
    /// `handler(body, arrival_index)` returns the status and body to send
    /// after holding the request for `hold`.
    pub fn start(hold: Duration, handler: Arc<Handler>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let arrivals = Arc::new(AtomicUsize::new(0));
        {
            let requests = requests.clone();
            let max_in_flight = max_in_flight.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (requests, max_in_flight, in_flight, arrivals, handler) = (
                        requests.clone(),
                        max_in_flight.clone(),
                        in_flight.clone(),
                        arrivals.clone(),
                        handler.clone(),
                    );
                    thread::spawn(move || {
                        let Some(recorded) = read_request(&stream) else { return };
                        let index = arrivals.fetch_add(1, Ordering::SeqCst);
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let (status, body) = handler(&recorded.body, index);
                        requests.lock().unwrap().push(recorded);
                        thread::sleep(hold);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        write_response(stream, status, &body);
                    });
                }
            });
        }
        StubServer { url, requests, max_in_flight }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn read_request(stream: &TcpStream) -> Option<Recorded> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut length = 0usize;
    let mut authorization = None;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        let (name, value) = header.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "authorization" => authorization = Some(value.trim().to_owned()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Recorded { body: serde_json::from_slice(&body).unwrap_or(Value::Null), authorization })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let reply = format!(
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(reply.as_bytes());
    let _ = stream.flush();
}

/// Chat-completion body with `content` as the first choice.
pub fn completion_body(content: &str, finish_reason: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason,
        }],
    })
    .to_string()
}

/// Text of the last message of a recorded request.
pub fn last_content(body: &Value) -> String {
    body["messages"].as_array().and_then(|m| m.last()).and_then(|m| m["content"].as_str()).unwrap_or("").to_owned()
}

/// Runs the built `scribe` binary.
pub fn run_scribe<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_scribe")).args(args).output().unwrap()
}

/// Relative path to contents for every file under `root`.
pub fn snapshot(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}
