//! Shared test fixtures: a synthetic MCQ dataset generator and a minimal
//! completions-style stub server with echo-logprob semantics.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use benchleak_core::dataset::{Dataset, McqItem};
use benchleak_core::rng::{fnv1a64, mix64, unit_open, SplitMix64};

fn pseudo_word(rng: &mut SplitMix64) -> String {
    let len = 4 + rng.next_below(5) as usize;
    (0..len)
        .map(|_| (b'a' + rng.next_below(26) as u8) as char)
        .collect()
}

fn pool(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(&mut rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn words(rng: &mut SplitMix64, pool: &[String], n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&pool[rng.next_below(pool.len() as u64) as usize]);
    }
    out
}

/// Deterministic four-option items with pairwise-distinct options and
/// disjoint question/option vocabularies.
pub fn synth_dataset(n: usize, seed: u64) -> Dataset {
    let qpool = pool(600, 0xA11CE);
    let opool = pool(3000, 0xB0B);
    let mut rng = SplitMix64::new(seed);
    let items: Vec<McqItem> = (0..n)
        .map(|i| {
            let question = format!(
                "Which account of {} best explains the {} seen in {}?",
                words(&mut rng, &qpool, 3),
                words(&mut rng, &qpool, 1),
                words(&mut rng, &qpool, 3),
            );
            let mut idx: Vec<usize> = Vec::new();
            while idx.len() < 12 {
                let c = rng.next_below(opool.len() as u64) as usize;
                if !idx.contains(&c) {
                    idx.push(c);
                }
            }
            let options: Vec<String> = (0..4)
                .map(|j| {
                    format!(
                        "{} {} {}",
                        opool[idx[3 * j]],
                        opool[idx[3 * j + 1]],
                        opool[idx[3 * j + 2]]
                    )
                })
                .collect();
            McqItem::new(format!("q{i}"), question, options, None, BTreeMap::new()).unwrap()
        })
        .collect();
    Dataset::new("synth".to_owned(), items).unwrap()
}

/// Stub tokenizer: split after every space so tokens re-concatenate to
/// the input exactly.
pub fn stub_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if ch == ' ' {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Deterministic per-token logprob; the first token has none, like real
/// echo APIs.
pub fn stub_logprob(token: &str, index: usize) -> Option<f64> {
    if index == 0 {
        return None;
    }
    let h = mix64(fnv1a64(token.as_bytes()) ^ (index as u64).wrapping_mul(0x9E37_79B9));
    Some(-0.25 - 4.0 * unit_open(h))
}

#[derive(Debug, Clone, Default)]
pub struct StubPlan {
    /// Respond 429 to the n-th request (0-based) once.
    pub reject_429_at: Option<u32>,
    /// Emit a null logprob mid-sequence (malformed response).
    pub null_mid_sequence: bool,
    /// Return tokens that do not re-concatenate to the prompt.
    pub corrupt_tokens: bool,
    /// Drop the logprobs object entirely.
    pub omit_logprobs: bool,
}

pub struct StubServer {
    pub endpoint: String,
    pub requests: Arc<AtomicU32>,
    pub rejected: Arc<AtomicU32>,
    stop: Arc<AtomicBool>,
    port: u16,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(plan: StubPlan) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let port = listener.local_addr().unwrap().port();
        let requests = Arc::new(AtomicU32::new(0));
        let rejected = Arc::new(AtomicU32::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = requests.clone();
            let rejected = rejected.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { break };
                    handle_connection(stream, &plan, &requests, &rejected);
                }
            })
        };
        Self {
            endpoint: format!("http://127.0.0.1:{port}/v1/completions"),
            requests,
            rejected,
            stop,
            port,
            handle: Some(handle),
        }
    }

    pub fn request_count(&self) -> u32 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
        if buf.len() > 1 << 20 {
            return None;
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buf[body_start..body_start + content_length]).to_string())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let response = format!(
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

fn handle_connection(
    mut stream: TcpStream,
    plan: &StubPlan,
    requests: &AtomicU32,
    rejected: &AtomicU32,
) {
    let Some(body) = read_request(&mut stream) else {
        return;
    };
    let index = requests.fetch_add(1, Ordering::SeqCst);
    if plan.reject_429_at == Some(index) {
        rejected.fetch_add(1, Ordering::SeqCst);
        respond(
            &mut stream,
            "429 Too Many Requests",
            "{\"error\":\"slow down\"}",
        );
        return;
    }
    let parsed: serde_json::Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(_) => {
            respond(&mut stream, "400 Bad Request", "{\"error\":\"bad json\"}");
            return;
        }
    };
    let prompt = parsed["prompt"].as_str().unwrap_or_default().to_string();

    if plan.omit_logprobs {
        respond(&mut stream, "200 OK", "{\"choices\":[{\"text\":\"\"}]}");
        return;
    }

    let mut tokens = stub_tokenize(&prompt);
    if plan.corrupt_tokens && !tokens.is_empty() {
        tokens[0] = "???corrupt???".to_string();
    }
    let logprobs: Vec<Option<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if plan.null_mid_sequence && i == tokens.len() / 2 && i > 0 {
                None
            } else {
                stub_logprob(t, i)
            }
        })
        .collect();
    let response = serde_json::json!({
        "id": "stub",
        "object": "text_completion",
        "choices": [{
            "text": prompt,
            "index": 0,
            "logprobs": {
                "tokens": tokens,
                "token_logprobs": logprobs,
            },
            "finish_reason": "length",
        }],
    });
    respond(&mut stream, "200 OK", &response.to_string());
}
