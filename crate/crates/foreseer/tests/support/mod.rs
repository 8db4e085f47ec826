//! A throwaway HTTP server for exercising the wire client.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use foreseer::client::{WireRequest, WireResponse};
use foreseer_core::verifier::{oracle_monitor, oracle_select, NarrateRequest, Narration, OracleVerifier, TaskSpec, VerifierBackend};

pub struct Seen {
    pub requests: Vec<WireRequest>,
    pub auth: Vec<Option<String>>,
}

pub struct MockServer {
    pub url: String,
    pub seen: Arc<Mutex<Seen>>,
}

type Handler = dyn Fn(&WireRequest) -> (u16, String) + Send + Sync;

fn handle(mut stream: TcpStream, handler: &Handler, seen: &Mutex<Seen>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let req: WireRequest = serde_json::from_slice(&body).expect("client sent a protocol request");
    let (status, reply) = handler(&req);
    {
        let mut s = seen.lock().unwrap();
        s.requests.push(req);
        s.auth.push(auth);
    }
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.as_bytes());
}

impl MockServer {
    pub fn start(handler: impl Fn(&WireRequest) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/verify", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Seen {
            requests: Vec::new(),
            auth: Vec::new(),
        }));
        let handler: Arc<Handler> = Arc::new(handler);
        let s2 = seen.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let h = handler.clone();
                let s = s2.clone();
                thread::spawn(move || handle(stream, h.as_ref(), &s));
            }
        });
        MockServer { url, seen }
    }

    /// Answers like the in-process oracle, mapping task text back to the built-in task.
    pub fn oracle() -> Self {
        Self::start(|r| (200, serde_json::to_string(&oracle_reply(r)).unwrap()))
    }

    pub fn request_count(&self) -> usize {
        self.seen.lock().unwrap().requests.len()
    }
}

pub fn task_by_text(text: &str) -> TaskSpec {
    TaskSpec::BUILTIN_IDS
        .iter()
        .map(|id| TaskSpec::builtin(id).unwrap())
        .find(|t| t.text == text)
        .expect("known task text")
}

pub fn oracle_reply(r: &WireRequest) -> WireResponse {
    match r {
        WireRequest::Narrate { rollout_id, frames, .. } => {
            let n = OracleVerifier
                .narrate(&NarrateRequest {
                    rollout_id: rollout_id.clone(),
                    frames: frames.clone(),
                })
                .unwrap();
            WireResponse::Narration {
                rollout_id: rollout_id.clone(),
                text: n.text,
            }
        }
        WireRequest::Select { task, narrations } => {
            let t = task_by_text(task);
            let ns: Vec<Narration> = narrations.iter().map(|s| Narration::from_text(s).unwrap()).collect();
            let v = oracle_select(&ns, &t).unwrap();
            WireResponse::Verdict {
                choice: Some(v.chosen_index),
                ok: None,
                rationale: v.per_candidate[v.chosen_index].rationale.clone(),
            }
        }
        WireRequest::Monitor { task, narration } => {
            let v = oracle_monitor(&Narration::from_text(narration).unwrap(), &task_by_text(task));
            WireResponse::Verdict {
                choice: None,
                ok: Some(v.ok),
                rationale: v.rationale,
            }
        }
    }
}

/// An address nothing listens on.
pub fn dead_endpoint() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1/verify")
}
