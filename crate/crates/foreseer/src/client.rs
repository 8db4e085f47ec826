//! HTTP verifier backend. Requests are JSON objects POSTed to a single
//! endpoint; the reply is one JSON object tagged by `type`.
//!
//! ```text
//! {"type":"narrate","rollout_id":..,"frames":[[10 floats]; 16],"grammar":[..]} -> {"type":"narration","rollout_id":..,"text":..}
//! {"type":"select","task":..,"narrations":[..]}                              -> {"type":"verdict","choice":..,"rationale":..}
//! {"type":"monitor","task":..,"narration":..}                                -> {"type":"verdict","ok":..,"rationale":..}
//! ```
//!
//! Only a choice comes back from `select`, so per-candidate scores are rank
//! only: 1 for the chosen candidate, 0 for the rest.

use std::time::Duration;

use foreseer_core::env::Observation;
use foreseer_core::verifier::{
    grammar_templates, MonitorVerdict, NarrateRequest, Narration, TaskSpec, Verdict, VerifierBackend,
};
use foreseer_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENDPOINT_VAR: &str = "VERIFIER_ENDPOINT";
pub const TOKEN_VAR: &str = "VERIFIER_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub endpoint: Option<String>,
    /// Sent as `Authorization: Bearer <token>`. Prefer the environment variable.
    pub token: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure or a 5xx reply.
    pub retries: u32,
    /// Issue the narration requests of one decision in parallel.
    pub concurrent_narration: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: None,
            token: None,
            timeout_ms: 30_000,
            retries: 1,
            concurrent_narration: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireRequest {
    Narrate {
        rollout_id: String,
        frames: Vec<Observation>,
        grammar: Vec<String>,
    },
    Select {
        task: String,
        narrations: Vec<String>,
    },
    Monitor {
        task: String,
        narration: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireResponse {
    Narration {
        rollout_id: String,
        text: String,
    },
    Verdict {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choice: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ok: Option<bool>,
        #[serde(default)]
        rationale: String,
    },
}

pub struct HttpVerifier {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    retries: u32,
    concurrent: bool,
    grammar: Vec<String>,
}

impl HttpVerifier {
    pub fn new(config: &ClientConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("verifier client has no endpoint".into()))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Ok(HttpVerifier {
            agent,
            endpoint,
            token: config.token.clone(),
            retries: config.retries,
            concurrent: config.concurrent_narration,
            grammar: grammar_templates(),
        })
    }

    pub fn call(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut attempt = 0;
        loop {
            let mut req = self.agent.post(&self.endpoint);
            if let Some(t) = &self.token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(request) {
                Ok(resp) => {
                    let body = resp
                        .into_string()
                        .map_err(|e| Error::backend(format!("reading reply: {e}"), None))?;
                    return serde_json::from_str(&body)
                        .map_err(|e| Error::backend(format!("malformed reply: {e}"), Some(body)));
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 || attempt >= self.retries => {
                    let body = resp.into_string().ok();
                    return Err(Error::backend(format!("{} answered HTTP {code}", self.endpoint), body));
                }
                Err(ureq::Error::Transport(t)) if attempt >= self.retries => {
                    return Err(Error::backend(format!("{}: {t}", self.endpoint), None));
                }
                Err(_) => attempt += 1,
            }
        }
    }

    fn narrate_wire(&self, r: &NarrateRequest) -> Result<Narration> {
        let reply = self.call(&WireRequest::Narrate {
            rollout_id: r.rollout_id.clone(),
            frames: r.frames.clone(),
            grammar: self.grammar.clone(),
        })?;
        match reply {
            WireResponse::Narration { rollout_id, text } => {
                if rollout_id != r.rollout_id {
                    return Err(Error::backend(
                        format!("asked for {}, got narration for {rollout_id}", r.rollout_id),
                        Some(text),
                    ));
                }
                Narration::from_text(&text)
                    .map_err(|e| Error::backend(format!("narration outside the grammar: {e}"), Some(text)))
            }
            other => Err(unexpected("narration", &other)),
        }
    }
}

fn unexpected(want: &str, got: &WireResponse) -> Error {
    Error::backend(
        format!("expected a {want} reply"),
        serde_json::to_string(got).ok(),
    )
}

impl VerifierBackend for HttpVerifier {
    fn name(&self) -> &str {
        "client"
    }

    fn narrate(&self, request: &NarrateRequest) -> Result<Narration> {
        self.narrate_wire(request)
    }

    fn narrate_many(&self, requests: &[NarrateRequest]) -> Result<Vec<Narration>> {
        if !self.concurrent || requests.len() < 2 {
            return requests.iter().map(|r| self.narrate_wire(r)).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| s.spawn(move || self.narrate_wire(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::backend("narration worker panicked", None))))
                .collect()
        })
    }

    fn select(&self, narrations: &[Narration], task: &TaskSpec) -> Result<Verdict> {
        let reply = self.call(&WireRequest::Select {
            task: task.text.clone(),
            narrations: narrations.iter().map(|n| n.text.clone()).collect(),
        })?;
        match reply {
            WireResponse::Verdict {
                choice: Some(c),
                rationale,
                ..
            } => Verdict::from_choice(c, narrations, task, &rationale),
            other => Err(unexpected("verdict with a choice", &other)),
        }
    }

    fn monitor(&self, narration: &Narration, task: &TaskSpec) -> Result<MonitorVerdict> {
        let reply = self.call(&WireRequest::Monitor {
            task: task.text.clone(),
            narration: narration.text.clone(),
        })?;
        match reply {
            WireResponse::Verdict {
                ok: Some(ok),
                rationale,
                ..
            } => Ok(MonitorVerdict { ok, rationale }),
            other => Err(unexpected("verdict with ok", &other)),
        }
    }
}
