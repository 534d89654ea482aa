//! Shared fixtures: toy experiment configs and a local HTTP server that
//! serves a toy model through the completions contract, plus judge and
//! entailment routes.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;

use collapse_core::corpus::Tokenizer;
use collapse_core::harness::ExperimentConfig;
use collapse_core::models::{DecodingParams, LanguageModel, ModelHandle};
use collapse_core::prompts::{FormatKind, InstructionFormat};
use collapse_core::rng::{RngKey, Role};
use collapse_core::toyworld::{World, WorldConfig};
use regex::Regex;
use serde_json::{json, Value};

pub fn small_world(seed: u64) -> World {
    World::generate(WorldConfig {
        topics: 1,
        entities_per_topic: 12,
        relations_per_topic: 2,
        docs_per_topic: 30,
        sentences_per_doc: 12,
        seed,
        ..WorldConfig::default()
    })
}

/// A two-alpha, two-format, three-generation experiment over `world`.
pub fn small_config(dir: &Path, world: &World) -> ExperimentConfig {
    let data = world.write_fixture(&dir.join("data"), &[], &["world_religions"]).unwrap();
    let mut cfg = ExperimentConfig {
        name: "toy".into(),
        output_dir: dir.join("runs"),
        alphas: vec![0.5, 1.0],
        generations: 3,
        formats: vec![
            InstructionFormat::new(FormatKind::ZeroShot),
            InstructionFormat::new(FormatKind::FewShot),
        ],
        data,
        ..ExperimentConfig::default()
    };
    cfg.training.prompt_len = 16;
    cfg.training.prompt_count = 40;
    cfg.evaluation.dynamic_samples = 8;
    cfg.evaluation.dynamic_len = 16;
    cfg.decoding.max_new_tokens = 16;
    cfg
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    /// Completions with echoed per-token log-probabilities.
    Full,
    /// Completions without log-probabilities.
    TextOnly,
    /// Every request fails with 503.
    Down,
}

pub struct ModelServer {
    pub model: ModelHandle,
    pub tokenizer: Arc<Tokenizer>,
    pub behaviour: Behaviour,
}

fn surface_tokens(text: &str) -> Vec<(usize, String)> {
    let re = Regex::new(r"[\p{L}\p{N}_]+|[^\p{L}\p{N}_\s]").unwrap();
    let lower = text.to_lowercase();
    re.find_iter(&lower).map(|m| (m.start(), m.as_str().to_owned())).collect()
}

impl ModelServer {
    fn completion(&self, req: &Value) -> Value {
        let prompt = req["prompt"].as_str().unwrap_or_default();
        let max_tokens = req["max_tokens"].as_u64().unwrap_or(0) as usize;
        let echo = req["echo"].as_bool().unwrap_or(false);
        let want_lp = !req["logprobs"].is_null();
        let seq = self.tokenizer.encode(prompt);
        let mut text = String::new();
        if max_tokens > 0 {
            let decoding = DecodingParams {
                max_new_tokens: max_tokens,
                temperature: req["temperature"].as_f64().unwrap_or(1.0),
                top_p: req["top_p"].as_f64().unwrap_or(1.0),
                top_k: req["top_k"].as_u64().unwrap_or(64) as usize,
                seed: 0,
            };
            let key = RngKey::new(req["seed"].as_u64().unwrap_or(0), 0, Role::Remote, 0);
            let out = self.model.generate(&seq, &decoding, key).unwrap();
            text = self.tokenizer.decode(&out.tokens);
        }
        let mut choice = json!({ "text": text });
        if want_lp && echo && self.behaviour == Behaviour::Full {
            let toks = surface_tokens(prompt);
            let ids = &seq.tokens;
            let mut token_logprobs = Vec::new();
            let mut top = Vec::new();
            for i in 0..ids.len() {
                let dist = self.model.next_distribution(&ids[..i]).unwrap();
                token_logprobs.push(json!(dist[ids[i] as usize].ln()));
                let best = (0..dist.len()).max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a))).unwrap();
                top.push(json!({ self.tokenizer.token_str(best as u32): dist[best].ln() }));
            }
            choice["logprobs"] = json!({
                "tokens": toks.iter().map(|t| t.1.clone()).collect::<Vec<_>>(),
                "token_logprobs": token_logprobs,
                "top_logprobs": top,
                "text_offset": toks.iter().map(|t| t.0).collect::<Vec<_>>(),
            });
        }
        json!({ "choices": [choice] })
    }
}

fn read_request(stream: &mut TcpStream) -> Option<(String, Vec<u8>)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_owned();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, body))
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

/// Serve on an ephemeral port; returns the base URL. Routes:
/// `/v1/completions`, `/judge` (always 2) and `/entail` (always 0.75).
pub fn serve(server: ModelServer) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Arc::new(server);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let server = server.clone();
            std::thread::spawn(move || {
                let Some((path, body)) = read_request(&mut stream) else { return };
                if server.behaviour == Behaviour::Down {
                    respond(&mut stream, "503 Service Unavailable", "{}");
                    return;
                }
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let reply = match path.as_str() {
                    "/judge" => json!({ "score": 2 }),
                    "/entail" => json!({ "entailment_probability": 0.75 }),
                    _ => server.completion(&req),
                };
                respond(&mut stream, "200 OK", &reply.to_string());
            });
        }
    });
    format!("http://{addr}")
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1/completions")
}
