use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::http::{EndpointConfig, HttpClient};

pub const RUBRIC_VERSION: &str = "fidelity-1to3-v1";

#[derive(Serialize)]
struct JudgeRequest<'a> {
    question: &'a str,
    gold: &'a str,
    response: &'a str,
    rubric_version: &'a str,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parse a judge reply `{score}` holding an integer 1..=3, as a number or a
/// string such as `"2"`.
fn parse_score(v: &Value) -> Option<u8> {
    let raw = v.get("score")?;
    let n = match raw {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    (n.fract() == 0.0 && (1.0..=3.0).contains(&n)).then_some(n as u8)
}

/// Semantic-fidelity judge on a 1–3 scale.
#[derive(Debug, Clone)]
pub struct JudgeClient {
    http: HttpClient,
    rubric_version: String,
}

impl JudgeClient {
    pub fn new(endpoint: EndpointConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(endpoint)?,
            rubric_version: RUBRIC_VERSION.into(),
        })
    }

    pub fn rubric_version(&self) -> &str {
        &self.rubric_version
    }

    /// `None` when the endpoint is unreachable or replies with something
    /// other than a score twice in a row.
    pub fn judge_score(&self, question: &str, gold: &str, response: &str) -> Option<u8> {
        if response.trim().is_empty() {
            return Some(1);
        }
        if squash(response) == squash(gold) {
            return Some(3);
        }
        let req = JudgeRequest {
            question,
            gold,
            response,
            rubric_version: &self.rubric_version,
        };
        for _ in 0..2 {
            match self.http.post_json::<_, Value>(&req) {
                Ok(v) => {
                    if let Some(s) = parse_score(&v) {
                        return Some(s);
                    }
                }
                Err(Error::Transport(msg)) if !msg.starts_with("malformed") => {
                    tracing::warn!("judge unreachable: {msg}");
                    return None;
                }
                Err(e) => tracing::warn!("judge reply rejected: {e}"),
            }
        }
        None
    }
}

#[derive(Serialize)]
struct EntailmentRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailmentResponse {
    entailment_probability: f64,
}

/// Remote NLI scorer: gold answer as premise, model response as hypothesis.
#[derive(Debug, Clone)]
pub struct EntailmentClient {
    http: HttpClient,
}

impl EntailmentClient {
    pub fn new(endpoint: EndpointConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(endpoint)?,
        })
    }

    /// `None` marks the item as missing an entailment score.
    pub fn entailment_score(&self, gold: &str, response: &str) -> Option<f64> {
        match self.http.post_json::<_, EntailmentResponse>(&EntailmentRequest {
            premise: gold,
            hypothesis: response,
        }) {
            Ok(r) if (0.0..=1.0).contains(&r.entailment_probability) => Some(r.entailment_probability),
            Ok(r) => {
                tracing::warn!("entailment probability {} out of range", r.entailment_probability);
                None
            }
            Err(e) => {
                tracing::warn!("entailment unavailable: {e}");
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn dead() -> EndpointConfig {
        EndpointConfig {
            retries: 0,
            timeout_secs: 1,
            ..EndpointConfig::new("http://127.0.0.1:9/judge")
        }
    }

    #[test]
    fn local_rubric_bounds() {
        let j = JudgeClient::new(dead()).unwrap();
        assert_eq!(j.judge_score("q", "Ronald Reagan", "ronald  reagan"), Some(3));
        assert_eq!(j.judge_score("q", "Ronald Reagan", "  "), Some(1));
        assert_eq!(j.judge_score("q", "Ronald Reagan", "Reagan"), None);
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score(&json!({"score": 2})), Some(2));
        assert_eq!(parse_score(&json!({"score": "3"})), Some(3));
        assert_eq!(parse_score(&json!({"score": 4})), None);
        assert_eq!(parse_score(&json!({"score": 1.5})), None);
        assert_eq!(parse_score(&json!({"verdict": 2})), None);
    }

    #[test]
    fn entailment_missing_when_absent() {
        let e = EntailmentClient::new(EndpointConfig {
            url: "http://127.0.0.1:9/nli".into(),
            ..dead()
        })
        .unwrap();
        assert_eq!(e.entailment_score("a", "a"), None);
    }
}
