//! Evaluation of externally trained checkpoints served over HTTP.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::engine::{evaluate_cells, fit_tokenizer, model_metrics, Inputs, Semantic, StageTrack, Workspace};
use super::manifest::{
    now, put, Failure, GenerationRecord, RunLock, RunManifest, RunMode, RunStatus, SeriesRecord, ARTIFACT_VERSION,
    MANIFEST,
};
use super::run::{put_cell, RunOutcome, RunOptions, TOKENIZER_FILE};
use crate::error::{Error, Result};
use crate::http::EndpointConfig;
use crate::metrics::GibberishScorer;
use crate::models::{LanguageModel, RemoteModel, RemoteSpec};

pub const EVAL_LABEL: &str = "eval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndpointRef {
    Url(String),
    Full(EndpointConfig),
}

/// One checkpoint of a recursive series; list position is its generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEndpoint {
    pub model: String,
    pub endpoint: EndpointRef,
}

impl CheckpointEndpoint {
    pub fn spec(&self) -> RemoteSpec {
        RemoteSpec {
            endpoint: match &self.endpoint {
                EndpointRef::Url(u) => EndpointConfig::new(u.clone()),
                EndpointRef::Full(c) => c.clone(),
            },
            model: self.model.clone(),
        }
    }
}

pub fn load_endpoints(path: &Path) -> Result<Vec<CheckpointEndpoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let list: Vec<CheckpointEndpoint> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if list.is_empty() {
        return Err(Error::Config(format!("{} lists no endpoints", path.display())));
    }
    Ok(list)
}

/// Evaluate generation checkpoints `0..k` behind HTTP endpoints. Unreachable
/// checkpoints are recorded as failures and left as gaps in the series.
pub fn eval_checkpoints(
    endpoints: &[CheckpointEndpoint],
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = cfg.run_dir();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let _lock = RunLock::acquire(&root)?;
    if root.join(MANIFEST).exists() {
        return Err(Error::Config(format!("{} already holds a run", root.display())));
    }
    let inputs = Inputs::load(cfg)?;
    let tok = fit_tokenizer(cfg, &inputs);
    let tref = put(&root, TOKENIZER_FILE, tok.to_json()?.as_bytes())?;
    let t = now();
    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_owned(),
        mode: RunMode::Eval,
        status: RunStatus::Running,
        config: cfg.clone(),
        tokenizer_id: tok.id().to_owned(),
        tokenizer: tref,
        series: vec![SeriesRecord {
            alpha: 0.0,
            label: EVAL_LABEL.to_owned(),
            generations: Vec::new(),
        }],
        failures: Vec::new(),
        tables: Vec::new(),
        created_at: t,
        updated_at: t,
    };
    manifest.save(&root)?;
    let tok = Arc::new(tok);
    let ws = Workspace::build(cfg, &inputs, tok.clone())?;
    let scorer = GibberishScorer::new(cfg.evaluation.gibberish.clone(), Some(ws.dictionary.clone()))?;
    let semantic = Semantic::from_config(cfg)?;
    let mut track = StageTrack::default();

    for (g, ep) in endpoints.iter().enumerate() {
        let g = g as u32;
        let model = match RemoteModel::connect(ep.spec(), tok.clone(), g) {
            Ok(m) => m,
            Err(e) => {
                let msg = format!("{}: {e}", ep.model);
                tracing::warn!(generation = g, "{msg}");
                if opts.strict {
                    return Err(Error::Aborted(format!("generation {g}: {msg}")));
                }
                manifest.failures.push(Failure {
                    label: EVAL_LABEL.to_owned(),
                    generation: g,
                    cell: None,
                    message: msg,
                });
                manifest.save(&root)?;
                continue;
            }
        };
        let metrics = model_metrics(&model, &ws, cfg, g, &scorer);
        let cells = evaluate_cells(&model, &ws, cfg, g, 0.0, &metrics, &semantic, &track);
        let mut record = GenerationRecord {
            generation: g,
            model: Some(ep.model.clone()),
            checkpoint: None,
            corpus: None,
            cells: Vec::new(),
            finished_at: 0,
        };
        let mut messages: Vec<(Option<String>, String)> =
            metrics.failures.iter().map(|m| (None, m.clone())).collect();
        if !model.supports_logprobs() {
            messages.push((None, "capability error: no log-probabilities, answers parsed from generations and option scores missing".into()));
        }
        for c in &cells {
            if let Some(f) = &c.failure {
                messages.push((Some(format!("{}/{}", c.subject, c.format)), f.clone()));
            }
            track.observe(&c.report);
            record.cells.push(put_cell(&root, EVAL_LABEL, g, c)?);
        }
        for (cell, message) in messages {
            tracing::warn!(generation = g, "{message}");
            if opts.strict {
                return Err(Error::Aborted(format!("generation {g}: {message}")));
            }
            manifest.failures.push(Failure {
                label: EVAL_LABEL.to_owned(),
                generation: g,
                cell,
                message,
            });
        }
        record.finished_at = now();
        manifest.series[0].generations.push(record);
        manifest.save(&root)?;
    }
    manifest.status = RunStatus::Complete;
    manifest.save(&root)?;
    Ok(RunOutcome {
        run_dir: root,
        manifest,
        stopped_early: false,
    })
}
