//! Persisted recursive-training runs with checkpointing and resume.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::engine::{
    evaluate_cells, fit_tokenizer, model_metrics, train_step, CellResult, Inputs, Semantic, StageTrack, Workspace,
};
use super::manifest::{
    now, put, CellRef, Failure, FileRef, GenerationRecord, RunLock, RunManifest, RunMode, RunStatus, SeriesRecord,
    ARTIFACT_VERSION, MANIFEST,
};
use crate::corpus::io::corpus_records;
use crate::corpus::Tokenizer;
use crate::error::{Error, Result};
use crate::metrics::{GenerationReport, GibberishScorer};
use crate::models::ModelHandle;

pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const BASE_CHECKPOINT: &str = "checkpoints/gen_0.ckpt";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort on the first failure instead of recording it and continuing.
    pub strict: bool,
    pub resume: bool,
    /// Stop cleanly after finishing `(alpha index, generation)`.
    pub stop_after: Option<(usize, u32)>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub stopped_early: bool,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        !self.manifest.failures.is_empty()
    }
}

/// Directory label for one alpha series.
pub fn alpha_label(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

pub(crate) fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Write one cell's report and answers.
pub(crate) fn put_cell(root: &Path, label: &str, generation: u32, cell: &CellResult) -> Result<CellRef> {
    let dir = format!("reports/{label}/{}/{}", cell.subject, cell.format);
    let report = put(
        root,
        &format!("{dir}/gen_{generation}.json"),
        serde_json::to_string_pretty(&cell.report)?.as_bytes(),
    )?;
    let answers = put(root, &format!("{dir}/gen_{generation}.answers.jsonl"), &to_jsonl(&cell.answers)?)?;
    Ok(CellRef {
        subject: cell.subject.clone(),
        format: cell.format.clone(),
        report,
        answers,
    })
}

pub fn read_report(root: &Path, cell: &CellRef) -> Result<GenerationReport> {
    let bytes = cell.report.read_verified(root)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Corruption {
        path: root.join(&cell.report.path),
        reason: format!("unreadable report: {e}"),
    })
}

/// Every report of a series, generation-major.
pub fn series_reports(root: &Path, series: &SeriesRecord) -> Result<Vec<GenerationReport>> {
    let mut out = Vec::new();
    for g in &series.generations {
        for c in &g.cells {
            out.push(read_report(root, c)?);
        }
    }
    Ok(out)
}

fn read_checkpoint(root: &Path, f: &FileRef) -> Result<ModelHandle> {
    let bytes = f.read_verified(root)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Corruption {
        path: root.join(&f.path),
        reason: e.to_string(),
    })?;
    ModelHandle::from_json(&text).map_err(|e| Error::Corruption {
        path: root.join(&f.path),
        reason: format!("unreadable checkpoint: {e}"),
    })
}

fn record_cells(
    manifest: &mut RunManifest,
    label: &str,
    generation: u32,
    cells: &[CellResult],
    strict: bool,
) -> Result<()> {
    for c in cells {
        if let Some(msg) = &c.failure {
            tracing::warn!(label, generation, subject = %c.subject, format = %c.format, "{msg}");
            if strict {
                return Err(Error::Aborted(format!(
                    "{label} generation {generation} {}/{}: {msg}",
                    c.subject, c.format
                )));
            }
            manifest.failures.push(Failure {
                label: label.to_owned(),
                generation,
                cell: Some(format!("{}/{}", c.subject, c.format)),
                message: msg.clone(),
            });
        }
    }
    Ok(())
}

fn model_failures(
    manifest: &mut RunManifest,
    label: &str,
    generation: u32,
    messages: &[String],
    strict: bool,
) -> Result<()> {
    for m in messages {
        tracing::warn!(label, generation, "{m}");
        if strict {
            return Err(Error::Aborted(format!("{label} generation {generation}: {m}")));
        }
        manifest.failures.push(Failure {
            label: label.to_owned(),
            generation,
            cell: None,
            message: m.clone(),
        });
    }
    Ok(())
}

/// Run (or resume) the experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = cfg.run_dir();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let _lock = RunLock::acquire(&root)?;

    let existing = root.join(MANIFEST).exists();
    if existing && !opts.resume {
        return Err(Error::Config(format!(
            "{} already holds a run; pass --resume to continue it",
            root.display()
        )));
    }
    let inputs = Inputs::load(cfg)?;
    let (mut manifest, tokenizer) = if existing {
        let m = RunManifest::load(&root)?;
        if m.mode != RunMode::Train {
            return Err(Error::Config("run directory holds an evaluation run".into()));
        }
        if m.config != *cfg {
            return Err(Error::Config(
                "config differs from the one the run was started with".into(),
            ));
        }
        m.verify(&root)?;
        let bytes = m.tokenizer.read_verified(&root)?;
        let tok = Tokenizer::from_json(std::str::from_utf8(&bytes).unwrap_or_default()).map_err(|e| {
            Error::Corruption {
                path: root.join(TOKENIZER_FILE),
                reason: e.to_string(),
            }
        })?;
        if m.status == RunStatus::Complete {
            return Ok(RunOutcome {
                run_dir: root,
                manifest: m,
                stopped_early: false,
            });
        }
        (m, tok)
    } else {
        let tok = fit_tokenizer(cfg, &inputs);
        let tref = put(&root, TOKENIZER_FILE, tok.to_json()?.as_bytes())?;
        let t = now();
        let mut m = RunManifest {
            artifact_version: ARTIFACT_VERSION.to_owned(),
            mode: RunMode::Train,
            status: RunStatus::Running,
            config: cfg.clone(),
            tokenizer_id: tok.id().to_owned(),
            tokenizer: tref,
            series: cfg
                .alphas
                .iter()
                .map(|&alpha| SeriesRecord {
                    alpha,
                    label: alpha_label(alpha),
                    generations: Vec::new(),
                })
                .collect(),
            failures: Vec::new(),
            tables: Vec::new(),
            created_at: t,
            updated_at: t,
        };
        m.save(&root)?;
        (m, tok)
    };
    let tokenizer = Arc::new(tokenizer);
    let ws = Workspace::build(cfg, &inputs, tokenizer)?;
    let scorer = GibberishScorer::new(cfg.evaluation.gibberish.clone(), Some(ws.dictionary.clone()))?;
    let semantic = Semantic::from_config(cfg)?;

    // Generation 0 is shared by every series; its checkpoint is written once.
    let base_ref = manifest
        .series
        .iter()
        .flat_map(|s| s.generations.first())
        .find_map(|g| g.checkpoint.clone());
    let base = match &base_ref {
        Some(f) => read_checkpoint(&root, f)?,
        None => ws.base_model(cfg)?,
    };
    let base_ref = match base_ref {
        Some(f) => f,
        None => put(&root, BASE_CHECKPOINT, base.to_json()?.as_bytes())?,
    };
    let mut base_cells: Option<Vec<CellResult>> = None;

    let mut stopped_early = false;
    'series: for si in 0..manifest.series.len() {
        let alpha = manifest.series[si].alpha;
        let label = manifest.series[si].label.clone();
        let mut track = StageTrack::default();
        for r in series_reports(&root, &manifest.series[si])? {
            track.observe(&r);
        }
        let (mut model, start) = match manifest.series[si].generations.last() {
            Some(last) => {
                let ckpt = last.checkpoint.clone().ok_or_else(|| Error::Corruption {
                    path: root.join(MANIFEST),
                    reason: format!("{label} generation {} has no checkpoint", last.generation),
                })?;
                (read_checkpoint(&root, &ckpt)?, last.generation + 1)
            }
            None => (base.clone(), 0),
        };
        if start > 0 && manifest.series[si].generations.len() != start as usize {
            return Err(Error::Corruption {
                path: root.join(MANIFEST),
                reason: format!("{label} generations are not contiguous"),
            });
        }
        for g in start..=cfg.generations {
            let mut record = GenerationRecord {
                generation: g,
                model: None,
                checkpoint: None,
                corpus: None,
                cells: Vec::new(),
                finished_at: 0,
            };
            let cells = if g == 0 {
                if base_cells.is_none() {
                    let metrics = model_metrics(&base, &ws, cfg, 0, &scorer);
                    model_failures(&mut manifest, &label, 0, &metrics.failures, opts.strict)?;
                    base_cells = Some(evaluate_cells(
                        &base,
                        &ws,
                        cfg,
                        0,
                        0.0,
                        &metrics,
                        &semantic,
                        &StageTrack::default(),
                    ));
                }
                record.checkpoint = Some(base_ref.clone());
                base_cells
                    .as_ref()
                    .into_iter()
                    .flatten()
                    .map(|c| {
                        let mut c = c.clone();
                        c.report.alpha = alpha;
                        c
                    })
                    .collect::<Vec<_>>()
            } else {
                let (corpus, next) = match train_step(&model, &ws, cfg, alpha, g) {
                    Ok(x) => x,
                    Err(e) => {
                        model_failures(&mut manifest, &label, g, &[format!("training step: {e}")], opts.strict)?;
                        manifest.save(&root)?;
                        continue 'series;
                    }
                };
                record.corpus = Some(put(
                    &root,
                    &format!("corpora/{label}/gen_{g}.jsonl"),
                    &to_jsonl(&corpus_records(&corpus))?,
                )?);
                record.checkpoint = Some(put(
                    &root,
                    &format!("checkpoints/{label}/gen_{g}.ckpt"),
                    next.to_json()?.as_bytes(),
                )?);
                model = next;
                let metrics = model_metrics(&model, &ws, cfg, g, &scorer);
                model_failures(&mut manifest, &label, g, &metrics.failures, opts.strict)?;
                evaluate_cells(&model, &ws, cfg, g, alpha, &metrics, &semantic, &track)
            };
            record_cells(&mut manifest, &label, g, &cells, opts.strict)?;
            for c in &cells {
                track.observe(&c.report);
                record.cells.push(put_cell(&root, &label, g, c)?);
            }
            record.finished_at = now();
            tracing::info!(label = %label, generation = g, "generation complete");
            manifest.series[si].generations.push(record);
            manifest.save(&root)?;
            if opts.stop_after == Some((si, g)) {
                stopped_early = true;
                break 'series;
            }
        }
    }
    if !stopped_early {
        manifest.status = RunStatus::Complete;
        manifest.save(&root)?;
    }
    Ok(RunOutcome {
        run_dir: root,
        manifest,
        stopped_early,
    })
}
