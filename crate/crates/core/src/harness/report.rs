//! Plot-data and statistics tables derived from a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::manifest::{put, FileRef, RunLock, RunManifest, SeriesRecord};
use super::run::{read_report, series_reports};
use crate::analysis::{detect_onsets, fit_decay, two_way_anova, AnovaResult, DecayFit, Observation, Stage};
use crate::error::{Error, Result};
use crate::metrics::{csv_field, fmt_f64, fmt_opt, fmt_stage, reports_csv, AnswerRecord, GenerationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Figures,
    Tables,
}

impl ReportKind {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "figures" => Ok(Self::Figures),
            "tables" => Ok(Self::Tables),
            other => Err(Error::Argument(format!("unknown report kind '{other}' (figures|tables)"))),
        }
    }
}

/// `(subject, format, generation, answers)`.
pub type CellAnswers = (String, String, u32, Vec<AnswerRecord>);

/// A verified run directory with its reports loaded.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Per series, generation-major.
    pub reports: Vec<Vec<GenerationReport>>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        manifest.verify(dir)?;
        let reports = manifest
            .series
            .iter()
            .map(|s| series_reports(dir, s))
            .collect::<Result<_>>()?;
        Ok(Self {
            dir: dir.to_owned(),
            manifest,
            reports,
        })
    }

    pub fn name(&self) -> &str {
        &self.manifest.config.name
    }

    pub fn primary_format(&self) -> &str {
        self.manifest.config.formats.first().map_or("zero_shot", |f| f.name())
    }

    /// Generations 0..=G for training runs, one per endpoint slot otherwise.
    pub fn generation_range(&self) -> Vec<u32> {
        let last = self
            .manifest
            .series
            .iter()
            .flat_map(|s| s.generations.iter().map(|g| g.generation))
            .max()
            .unwrap_or(0)
            .max(self.manifest.config.generations);
        let last = self
            .manifest
            .failures
            .iter()
            .map(|f| f.generation)
            .fold(last, u32::max);
        (0..=last).collect()
    }

    /// Answer records of one series, keyed by (subject, format, generation).
    pub fn answers(&self, series: &SeriesRecord) -> Result<Vec<CellAnswers>> {
        let mut out = Vec::new();
        for g in &series.generations {
            for c in &g.cells {
                let bytes = c.answers.read_verified(&self.dir)?;
                let mut rows = Vec::new();
                for line in String::from_utf8_lossy(&bytes).lines().filter(|l| !l.trim().is_empty()) {
                    rows.push(serde_json::from_str(line).map_err(|e| Error::Corruption {
                        path: self.dir.join(&c.answers.path),
                        reason: e.to_string(),
                    })?);
                }
                out.push((c.subject.clone(), c.format.clone(), g.generation, rows));
            }
        }
        Ok(out)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_opt<'a>(rs: &[&'a GenerationReport], f: impl Fn(&'a GenerationReport) -> Option<f64>) -> Option<f64> {
    mean(rs.iter().filter_map(|r| f(r)))
}

fn worst(rs: &[&GenerationReport]) -> Option<Stage> {
    rs.iter().filter_map(|r| r.stage).max()
}

fn at<'a>(reports: &'a [GenerationReport], g: u32, format: Option<&str>) -> Vec<&'a GenerationReport> {
    reports
        .iter()
        .filter(|r| r.generation == g && format.is_none_or(|f| r.format == f))
        .collect()
}

/// Mean accuracy of `format` per generation, over subjects.
pub fn accuracy_series(reports: &[GenerationReport], format: &str) -> Vec<(u32, f64)> {
    let mut by_gen: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.format == format) {
        by_gen.entry(r.generation).or_default().push(r.accuracy);
    }
    by_gen
        .into_iter()
        .filter_map(|(g, v)| mean(v).map(|m| (g, m)))
        .collect()
}

fn na_row(cols: usize) -> String {
    vec!["NA"; cols].join(",")
}

pub fn fig2_accuracy(run: &RunData, gens: &[u32]) -> String {
    let mut out = String::from("generation,alpha,accuracy,greedy_rate,max_frequency,stage\n");
    let fmt = run.primary_format();
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        for &g in gens {
            let rs = at(reports, g, Some(fmt));
            let _ = write!(out, "{g},{},", fmt_f64(s.alpha));
            if rs.is_empty() {
                out.push_str(&na_row(4));
            } else {
                let _ = write!(
                    out,
                    "{},{},{},{}",
                    fmt_opt(mean_opt(&rs, |r| Some(r.accuracy))),
                    fmt_opt(mean_opt(&rs, |r| Some(r.greedy_rate))),
                    fmt_opt(mean_opt(&rs, |r| r.max_frequency)),
                    fmt_stage(worst(&rs)),
                );
            }
            out.push('\n');
        }
    }
    out
}

pub fn fig3_formats(run: &RunData, gens: &[u32]) -> String {
    let mut out = String::from("generation,alpha,format,accuracy,adherence,greedy_rate,stage\n");
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        for f in &run.manifest.config.formats {
            for &g in gens {
                let rs = at(reports, g, Some(f.name()));
                let _ = write!(out, "{g},{},{},", fmt_f64(s.alpha), f.name());
                if rs.is_empty() {
                    out.push_str(&na_row(4));
                } else {
                    let _ = write!(
                        out,
                        "{},{},{},{}",
                        fmt_opt(mean_opt(&rs, |r| Some(r.accuracy))),
                        fmt_opt(mean_opt(&rs, |r| Some(r.adherence))),
                        fmt_opt(mean_opt(&rs, |r| Some(r.greedy_rate))),
                        fmt_stage(worst(&rs)),
                    );
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Accuracy trajectories and fitted decay per (run, alpha); several runs
/// side by side give the mitigation comparison.
pub fn fig4_mitigation(runs: &[RunData], gens: &[u32]) -> String {
    let mut out = String::from("condition,alpha,generation,accuracy,slope,intercept\n");
    for run in runs {
        let fmt = run.primary_format();
        for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
            let series: Vec<(u32, f64)> = accuracy_series(reports, fmt)
                .into_iter()
                .filter(|(g, _)| gens.contains(g))
                .collect();
            let points: Vec<(f64, f64)> = series.iter().map(|&(g, a)| (f64::from(g), a)).collect();
            let fit = fit_decay(&points).ok();
            for (g, a) in series {
                let _ = writeln!(
                    out,
                    "{},{},{g},{},{},{}",
                    csv_field(run.name()),
                    fmt_f64(s.alpha),
                    fmt_f64(a),
                    fmt_opt(fit.as_ref().map(|f| f.slope)),
                    fmt_opt(fit.as_ref().map(|f| f.intercept)),
                );
            }
        }
    }
    out
}

pub fn fig_entropy_ppl(run: &RunData, gens: &[u32]) -> String {
    let mut out = String::from("generation,alpha,entropy_nats,static_ppl,dynamic_ppl,gibberish_mean\n");
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        for &g in gens {
            // Model-level metrics are identical across the cells of a generation.
            let r = at(reports, g, None).into_iter().next();
            let _ = write!(out, "{g},{},", fmt_f64(s.alpha));
            match r {
                Some(r) => {
                    let _ = write!(
                        out,
                        "{},{},{},{}",
                        fmt_opt(r.entropy_nats),
                        fmt_opt(r.static_ppl),
                        fmt_opt(r.dynamic_ppl),
                        fmt_opt(r.gibberish_mean)
                    );
                }
                None => out.push_str(&na_row(4)),
            }
            out.push('\n');
        }
    }
    out
}

pub fn semantic_fidelity(run: &RunData, gens: &[u32]) -> String {
    let mut out =
        String::from("generation,alpha,judge_mean,judge_missing,entailment_mean,entailment_missing\n");
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        for &g in gens {
            let rs = at(reports, g, None);
            let _ = write!(out, "{g},{},", fmt_f64(s.alpha));
            if rs.is_empty() {
                out.push_str(&na_row(4));
            } else {
                let _ = write!(
                    out,
                    "{},{},{},{}",
                    fmt_opt(mean_opt(&rs, |r| r.judge_mean)),
                    rs.iter().map(|r| r.judge_missing).sum::<usize>(),
                    fmt_opt(mean_opt(&rs, |r| r.entailment_mean)),
                    rs.iter().map(|r| r.entailment_missing).sum::<usize>(),
                );
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetRow {
    pub alpha: f64,
    pub subject: String,
    pub format: String,
    pub first_b: Option<u32>,
    pub first_c: Option<u32>,
}

pub fn onsets(run: &RunData) -> Vec<OnsetRow> {
    let mut out = Vec::new();
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        let mut cells: BTreeMap<(&str, &str), Vec<(u32, Option<Stage>)>> = BTreeMap::new();
        for r in reports {
            cells
                .entry((&r.subject, &r.format))
                .or_default()
                .push((r.generation, r.raw_stage));
        }
        for ((subject, format), series) in cells {
            let o = detect_onsets(&series);
            out.push(OnsetRow {
                alpha: s.alpha,
                subject: subject.to_owned(),
                format: format.to_owned(),
                first_b: o.first_b,
                first_c: o.first_c,
            });
        }
    }
    out
}

fn fmt_gen(g: Option<u32>) -> String {
    g.map_or_else(|| "NA".into(), |g| g.to_string())
}

pub fn onsets_csv(rows: &[OnsetRow]) -> String {
    let mut out = String::from("alpha,subject,format,first_b,first_c\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.alpha),
            csv_field(&r.subject),
            csv_field(&r.format),
            fmt_gen(r.first_b),
            fmt_gen(r.first_c)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct DecayRow {
    pub alpha: f64,
    pub format: String,
    pub fit: Option<DecayFit>,
}

pub fn decay_rows(run: &RunData) -> Vec<DecayRow> {
    let mut out = Vec::new();
    for (s, reports) in run.manifest.series.iter().zip(&run.reports) {
        for f in &run.manifest.config.formats {
            let points: Vec<(f64, f64)> = accuracy_series(reports, f.name())
                .into_iter()
                .map(|(g, a)| (f64::from(g), a))
                .collect();
            out.push(DecayRow {
                alpha: s.alpha,
                format: f.name().to_owned(),
                fit: fit_decay(&points).ok(),
            });
        }
    }
    out
}

pub fn decay_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("alpha,format,slope,intercept,slope_stderr,n\n");
    for r in rows {
        let f = r.fit.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.alpha),
            csv_field(&r.format),
            fmt_opt(f.map(|f| f.slope)),
            fmt_opt(f.map(|f| f.intercept)),
            fmt_opt(f.map(|f| f.slope_stderr)),
            f.map_or_else(|| "NA".into(), |f| f.n.to_string()),
        );
    }
    out
}

pub const ANOVA_FACTORS: [&str; 4] = ["format", "generation", "alpha", "subject"];

/// Two-way ANOVA on per-item correctness. With `per_alpha`, one analysis per
/// series; otherwise the series are pooled.
pub fn anova(run: &RunData, factors: [&str; 2], per_alpha: bool) -> Result<Vec<(Option<f64>, Result<AnovaResult>)>> {
    for f in factors {
        if !ANOVA_FACTORS.contains(&f) {
            return Err(Error::Argument(format!(
                "unknown ANOVA factor '{f}' (one of {})",
                ANOVA_FACTORS.join(", ")
            )));
        }
    }
    if factors[0] == factors[1] {
        return Err(Error::Argument("ANOVA factors must differ".into()));
    }
    let mut groups: Vec<(Option<f64>, Vec<Observation>)> = Vec::new();
    for s in &run.manifest.series {
        let level = |name: &str, subject: &str, format: &str, g: u32| match name {
            "format" => format.to_owned(),
            "generation" => g.to_string(),
            "alpha" => fmt_f64(s.alpha),
            _ => subject.to_owned(),
        };
        let mut obs = Vec::new();
        for (subject, format, g, answers) in run.answers(s)? {
            for a in answers {
                obs.push(Observation::new(
                    level(factors[0], &subject, &format, g),
                    level(factors[1], &subject, &format, g),
                    if a.correct { 1.0 } else { 0.0 },
                ));
            }
        }
        match (per_alpha, groups.last_mut()) {
            (false, Some(last)) => last.1.extend(obs),
            _ => groups.push((per_alpha.then_some(s.alpha), obs)),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(alpha, obs)| (alpha, two_way_anova(&obs, factors)))
        .collect())
}

fn anova_text(results: &[(Option<f64>, Result<AnovaResult>)]) -> String {
    let mut out = String::new();
    for (alpha, r) in results {
        if let Some(a) = alpha {
            let _ = writeln!(out, "alpha = {}", fmt_f64(*a));
        }
        match r {
            Ok(r) => out.push_str(&r.to_table()),
            Err(e) => {
                let _ = writeln!(out, "not computed: {e}");
            }
        }
        out.push('\n');
    }
    out
}

fn anova_csv(results: &[(Option<f64>, Result<AnovaResult>)]) -> String {
    let mut out = String::from("alpha,");
    let mut header = false;
    for (alpha, r) in results {
        if let Ok(r) = r {
            let csv = r.to_csv();
            let mut lines = csv.lines();
            let head = lines.next().unwrap_or_default();
            if !header {
                out.push_str(head);
                out.push('\n');
                header = true;
            }
            for l in lines {
                let _ = writeln!(out, "{},{l}", fmt_opt(*alpha));
            }
        }
    }
    if !header {
        out.push_str("Source,Sum Sq,Df,F,p-value\n");
    }
    out
}

fn anova_json(results: &[(Option<f64>, Result<AnovaResult>)]) -> Result<String> {
    let rows: Vec<serde_json::Value> = results
        .iter()
        .map(|(alpha, r)| match r {
            Ok(r) => serde_json::json!({"alpha": alpha, "result": r}),
            Err(e) => serde_json::json!({"alpha": alpha, "error": e.to_string()}),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Generations kept when subsampling every `every`-th (the last is always kept).
pub fn subsample(gens: &[u32], every: Option<u32>) -> Vec<u32> {
    match every {
        Some(n) if n > 1 => {
            let last = gens.last().copied();
            gens.iter()
                .copied()
                .filter(|g| g % n == 0 || Some(*g) == last)
                .collect()
        }
        _ => gens.to_vec(),
    }
}

/// Write the requested files under `<run>/tables/` of the first run and
/// register them in its manifest. Extra runs only feed the mitigation figure.
pub fn write_report(runs: &[PathBuf], kind: ReportKind, every: Option<u32>) -> Result<Vec<FileRef>> {
    let Some(primary) = runs.first() else {
        return Err(Error::Argument("no run directory given".into()));
    };
    let _lock = RunLock::acquire(primary)?;
    let data: Vec<RunData> = runs.iter().map(|r| RunData::load(r)).collect::<Result<_>>()?;
    let run = &data[0];
    let gens = subsample(&run.generation_range(), every);
    let mut files: Vec<(&str, String)> = Vec::new();
    match kind {
        ReportKind::Figures => {
            files.push(("fig2_accuracy.csv", fig2_accuracy(run, &gens)));
            files.push(("fig3_formats.csv", fig3_formats(run, &gens)));
            files.push(("fig4_mitigation.csv", fig4_mitigation(&data, &gens)));
            files.push(("fig_appendix_entropy_ppl.csv", fig_entropy_ppl(run, &gens)));
            files.push(("semantic_fidelity.csv", semantic_fidelity(run, &gens)));
        }
        ReportKind::Tables => {
            let all: Vec<GenerationReport> = run.reports.iter().flatten().cloned().collect();
            files.push(("reports.csv", reports_csv(&all)));
            files.push(("onsets.csv", onsets_csv(&onsets(run))));
            files.push(("decay.csv", decay_csv(&decay_rows(run))));
            let a = anova(run, ["format", "generation"], true)?;
            files.push(("anova_format_generation.csv", anova_csv(&a)));
            files.push(("anova_format_generation.txt", anova_text(&a)));
            files.push(("anova_format_generation.json", anova_json(&a)?));
        }
    }
    let mut manifest = run.manifest.clone();
    let mut refs = Vec::new();
    for (name, body) in files {
        let f = put(primary, &format!("tables/{name}"), body.as_bytes())?;
        manifest.tables.retain(|t| t.path != f.path);
        manifest.tables.push(f.clone());
        refs.push(f);
    }
    manifest.save(primary)?;
    Ok(refs)
}

/// Human-readable summary for `analyze`: onsets, decay fits and an ANOVA.
pub fn analyze(run_dir: &Path, factors: Option<[&str; 2]>) -> Result<String> {
    let run = RunData::load(run_dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "run {} ({} series)", run.name(), run.manifest.series.len());
    out.push_str("\nonsets\n");
    out.push_str(&onsets_csv(&onsets(&run)));
    out.push_str("\ndecay\n");
    out.push_str(&decay_csv(&decay_rows(&run)));
    if !run.manifest.failures.is_empty() {
        let _ = writeln!(out, "\nfailures: {}", run.manifest.failures.len());
        for f in &run.manifest.failures {
            let _ = writeln!(
                out,
                "  {} gen {} {}: {}",
                f.label,
                f.generation,
                f.cell.as_deref().unwrap_or("-"),
                f.message
            );
        }
    }
    let factors = factors.unwrap_or(["format", "generation"]);
    let per_alpha = !factors.contains(&"alpha");
    let _ = writeln!(out, "\nANOVA {} x {}", factors[0], factors[1]);
    out.push_str(&anova_text(&anova(&run, factors, per_alpha)?));
    Ok(out)
}

/// Load one cell's report directly (used by tests and tooling).
pub fn cell_report(run_dir: &Path, label: &str, generation: u32, subject: &str, format: &str) -> Result<GenerationReport> {
    let m = RunManifest::load(run_dir)?;
    let cell = m
        .series(label)
        .and_then(|s| s.generations.iter().find(|g| g.generation == generation))
        .and_then(|g| g.cells.iter().find(|c| c.subject == subject && c.format == format))
        .ok_or_else(|| Error::Argument(format!("no report for {label} gen {generation} {subject}/{format}")))?;
    read_report(run_dir, cell)
}
