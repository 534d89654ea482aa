use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::Stage;

/// One evaluated cell: a (generation, alpha, subject, format) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u32,
    pub alpha: f64,
    pub subject: String,
    pub format: String,
    pub model: String,
    pub n_items: usize,
    pub accuracy: f64,
    pub greedy_rate: f64,
    pub max_frequency: Option<f64>,
    pub mean_confidence: Option<f64>,
    /// Fraction of answers that parsed to an option.
    pub adherence: f64,
    pub entropy_nats: Option<f64>,
    #[serde(with = "nonfinite")]
    pub static_ppl: Option<f64>,
    #[serde(with = "nonfinite")]
    pub dynamic_ppl: Option<f64>,
    pub gibberish_mean: Option<f64>,
    #[serde(default)]
    pub gibberish_fallback: bool,
    pub judge_mean: Option<f64>,
    #[serde(default)]
    pub judge_missing: usize,
    pub entailment_mean: Option<f64>,
    #[serde(default)]
    pub entailment_missing: usize,
    /// Items whose evaluation failed.
    #[serde(default)]
    pub errors: usize,
    /// Label after forward-filling the worst stage seen so far.
    pub stage: Option<Stage>,
    pub raw_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Optional floats that may be infinite; JSON has no literal for those, so
/// they are written as the strings `"inf"`, `"-inf"` and `"NaN"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) if x.is_nan() => s.serialize_some("NaN"),
            Some(x) => s.serialize_some(if *x > 0.0 { "inf" } else { "-inf" }),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) => Some(match t.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                "NaN" => f64::NAN,
                other => return Err(serde::de::Error::custom(format!("not a number: {other}"))),
            }),
        })
    }
}

pub const REPORT_COLUMNS: [&str; 21] = [
    "generation",
    "alpha",
    "subject",
    "format",
    "model",
    "n_items",
    "accuracy",
    "greedy_rate",
    "max_frequency",
    "mean_confidence",
    "adherence",
    "entropy_nats",
    "static_ppl",
    "dynamic_ppl",
    "gibberish_mean",
    "judge_mean",
    "entailment_mean",
    "judge_missing",
    "errors",
    "stage",
    "raw_stage",
];

/// Shortest round-trip decimal, `inf` for infinities and `NA` for gaps.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

pub fn fmt_stage(s: Option<Stage>) -> String {
    s.map_or_else(|| "NA".into(), |s| s.to_string())
}

/// Quote a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl GenerationReport {
    pub fn csv_row(&self) -> String {
        [
            self.generation.to_string(),
            fmt_f64(self.alpha),
            csv_field(&self.subject),
            csv_field(&self.format),
            csv_field(&self.model),
            self.n_items.to_string(),
            fmt_f64(self.accuracy),
            fmt_f64(self.greedy_rate),
            fmt_opt(self.max_frequency),
            fmt_opt(self.mean_confidence),
            fmt_f64(self.adherence),
            fmt_opt(self.entropy_nats),
            fmt_opt(self.static_ppl),
            fmt_opt(self.dynamic_ppl),
            fmt_opt(self.gibberish_mean),
            fmt_opt(self.judge_mean),
            fmt_opt(self.entailment_mean),
            self.judge_missing.to_string(),
            self.errors.to_string(),
            fmt_stage(self.stage),
            fmt_stage(self.raw_stage),
        ]
        .join(",")
    }
}

pub fn reports_csv(reports: &[GenerationReport]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
