//! Collapse-stage labelling, onset detection, decay fitting and ANOVA.

mod anova;
pub mod special;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GenerationReport;

pub use anova::{two_way_anova, AnovaResult, Effect, Observation, Residual};
pub use special::f_tail;

/// Ordered from best to worst, so `max` picks the more degraded label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Knowledge preserved.
    A,
    /// Well-formed but increasingly wrong answers.
    B,
    /// Near-random accuracy or broken output format.
    C,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::C => "C",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageThresholds {
    pub random_baseline: f64,
    pub stage_c_accuracy: f64,
    pub stage_b_relative_drop: f64,
    pub adherence_floor: f64,
    pub gibberish_floor: f64,
}

impl Default for StageThresholds {
    fn default() -> Self {
        Self {
            random_baseline: 0.25,
            stage_c_accuracy: 0.28,
            stage_b_relative_drop: 0.20,
            adherence_floor: 0.90,
            gibberish_floor: 1.0,
        }
    }
}

impl StageThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.stage_c_accuracy < self.random_baseline {
            return Err(Error::Config(format!(
                "stage_c_accuracy {} below random_baseline {}",
                self.stage_c_accuracy, self.random_baseline
            )));
        }
        if !(self.stage_b_relative_drop > 0.0 && self.stage_b_relative_drop < 1.0) {
            return Err(Error::Config(format!(
                "stage_b_relative_drop {} not in (0, 1)",
                self.stage_b_relative_drop
            )));
        }
        Ok(())
    }
}

/// Label one cell from its accuracy, parseable-answer fraction and mean
/// gibberish score, relative to the baseline accuracy of the same cell.
pub fn classify(
    accuracy: f64,
    adherence: f64,
    gibberish: f64,
    baseline_accuracy: f64,
    t: &StageThresholds,
) -> Result<Stage> {
    if baseline_accuracy <= t.stage_c_accuracy {
        return Err(Error::DegenerateBaseline {
            accuracy: baseline_accuracy,
            threshold: t.stage_c_accuracy,
        });
    }
    if accuracy <= t.stage_c_accuracy || adherence < t.adherence_floor || gibberish <= t.gibberish_floor {
        Ok(Stage::C)
    } else if accuracy < (1.0 - t.stage_b_relative_drop) * baseline_accuracy {
        Ok(Stage::B)
    } else {
        Ok(Stage::A)
    }
}

pub fn classify_stage(
    report: &GenerationReport,
    baseline: &GenerationReport,
    t: &StageThresholds,
) -> Result<Stage> {
    classify(
        report.accuracy,
        report.adherence,
        report.gibberish_mean.unwrap_or(3.0),
        baseline.accuracy,
        t,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Onsets {
    pub first_b: Option<u32>,
    pub first_c: Option<u32>,
    /// Labels after forward-filling the worst stage seen so far.
    pub filled: Vec<Option<Stage>>,
}

/// Onsets over a generation-ordered series. Labels are made monotone first;
/// `first_b` is the first generation at stage B or worse. Missing labels
/// inherit the worst stage seen before them.
pub fn detect_onsets(series: &[(u32, Option<Stage>)]) -> Onsets {
    let mut worst: Option<Stage> = None;
    let mut filled = Vec::with_capacity(series.len());
    let mut first_b = None;
    let mut first_c = None;
    for &(g, label) in series {
        worst = match (worst, label) {
            (Some(w), Some(l)) => Some(w.max(l)),
            (w, l) => w.or(l),
        };
        filled.push(worst);
        if first_b.is_none() && worst >= Some(Stage::B) {
            first_b = Some(g);
        }
        if first_c.is_none() && worst == Some(Stage::C) {
            first_c = Some(g);
        }
    }
    Onsets {
        first_b,
        first_c,
        filled,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub n: usize,
}

/// Ordinary least squares of accuracy on generation.
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < 2 {
        return Err(Error::Argument("decay fit needs at least 2 points".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Argument("decay fit points must be finite".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("decay fit needs at least 2 distinct generations".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if points.len() > 2 {
        let rss: f64 = points
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(DecayFit {
        slope,
        intercept,
        slope_stderr,
        n: points.len(),
    })
}

/// How many times slower the treated run decays than the control:
/// `|control| / |treated|`. A flat treated run gives infinity.
pub fn decay_ratio(slope_treated: f64, slope_control: f64) -> Result<f64> {
    if slope_treated > 0.0 || slope_control > 0.0 {
        return Err(Error::Argument(format!(
            "decay ratio needs non-increasing slopes, got {slope_treated} and {slope_control}"
        )));
    }
    if slope_treated == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(slope_control.abs() / slope_treated.abs())
}
