use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::StageThresholds;
use crate::corpus::TokenizerKind;
use crate::error::{Error, Result};
use crate::http::EndpointConfig;
use crate::metrics::{EvalOptions, GibberishConfig};
use crate::models::DecodingParams;
use crate::prompts::InstructionFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        /// Dirichlet prior strength used when scoring.
        #[serde(default = "default_smoothing")]
        smoothing: f64,
        /// Prior strength used when sampling; 0 samples from observed
        /// continuations only.
        #[serde(default)]
        sample_smoothing: f64,
    },
}

fn default_order() -> usize {
    3
}

fn default_smoothing() -> f64 {
    1e-6
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Ngram {
            order: default_order(),
            smoothing: default_smoothing(),
            sample_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Interpolation weight of each light-touch update.
    pub eta: f64,
    pub prompt_len: usize,
    pub prompt_count: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            prompt_len: 64,
            prompt_count: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    #[serde(flatten)]
    pub answers: EvalOptions,
    /// Cap on evaluated items per subject after exemplars are set aside.
    pub max_items_per_subject: Option<usize>,
    /// Fresh generations scored for dynamic perplexity.
    pub dynamic_samples: usize,
    pub dynamic_len: usize,
    /// Held-out documents scored for static perplexity.
    pub static_max_docs: Option<usize>,
    pub gibberish: GibberishConfig,
    /// Items per cell sent to the judge and entailment endpoints.
    pub semantic_items: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            answers: EvalOptions::default(),
            max_items_per_subject: None,
            dynamic_samples: 100,
            dynamic_len: 64,
            static_max_docs: None,
            gibberish: GibberishConfig::default(),
            semantic_items: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Endpoints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entailment: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataPaths {
    /// Documents the base model is fit on.
    pub train: PathBuf,
    /// Documents prompts are drawn from each generation; defaults to `train`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    /// Held-out documents for static perplexity.
    pub heldout: PathBuf,
    /// QA items, one JSON object per line.
    pub qa: PathBuf,
    /// Directory of prompt template overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct Seeds {
    pub master: u64,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Where the run directory is created; relative to the config file.
    pub output_dir: PathBuf,
    /// Synthetic fractions.
    pub alphas: Vec<f64>,
    pub generations: u32,
    /// Subjects to evaluate; empty means every subject in the QA file.
    pub subjects: Vec<String>,
    pub formats: Vec<InstructionFormat>,
    pub model: ModelSpec,
    pub tokenizer: TokenizerKind,
    pub decoding: DecodingParams,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub thresholds: StageThresholds,
    pub seeds: Seeds,
    pub endpoints: Endpoints,
    pub data: DataPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use crate::prompts::FormatKind;
        Self {
            name: "run".into(),
            output_dir: PathBuf::from("runs"),
            alphas: vec![0.25, 0.5, 1.0],
            generations: 10,
            subjects: Vec::new(),
            formats: vec![
                InstructionFormat::new(FormatKind::ZeroShot),
                InstructionFormat::new(FormatKind::ShortAnswer),
                InstructionFormat::new(FormatKind::FewShot),
            ],
            model: ModelSpec::default(),
            tokenizer: TokenizerKind::WordPunct,
            decoding: DecodingParams::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            thresholds: StageThresholds::default(),
            seeds: Seeds::default(),
            endpoints: Endpoints::default(),
            data: DataPaths {
                train: PathBuf::from("data/train.txt"),
                prompts: None,
                heldout: PathBuf::from("data/heldout.txt"),
                qa: PathBuf::from("data/qa.jsonl"),
                templates: None,
            },
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parse a JSON config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve(base, &self.output_dir);
        self.data.train = resolve(base, &self.data.train);
        self.data.heldout = resolve(base, &self.data.heldout);
        self.data.qa = resolve(base, &self.data.qa);
        self.data.prompts = self.data.prompts.as_deref().map(|p| resolve(base, p));
        self.data.templates = self.data.templates.as_deref().map(|p| resolve(base, p));
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    pub fn prompt_source(&self) -> &Path {
        self.data.prompts.as_deref().unwrap_or(&self.data.train)
    }

    /// Check ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run name '{}'", self.name)));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alphas is empty".into()));
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::Config(format!("alpha {a} not in [0, 1]")));
            }
            if self.alphas[..i].contains(a) {
                return Err(Error::Config(format!("alpha {a} listed twice")));
            }
        }
        if self.formats.is_empty() {
            return Err(Error::Config("formats is empty".into()));
        }
        for f in &self.formats {
            f.validate()?;
        }
        let mut names: Vec<&str> = self.formats.iter().map(|f| f.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each format may appear once".into()));
        }
        self.decoding.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.thresholds.validate()?;
        if !(0.0..=1.0).contains(&self.training.eta) {
            return Err(Error::Config(format!("eta {} not in [0, 1]", self.training.eta)));
        }
        if self.training.prompt_len == 0 || self.training.prompt_count == 0 {
            return Err(Error::Config("prompt_len and prompt_count must be positive".into()));
        }
        let ModelSpec::Ngram { order, smoothing, sample_smoothing } = &self.model;
        if *order == 0 || *smoothing < 0.0 || *sample_smoothing < 0.0 {
            return Err(Error::Config("n-gram order must be >= 1 and smoothing >= 0".into()));
        }
        for p in [&self.data.train, &self.data.heldout, &self.data.qa] {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        for p in [self.data.prompts.as_ref(), self.data.templates.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Default config as pretty JSON.
    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&ExperimentConfig::default()).expect("config serializes")
    }
}
