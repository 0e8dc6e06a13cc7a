//! Run configuration resolution and the run manifest.
//!
//! Precedence: command-line flags > config file > defaults. The fully
//! resolved configuration is what the manifest records, and the manifest
//! hash (SHA-256 of its canonical compact JSON) is embedded in summaries
//! and reports so any leakage claim can be traced to an exact recipe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use benchleak_core::dataset::sha256_hex;
use benchleak_core::detect::ScenarioChoice;
use benchleak_core::ngram::TokenMode;
use benchleak_core::permute::{LabelStyle, RenderTemplate};
use benchleak_core::scoring::{LengthNorm, ScoreOptions, ScoringMode};

use crate::loader::DatasetFormat;

pub const TOOL_NAME: &str = "benchleak";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required setting {name} (flag --{flag} or config key {name:?})")]
    Missing {
        name: &'static str,
        flag: &'static str,
    },
    #[error("invalid value for {name}: {value:?} (expected one of {expected})")]
    Invalid {
        name: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
}

/// Config-file / flag layer: everything optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialRunConfig {
    pub dataset: Option<String>,
    pub format: Option<DatasetFormat>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub scenario: Option<ScenarioChoice>,
    pub delta: Option<f64>,
    pub trees: Option<usize>,
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<ScoringMode>,
    pub length_norm: Option<LengthNorm>,
    pub option_separator: Option<String>,
    pub label_style: Option<LabelStyle>,
    pub include_answer: Option<bool>,
    pub cache: Option<String>,
    pub concurrency: Option<usize>,
    pub out: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub api_key_env: Option<String>,
}

impl PartialRunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// `self` wins over `base` field by field.
    pub fn overlay(self, base: Self) -> Self {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        Self {
            dataset: pick!(dataset),
            format: pick!(format),
            backend: pick!(backend),
            model: pick!(model),
            scenario: pick!(scenario),
            delta: pick!(delta),
            trees: pick!(trees),
            subsample: pick!(subsample),
            seed: pick!(seed),
            mode: pick!(mode),
            length_norm: pick!(length_norm),
            option_separator: pick!(option_separator),
            label_style: pick!(label_style),
            include_answer: pick!(include_answer),
            cache: pick!(cache),
            concurrency: pick!(concurrency),
            out: pick!(out),
            timeout_secs: pick!(timeout_secs),
            max_attempts: pick!(max_attempts),
            backoff_ms: pick!(backoff_ms),
            api_key_env: pick!(api_key_env),
        }
    }
}

/// Fully resolved run configuration; serialized verbatim into the
/// manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub format: Option<DatasetFormat>,
    pub backend: String,
    pub model: Option<String>,
    pub scenario: ScenarioChoice,
    /// None: per-item default by option count (-0.20 for <=4 options,
    /// -0.25 for 5).
    pub delta: Option<f64>,
    pub trees: usize,
    pub subsample: Option<usize>,
    pub seed: u64,
    pub mode: ScoringMode,
    pub length_norm: LengthNorm,
    pub option_separator: String,
    pub label_style: LabelStyle,
    pub include_answer: bool,
    pub cache: Option<String>,
    pub concurrency: usize,
    pub out: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub api_key_env: String,
}

impl RunConfig {
    pub fn resolve(partial: PartialRunConfig) -> Result<Self, ConfigError> {
        let dataset = partial.dataset.ok_or(ConfigError::Missing {
            name: "dataset",
            flag: "dataset",
        })?;
        let backend = partial.backend.ok_or(ConfigError::Missing {
            name: "backend",
            flag: "backend",
        })?;
        Ok(Self {
            dataset,
            format: partial.format,
            backend,
            model: partial.model,
            scenario: partial.scenario.unwrap_or(ScenarioChoice::Both),
            delta: partial.delta,
            trees: partial.trees.unwrap_or(100),
            subsample: partial.subsample,
            seed: partial.seed.unwrap_or(0),
            mode: partial.mode.unwrap_or(ScoringMode::WholeSequence),
            length_norm: partial.length_norm.unwrap_or(LengthNorm::Sum),
            option_separator: partial.option_separator.unwrap_or_else(|| " ".to_string()),
            label_style: partial.label_style.unwrap_or(LabelStyle::LetterColon),
            include_answer: partial.include_answer.unwrap_or(false),
            cache: partial.cache,
            concurrency: partial.concurrency.unwrap_or(4),
            out: partial.out.unwrap_or_else(|| ".".to_string()),
            timeout_secs: partial.timeout_secs.unwrap_or(30),
            max_attempts: partial.max_attempts.unwrap_or(3),
            backoff_ms: partial.backoff_ms.unwrap_or(250),
            api_key_env: partial
                .api_key_env
                .unwrap_or_else(|| "BENCHLEAK_API_KEY".to_string()),
        })
    }

    pub fn template(&self) -> RenderTemplate {
        RenderTemplate {
            option_separator: self.option_separator.clone(),
            label_style: self.label_style,
            include_answer: self.include_answer,
        }
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            mode: self.mode,
            norm: self.length_norm,
        }
    }
}

/// The reproduction recipe for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub template_hash: String,
    pub model_id: String,
}

impl Manifest {
    pub fn new(config: RunConfig, dataset_fingerprint: String, model_id: String) -> Self {
        let template_hash = config.template().template_hash();
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config,
            dataset_fingerprint,
            template_hash,
            model_id,
        }
    }

    /// SHA-256 over the canonical compact JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("manifest serializes");
        sha256_hex(canonical.as_bytes())
    }

    pub fn to_pretty_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }
}

/// Parse helpers shared by CLI flags and file configs. Values accept
/// both kebab-case and snake_case spellings.
pub fn parse_scenario(value: &str) -> Result<ScenarioChoice, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "a" => Ok(ScenarioChoice::A),
        "b" => Ok(ScenarioChoice::B),
        "both" => Ok(ScenarioChoice::Both),
        _ => Err(ConfigError::Invalid {
            name: "scenario",
            value: value.to_string(),
            expected: "a, b, both",
        }),
    }
}

pub fn parse_mode(value: &str) -> Result<ScoringMode, ConfigError> {
    match value.to_ascii_lowercase().replace('-', "_").as_str() {
        "whole_sequence" | "whole" => Ok(ScoringMode::WholeSequence),
        "options_only" | "options" => Ok(ScoringMode::OptionsOnly),
        _ => Err(ConfigError::Invalid {
            name: "mode",
            value: value.to_string(),
            expected: "whole-sequence, options-only",
        }),
    }
}

pub fn parse_length_norm(value: &str) -> Result<LengthNorm, ConfigError> {
    match value.to_ascii_lowercase().replace('-', "_").as_str() {
        "sum" => Ok(LengthNorm::Sum),
        "mean_per_token" | "mean" => Ok(LengthNorm::MeanPerToken),
        _ => Err(ConfigError::Invalid {
            name: "length-norm",
            value: value.to_string(),
            expected: "sum, mean-per-token",
        }),
    }
}

pub fn parse_label_style(value: &str) -> Result<LabelStyle, ConfigError> {
    match value.to_ascii_lowercase().replace('-', "_").as_str() {
        "colon" | "letter_colon" => Ok(LabelStyle::LetterColon),
        "dot" | "letter_dot" => Ok(LabelStyle::LetterDot),
        "paren" | "letter_paren" => Ok(LabelStyle::LetterParen),
        _ => Err(ConfigError::Invalid {
            name: "label-style",
            value: value.to_string(),
            expected: "colon, dot, paren",
        }),
    }
}

pub fn parse_token_mode(value: &str) -> Result<TokenMode, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "byte" => Ok(TokenMode::Byte),
        "word" => Ok(TokenMode::Word),
        _ => Err(ConfigError::Invalid {
            name: "token-mode",
            value: value.to_string(),
            expected: "byte, word",
        }),
    }
}

pub fn parse_format(value: &str) -> Result<DatasetFormat, ConfigError> {
    match value.to_ascii_lowercase().replace('_', "-").as_str() {
        "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
        "mmlu-csv" | "csv" => Ok(DatasetFormat::MmluCsv),
        _ => Err(ConfigError::Invalid {
            name: "format",
            value: value.to_string(),
            expected: "jsonl, mmlu-csv",
        }),
    }
}
