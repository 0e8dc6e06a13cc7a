//! Dataset file loaders and writers.
//!
//! Two source formats: JSONL (one item object per line) and header-less
//! MMLU-style CSV (question, four options, answer letter). Both validate
//! through the core item invariants, so whatever loads is auditable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use benchleak_core::dataset::{Dataset, DatasetError, McqItem};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {source}")]
    Validation {
        path: String,
        line: usize,
        #[source]
        source: DatasetError,
    },
    #[error("{path}:{line}: expected {expected} columns, got {got}")]
    ColumnCount {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: unknown answer letter {letter:?} for {n_options} options")]
    UnknownAnswerLetter {
        path: String,
        line: usize,
        letter: String,
        n_options: usize,
    },
    #[error("{path}: {source}")]
    Dataset {
        path: String,
        #[source]
        source: DatasetError,
    },
    #[error("{path}: cannot infer format from extension; pass --format")]
    UnknownFormat { path: String },
}

/// On-disk JSONL item schema.
#[derive(Debug, Serialize, Deserialize)]
pub struct ItemRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub options: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Jsonl,
    MmluCsv,
}

/// Pick a format from the file extension: .jsonl/.json -> JSONL,
/// .csv -> MMLU CSV.
pub fn infer_format(path: &Path) -> Result<DatasetFormat, LoadError> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jsonl") | Some("json") => Ok(DatasetFormat::Jsonl),
        Some("csv") => Ok(DatasetFormat::MmluCsv),
        _ => Err(LoadError::UnknownFormat {
            path: path.display().to_string(),
        }),
    }
}

pub fn load(path: &Path, format: DatasetFormat) -> Result<Dataset, LoadError> {
    match format {
        DatasetFormat::Jsonl => load_jsonl(path),
        DatasetFormat::MmluCsv => load_csv_mmlu(path),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

/// Load a JSONL dataset. Items without an id get their 1-based line
/// number as id.
pub fn load_jsonl(path: &Path) -> Result<Dataset, LoadError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| LoadError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord = serde_json::from_str(&line).map_err(|e| LoadError::Parse {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let item = McqItem::new(
            record.id.unwrap_or_else(|| line_no.to_string()),
            record.question,
            record.options,
            record.answer,
            record.meta.unwrap_or_default(),
        )
        .map_err(|source| LoadError::Validation {
            path: display.clone(),
            line: line_no,
            source,
        })?;
        items.push(item);
    }
    Dataset::new(dataset_name(path), items).map_err(|source| LoadError::Dataset {
        path: display,
        source,
    })
}

/// Load a header-less MMLU-style CSV: question, A, B, C, D, answer
/// letter. The answer letter maps to a 0-based index; row numbers become
/// ids.
pub fn load_csv_mmlu(path: &Path) -> Result<Dataset, LoadError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut items = Vec::new();
    for (idx, result) in reader.records().enumerate() {
        let line_no = idx + 1;
        let record = result.map_err(|e| LoadError::Parse {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(LoadError::ColumnCount {
                path: display,
                line: line_no,
                expected: 6,
                got: record.len(),
            });
        }
        let options: Vec<String> = (1..=4).map(|i| record[i].to_string()).collect();
        let letter = record[5].trim();
        let answer = match letter {
            "A" | "a" => 0usize,
            "B" | "b" => 1,
            "C" | "c" => 2,
            "D" | "d" => 3,
            _ => {
                return Err(LoadError::UnknownAnswerLetter {
                    path: display,
                    line: line_no,
                    letter: letter.to_string(),
                    n_options: 4,
                })
            }
        };
        let item = McqItem::new(
            line_no.to_string(),
            record[0].to_string(),
            options,
            Some(answer),
            BTreeMap::new(),
        )
        .map_err(|source| LoadError::Validation {
            path: display.clone(),
            line: line_no,
            source,
        })?;
        items.push(item);
    }
    Dataset::new(dataset_name(path), items).map_err(|source| LoadError::Dataset {
        path: display,
        source,
    })
}

/// Write a dataset back out as JSONL; `load_jsonl` of the result equals
/// the input.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<(), LoadError> {
    let display = path.display().to_string();
    let mut file = File::create(path).map_err(|source| LoadError::Io {
        path: display.clone(),
        source,
    })?;
    for item in dataset.items() {
        let record = ItemRecord {
            id: Some(item.id.clone()),
            question: item.question.clone(),
            options: item.options.clone(),
            answer: item.answer_index,
            meta: if item.meta.is_empty() {
                None
            } else {
                Some(item.meta.clone())
            },
        };
        let line = serde_json::to_string(&record).expect("item serializes");
        writeln!(file, "{line}").map_err(|source| LoadError::Io {
            path: display.clone(),
            source,
        })?;
    }
    Ok(())
}
