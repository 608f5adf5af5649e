//! Corpus types and the line-oriented data files: `text \t linearized_form`
//! for labeled splits, bare text lines for unlabeled ones.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::logical_forms::{FormError, FormKind, LogicalForm};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: expected `text<TAB>form`")]
    MissingForm { path: PathBuf, line: usize },
    #[error("{path} line {line}: {source}")]
    BadForm {
        path: PathBuf,
        line: usize,
        #[source]
        source: FormError,
    },
    #[error("text contains a tab or newline: {0:?}")]
    Unwritable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub text: String,
    pub form: LogicalForm,
}

impl Pair {
    pub fn new(text: impl Into<String>, form: LogicalForm) -> Self {
        Self {
            text: text.into(),
            form,
        }
    }
}

/// Gold pairs plus unlabeled text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub supervised: Vec<Pair>,
    pub unlabeled: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `text \t form` lines; blank lines are skipped.
pub fn read_pairs(path: &Path, kind: FormKind) -> Result<Vec<Pair>, DataError> {
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let (text, form) = line.split_once('\t').ok_or_else(|| DataError::MissingForm {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let form = kind.parse(form).map_err(|source| DataError::BadForm {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        pairs.push(Pair::new(text.trim(), form));
    }
    Ok(pairs)
}

/// Reads one text per non-blank line.
pub fn read_texts(path: &Path) -> Result<Vec<String>, DataError> {
    let mut texts = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(io(path))?;
        if !line.trim().is_empty() {
            texts.push(line.trim().to_string());
        }
    }
    Ok(texts)
}

fn check_text(text: &str) -> Result<(), DataError> {
    if text.contains(['\t', '\n', '\r']) {
        return Err(DataError::Unwritable(text.to_string()));
    }
    Ok(())
}

pub fn write_pairs(path: &Path, pairs: &[Pair]) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path).map_err(io(path))?);
    for p in pairs {
        check_text(&p.text)?;
        writeln!(out, "{}\t{}", p.text, p.form.linearize()).map_err(io(path))?;
    }
    out.flush().map_err(io(path))
}

pub fn write_texts(path: &Path, texts: &[String]) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path).map_err(io(path))?);
    for t in texts {
        check_text(t)?;
        writeln!(out, "{t}").map_err(io(path))?;
    }
    out.flush().map_err(io(path))
}
