use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_tune, tokenize_abc, ParseError, Score};

/// Why a tune was left out of a corpus. Serialized one per line as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub tune_ref: i64,
    pub title: String,
    pub reason: String,
}

impl SkipReport {
    pub fn new(tune_ref: i64, title: impl Into<String>, reason: impl Into<String>) -> Self {
        SkipReport {
            tune_ref,
            title: title.into(),
            reason: reason.into(),
        }
    }
}

/// Parses every `X:`-delimited tune in `source`. Failing tunes become skip
/// reports; nothing aborts the corpus.
pub fn parse_corpus(source: &str) -> (Vec<Score>, Vec<SkipReport>) {
    let mut scores = Vec::new();
    let mut skips = Vec::new();
    for chunk in split_tunes(source) {
        match tokenize_abc(chunk)
            .map_err(ParseError::from)
            .and_then(|t| parse_tune(&t))
        {
            Ok(score) => scores.push(score),
            Err(e) => {
                let (tune_ref, title) = chunk_identity(chunk);
                skips.push(SkipReport::new(tune_ref, title, e.reason()));
            }
        }
    }
    (scores, skips)
}

/// Parses all `*.abc` files under `dir`, in path order.
pub fn parse_corpus_files(dir: &Path) -> std::io::Result<(Vec<Score>, Vec<SkipReport>)> {
    let mut files = Vec::new();
    collect_abc_files(dir, &mut files)?;
    files.sort();
    let mut scores = Vec::new();
    let mut skips = Vec::new();
    for path in files {
        let bytes = std::fs::read(&path)?;
        // Older corpora are often Latin-1; lossy decoding only affects titles.
        let text = String::from_utf8_lossy(&bytes);
        let (s, k) = parse_corpus(&text);
        scores.extend(s);
        skips.extend(k);
    }
    Ok((scores, skips))
}

fn collect_abc_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_abc_files(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("abc"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn split_tunes(source: &str) -> Vec<&str> {
    let mut starts: Vec<usize> = Vec::new();
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        if line.starts_with("X:") {
            starts.push(offset);
        }
        offset += line.len();
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(source.len());
            &source[s..end]
        })
        .collect()
}

fn chunk_identity(chunk: &str) -> (i64, String) {
    let mut tune_ref = 0;
    let mut title = String::new();
    for line in chunk.lines() {
        if let Some(v) = line.strip_prefix("X:") {
            tune_ref = v.trim().parse().unwrap_or(0);
        } else if let Some(v) = line.strip_prefix("T:") {
            if title.is_empty() {
                title = v.trim().to_string();
            }
        } else if line.starts_with("K:") {
            break;
        }
    }
    (tune_ref, title)
}
