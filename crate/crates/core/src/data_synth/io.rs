use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::language::{parse_bracketed_tree, MAX_LENGTH};

use super::Sample;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("empty file: missing header line")]
    MissingHeader,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub d_x: usize,
    #[serde(default)]
    pub relation_categories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(d_x: usize, relation_categories: usize, samples: Vec<Sample>) -> Self {
        Dataset {
            header: DatasetHeader {
                version: DATASET_VERSION,
                d_x,
                relation_categories,
            },
            samples,
        }
    }
}

/// Header line followed by one JSON record per sample.
pub fn write_dataset(dataset: &Dataset, mut out: impl Write) -> Result<(), DataError> {
    writeln!(out, "{}", serde_json::to_string(&dataset.header).expect("header serializes"))?;
    for s in &dataset.samples {
        writeln!(out, "{}", serde_json::to_string(s).expect("sample serializes"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset_file(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

fn check_sample(s: &Sample, header: &DatasetHeader) -> Result<(), String> {
    let k = s.proposals.len();
    if k == 0 {
        return Err("no proposals".into());
    }
    if s.gt_index >= k {
        return Err(format!("gt_index {} out of range for {k} proposals", s.gt_index));
    }
    if let Some(p) = s.proposals.iter().position(|p| p.feature.len() != header.d_x) {
        return Err(format!("proposal {p} feature width differs from d_x = {}", header.d_x));
    }
    if s.tokens.is_empty() || s.tokens.len() > MAX_LENGTH {
        return Err(format!("expression has {} tokens", s.tokens.len()));
    }
    if s.order > 2 {
        return Err(format!("relation order {} outside 0..=2", s.order));
    }
    let tree = parse_bracketed_tree(&s.tree).map_err(|e| e.to_string())?;
    let leaves = tree.leaves();
    if leaves.len() != s.tokens.len() || leaves.iter().zip(&s.tokens).any(|(l, t)| !l.eq_ignore_ascii_case(t)) {
        return Err("tree leaves do not match tokens".into());
    }
    if let Some(a) = &s.attributes {
        if a.len() != k {
            return Err("attribute count differs from proposal count".into());
        }
    }
    if !s.semantic_edges.is_empty() {
        crate::scene_graph::validate_detections(k, &s.semantic_edges, header.relation_categories)
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Reads and validates a dataset; errors carry 1-based line numbers.
pub fn read_dataset(reader: impl BufRead) -> Result<Dataset, DataError> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(DataError::MissingHeader),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let fail = |reason: String| DataError::Record { line: i + 1, reason };
                let h: DatasetHeader = serde_json::from_str(&line).map_err(|e| fail(format!("bad header: {e}")))?;
                if h.version != DATASET_VERSION {
                    return Err(fail(format!("unsupported dataset version {}", h.version)));
                }
                break h;
            }
        }
    };
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| DataError::Record { line: i + 1, reason };
        let s: Sample = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        check_sample(&s, &header).map_err(fail)?;
        samples.push(s);
    }
    Ok(Dataset { header, samples })
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}
