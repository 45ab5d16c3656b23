//! Observation records: one responding unit per CSV row.
//!
//! Columns (header required, any order): `group`, `y`, and optionally
//! `covariate` and `history`. Rows with `history = 1` are historical records:
//! they enter the fit of their group's mixture but not its responder count.

use std::path::Path;

use deconv_ht_core::deconvolve::GroupData;
use deconv_ht_core::mixture::CountVector;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationRecord {
    pub group: String,
    pub y: usize,
    pub covariate: Option<String>,
    pub history: bool,
}

/// Parse records, checking `1 <= y <= support`.
pub fn read_records(path: &Path, support: usize) -> CliResult<Vec<ObservationRecord>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(path, e.to_string()))?;
    parse_records(&bytes, support).map_err(|m| CliError::input(path, m))
}

pub fn parse_records(bytes: &[u8], support: usize) -> Result<Vec<ObservationRecord>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.is_empty() {
        return Err("empty file: a header row is required".into());
    }
    let mut columns = [None; 4];
    for (i, h) in headers.iter().enumerate() {
        let slot = match h {
            "group" => 0,
            "y" => 1,
            "covariate" => 2,
            "history" => 3,
            other => return Err(format!("line 1: unknown column {other:?}")),
        };
        if columns[slot].replace(i).is_some() {
            return Err(format!("line 1: duplicate column {h:?}"));
        }
    }
    let (group_col, y_col) = match (columns[0], columns[1]) {
        (Some(g), Some(y)) => (g, y),
        _ => return Err("line 1: columns `group` and `y` are required".into()),
    };

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let group = row[group_col].to_string();
        if group.is_empty() {
            return Err(format!("line {line}: empty group"));
        }
        let y: usize = row[y_col]
            .parse()
            .map_err(|_| format!("line {line}: y = {:?} is not a positive integer", &row[y_col]))?;
        if y == 0 || y > support {
            return Err(format!("line {line}: y = {y} is outside 1..={support}"));
        }
        let covariate = columns[2].map(|c| row[c].to_string()).filter(|s| !s.is_empty());
        let history = match columns[3].map(|c| &row[c]) {
            None | Some("") | Some("0") | Some("false") => false,
            Some("1") | Some("true") => true,
            Some(other) => return Err(format!("line {line}: history = {other:?} is not 0/1")),
        };
        records.push(ObservationRecord {
            group,
            y,
            covariate,
            history,
        });
    }
    if records.is_empty() {
        return Err("no records".into());
    }
    Ok(records)
}

/// Records collected per fitting cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Outcome group.
    pub group: String,
    /// Covariate value when cells are split by covariate.
    pub covariate: Option<String>,
    /// Current plus historical counts.
    pub counts: CountVector,
    /// Current records only.
    pub responders: u64,
}

impl Cell {
    pub fn label(&self) -> String {
        match &self.covariate {
            Some(c) => format!("{}|{}", self.group, c),
            None => self.group.clone(),
        }
    }

    pub fn to_group_data(&self) -> GroupData {
        GroupData::new(self.label(), self.counts.clone()).with_inflated_responders(self.responders)
    }
}

/// Group records into cells, in order of first appearance. With
/// `by_covariate`, each (group, covariate) pair is its own cell.
pub fn cells(records: &[ObservationRecord], support: usize, by_covariate: bool) -> CliResult<Vec<Cell>> {
    let mut out: Vec<Cell> = Vec::new();
    for r in records {
        let covariate = if by_covariate {
            Some(r.covariate.clone().ok_or_else(|| {
                CliError::Usage(format!(
                    "calibration needs a covariate on every record (group {})",
                    r.group
                ))
            })?)
        } else {
            None
        };
        let idx = match out.iter().position(|c| c.group == r.group && c.covariate == covariate) {
            Some(i) => i,
            None => {
                out.push(Cell {
                    group: r.group.clone(),
                    covariate,
                    counts: CountVector::zeros(support),
                    responders: 0,
                });
                out.len() - 1
            }
        };
        out[idx]
            .counts
            .record(r.y)
            .map_err(CliError::core("recording observation"))?;
        if !r.history {
            out[idx].responders += 1;
        }
    }
    Ok(out)
}

/// Outcome groups in order of first appearance.
pub fn group_order(cells: &[Cell]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in cells {
        if !out.contains(&c.group) {
            out.push(c.group.clone());
        }
    }
    out
}
