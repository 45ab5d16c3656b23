//! Table rendering (CSV and aligned text) and atomic file output.

use std::io::Write;
use std::path::Path;

use deconv_ht_core::kernels::KernelMatrix;
use deconv_ht_core::simulate::SummaryRow;

use crate::error::{CliError, CliResult};

pub const SUMMARY_HEADER: [&str; 10] = [
    "G0", "M0", "alpha", "M-NV", "M-MHT", "S-NV", "S-MHT", "S-OR", "M-m1", "M-m0",
];

/// 17 significant digits, enough to restore the exact `f64`.
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Support-point label: at most 12 decimals, trailing zeros dropped.
pub fn param_label(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Write `contents` to `path` through a temporary file in the same
/// directory, or to stdout when `path` is `None`.
pub fn write_atomic(path: Option<&Path>, contents: &[u8]) -> CliResult<()> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out
            .write_all(contents)
            .and_then(|_| out.flush())
            .map_err(|source| CliError::Write {
                path: "<stdout>".into(),
                source,
            });
    };
    let err = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Right-aligned columns separated by two spaces.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let mut s = parts.join("  ");
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.family.clone(),
                r.cap.to_string(),
                r.alpha.to_string(),
                full(r.mean_naive),
                full(r.mean_mht),
                full(r.rmse_naive),
                full(r.rmse_mht),
                full(r.rmse_oracle),
                full(r.mean_m1),
                full(r.mean_m0),
            ]
        })
        .collect();
    csv_bytes(&SUMMARY_HEADER, &body)
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.family.clone(),
                r.cap.to_string(),
                r.alpha.to_string(),
                format!("{:.4}", r.mean_naive),
                format!("{:.4}", r.mean_mht),
                format!("{:.4}", r.rmse_naive),
                format!("{:.4}", r.rmse_mht),
                format!("{:.4}", r.rmse_oracle),
                format!("{:.0}", r.mean_m1),
                format!("{:.0}", r.mean_m0),
            ]
        })
        .collect();
    aligned(&SUMMARY_HEADER, &body)
}

/// Parse a table written by [`summary_csv`]. Failure counts are not part of
/// the table and read back as zero.
pub fn parse_summary_csv(bytes: &[u8]) -> Result<Vec<SummaryRow>, String> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(SUMMARY_HEADER.iter().copied()) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| -> Result<f64, String> { rec[i].parse().map_err(|_| format!("bad number {:?}", &rec[i])) };
        rows.push(SummaryRow {
            family: rec[0].to_string(),
            cap: rec[1].parse().map_err(|_| format!("bad M0 {:?}", &rec[1]))?,
            alpha: num(2)?,
            mean_naive: num(3)?,
            mean_mht: num(4)?,
            rmse_naive: num(5)?,
            rmse_mht: num(6)?,
            rmse_oracle: num(7)?,
            mean_m1: num(8)?,
            mean_m0: num(9)?,
            failures: 0,
        });
    }
    Ok(rows)
}

/// Rows `y = 1..J`, one column per support point, then a row of column sums.
pub fn kernel_csv(p: &KernelMatrix) -> Vec<u8> {
    let params: Vec<String> = p.params().iter().map(|&v| param_label(v)).collect();
    let mut header = vec!["y"];
    header.extend(params.iter().map(String::as_str));
    let mut rows: Vec<Vec<String>> = (0..p.rows())
        .map(|j| {
            let mut r = vec![(j + 1).to_string()];
            r.extend((0..p.cols()).map(|i| full(p.entries()[(j, i)])));
            r
        })
        .collect();
    let mut sums = vec!["sum".to_string()];
    sums.extend((0..p.cols()).map(|i| format!("{:.6}", p.entries().column(i).sum())));
    rows.push(sums);
    csv_bytes(&header, &rows)
}

pub fn kernel_text(p: &KernelMatrix) -> String {
    let params: Vec<String> = p.params().iter().map(|v| format!("{v:.2}")).collect();
    let mut header = vec!["y"];
    header.extend(params.iter().map(String::as_str));
    let mut rows: Vec<Vec<String>> = (0..p.rows())
        .map(|j| {
            let mut r = vec![(j + 1).to_string()];
            r.extend((0..p.cols()).map(|i| format!("{:.6}", p.entries()[(j, i)])));
            r
        })
        .collect();
    let mut sums = vec!["sum".to_string()];
    sums.extend((0..p.cols()).map(|i| format!("{:.6}", p.entries().column(i).sum())));
    rows.push(sums);
    aligned(&header, &rows)
}

/// Long-format report: one `(section, group, key, value)` line per figure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<ReportLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub section: &'static str,
    pub group: String,
    pub key: String,
    pub value: ReportValue,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportValue {
    Real(f64),
    Count(u64),
    Text(String),
}

impl ReportValue {
    fn render_full(&self) -> String {
        match self {
            Self::Real(v) => full(*v),
            Self::Count(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }

    fn render_short(&self) -> String {
        match self {
            Self::Real(v) => format!("{v:.6}"),
            Self::Count(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl Report {
    pub fn push(&mut self, section: &'static str, group: &str, key: impl Into<String>, value: ReportValue) {
        self.lines.push(ReportLine {
            section,
            group: group.to_string(),
            key: key.into(),
            value,
        });
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let rows: Vec<Vec<String>> = self
            .lines
            .iter()
            .map(|l| {
                vec![
                    l.section.to_string(),
                    l.group.clone(),
                    l.key.clone(),
                    l.value.render_full(),
                ]
            })
            .collect();
        csv_bytes(&["section", "group", "key", "value"], &rows)
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .lines
            .iter()
            .map(|l| {
                vec![
                    l.section.to_string(),
                    l.group.clone(),
                    l.key.clone(),
                    l.value.render_short(),
                ]
            })
            .collect();
        aligned(&["section", "group", "key", "value"], &rows)
    }
}
