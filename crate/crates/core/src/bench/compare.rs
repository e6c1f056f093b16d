use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::workload::Report;
use crate::error::{Error, Result};
use crate::store::StorageBreakdown;

/// One representation: storage plus mean batch latency per batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub storage: StorageBreakdown,
    pub ratio: f64,
    /// Batch size to mean milliseconds per batch.
    pub latency_ms: BTreeMap<usize, f64>,
    /// Batch size to decompressed bytes per repeat.
    pub bytes_decompressed: BTreeMap<usize, u64>,
    pub memorization_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub relation: String,
    pub batch_sizes: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

/// Groups reports by representation, in first-seen order.
pub fn compare(reports: &[Report]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::IncompatibleReports("no reports given".into()))?;
    if let Some(r) = reports.iter().find(|r| r.relation != first.relation) {
        return Err(Error::IncompatibleReports(format!(
            "`{}` covers relation {} but `{}` covers {}",
            first.label, first.relation, r.label, r.relation
        )));
    }
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for r in reports {
        let b = r.workload.batch_size;
        let ms = r.latency.total_ns / 1e6;
        match rows.iter_mut().find(|row| row.label == r.label) {
            Some(row) => {
                row.latency_ms.insert(b, ms);
                row.bytes_decompressed.insert(b, r.bytes_decompressed);
            }
            None => rows.push(ComparisonRow {
                label: r.label.clone(),
                storage: r.storage,
                ratio: r.storage.ratio(),
                latency_ms: BTreeMap::from([(b, ms)]),
                bytes_decompressed: BTreeMap::from([(b, r.bytes_decompressed)]),
                memorization_fraction: r.memorization_fraction,
            }),
        }
    }
    let mut batch_sizes: Vec<usize> = reports.iter().map(|r| r.workload.batch_size).collect();
    batch_sizes.sort_unstable();
    batch_sizes.dedup();
    Ok(Comparison {
        relation: first.relation.clone(),
        batch_sizes,
        rows,
    })
}

impl Comparison {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "repr",
            "total_bytes",
            "original_bytes",
            "ratio",
            "model",
            "aux",
            "exist",
            "decode",
            "data",
            "index",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for b in &self.batch_sizes {
            h.push(format!("latency_ms_b{b}"));
            h.push(format!("bytes_decompressed_b{b}"));
        }
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let s = r.storage;
                let mut c = vec![
                    r.label.clone(),
                    s.total.to_string(),
                    s.original.to_string(),
                    format!("{:.4}", r.ratio),
                ];
                c.extend([s.model, s.aux, s.exist, s.decode, s.data, s.index].map(|v| v.to_string()));
                for b in &self.batch_sizes {
                    c.push(r.latency_ms.get(b).map_or_else(String::new, |v| format!("{v:.3}")));
                    c.push(r.bytes_decompressed.get(b).map_or_else(String::new, |v| v.to_string()));
                }
                c
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.header()).map_err(io)?;
        for row in self.cells() {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let _ = writeln!(
            out,
            "{}",
            "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
        );
        for row in &cells {
            line(&mut out, row);
        }
        out
    }
}
