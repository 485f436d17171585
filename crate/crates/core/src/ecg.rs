//! ECG domain types and the on-disk record dataset format.
//!
//! A dataset is a directory holding `manifest.jsonl` (one JSON object per
//! record) and one CSV file per record with the 12 standard leads as
//! columns, amplitudes in millivolts.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The 12 standard leads, in column order.
pub const LEAD_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub const NUM_LEADS: usize = 12;

/// Index of lead II, the R-peak detection lead.
pub const LEAD_II: usize = 1;

/// Culprit artery class. Every input is assumed CAO-positive; there is no
/// "normal" class in this problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaoClass {
    Lad,
    Lcx,
    Rca,
}

impl CaoClass {
    pub const ALL: [CaoClass; 3] = [CaoClass::Lad, CaoClass::Lcx, CaoClass::Rca];

    pub fn as_str(self) -> &'static str {
        match self {
            CaoClass::Lad => "LAD",
            CaoClass::Lcx => "LCX",
            CaoClass::Rca => "RCA",
        }
    }

    pub fn from_str_name(s: &str) -> Result<Self> {
        match s {
            "LAD" => Ok(CaoClass::Lad),
            "LCX" => Ok(CaoClass::Lcx),
            "RCA" => Ok(CaoClass::Rca),
            other => Err(Error::Dataset(format!("unknown class label {other:?}"))),
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            CaoClass::Lad => 0,
            CaoClass::Lcx => 1,
            CaoClass::Rca => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CaoClass::Lad),
            1 => Ok(CaoClass::Lcx),
            2 => Ok(CaoClass::Rca),
            other => Err(Error::Dataset(format!("invalid class byte {other}"))),
        }
    }
}

impl fmt::Display for CaoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A raw or denoised multi-lead ECG time series.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    /// 12 rows, one per lead in [`LEAD_NAMES`] order, all the same length.
    pub leads: Vec<Vec<f64>>,
    pub sample_rate_hz: f64,
    pub label: CaoClass,
    /// Set once the noise-reduction stage has run; guards double filtering.
    pub denoised: bool,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        leads: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        label: CaoClass,
    ) -> Result<Self> {
        let record = EcgRecord {
            record_id: record_id.into(),
            leads,
            sample_rate_hz,
            label,
            denoised: false,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| Error::Record {
            record_id: self.record_id.clone(),
            reason,
        };
        if self.leads.len() != NUM_LEADS {
            return Err(err(format!("expected 12 leads, got {}", self.leads.len())));
        }
        let n = self.leads[0].len();
        if n == 0 {
            return Err(err("empty leads".into()));
        }
        for (i, lead) in self.leads.iter().enumerate() {
            if lead.len() != n {
                return Err(err(format!(
                    "lead {} has length {}, expected {}",
                    LEAD_NAMES[i],
                    lead.len(),
                    n
                )));
            }
            if !lead.iter().all(|v| v.is_finite()) {
                return Err(err(format!("non-finite sample in lead {}", LEAD_NAMES[i])));
            }
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(err(format!("invalid sample rate {}", self.sample_rate_hz)));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.leads[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate_hz
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub label: String,
    pub sample_rate_hz: f64,
    pub file: String,
}

fn csv_path(dir: &Path, record_id: &str) -> PathBuf {
    dir.join(format!("{record_id}.csv"))
}

/// Writes `manifest.jsonl` plus one CSV per record into `dir`.
pub fn write_record_dataset(dir: &Path, records: &[EcgRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let file = File::create(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut manifest = BufWriter::new(file);
    for record in records {
        record.validate()?;
        let entry = ManifestEntry {
            record_id: record.record_id.clone(),
            label: record.label.as_str().to_string(),
            sample_rate_hz: record.sample_rate_hz,
            file: format!("{}.csv", record.record_id),
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest
            .write_all(b"\n")
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        write_record_csv(&csv_path(dir, &record.record_id), record)?;
    }
    manifest
        .flush()
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(())
}

fn write_record_csv(path: &Path, record: &EcgRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "{}", LEAD_NAMES.join(",")).map_err(io_err)?;
    let n = record.num_samples();
    let mut line = String::new();
    for i in 0..n {
        line.clear();
        for (l, lead) in record.leads.iter().enumerate() {
            if l > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:.6}", lead[i]));
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Loads every record listed in `dir/manifest.jsonl`, sorted by record id.
pub fn read_record_dataset(dir: &Path) -> Result<Vec<EcgRecord>> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = File::open(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_manifest_line(&line).map_err(|e| {
            Error::format(
                "manifest.jsonl",
                format!("line {}: {e}", lineno + 1),
            )
        })?;
        let path = dir.join(&entry.file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let leads = parse_record_csv(&text)
            .map_err(|e| Error::format("record csv", format!("{}: {e}", path.display())))?;
        let mut record = EcgRecord::new(
            entry.record_id,
            leads,
            entry.sample_rate_hz,
            CaoClass::from_str_name(&entry.label)?,
        )?;
        record.denoised = false;
        records.push(record);
    }
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(records)
}

/// Parses one manifest line. Split out so untrusted input can be exercised
/// without touching the filesystem.
pub fn parse_manifest_line(line: &str) -> Result<ManifestEntry> {
    let entry: ManifestEntry = serde_json::from_str(line)?;
    if !(entry.sample_rate_hz > 0.0 && entry.sample_rate_hz.is_finite()) {
        return Err(Error::format("manifest.jsonl", "sample_rate_hz must be positive"));
    }
    if entry.record_id.is_empty() {
        return Err(Error::format("manifest.jsonl", "empty record_id"));
    }
    if entry.file.contains("..") || entry.file.contains('/') || entry.file.contains('\\') {
        return Err(Error::format("manifest.jsonl", "file must be a bare filename"));
    }
    Ok(entry)
}

/// Parses the 12-column record CSV body into lead rows.
pub fn parse_record_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("record csv", "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != LEAD_NAMES {
        return Err(Error::format(
            "record csv",
            format!("bad header {header:?}"),
        ));
    }
    let mut leads: Vec<Vec<f64>> = vec![Vec::new(); NUM_LEADS];
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (l, field) in line.split(',').enumerate() {
            if l >= NUM_LEADS {
                return Err(Error::format(
                    "record csv",
                    format!("row {}: too many columns", i + 2),
                ));
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format("record csv", format!("row {}: bad number {field:?}", i + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    "record csv",
                    format!("row {}: non-finite value", i + 2),
                ));
            }
            leads[l].push(v);
            count += 1;
        }
        if count != NUM_LEADS {
            return Err(Error::format(
                "record csv",
                format!("row {}: expected 12 columns, got {count}", i + 2),
            ));
        }
    }
    if leads[0].is_empty() {
        return Err(Error::format("record csv", "no sample rows"));
    }
    Ok(leads)
}
