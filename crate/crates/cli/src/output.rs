//! CSV tables with `%.12g` numbers, JSON reports and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// C's `%.12g`: 12 significant digits, trailing zeros stripped, exponent
/// form when the decimal exponent is below -4 or at least 12.
pub fn fmt_g(x: f64) -> String {
    const P: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // rounding to P digits decides the exponent, so format first
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Numeric cell.
pub fn num(x: f64) -> String {
    fmt_g(x)
}

/// Integer-like cell.
pub fn int<T: ToString>(x: T) -> String {
    x.to_string()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: C,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputEntry>,
}

/// Writes files under one output directory and remembers their checksums.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn outputs(&self) -> &[OutputEntry] {
        &self.written
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(OutputEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_csv(&mut self, rel: &str, table: &Table) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let to_err = |e: csv::Error| CliError::Io {
            path: self.root.join(rel),
            source: std::io::Error::other(e),
        };
        w.write_record(&table.header).map_err(to_err)?;
        for row in &table.rows {
            w.write_record(row).map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io {
            path: self.root.join(rel),
            source: e.into_error(),
        })?;
        self.write_bytes(rel, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// `manifest.json`, listing every file written so far. Not listed itself.
    pub fn finish<C: Serialize>(
        self,
        command: &str,
        seed: u64,
        config: C,
        wall_clock_seconds: f64,
    ) -> Result<Vec<OutputEntry>, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            wall_clock_seconds,
            outputs: self.written.clone(),
        };
        let path = self.root.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(self.written)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
