use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub parameters: serde_json::Value,
    pub truncation_tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(command: &'static str, parameters: serde_json::Value, truncation_tolerance: f64) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            parameters,
            truncation_tolerance,
            seed: None,
            notes: Vec::new(),
        }
    }
}

/// A table with a fixed header and preformatted cells; `json_rows` carries
/// the richer per-row records emitted in JSON mode.
pub struct Table<R: Serialize> {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
    pub json_rows: Vec<R>,
}

/// Twelve significant digits, locale-free.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Serialize)]
struct JsonDoc<'a, R: Serialize> {
    provenance: &'a Provenance,
    rows: &'a [R],
}

pub fn render<R: Serialize>(prov: &Provenance, table: &Table<R>, format: Format) -> Result<String> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            let params = serde_json::to_string(prov)?;
            out.push_str(&format!("# {} {}\n", prov.tool, prov.version));
            out.push_str(&format!("# provenance: {params}\n"));
            out.push_str(&table.header.join(","));
            out.push('\n');
            for row in &table.rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            Ok(out)
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&JsonDoc {
                provenance: prov,
                rows: &table.json_rows,
            })?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Writes to `path`, to `<dir>/<command>.<ext>` when only the output
/// directory is known, or to stdout.
pub fn emit(text: &str, path: Option<PathBuf>, dir: Option<PathBuf>, command: &str, format: Format) -> Result<()> {
    let target = path.or_else(|| dir.map(|d| d.join(format!("{command}.{}", format.extension()))));
    match target {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
