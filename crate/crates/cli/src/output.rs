//! File emission: JSON envelopes and CSV tables with a `#` header block.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gdf_core::config::ExperimentConfig;
use serde::Serialize;

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "GDF_OUTPUT_DIR";

/// `GDF_OUTPUT_DIR`, then `--out-dir`, then the config's `output_dir`, then `.`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(env) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    cfg.and_then(|c| c.output_dir.as_ref()).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// File-name stem from a label: lowercase alphanumerics, everything else `_`.
pub fn stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let s = s.trim_matches('_').to_string();
    if s.is_empty() { "model".into() } else { s }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a ExperimentConfig>,
    result: &'a T,
}

pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    command: &str,
    config: Option<&ExperimentConfig>,
    result: &T,
) -> Result<PathBuf, CliError> {
    let env = Envelope { tool: "gdf", version: gdf_core::VERSION, command, config, result };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, &text)
}

/// Header lines describing a numeric file, written as `# key: value`.
pub struct Header {
    lines: Vec<String>,
}

impl Header {
    pub fn new(command: &str) -> Self {
        Header { lines: vec![format!("gdf {} {command}", gdf_core::VERSION)] }
    }

    pub fn field(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.lines.push(format!("{key}: {value}"));
        self
    }

    /// Truncation, policy, tolerances and the resolved config.
    pub fn experiment(self, cfg: &ExperimentConfig) -> Self {
        let compact = serde_json::to_string(cfg).expect("config serializes");
        self.field("model", if cfg.model.label.is_empty() { "model" } else { &cfg.model.label })
            .field("truncation_N", cfg.truncation)
            .field("policy", cfg.policy)
            .field("scheme", format!("{:?}", cfg.scheme))
            .field("rtol", cfg.rtol)
            .field("atol", cfg.atol)
            .field("norm_order_m", cfg.m)
            .field(
                "units",
                "t in model time units; f_n is the number density of size-n clusters; M = sum n f_n; rates in 1/time",
            )
            .field("config", compact)
    }
}

pub fn write_csv(dir: &Path, name: &str, header: &Header, columns: &[String], rows: &[Vec<f64>]) -> Result<PathBuf, CliError> {
    let mut out = String::new();
    for line in &header.lines {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a string");
        }
        out.push('\n');
    }
    write_file(dir, name, &out)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(path)
}
