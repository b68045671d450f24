//! On-disk layout shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use updrom::datagen::{read_trajectory, split_even_odd, Case, ParamPoint, Trajectory};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataEntry {
    pub param: ParamPoint,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub case: Case,
    pub entries: Vec<DataEntry>,
}

impl DataManifest {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        read_json(&dir.join(MANIFEST))
    }

    pub fn trajectory(&self, dir: &Path, p: &ParamPoint) -> anyhow::Result<Trajectory> {
        let entry = self
            .entries
            .iter()
            .find(|e| &e.param == p)
            .ok_or_else(|| CliError::Missing(format!("no data for {p} in {}", dir.display())))?;
        Ok(read_trajectory(&dir.join(&entry.file))?)
    }

    /// The odd-index half, used for every evaluation.
    pub fn test_half(&self, dir: &Path, p: &ParamPoint) -> anyhow::Result<Trajectory> {
        Ok(split_even_odd(&self.trajectory(dir, p)?)?.1)
    }
}

/// Per-point outputs of `infer` or `uq`, keyed by file role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub param: ParamPoint,
    pub files: Vec<(String, String)>,
}

impl OutputEntry {
    pub fn file(&self, role: &str) -> Option<&str> {
        self.files.iter().find(|(r, _)| r == role).map(|(_, f)| f.as_str())
    }
}

/// File-name fragment for a parameter point, e.g. `mu_0.25`.
pub fn tag(p: &ParamPoint) -> String {
    p.iter().map(|(k, v)| format!("{k}_{v}")).collect::<Vec<_>>().join("_")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing_or(path, e))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn missing_or(path: &Path, e: std::io::Error) -> anyhow::Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Missing(path.display().to_string()).into()
    } else {
        anyhow::Error::new(e).context(format!("reading {}", path.display()))
    }
}

/// Parses `name=v1,v2,...`.
pub fn parse_assignment(text: &str) -> anyhow::Result<(String, Vec<f64>)> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected name=value[,value...], got {text:?}")))?;
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("not a finite number: {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}
