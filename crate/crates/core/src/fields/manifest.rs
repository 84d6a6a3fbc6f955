use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Labeled,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Pretrain, Split::Labeled, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Labeled => "labeled",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown split {s:?}")))
    }
}

/// One dataset case. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    pub layout: PathBuf,
    pub conductivity: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<PathBuf>,
    pub split: Split,
}

/// Ordered list of cases; serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.cases {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate case id {:?}", c.id)));
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists relative to `base`.
    pub fn check_paths(&self, base: &Path) -> Result<()> {
        for c in &self.cases {
            let paths = [Some(&c.layout), Some(&c.conductivity), c.temperature.as_ref()];
            for p in paths.into_iter().flatten() {
                if !base.join(p).is_file() {
                    return Err(Error::Manifest(format!("case {}: missing file {}", c.id, p.display())));
                }
            }
        }
        Ok(())
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.check_unique_ids()?;
    let text = serde_json::to_string_pretty(manifest).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Reads a manifest and checks ids are unique and all paths resolve.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(json_err(path))?;
    manifest.check_unique_ids()?;
    manifest.check_paths(path.parent().unwrap_or(Path::new(".")))?;
    Ok(manifest)
}
