use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names, in order. A first non-comment line equal to these
/// (tab-separated) is treated as a header.
pub const MANIFEST_COLUMNS: [&str; 5] = ["pair_id", "flash_path", "ambient_path", "category", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    People,
    Shelves,
    Plants,
    Toys,
    Rooms,
    Objects,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::People, Category::Shelves, Category::Plants, Category::Toys, Category::Rooms, Category::Objects];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::People => "People",
            Category::Shelves => "Shelves",
            Category::Plants => "Plants",
            Category::Toys => "Toys",
            Category::Rooms => "Rooms",
            Category::Objects => "Objects",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pair_id: String,
    /// Resolved against the manifest's directory.
    pub flash_path: PathBuf,
    pub ambient_path: PathBuf,
    pub category: Category,
    pub split: Split,
}

/// Validated list of flash/ambient pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    missing: Vec<(String, PathBuf)>,
}

impl DatasetManifest {
    /// Builds a manifest from entries, checking id uniqueness and file
    /// existence.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.pair_id.as_str()) {
                return Err(Error::DuplicatePairId(e.pair_id.clone()));
            }
        }
        let missing = entries
            .iter()
            .flat_map(|e| [(&e.pair_id, &e.flash_path), (&e.pair_id, &e.ambient_path)])
            .filter(|(_, p)| !p.is_file())
            .map(|(id, p)| (id.clone(), p.clone()))
            .collect();
        Ok(DatasetManifest { entries, missing })
    }

    /// Reads a manifest file: one tab-separated record per line with the
    /// fields of [`MANIFEST_COLUMNS`]; blank lines and lines starting with
    /// `#` are ignored; relative paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(""));
        let manifest = Self::parse(&text, root).map_err(|e| match e {
            Error::Manifest { line, reason, .. } => Error::Manifest { path: path.to_path_buf(), line, reason },
            other => other,
        })?;
        let (train, test) = manifest.split_counts();
        log::info!("{}: {train} train / {test} test pairs", path.display());
        for (id, p) in &manifest.missing {
            log::warn!("{}: pair `{id}` references missing file {}", path.display(), p.display());
        }
        Ok(manifest)
    }

    /// Parses manifest text; `root` anchors relative paths.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut first_record = true;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if std::mem::take(&mut first_record) && fields == MANIFEST_COLUMNS {
                continue;
            }
            let err = |reason: String| Error::Manifest { path: PathBuf::new(), line: line_no, reason };
            let [pair_id, flash, ambient, category, split] = fields[..] else {
                return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
            };
            if pair_id.is_empty() || flash.is_empty() || ambient.is_empty() {
                return Err(err("empty pair id or path".into()));
            }
            entries.push(ManifestEntry {
                pair_id: pair_id.to_string(),
                flash_path: root.join(flash),
                ambient_path: root.join(ambient),
                category: category.parse().map_err(err)?,
                split: split.parse().map_err(err)?,
            });
        }
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }

    /// `(train, test)` pair counts.
    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.entries.iter().filter(|e| e.split == Split::Train).count();
        (train, self.entries.len() - train)
    }

    /// `(pair_id, path)` for every referenced file that did not exist at load.
    pub fn missing_files(&self) -> &[(String, PathBuf)] {
        &self.missing
    }

    /// Renders the manifest with paths relative to `root` where possible.
    pub fn to_text(&self, root: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/");
        let mut out = MANIFEST_COLUMNS.join("\t");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.pair_id,
                rel(&e.flash_path),
                rel(&e.ambient_path),
                e.category,
                e.split
            ));
        }
        out
    }
}
