//! Dataset manifests: one `id<TAB>image<TAB>mask` line per sample, `#`
//! comments, and an optional `# split: train|test` directive.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub split: Option<Split>,
    pub entries: Vec<Entry>,
}

impl Manifest {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let lineno = i + 1;
            if let Some(comment) = line.trim_start().strip_prefix('#') {
                if let Some(split) = comment.trim().strip_prefix("split:") {
                    m.split = Some(
                        split
                            .trim()
                            .parse()
                            .map_err(|e: Error| Error::data(format!("manifest line {lineno}: {e}")))?,
                    );
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::data(format!(
                    "manifest line {lineno}: expected id<TAB>image<TAB>mask"
                )));
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::data(format!(
                    "manifest line {lineno}: duplicate id {:?}",
                    fields[0]
                )));
            }
            m.entries.push(Entry {
                id: fields[0].to_string(),
                image: base.join(fields[1]),
                mask: base.join(fields[2]),
            });
        }
        Ok(m)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base).map_err(|e| e.in_file(path))?;
        for e in &m.entries {
            for p in [&e.image, &e.mask] {
                if !p.is_file() {
                    return Err(Error::data(format!(
                        "{}: {} does not exist",
                        path.display(),
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Paths are written relative to `base` when possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        if let Some(s) = self.split {
            out.push_str(&format!("# split: {s}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, rel(&e.image), rel(&e.mask)));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
