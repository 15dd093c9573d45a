use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub speaker: String,
    pub style: String,
    pub split: Split,
    /// Path as written in the manifest.
    pub feature_path: String,
}

/// Tab-separated `speaker, style, split, feature_path` records. Relative
/// feature paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 || f.iter().any(|s| s.is_empty()) {
                return Err(CoreError::Data(format!("manifest line {}: expected 4 tab-separated fields", n + 1)));
            }
            let split = Split::parse(f[2])
                .ok_or_else(|| CoreError::Data(format!("manifest line {}: unknown split `{}`", n + 1, f[2])))?;
            entries.push(ManifestEntry {
                speaker: f[0].to_string(),
                style: f[1].to_string(),
                split,
                feature_path: f[3].to_string(),
            });
        }
        if entries.is_empty() {
            return Err(CoreError::Data("manifest is empty".into()));
        }
        Ok(Self { entries, base_dir: base_dir.into() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CoreError::io(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}\t{}", e.speaker, e.style, e.split.as_str(), e.feature_path).unwrap();
        }
        out
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        let p = Path::new(&e.feature_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Distinct speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.speaker) {
                out.push(e.speaker.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_round_trip() {
        let text = "a\tx\ttrain\tf/1.dvc\nb\ty\tval\t/abs/2.dvc\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.to_text(), text);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/f/1.dvc"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/abs/2.dvc"));
        assert_eq!(m.speakers(), vec!["a", "b"]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Manifest::parse("", ".").is_err());
        assert!(Manifest::parse("a\tx\ttrain", ".").is_err());
        assert!(Manifest::parse("a\tx\tdev\tp", ".").is_err());
    }
}
