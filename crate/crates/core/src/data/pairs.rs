use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One contrastive training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub query: String,
    pub document: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_negatives: Option<Vec<String>>,
}

impl TextPair {
    pub fn new(
        query: impl Into<String>,
        document: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Self {
            query: query.into(),
            document: document.into(),
            source: source.into(),
            hard_negatives: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() || self.document.trim().is_empty() {
            return Err(Error::InvalidArgument(
                "query and document must be non-empty".into(),
            ));
        }
        if let Some(negs) = &self.hard_negatives {
            if negs.iter().any(|n| n == &self.document) {
                return Err(Error::InvalidArgument(
                    "hard negatives contain the positive document".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn negatives(&self) -> &[String] {
        self.hard_negatives.as_deref().unwrap_or(&[])
    }
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line =
            serde_json::to_string(item).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a pair file.
pub fn read_pairs(path: &Path) -> Result<Vec<TextPair>> {
    let pairs: Vec<TextPair> = read_jsonl(path)?;
    for (i, p) in pairs.iter().enumerate() {
        p.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
    }
    Ok(pairs)
}

/// Per-source keep/discard counts written next to filtered pair files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub sources: BTreeMap<String, SourceCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub kept: usize,
    pub discarded: usize,
}

impl FilterStats {
    pub fn from_decisions(pairs: &[TextPair], keep: &[bool]) -> Self {
        let mut stats = Self::default();
        for (p, &k) in pairs.iter().zip(keep) {
            let c = stats.sources.entry(p.source.clone()).or_default();
            if k {
                c.kept += 1;
            } else {
                c.discarded += 1;
            }
        }
        stats
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Groups pairs by their source tag.
pub fn by_source(pairs: Vec<TextPair>) -> BTreeMap<String, Vec<TextPair>> {
    let mut map: BTreeMap<String, Vec<TextPair>> = BTreeMap::new();
    for p in pairs {
        map.entry(p.source.clone()).or_default().push(p);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_format() {
        let mut p = TextPair::new("q", "d", "src");
        let line = serde_json::to_string(&p).unwrap();
        assert_eq!(line, r#"{"query":"q","document":"d","source":"src"}"#);
        p.hard_negatives = Some(vec!["n".into()]);
        let back: TextPair = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn validation() {
        assert!(TextPair::new("", "d", "s").validate().is_err());
        let mut p = TextPair::new("q", "d", "s");
        p.hard_negatives = Some(vec!["d".into()]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn file_round_trip_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = vec![TextPair::new("a", "b", "x"), TextPair::new("c", "d", "y")];
        write_jsonl(&path, &pairs).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), pairs);
        std::fs::write(&path, "{\"query\":\"a\"}\n").unwrap();
        assert!(matches!(
            read_pairs(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn stats_count_per_source() {
        let pairs = vec![
            TextPair::new("a", "b", "x"),
            TextPair::new("c", "d", "x"),
            TextPair::new("e", "f", "y"),
        ];
        let s = FilterStats::from_decisions(&pairs, &[true, false, true]);
        assert_eq!(
            s.sources["x"],
            SourceCounts {
                kept: 1,
                discarded: 1
            }
        );
        assert_eq!(
            s.sources["y"],
            SourceCounts {
                kept: 1,
                discarded: 0
            }
        );
    }
}
