//! Plain-text word vectors: one line per word, the word followed by its
//! space-separated components.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct PretrainedVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    /// Loads a vector file, optionally keeping only words accepted by
    /// `keep`. Every line must have the same dimension; when `expected_dim`
    /// is given it must match.
    pub fn load(path: &Path, expected_dim: Option<usize>, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let err = |line: usize, reason: String| Error::VectorFile {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut out = PretrainedVectors {
            dim: expected_dim.unwrap_or(0),
            vectors: HashMap::new(),
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|v| v.parse::<f64>().map_err(|e| err(i + 1, format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if out.dim == 0 {
                out.dim = values.len();
            }
            if values.len() != out.dim || values.is_empty() {
                return Err(err(i + 1, format!("expected {} values, found {}", out.dim, values.len())));
            }
            if keep(word) {
                out.vectors.insert(word.to_string(), values);
            }
        }
        Ok(out)
    }

    pub fn from_map(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if vectors.values().any(|v| v.len() != dim) {
            return Err(Error::Shape("vector dimension mismatch".into()));
        }
        Ok(PretrainedVectors { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn loads_and_filters() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "good 1.0 0.5 0.0").unwrap();
        writeln!(f, "great 0.9 0.6 0.1").unwrap();
        writeln!(f, "papaya -0.2 0.1 1.0").unwrap();
        writeln!(f, "unused 1 1 1").unwrap();
        let v = PretrainedVectors::load(f.path(), Some(3), |w| w != "unused").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("great").unwrap(), [0.9, 0.6, 0.1]);
        assert!(v.get("unused").is_none());
    }

    #[test]
    fn rejects_ragged_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 2 3").unwrap();
        writeln!(f, "b 1 2").unwrap();
        let err = PretrainedVectors::load(f.path(), None, |_| true).unwrap_err();
        assert!(matches!(err, Error::VectorFile { line: 2, .. }), "{err}");
        let err = PretrainedVectors::load(f.path(), Some(300), |_| true).unwrap_err();
        assert!(matches!(err, Error::VectorFile { line: 1, .. }));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
