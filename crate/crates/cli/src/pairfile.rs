//! JSON file format for scatter pairs: row-major nested arrays.
//!
//! ```json
//! {"b": [[..], ..], "w": [[..], ..], "s_pooled": [[..], ..], "counts": [..], "source": "theoretical"}
//! ```
//! `s_pooled` defaults to `w`, `counts` to empty.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tracefda::{ScatterPair, ScatterSource, SymMatrix};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
pub struct PairFile {
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_pooled: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub counts: Vec<usize>,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    "theoretical".into()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>]) -> CliResult<SymMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::validation(format!(
            "{name} must be a non-empty square array"
        )));
    }
    Ok(SymMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))?)
}

fn source_name(s: ScatterSource) -> &'static str {
    match s {
        ScatterSource::Classical => "classical",
        ScatterSource::Robust => "robust",
        ScatterSource::Theoretical => "theoretical",
        ScatterSource::ContaminatedTheoretical => "contaminated-theoretical",
    }
}

impl PairFile {
    pub fn from_pair(s: &ScatterPair) -> Self {
        PairFile {
            b: to_rows(s.b.as_matrix()),
            w: to_rows(s.w.as_matrix()),
            s_pooled: Some(to_rows(s.s_pooled.as_matrix())),
            counts: s.counts.clone(),
            source: source_name(s.source).into(),
        }
    }

    pub fn into_pair(self) -> CliResult<ScatterPair> {
        let b = from_rows("b", &self.b)?;
        let w = from_rows("w", &self.w)?;
        if b.dim() != w.dim() {
            return Err(CliError::validation("b and w have different sizes"));
        }
        let s_pooled = match &self.s_pooled {
            Some(s) => from_rows("s_pooled", s)?,
            None => w.clone(),
        };
        let source = match self.source.as_str() {
            "classical" => ScatterSource::Classical,
            "robust" => ScatterSource::Robust,
            "theoretical" => ScatterSource::Theoretical,
            "contaminated-theoretical" => ScatterSource::ContaminatedTheoretical,
            other => return Err(CliError::validation(format!("unknown source {other:?}"))),
        };
        Ok(ScatterPair {
            b,
            w,
            s_pooled,
            counts: self.counts,
            source,
        })
    }

    pub fn read(path: &std::path::Path) -> CliResult<ScatterPair> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: PairFile = serde_json::from_str(&text)?;
        file.into_pair()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = ScatterPair {
            b: SymMatrix::from_diagonal(&[2.0, 4.0]),
            w: SymMatrix::from_diagonal(&[1.0, 2.0]),
            s_pooled: SymMatrix::from_diagonal(&[1.5, 2.5]),
            counts: vec![3, 4],
            source: ScatterSource::Classical,
        };
        let text = serde_json::to_string(&PairFile::from_pair(&s)).unwrap();
        let back: PairFile = serde_json::from_str(&text).unwrap();
        let back = back.into_pair().unwrap();
        assert_eq!(back.b, s.b);
        assert_eq!(back.s_pooled, s.s_pooled);
        assert_eq!(back.counts, s.counts);
    }

    #[test]
    fn asymmetric_b_is_rejected() {
        let f: PairFile =
            serde_json::from_str(r#"{"b": [[1, 2], [0, 1]], "w": [[1, 0], [0, 1]]}"#).unwrap();
        assert!(f.into_pair().is_err());
    }
}
