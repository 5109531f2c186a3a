//! `EFV1` feature files.
//!
//! Layout (little-endian): `"EFV1"`, version u8 (= 1), rows u32, dim u32,
//! classes u16, label width u8 (= 2), dtype u8 (= 0, f32), then `rows * dim`
//! f32 features row by row, then `rows` u16 labels.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EFV1";
const VERSION: u8 = 1;
const LABEL_WIDTH: u8 = 2;
const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 2 + 1 + 1;

/// Extracted feature vectors with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: Array2<f32>,
    pub labels: Vec<u16>,
    pub classes: u16,
}

impl FeatureFile {
    pub fn new(features: Array2<f32>, labels: Vec<u16>, classes: u16) -> Result<Self> {
        let f = Self {
            features,
            labels,
            classes,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.rows() == 0 || self.dim() == 0 {
            return Err(Error::format("feature file has no rows or no features"));
        }
        if self.labels.len() != self.rows() {
            return Err(Error::format(format!("{} labels for {} rows", self.labels.len(), self.rows())));
        }
        if self.classes < 2 {
            return Err(Error::format(format!("class count {} below 2", self.classes)));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::format(format!("label {l} not below class count {}", self.classes)));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("non-finite feature value"));
        }
        if u32::try_from(self.rows()).is_err() || u32::try_from(self.dim()).is_err() {
            return Err(Error::format("feature file too large"));
        }
        Ok(())
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows() * (self.dim() * 4 + 2));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.classes.to_le_bytes());
        out.push(LABEL_WIDTH);
        out.push(DTYPE_F32);
        for v in self.features.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("bad magic, expected EFV1"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(format!("unsupported version {}", bytes[4])));
        }
        let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let classes = u16::from_le_bytes(bytes[13..15].try_into().unwrap());
        if bytes[15] != LABEL_WIDTH {
            return Err(Error::format(format!("label width {} unsupported", bytes[15])));
        }
        if bytes[16] != DTYPE_F32 {
            return Err(Error::format(format!("dtype {} unsupported", bytes[16])));
        }
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(rows * 2))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format("header sizes overflow"))?;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "length {} does not match {rows} rows of {dim} features ({expected} bytes)",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let (feat, lab) = body.split_at(rows * dim * 4);
        let values: Vec<f32> = feat
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = lab
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let features = Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::format(e.to_string()))?;
        Self::new(features, labels, classes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Parses `label,f1,...,fd` lines; blank lines and lines starting with `#` are skipped.
    pub fn from_csv(text: &str, classes: Option<u16>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let bad = |what: &str| Error::format(format!("line {}: {what}", n + 1));
            let label: u16 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("invalid label"))?;
            let row = fields
                .map(|f| f.parse::<f32>().map_err(|_| bad("invalid feature")))
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => return Err(bad("inconsistent feature count")),
                _ => {}
            }
            labels.push(label);
            values.extend(row);
        }
        let dim = dim.ok_or_else(|| Error::format("no data rows"))?;
        let classes = match classes {
            Some(c) => c,
            None => labels.iter().max().map_or(0, |m| m + 1).max(2),
        };
        let features =
            Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| Error::format(e.to_string()))?;
        Self::new(features, labels, classes)
    }
}
