use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest L2 norm of a standardized row before the bias column is appended.
pub const MAX_ROW_NORM: f64 = 4.0;

/// Per-feature statistics from the training split, kept by the data owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max_row_norm: f64,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidParameter("cannot standardize zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
            max_row_norm: MAX_ROW_NORM,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes, caps row norms and appends a constant 1 column.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} features, statistics cover {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut z = (&row - &mean) / &std;
            let norm = z.dot(&z).sqrt();
            if norm > self.max_row_norm {
                z *= self.max_row_norm / norm;
            }
            out.row_mut(i).slice_mut(ndarray::s![..x.ncols()]).assign(&z);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("statistics serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let st: Self = serde_json::from_str(s).map_err(|e| Error::format(format!("statistics: {e}")))?;
        if st.mean.len() != st.std.len() || st.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::format("inconsistent statistics"));
        }
        Ok(st)
    }
}
