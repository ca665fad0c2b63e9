use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-feature mean and (population) standard deviation over frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Welford accumulation per channel; std is floored at [`STD_FLOOR`].
    pub fn fit(d: &Array2<f64>) -> Self {
        let f = d.ncols();
        let mut mean = vec![0.0; f];
        let mut m2 = vec![0.0; f];
        for (k, row) in d.rows().into_iter().enumerate() {
            let count = (k + 1) as f64;
            for c in 0..f {
                let delta = row[c] - mean[c];
                mean[c] += delta / count;
                m2[c] += delta * (row[c] - mean[c]);
            }
        }
        let n = d.nrows().max(1) as f64;
        let std = m2.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    fn check(&self, d: &Array2<f64>) -> Result<()> {
        if d.ncols() != self.mean.len() {
            return Err(Error::shape(format!(
                "normalizer has {} features, data has {}",
                self.mean.len(),
                d.ncols()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, d: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(d)?;
        let mut out = d.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, d: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(d)?;
        let mut out = d.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        Ok(out)
    }
}
