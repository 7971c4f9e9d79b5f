use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-column affine map to zero mean and unit sample variance, fitted on
/// training rows and reused unchanged for held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Divisors actually applied; 1 for columns without spread.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Input("cannot fit a standardizer on zero rows".into()));
        }
        let n = x.rows() as f64;
        let mut means = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);

        let mut sq = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = sq
            .iter()
            .zip(&means)
            .map(|(s, m)| {
                let std = if x.rows() > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 };
                // rounding in the mean leaves a tiny spread on constant columns
                if std <= 1e-12 * m.abs().max(1.0) || !std.is_finite() {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        Ok(Standardizer { means, stds })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.expect_cols(self.width())?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.apply_row(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn unit_column() {
        let x = column(&[1.0, 2.0, 3.0]);
        let s = Standardizer::fit(&x).unwrap();
        let z = s.apply(&x).unwrap();
        assert_eq!(z.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let x = column(&[4.0, 4.0, 4.0]);
        let z = Standardizer::fit(&x).unwrap().apply(&x).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0, 0.0]);
        let x = column(&[0.1, 0.1, 0.1]);
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.stds, vec![1.0]);
    }

    #[test]
    fn held_out_rows_use_train_statistics() {
        let s = Standardizer::fit(&column(&[1.0, 2.0, 3.0])).unwrap();
        let z = s.apply(&column(&[4.0, 5.0])).unwrap();
        assert_eq!(z.data(), &[2.0, 3.0]);
    }

    #[test]
    fn width_mismatch() {
        let s = Standardizer::fit(&column(&[1.0, 2.0])).unwrap();
        let two = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(s.apply(&two), Err(Error::Shape { .. })));
        assert!(Standardizer::fit(&Matrix::zeros(0, 3)).is_err());
    }
}
