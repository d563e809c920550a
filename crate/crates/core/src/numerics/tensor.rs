//! Dense row-major matrix of `f64`, the carrier for inputs, latents, logits,
//! and gradients throughout the crate.

use crate::error::{dim_mismatch, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    /// Build a tensor from row-major values. Fails if the length does not
    /// match `rows * cols` or any entry is non-finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(dim_mismatch(
                "Tensor2D::new",
                format!("{} values ({rows}x{cols})", rows * cols),
                values.len(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Tensor2D::new".into(),
            });
        }
        Ok(Tensor2D { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_mismatch("Tensor2D::from_nested", c, "ragged rows"));
        }
        Tensor2D::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row-wise concatenation `[self | other]` (same row count).
    pub fn concat_cols(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(dim_mismatch("concat_cols", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut values = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            values.extend_from_slice(self.row(r));
            values.extend_from_slice(other.row(r));
        }
        Ok(Tensor2D {
            rows: self.rows,
            cols,
            values,
        })
    }

    /// Stack `self` on top of `other` (same column count).
    pub fn vstack(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(dim_mismatch("vstack", self.cols, other.cols));
        }
        let mut values = Vec::with_capacity((self.rows + other.rows) * self.cols);
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(Tensor2D {
            rows: self.rows + other.rows,
            cols: self.cols,
            values,
        })
    }

    /// Copy of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor2D {
        assert!(start <= end && end <= self.rows, "row slice out of range");
        Tensor2D {
            rows: end - start,
            cols: self.cols,
            values: self.values[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copy of the rows listed in `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor2D {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Tensor2D {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self += other * scale` (same shape).
    pub fn add_scaled(&mut self, other: &Tensor2D, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(dim_mismatch(
                "add_scaled",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b * scale;
        }
        Ok(())
    }

    /// Column means over all rows.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for m in &mut means {
            *m *= inv;
        }
        means
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length_and_nonfinite() {
        assert!(Tensor2D::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor2D::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor2D::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn concat_and_stack_shapes() {
        let a = Tensor2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor2D::new(2, 1, vec![5.0, 6.0]).unwrap();
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.row(0), &[1.0, 2.0, 5.0]);
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);

        let d = Tensor2D::new(1, 2, vec![7.0, 8.0]).unwrap();
        let e = a.vstack(&d).unwrap();
        assert_eq!(e.rows(), 3);
        assert_eq!(e.row(2), &[7.0, 8.0]);
    }

    #[test]
    fn select_rows_copies_in_order() {
        let a = Tensor2D::new(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        let b = a.select_rows(&[2, 0, 1]);
        assert_eq!(b.values(), &[30.0, 10.0, 20.0]);
    }

    #[test]
    fn col_means_match_hand_computation() {
        let a = Tensor2D::new(2, 2, vec![1.0, 4.0, 3.0, 0.0]).unwrap();
        assert_eq!(a.col_means(), vec![2.0, 2.0]);
    }
}
