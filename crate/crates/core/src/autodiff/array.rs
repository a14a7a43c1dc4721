use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// Invariants enforced at construction: the shape product equals the value
/// count and every value is finite, so no NaN or infinity is ever admitted
/// into a computation graph through a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!(
                "array shape must have positive dimensions, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Dimension {
                context: "array construction",
                left: shape,
                right: vec![values.len()],
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "array entry {pos} ({})",
                values[pos]
            )));
        }
        Ok(DenseArray { shape, values })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        DenseArray::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        DenseArray::new(vec![n], values)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        DenseArray::new(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Number of rows when interpreted as a matrix ([n] counts as one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when interpreted as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        let err = DenseArray::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(DenseArray::vector(vec![1.0, f64::NAN]).is_err());
        assert!(DenseArray::vector(vec![f64::INFINITY]).is_err());
        assert!(DenseArray::vector(vec![1.0, -2.5]).is_ok());
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(DenseArray::new(vec![0, 3], vec![]).is_err());
        assert!(DenseArray::new(vec![], vec![]).is_err());
    }

    #[test]
    fn matrix_indexing() {
        let m = DenseArray::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3);
    }
}
