use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit values.
///
/// Blocks are always formed along the innermost axis: the data is viewed as
/// `rows × cols` with `cols = shape.last()` and each row is chunked independently,
/// so the final block of a row may be short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Length of the innermost axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel().checked_div(self.cols()).unwrap_or(0)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().find(|v| !v.is_finite()) {
            Some(&v) => Err(Error::NonFinite(v)),
            None => Ok(()),
        }
    }

    pub fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            (self.sum_sq() / self.data.len() as f64).sqrt()
        }
    }
}

/// Iterates `(start, end)` element ranges of the blocks of a tensor whose innermost
/// axis has length `cols`, in storage order.
pub(crate) fn block_ranges(
    numel: usize,
    cols: usize,
    block: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let cols = cols.max(1);
    let rows = if numel == 0 { 0 } else { numel / cols };
    (0..rows).flat_map(move |r| {
        let row_start = r * cols;
        (0..cols.div_ceil(block)).map(move |b| {
            let s = row_start + b * block;
            (s, (s + block).min(row_start + cols))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_split_rows_independently() {
        let r: Vec<_> = block_ranges(10, 5, 2).collect();
        assert_eq!(r, vec![(0, 2), (2, 4), (4, 5), (5, 7), (7, 9), (9, 10)]);
    }

    #[test]
    fn shape_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().rows(), 2);
    }
}
