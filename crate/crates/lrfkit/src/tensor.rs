//! Dense-tensor and token-grid substrate.
//!
//! Everything downstream works on `(t, b, n, d)` row-major buffers of f64.
//! Tokens live on a rectangular grid in raster order; the grid supplies the
//! Manhattan metric and the dilated neighbor map used by the local terms.

use crate::error::{Error, Result};

/// Shape over (time, batch, tokens, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub t: usize,
    pub b: usize,
    pub n: usize,
    pub d: usize,
}

impl Shape4 {
    pub fn new(t: usize, b: usize, n: usize, d: usize) -> Result<Self> {
        if t == 0 || b == 0 || n == 0 || d == 0 {
            return Err(Error::InvalidParam(format!(
                "shape components must be positive, got ({t},{b},{n},{d})"
            )));
        }
        Ok(Shape4 { t, b, n, d })
    }

    pub fn len(&self) -> usize {
        self.t * self.b * self.n * self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat offset of the (t, b) slice; each slice holds n*d values.
    pub fn slice_offset(&self, t: usize, b: usize) -> usize {
        (t * self.b + b) * self.n * self.d
    }
}

/// Row-major real tensor over (t, b, n, d).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Shape4,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Shape4) -> Self {
        DenseTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("tensor contains non-finite values".into()));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn slice(&self, t: usize, b: usize) -> &[f64] {
        let off = self.shape.slice_offset(t, b);
        &self.data[off..off + self.shape.n * self.shape.d]
    }

    pub fn slice_mut(&mut self, t: usize, b: usize) -> &mut [f64] {
        let off = self.shape.slice_offset(t, b);
        let len = self.shape.n * self.shape.d;
        &mut self.data[off..off + len]
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("tensor contains non-finite values".into()))
        }
    }
}

/// Binary activation tensor; every element is 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    pub shape: Shape4,
    pub data: Vec<f64>,
}

impl SpikeTensor {
    pub fn zeros(shape: Shape4) -> Self {
        SpikeTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if !data.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Domain("spike tensor values must be 0 or 1".into()));
        }
        Ok(SpikeTensor { shape, data })
    }

    /// Heaviside thresholding of a dense tensor; Θ(0) = 1.
    pub fn threshold(x: &DenseTensor, level: f64) -> Self {
        SpikeTensor {
            shape: x.shape,
            data: x
                .data
                .iter()
                .map(|&v| if v >= level { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn firing_rate(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn slice(&self, t: usize, b: usize) -> &[f64] {
        let off = self.shape.slice_offset(t, b);
        &self.data[off..off + self.shape.n * self.shape.d]
    }

    pub fn as_dense(&self) -> DenseTensor {
        DenseTensor {
            shape: self.shape,
            data: self.data.clone(),
        }
    }
}

/// Raster-order mapping between token indices and 2-D grid positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParam("grid dimensions must be positive".into()));
        }
        Ok(TokenGrid { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token_to_grid(&self, n: usize) -> Result<(usize, usize)> {
        if n >= self.len() {
            return Err(Error::IndexOutOfRange(format!(
                "token {n} on {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok((n / self.cols, n % self.cols))
    }

    pub fn grid_to_token(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::IndexOutOfRange(format!(
                "position ({row},{col}) on {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(row * self.cols + col)
    }

    /// Manhattan distance between two tokens.
    pub fn manhattan_distance(&self, i: usize, j: usize) -> Result<usize> {
        let (ri, ci) = self.token_to_grid(i)?;
        let (rj, cj) = self.token_to_grid(j)?;
        Ok(ri.abs_diff(rj) + ci.abs_diff(cj))
    }

    /// Token at (row+di, col+dj), or None when the offset leaves the grid.
    /// Callers treat None as a zero contribution (zero padding).
    pub fn neighbor_index(&self, n: usize, di: isize, dj: isize) -> Option<usize> {
        let (row, col) = self.token_to_grid(n).ok()?;
        let r = row as isize + di;
        let c = col as isize + dj;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            None
        } else {
            Some(r as usize * self.cols + c as usize)
        }
    }
}

// small shared linear algebra helpers on flat row-major buffers

/// C (m×p) = A (m×n) · B (n×p), accumulated into a fresh buffer.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * p);
    let mut c = vec![0.0; m * p];
    for i in 0..m {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            let crow = &mut c[i * p..(i + 1) * p];
            for j in 0..p {
                crow[j] += aik * brow[j];
            }
        }
    }
    c
}

/// C (n×p) = Aᵀ (n×m as A m×n) · B (m×p).
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * p);
    let mut c = vec![0.0; n * p];
    for k in 0..m {
        for i in 0..n {
            let aki = a[k * n + i];
            if aki == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            let crow = &mut c[i * p..(i + 1) * p];
            for j in 0..p {
                crow[j] += aki * brow[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn manhattan_examples() {
        let g = TokenGrid::new(4, 4).unwrap();
        assert_eq!(g.manhattan_distance(0, 0).unwrap(), 0);
        assert_eq!(g.manhattan_distance(0, 5).unwrap(), 2);
        let line = TokenGrid::new(1, 7).unwrap();
        assert_eq!(line.manhattan_distance(2, 6).unwrap(), 4);
    }

    #[test]
    fn manhattan_out_of_range() {
        let g = TokenGrid::new(2, 2).unwrap();
        assert!(g.manhattan_distance(0, 4).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let g = TokenGrid::new(3, 3).unwrap();
        assert_eq!(g.neighbor_index(4, 0, 0), Some(4));
        assert_eq!(g.neighbor_index(0, -1, 0), None);
        let g5 = TokenGrid::new(5, 5).unwrap();
        // token 12 sits at (2,2); row 2+3 = 5 is out of bounds
        assert_eq!(g5.neighbor_index(12, 3, -3), None);
    }

    #[test]
    fn triangle_inequality_exhaustive() {
        let g = TokenGrid::new(8, 8).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let dij = g.manhattan_distance(i, j).unwrap();
                assert_eq!(dij, g.manhattan_distance(j, i).unwrap());
                assert_eq!(dij == 0, i == j);
                for k in 0..64 {
                    let dik = g.manhattan_distance(i, k).unwrap();
                    let dkj = g.manhattan_distance(k, j).unwrap();
                    assert!(dij <= dik + dkj);
                }
            }
        }
    }

    #[test]
    fn spike_tensor_rejects_non_binary() {
        let shape = Shape4::new(1, 1, 2, 2).unwrap();
        assert!(SpikeTensor::from_vec(shape, vec![0.0, 1.0, 0.5, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn raster_mapping_bijective(rows in 1usize..10, cols in 1usize..10) {
            let g = TokenGrid::new(rows, cols).unwrap();
            for n in 0..g.len() {
                let (r, c) = g.token_to_grid(n).unwrap();
                prop_assert_eq!(g.grid_to_token(r, c).unwrap(), n);
            }
        }

        #[test]
        fn thresholding_is_binary(vals in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let shape = Shape4::new(1, 1, 4, 2).unwrap();
            let x = DenseTensor::from_vec(shape, vals).unwrap();
            let s = SpikeTensor::threshold(&x, 0.5);
            prop_assert!(s.data.iter().all(|&v| v == 0.0 || v == 1.0));
            let rate = s.firing_rate();
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }
}
