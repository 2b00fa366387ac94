//! Minimal coordinate-format sparse matrix used to carry Jacobians,
//! Hessians and assembled KKT systems between modules.

/// Coordinate-format matrix. Duplicate entries are additive; `to_dense` and
/// the linear solver both sum them.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(rows: usize, cols: usize, cap: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.entries.push((row, col, value));
    }

    /// Dense copy with duplicates summed; intended for tests and small
    /// oracle computations only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols]; self.rows];
        for &(i, j, v) in &self.entries {
            dense[i][j] += v;
        }
        dense
    }

    /// y += A * x
    pub fn add_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
    }

    /// y += A^T * x
    pub fn add_mul_transpose_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for &(i, j, v) in &self.entries {
            y[j] += v * x[i];
        }
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
