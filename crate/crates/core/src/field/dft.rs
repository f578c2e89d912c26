//! Unitary two-dimensional DFT on row-major complex grids.
//!
//! Both directions are scaled by `1/sqrt(H*W)` so that Parseval holds without
//! bookkeeping. Rows are transformed in place, the grid is transposed, the
//! former columns are transformed as rows, and the result is transposed back.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

/// Cached row/column plans for one grid shape and direction.
pub struct Dft2 {
    rows: usize,
    cols: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

impl Dft2 {
    pub fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize, direction: FftDirection) -> Self {
        let row_fft = planner.plan_fft(cols, direction);
        let col_fft = planner.plan_fft(rows, direction);
        let scratch_len = row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len());
        Self {
            rows,
            cols,
            row_fft,
            col_fft,
            scratch: vec![Complex64::default(); scratch_len],
            transposed: vec![Complex64::default(); rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized transform of a row-major `rows x cols` buffer, in place.
    pub fn process_unscaled(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.rows * self.cols);
        self.row_fft.process_with_scratch(data, &mut self.scratch);
        transpose::transpose(data, &mut self.transposed, self.cols, self.rows);
        self.col_fft
            .process_with_scratch(&mut self.transposed, &mut self.scratch);
        transpose::transpose(&self.transposed, data, self.rows, self.cols);
    }

    /// Unitary transform, in place.
    pub fn process(&mut self, data: &mut [Complex64]) {
        self.process_unscaled(data);
        let scale = 1.0 / ((self.rows * self.cols) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Forward and inverse plans for one grid shape.
pub struct Dft2Pair {
    pub forward: Dft2,
    pub inverse: Dft2,
}

impl Dft2Pair {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: Dft2::new(&mut planner, rows, cols, FftDirection::Forward),
            inverse: Dft2::new(&mut planner, rows, cols, FftDirection::Inverse),
        }
    }
}

pub(crate) fn transform(grid: &Array2<Complex64>, direction: FftDirection) -> Array2<Complex64> {
    let (rows, cols) = grid.dim();
    let mut planner = FftPlanner::new();
    let mut plan = Dft2::new(&mut planner, rows, cols, direction);
    let mut out = grid.as_standard_layout().into_owned();
    plan.process(out.as_slice_mut().expect("standard layout"));
    out
}

/// Signed DFT frequency index for bin `k` of an `n`-point transform
/// (`k` for the lower half, `k - n` above; the even-length Nyquist bin is negative).
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Spatial frequency (cycles per unit length) of bin `k` for sample spacing `pitch`.
pub fn frequency(k: usize, n: usize, pitch: f64) -> f64 {
    signed_index(k, n) as f64 / (n as f64 * pitch)
}
