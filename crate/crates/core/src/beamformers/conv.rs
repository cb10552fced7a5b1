//! Full 2D self-convolution of complex matrices.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::scalar::{Cx, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMethod {
    Direct,
    Fourier,
}

/// Smallest `n' >= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// `r * r` with output size `(2R-1) x (2C-1)`.
pub fn conv2d_self<T: Real>(r: &Array2<Cx<T>>, method: ConvMethod) -> Array2<Cx<T>> {
    let (rows, cols) = r.dim();
    if rows == 0 || cols == 0 {
        return Array2::zeros((0, 0));
    }
    match method {
        ConvMethod::Direct => direct(r),
        ConvMethod::Fourier => {
            let mut conv = SelfConvolver::new(rows, cols);
            let mut out = Array2::zeros((2 * rows - 1, 2 * cols - 1));
            conv.convolve(r.as_slice().expect("standard layout"), out.as_slice_mut().expect("standard layout"));
            out
        }
    }
}

fn direct<T: Real>(r: &Array2<Cx<T>>) -> Array2<Cx<T>> {
    let (rows, cols) = r.dim();
    let mut out = Array2::<Cx<T>>::zeros((2 * rows - 1, 2 * cols - 1));
    for ((i, j), &a) in r.indexed_iter() {
        if a.re == T::zero() && a.im == T::zero() {
            continue;
        }
        for ((k, l), &b) in r.indexed_iter() {
            out[[i + k, j + l]] = out[[i + k, j + l]] + a * b;
        }
    }
    out
}

/// Planned zero-padded FFT self-convolution for a fixed input shape.
///
/// Holds its own scratch buffers, so one instance per worker thread.
pub struct SelfConvolver<T: Real> {
    rows: usize,
    cols: usize,
    pad_rows: usize,
    pad_cols: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
    buf: Vec<Cx<T>>,
    column: Vec<Cx<T>>,
    scratch: Vec<Cx<T>>,
}

impl<T: Real> Clone for SelfConvolver<T> {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            pad_rows: self.pad_rows,
            pad_cols: self.pad_cols,
            row_fwd: Arc::clone(&self.row_fwd),
            row_inv: Arc::clone(&self.row_inv),
            col_fwd: Arc::clone(&self.col_fwd),
            col_inv: Arc::clone(&self.col_inv),
            buf: self.buf.clone(),
            column: self.column.clone(),
            scratch: self.scratch.clone(),
        }
    }
}

impl<T: Real> SelfConvolver<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "self-convolution of an empty matrix");
        let (pad_rows, pad_cols) = (fast_len(2 * rows - 1), fast_len(2 * cols - 1));
        let mut planner = FftPlanner::<T>::new();
        let row_fwd = planner.plan_fft_forward(pad_cols);
        let row_inv = planner.plan_fft_inverse(pad_cols);
        let col_fwd = planner.plan_fft_forward(pad_rows);
        let col_inv = planner.plan_fft_inverse(pad_rows);
        let scratch_len =
            [&row_fwd, &row_inv, &col_fwd, &col_inv].iter().map(|f| f.get_inplace_scratch_len()).max().unwrap_or(0);
        let zero = Cx::new(T::zero(), T::zero());
        Self {
            rows,
            cols,
            pad_rows,
            pad_cols,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            buf: vec![zero; pad_rows * pad_cols],
            column: vec![zero; pad_rows],
            scratch: vec![zero; scratch_len],
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (2 * self.rows - 1, 2 * self.cols - 1)
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        (self.pad_rows, self.pad_cols)
    }

    fn transform_columns(&mut self, inverse: bool) {
        let fft = if inverse { &self.col_inv } else { &self.col_fwd };
        for j in 0..self.pad_cols {
            for i in 0..self.pad_rows {
                self.column[i] = self.buf[i * self.pad_cols + j];
            }
            fft.process_with_scratch(&mut self.column, &mut self.scratch);
            for i in 0..self.pad_rows {
                self.buf[i * self.pad_cols + j] = self.column[i];
            }
        }
    }

    /// Writes the full self-convolution of the row-major `input`
    /// (`rows x cols`) into `output` (`(2 rows - 1) x (2 cols - 1)`).
    pub fn convolve(&mut self, input: &[Cx<T>], output: &mut [Cx<T>]) {
        let (out_rows, out_cols) = self.output_shape();
        assert_eq!(input.len(), self.rows * self.cols);
        assert_eq!(output.len(), out_rows * out_cols);
        let zero = Cx::new(T::zero(), T::zero());
        self.buf.fill(zero);
        for i in 0..self.rows {
            self.buf[i * self.pad_cols..i * self.pad_cols + self.cols]
                .copy_from_slice(&input[i * self.cols..(i + 1) * self.cols]);
        }
        // Rows past `rows` are zero and stay zero under the row transform.
        for i in 0..self.rows {
            self.row_fwd
                .process_with_scratch(&mut self.buf[i * self.pad_cols..(i + 1) * self.pad_cols], &mut self.scratch);
        }
        self.transform_columns(false);
        for v in &mut self.buf {
            *v = *v * *v;
        }
        self.transform_columns(true);
        for i in 0..out_rows {
            self.row_inv
                .process_with_scratch(&mut self.buf[i * self.pad_cols..(i + 1) * self.pad_cols], &mut self.scratch);
        }
        let scale = T::one() / T::of((self.pad_rows * self.pad_cols) as f64);
        for i in 0..out_rows {
            for j in 0..out_cols {
                output[i * out_cols + j] = self.buf[i * self.pad_cols + j] * scale;
            }
        }
    }
}
