use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows `start..start + len`.
    pub fn rows_slice(&self, start: usize, len: usize) -> Mat {
        Mat::from_vec(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        )
    }

    pub fn vstack(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.cols, "vstack width");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Mat::from_vec(a.rows + b.rows, a.cols, data)
    }
}

/// Strided read-only view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn of(m: &'a Mat) -> Self {
        Self {
            data: &m.data,
            rows: m.rows,
            cols: m.cols,
            rs: m.cols as isize,
            cs: 1,
        }
    }

    /// Columns `c0..c0 + n` of a row-major matrix.
    pub fn cols_of(m: &'a Mat, c0: usize, n: usize) -> Self {
        Self {
            data: &m.data[c0.min(m.data.len())..],
            rows: m.rows,
            cols: n,
            rs: m.cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// Strided mutable destination for [`gemm`].
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
}

impl<'a> ViewMut<'a> {
    pub fn of(m: &'a mut Mat) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            rs: m.cols as isize,
            data: &mut m.data,
        }
    }

    pub fn cols_of(m: &'a mut Mat, c0: usize, n: usize) -> Self {
        Self {
            rows: m.rows,
            cols: n,
            rs: m.cols as isize,
            data: &mut m.data[c0..],
        }
    }
}

/// `C = alpha * A B + beta * C`.
pub(crate) fn gemm(alpha: f64, a: View, b: View, beta: f64, c: ViewMut) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for r in 0..c.rows {
            for j in 0..c.cols {
                c.data[r * c.rs as usize + j] *= beta;
            }
        }
        return;
    }
    // Bounds: the furthest element each view touches.
    let last = |v: &View| (v.rows - 1) as isize * v.rs + (v.cols - 1) as isize * v.cs;
    assert!((last(&a) as usize) < a.data.len() && (last(&b) as usize) < b.data.len());
    assert!(((c.rows - 1) * c.rs as usize + c.cols - 1) < c.data.len());
    // SAFETY: all index ranges were checked above and the slices do not alias.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr(),
            c.rs,
            1,
        );
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(1.0, View::of(a), View::of(b), 0.0, ViewMut::of(&mut c));
    c
}
