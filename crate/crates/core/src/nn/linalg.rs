//! Strided matrix views over `matrixmultiply`'s GEMM.

use crate::par;

#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + (cols - 1) * cs < data.len(), "view out of bounds");
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
}

impl<'a> MatMut<'a> {
    /// Row-major view with row stride `rs` (unit column stride).
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize, rs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + cols <= data.len(), "view out of bounds");
        }
        Self {
            data,
            rows,
            cols,
            rs,
        }
    }

    pub fn row_major(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols)
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    fn get(&self) -> *mut f64 {
        self.0
    }
}

const COL_BLOCK: usize = 2048;

/// `c = alpha * a * b + beta * c`.
///
/// Large products are split into fixed column blocks of `c`, so the result
/// does not depend on how many threads run.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c.data[i * c.rs..i * c.rs + n] {
                *v *= beta;
            }
        }
        return;
    }
    let c_ptr = SendPtr(c.data.as_mut_ptr());
    let rsc = c.rs;
    let run = |j0: usize, j1: usize| {
        // SAFETY: the views were bounds-checked on construction, and distinct
        // column blocks of `c` never alias.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                j1 - j0,
                alpha,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr().add(j0 * b.cs),
                b.rs as isize,
                b.cs as isize,
                beta,
                c_ptr.get().add(j0),
                rsc as isize,
                1,
            );
        }
    };
    let blocks = n.div_ceil(COL_BLOCK);
    if blocks <= 1 || m * k * n < 1 << 20 {
        run(0, n);
    } else {
        par::map_range(blocks, |bi| {
            let j0 = bi * COL_BLOCK;
            run(j0, (j0 + COL_BLOCK).min(n));
        });
    }
}

/// Row-major product helper returning a fresh buffer.
pub fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm(1.0, a, b, 0.0, MatMut::row_major(&mut out, a.rows, b.cols));
    out
}
