//! Inner loops shared by the dense ops. Written so the compiler can vectorize
//! them: contiguous slices and independent partial sums.

use crate::real::Real;

const LANES: usize = 16;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    total + tail
}

/// Read-only strided matrix view: element `(i, j)` is `data[i*rs + j*cs]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major `rows × cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
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

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c ← alpha·a·b + beta·c` with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm<T: Real>(alpha: T, a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len(), "gemm operand bounds");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: operand spans were checked above, `c` holds m×n elements, and
    // the exclusive borrow of `c` rules out aliasing with `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            (a.data.as_ptr(), a.rs as isize, a.cs as isize),
            (b.data.as_ptr(), b.rs as isize, b.cs as isize),
            beta,
            (c.as_mut_ptr(), n as isize, 1),
        );
    }
}

/// Geometry of one 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold one image `[C, H, W]` into patch rows: `cols[s, c*k*k + ky*k + kx]`
/// where `s` indexes output positions. Out-of-bounds taps read as zero.
pub(crate) fn im2row<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let k = g.kernel;
    let plen = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * plen..][..plen];
            let y0 = (oy * g.stride) as isize - g.padding as isize;
            let x0 = (ox * g.stride) as isize - g.padding as isize;
            for c in 0..g.channels {
                let plane = &img[c * g.height * g.width..][..g.height * g.width];
                for ky in 0..k {
                    let y = y0 + ky as isize;
                    let dst = &mut row[c * k * k + ky * k..][..k];
                    if y < 0 || y >= g.height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..][..g.width];
                    for (kx, d) in dst.iter_mut().enumerate() {
                        let x = x0 + kx as isize;
                        *d = if x < 0 || x >= g.width as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2row`]: scatter-add patch rows back into an image gradient.
pub(crate) fn row2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let k = g.kernel;
    let plen = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * plen..][..plen];
            let y0 = (oy * g.stride) as isize - g.padding as isize;
            let x0 = (ox * g.stride) as isize - g.padding as isize;
            for c in 0..g.channels {
                for ky in 0..k {
                    let y = y0 + ky as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let base = c * g.height * g.width + y as usize * g.width;
                    for kx in 0..k {
                        let x = x0 + kx as isize;
                        if x >= 0 && x < g.width as isize {
                            img[base + x as usize] += row[c * k * k + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}
