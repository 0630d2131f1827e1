//! Strided matrix products and convolution lowering.

/// A `rows x cols` matrix embedded in a slice with arbitrary strides.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `_ x cols` matrix starting at the slice origin.
    pub fn rm(data: &'a [f64], cols: usize) -> Self {
        Self { data, off: 0, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major `_ x cols` matrix.
    pub fn rm_t(data: &'a [f64], cols: usize) -> Self {
        Self { data, off: 0, rs: 1, cs: cols }
    }

    pub fn t(self) -> Self {
        Self { rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.off + (rows - 1) * self.rs + (cols - 1) * self.cs;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// Mutable destination of a product.
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn rm(data: &'a mut [f64], cols: usize) -> Self {
        Self { data, off: 0, rs: cols, cs: 1 }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let last = c.off + (m - 1) * c.rs + (n - 1) * c.cs;
    assert!(last < c.data.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = c.off + i * c.rs + j * c.cs;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm is bounded by the checks above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Geometry of a square-kernel, unpadded 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Lower one `[C, H, W]` image to a `[C*k*k, Ho*Wo]` column matrix.
pub(crate) fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let src_row = (c * g.height + oy * g.stride + ky) * g.width + kx;
                    for ox in 0..ow {
                        dst[oy * ow + ox] = img[src_row + ox * g.stride];
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto a `[C, H, W]` image gradient.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let dst_row = (c * g.height + oy * g.stride + ky) * g.width + kx;
                    for ox in 0..ow {
                        img[dst_row + ox * g.stride] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}
