//! Dense kernels shared by the tape: GEMM and the im2col/col2im pair used by
//! both convolution directions.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Stored a is m x k (row stride k) or, when transposed, k x m (row stride m).
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized exactly for the strides computed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2D sliding window over a `[channels, h, w]` plane whose
/// output grid is `out_h x out_w`.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `input` (`[channels, h, w]`) into `cols` (`[channels*kh*kw, out_h*out_w]`).
pub fn im2col(input: &[f64], win: &Window, cols: &mut [f64]) {
    let ncols = win.col_cols();
    for c in 0..win.channels {
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (c * win.kh + ki) * win.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..win.out_h {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    let line = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    if iy < 0 || iy >= win.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let base = (c * win.h + iy as usize) * win.w;
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        *slot = if ix < 0 || ix >= win.w as isize {
                            0.0
                        } else {
                            input[base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `output`, accumulating.
pub fn col2im(cols: &[f64], win: &Window, output: &mut [f64]) {
    let ncols = win.col_cols();
    for c in 0..win.channels {
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (c * win.kh + ki) * win.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..win.out_h {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= win.h as isize {
                        continue;
                    }
                    let base = (c * win.h + iy as usize) * win.w;
                    for ox in 0..win.out_w {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        if ix >= 0 && ix < win.w as isize {
                            output[base + ix as usize] += src[oy * win.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
