//! Raw slice kernels behind the graph ops.

use crate::real::Real;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "kernel larger than padded input");
    (input + 2 * pad - kernel) / stride + 1
}

/// `c (m×n) = op(a) · op(b)` (+ `c` when `accumulate`), where `op` optionally
/// transposes a row-major operand. `a` is stored as `m×k` (or `k×m` when
/// `trans_a`), `b` as `k×n` (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if !accumulate {
        // beta = 0 must not propagate NaN from uninitialised output
        c[..m * n].iter_mut().for_each(|v| *v = T::zero());
    }
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], wshape: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be rank 4, got {x:?}");
        assert_eq!(wshape.len(), 4, "conv2d weight must be rank 4");
        assert_eq!(x[1], wshape[1], "conv2d channel mismatch: input {x:?}, weight {wshape:?}");
        assert_eq!(wshape[2], wshape[3], "only square kernels");
        let k = wshape[2];
        Self {
            n: x[0],
            ci: x[1],
            h: x[2],
            w: x[3],
            co: wshape[0],
            k,
            stride,
            pad,
            ho: conv_out_size(x[2], k, stride, pad),
            wo: conv_out_size(x[3], k, stride, pad),
        }
    }

    fn patch(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Output positions `lo..hi` whose tap `kx` lands inside an input row of `len`.
    fn valid_out(&self, kx: usize, len: usize, out: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if len + self.pad > kx { ((len + self.pad - kx - 1) / self.stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds `x` into a `(ci·k·k) × (n·ho·wo)` column matrix.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let (lo, hi) = g.valid_out(kx, g.w, g.wo);
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let src = &x[(b * g.ci + c) * g.h * g.w..(b * g.ci + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[b * hw_out..(b + 1) * hw_out];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize || lo >= hi {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        let ix0 = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow[lo..hi].copy_from_slice(&srow[ix0..ix0 + hi - lo]);
                        } else {
                            for (d, s) in drow[lo..hi].iter_mut().zip(srow[ix0..].iter().step_by(g.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `dx` (accumulating).
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let (lo, hi) = g.valid_out(kx, g.w, g.wo);
                if lo >= hi {
                    continue;
                }
                let ix0 = lo * g.stride + kx - g.pad;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let dst = &mut dx[(b * g.ci + c) * g.h * g.w..(b * g.ci + c + 1) * g.h * g.w];
                    let src = &src_row[b * hw_out..(b + 1) * hw_out];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                        for (d, s) in drow[ix0..].iter_mut().step_by(g.stride).zip(srow) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let hw_out = g.ho * g.wo;
    let ncols = g.cols();
    let mut tmp = vec![T::zero(); g.co * ncols];
    if g.k == 1 && g.stride == 1 && g.pad == 0 {
        // 1×1: the input already is the column matrix, one batch entry at a time
        for b in 0..g.n {
            let xb = &x[b * g.ci * hw_out..(b + 1) * g.ci * hw_out];
            T::gemm(
                g.co,
                g.ci,
                hw_out,
                T::one(),
                w,
                g.ci as isize,
                1,
                xb,
                hw_out as isize,
                1,
                T::zero(),
                &mut tmp[b * hw_out..],
                ncols as isize,
                1,
            );
        }
    } else {
        let mut cols = vec![T::zero(); g.patch() * ncols];
        im2col(g, x, &mut cols);
        matmul(w, false, &cols, false, &mut tmp, g.co, g.patch(), ncols, false);
    }
    let mut out = vec![T::zero(); g.n * g.co * hw_out];
    for co in 0..g.co {
        let bv = bias.map_or(T::zero(), |b| b[co]);
        for b in 0..g.n {
            let src = &tmp[co * ncols + b * hw_out..co * ncols + (b + 1) * hw_out];
            let dst = &mut out[(b * g.co + co) * hw_out..(b * g.co + co + 1) * hw_out];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped when not needed.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw_out = g.ho * g.wo;
    let ncols = g.cols();
    // dy laid out as (co, n·hw)
    let mut dyt = vec![T::zero(); g.co * ncols];
    let mut db = vec![T::zero(); g.co];
    for b in 0..g.n {
        for co in 0..g.co {
            let src = &dy[(b * g.co + co) * hw_out..(b * g.co + co + 1) * hw_out];
            dyt[co * ncols + b * hw_out..co * ncols + (b + 1) * hw_out].copy_from_slice(src);
            db[co] += src.iter().copied().sum::<T>();
        }
    }
    let patch = g.patch();
    let mut dw = vec![T::zero(); g.co * patch];
    let pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
    if pointwise {
        for b in 0..g.n {
            let xb = &x[b * g.ci * hw_out..(b + 1) * g.ci * hw_out];
            // dw += dy_b · x_bᵀ
            T::gemm(
                g.co,
                hw_out,
                g.ci,
                T::one(),
                &dyt[b * hw_out..],
                ncols as isize,
                1,
                xb,
                1,
                hw_out as isize,
                T::one(),
                &mut dw,
                g.ci as isize,
                1,
            );
        }
        let dx = need_dx.then(|| {
            let mut dx = vec![T::zero(); x.len()];
            for b in 0..g.n {
                T::gemm(
                    g.ci,
                    g.co,
                    hw_out,
                    T::one(),
                    w,
                    1,
                    g.ci as isize,
                    &dyt[b * hw_out..],
                    ncols as isize,
                    1,
                    T::zero(),
                    &mut dx[b * g.ci * hw_out..],
                    hw_out as isize,
                    1,
                );
            }
            dx
        });
        return (dx, dw, db);
    }
    let mut cols = vec![T::zero(); patch * ncols];
    im2col(g, x, &mut cols);
    matmul(&dyt, false, &cols, true, &mut dw, g.co, ncols, patch, false);
    let dx = need_dx.then(|| {
        matmul(w, true, &dyt, false, &mut cols, patch, g.co, ncols, false);
        let mut dx = vec![T::zero(); x.len()];
        col2im(g, &cols, &mut dx);
        dx
    });
    (dx, dw, db)
}

pub(crate) fn avg_pool2_forward<T: Real>(shape: &[usize], x: &[T]) -> Vec<T> {
    let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); nc * ho * wo];
    for p in 0..nc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Real>(shape: &[usize], dy: &[T]) -> Vec<T> {
    let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); nc * h * w];
    for p in 0..nc {
        let src = &dy[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let g = src[y * wo + xx] * quarter;
                let i = 2 * y * w + 2 * xx;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    dx
}

pub(crate) fn upsample2_forward<T: Real>(shape: &[usize], x: &[T]) -> Vec<T> {
    let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); nc * ho * wo];
    for p in 0..nc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(shape: &[usize], dy: &[T]) -> Vec<T> {
    let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); nc * h * w];
    for p in 0..nc {
        let src = &dy[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                dst[(y / 2) * w + xx / 2] += src[y * wo + xx];
            }
        }
    }
    dx
}
