//! Convolution as patch extraction plus one matrix product.
//!
//! `cols[(c·k + ky)·k + kx, (n·Ho + oy)·Wo + ox] = x[n, c, oy·s + ky − p, ox·s + kx − p]`
//! (zero outside the image). Autograd then only needs the matmul backward
//! and the adjoint of patch extraction, which is a scatter-add.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Calls `f(row, col, input_index)` for every in-bounds patch entry.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = *self;
        for c in 0..g.c {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (c * g.k + ky) * g.k + kx;
                    for n in 0..g.n {
                        let plane = (n * g.c + c) * g.h * g.w;
                        for oy in 0..g.ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let base_col = (n * g.ho + oy) * g.wo;
                            let in_row = plane + iy as usize * g.w;
                            for ox in 0..g.wo {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    f(row, base_col + ox, in_row + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(v: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("im2col expects a contiguous tensor"),
    }
}

struct Im2Col(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let ncols = g.cols();
        let shape = Shape::from((g.rows(), ncols));
        macro_rules! run {
            ($v:expr, $variant:ident) => {{
                let x = contiguous($v, layout)?;
                let mut out = vec![Default::default(); g.rows() * ncols];
                g.for_each(|r, c, i| out[r * ncols + c] = x[i]);
                Ok((CpuStorage::$variant(out), shape))
            }};
        }
        match storage {
            CpuStorage::F32(v) => run!(v, F32),
            CpuStorage::F64(v) => run!(v, F64),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        }
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(
            grad_res.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?,
        ))
    }
}

/// Adjoint of [`Im2Col`]: accumulates patch entries back onto the image.
struct Col2Im(Geometry);

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let ncols = g.cols();
        let shape = Shape::from((g.n, g.c, g.h, g.w));
        macro_rules! run {
            ($v:expr, $variant:ident) => {{
                let cols = contiguous($v, layout)?;
                let mut out = vec![Default::default(); g.n * g.c * g.h * g.w];
                g.for_each(|r, c, i| out[i] += cols[r * ncols + c]);
                Ok((CpuStorage::$variant(out), shape))
            }};
        }
        match storage {
            CpuStorage::F32(v) => run!(v, F32),
            CpuStorage::F64(v) => run!(v, F64),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        }
    }
}

/// 2-D convolution of `x: N × C × H × W` with `weight: O × C × k × k`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, wc, k, k2) = weight.dims4()?;
    if wc != c || k != k2 {
        return shape_err(format!(
            "conv weight {:?} does not match input {:?}",
            weight.dims(),
            x.dims()
        ));
    }
    if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
        return shape_err(format!(
            "kernel {k} does not fit input {h}x{w} with padding {pad}"
        ));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let g = Geometry {
        n,
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    };
    let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
    let y = weight.reshape((o, c * k * k))?.matmul(&cols)?;
    Ok(y.reshape((o, n, ho, wo))?.transpose(0, 1)?.contiguous()?)
}
