//! Same-padded stride-1 convolution as an unfold followed by one matmul.
//! The unfold lays every batch item side by side and appends a row of ones,
//! so the bias rides along as an extra weight column. The unfold and its
//! adjoint are custom ops, which keeps the backward pass to a scatter-add
//! plus two matmuls.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
}

impl Geometry {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Unfolded rows excluding the ones row.
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn cols(&self) -> usize {
        self.batch * self.pixels()
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap; indices
    /// address the `(rows+1, B·H·W)` matrix and the `(B, C, H, W)` image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w, k, p) = (self.height as isize, self.width as isize, self.kernel, self.pad());
        let hw = self.pixels();
        let ncols = self.cols();
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dy = ky as isize - p;
                    let dx = kx as isize - p;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w - dx).min(w) as usize;
                    for b in 0..self.batch {
                        for y in 0..h {
                            let sy = y + dy;
                            if sy < 0 || sy >= h {
                                continue;
                            }
                            let col_base = row * ncols + b * hw + (y * w) as usize;
                            let img_base = ((b * self.channels + c) * hw) as isize + sy * w + dx;
                            for x in x_lo..x_hi {
                                f(col_base + x, (img_base + x as isize) as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("conv custom op expects a contiguous input"),
    }
}

struct Unfold(Geometry);
struct Fold(Geometry);

impl Unfold {
    fn run<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let g = self.0;
        let body = g.rows() * g.cols();
        let mut out = Vec::with_capacity(body + g.cols());
        if g.kernel == 1 {
            // no padding: rows are the channels, one contiguous run per item
            let hw = g.pixels();
            for c in 0..g.channels {
                for b in 0..g.batch {
                    let start = (b * g.channels + c) * hw;
                    out.extend_from_slice(&src[start..start + hw]);
                }
            }
        } else {
            out.resize(body, T::zero());
            g.for_each_tap(|col, img| out[col] = src[img]);
        }
        out.resize(body + g.cols(), T::one());
        out
    }
}

impl Fold {
    fn run<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let g = self.0;
        let mut out = vec![T::zero(); g.batch * g.channels * g.pixels()];
        g.for_each_tap(|col, img| out[img] += src[col]);
        out
    }
}

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let shape = Shape::from((self.0.rows() + 1, self.0.cols()));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(self.run(contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(self.run(contiguous(d, layout)?)),
            _ => candle_core::bail!("unfold supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(Fold(self.0))?))
    }
}

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = Shape::from((g.batch, g.channels, g.height, g.width));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(self.run(contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(self.run(contiguous(d, layout)?)),
            _ => candle_core::bail!("fold supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        // the ones row carries no gradient back, so its adjoint is dropped
        let g = self.0;
        let full = grad_res.contiguous()?.apply_op1(Unfold(g))?;
        Ok(Some(full.narrow(0, 0, g.rows())?.pad_with_zeros(0, 0, 1)?))
    }
}

/// `x`: `(B, C, H, W)`, `weight`: `(Cout, C, k, k)` with odd `k`, `bias`:
/// `(Cout,)`. Returns `(B, Cout, H, W)`.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (bsz, c, h, w) = x.dims4()?;
    let (cout, _, k, _) = weight.dims4()?;
    let geometry = Geometry { batch: bsz, channels: c, height: h, width: w, kernel: k };
    let cols = x.contiguous()?.apply_op1(Unfold(geometry))?;
    let wmat = weight.reshape((cout, geometry.rows()))?;
    let bias = match bias {
        Some(b) => b.reshape((cout, 1))?,
        None => Tensor::zeros((cout, 1), weight.dtype(), weight.device())?,
    };
    let wmat = Tensor::cat(&[&wmat, &bias], 1)?;
    let y = wmat.matmul(&cols)?;
    Ok(y.reshape((cout, bsz, h, w))?.transpose(0, 1)?.contiguous()?)
}
