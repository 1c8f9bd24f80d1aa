//! Group normalization with its per-channel affine step as one fused op.

use candle_core::{CpuStorage, CustomOp3, DType, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

struct GroupNormOp {
    groups: usize,
    eps: f64,
}

struct Dims {
    batch: usize,
    channels: usize,
    pixels: usize,
    per_group: usize,
}

impl GroupNormOp {
    fn dims(&self, shape: &[usize]) -> Dims {
        let channels = shape[1];
        Dims {
            batch: shape[0],
            channels,
            pixels: shape[2..].iter().product(),
            per_group: channels / self.groups,
        }
    }

    /// Mean and inverse standard deviation of each `(b, g)` slab.
    fn stats(&self, x: &[f64], d: &Dims) -> Vec<(f64, f64)> {
        let len = d.per_group * d.pixels;
        x.chunks(len)
            .map(|slab| {
                let mean = slab.iter().sum::<f64>() / len as f64;
                let var = slab.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
                (mean, 1.0 / (var + self.eps).sqrt())
            })
            .collect()
    }

    fn forward<T: WithDType>(&self, x: &[T], gamma: &[T], beta: &[T], d: &Dims) -> Vec<T> {
        let xf: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
        let stats = self.stats(&xf, d);
        let mut out = Vec::with_capacity(xf.len());
        for b in 0..d.batch {
            for c in 0..d.channels {
                let (mean, inv) = stats[b * self.groups + c / d.per_group];
                let (g, s) = (gamma[c].to_f64(), beta[c].to_f64());
                let base = (b * d.channels + c) * d.pixels;
                out.extend(xf[base..base + d.pixels].iter().map(|v| T::from_f64((v - mean) * inv * g + s)));
            }
        }
        out
    }
}

fn slice<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("group norm expects contiguous inputs"),
    }
}

fn values(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()
}

impl CustomOp3 for GroupNormOp {
    fn name(&self) -> &'static str {
        "group-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.dims());
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(b)) => {
                CpuStorage::F32(self.forward(slice(x, l1)?, slice(g, l2)?, slice(b, l3)?, &d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(b)) => {
                CpuStorage::F64(self.forward(slice(x, l1)?, slice(g, l2)?, slice(b, l3)?, &d))
            }
            _ => candle_core::bail!("group norm supports matching f32 or f64 inputs"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let d = self.dims(x.dims());
        let xv = values(x)?;
        let gv = values(gamma)?;
        let dy = values(grad)?;
        let stats = self.stats(&xv, &d);
        let slab = d.per_group * d.pixels;
        let mut dx = vec![0.0; xv.len()];
        let mut dgamma = vec![0.0; d.channels];
        let mut dbeta = vec![0.0; d.channels];
        for b in 0..d.batch {
            for g in 0..self.groups {
                let (mean, inv) = stats[b * self.groups + g];
                let start = (b * self.groups + g) * slab;
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for i in start..start + slab {
                    let c = g * d.per_group + (i - start) / d.pixels;
                    let xhat = (xv[i] - mean) * inv;
                    let dxhat = dy[i] * gv[c];
                    dgamma[c] += dy[i] * xhat;
                    dbeta[c] += dy[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                let (m1, m2) = (sum_dxhat / slab as f64, sum_dxhat_xhat / slab as f64);
                for i in start..start + slab {
                    let c = g * d.per_group + (i - start) / d.pixels;
                    let xhat = (xv[i] - mean) * inv;
                    dx[i] = inv * (dy[i] * gv[c] - m1 - xhat * m2);
                }
            }
        }
        let dtype = x.dtype();
        let dev = x.device();
        let dx = Tensor::from_vec(dx, x.shape(), dev)?.to_dtype(dtype)?;
        let dgamma = Tensor::from_vec(dgamma, gamma.shape(), dev)?.to_dtype(dtype)?;
        let dbeta = Tensor::from_vec(dbeta, gamma.shape(), dev)?.to_dtype(dtype)?;
        Ok((Some(dx), Some(dgamma), Some(dbeta)))
    }
}

/// `x`: `(B, C, ...)` with `C` divisible by `groups`; `gamma`, `beta`: `(C,)`.
pub fn group_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op3(
        &gamma.contiguous()?,
        &beta.contiguous()?,
        GroupNormOp { groups, eps },
    )?)
}
