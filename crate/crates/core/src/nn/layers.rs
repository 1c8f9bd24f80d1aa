use candle_core::{Tensor, Var};

use super::conv::conv2d_same;
use super::norm::group_norm;
use super::params::Builder;
use crate::error::Result;

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
}

impl Conv2d {
    pub fn new(b: &mut Builder, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        let bound = (3.0 / (cin * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            weight: b.uniform("weight", &[cout, cin, kernel, kernel], bound)?,
            bias: b.constant("bias", &[cout], 0.0)?,
        })
    }

    /// Zero-initialized variant, used for output layers that should start
    /// as the identity of a residual path.
    pub fn zeros(b: &mut Builder, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        Ok(Conv2d {
            weight: b.constant("weight", &[cout, cin, kernel, kernel], 0.0)?,
            bias: b.constant("bias", &[cout], 0.0)?,
        })
    }

    pub fn with_bias(b: &mut Builder, cin: usize, cout: usize, kernel: usize, bias: f64) -> Result<Self> {
        let bound = (3.0 / (cin * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            weight: b.uniform("weight", &[cout, cin, kernel, kernel], bound)?,
            bias: b.constant("bias", &[cout], bias)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_same(x, self.weight.as_tensor(), Some(self.bias.as_tensor()))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(b: &mut Builder, din: usize, dout: usize) -> Result<Self> {
        let bound = (3.0 / din as f64).sqrt();
        Ok(Linear {
            weight: b.uniform("weight", &[dout, din], bound)?,
            bias: b.constant("bias", &[dout], 0.0)?,
        })
    }

    /// `x`: `(B, din)` → `(B, dout)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    groups: usize,
    gamma: Var,
    beta: Var,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(b: &mut Builder, channels: usize) -> Result<Self> {
        let groups = if channels.is_multiple_of(4) { 4 } else { 1 };
        Ok(GroupNorm {
            groups,
            gamma: b.constant("gamma", &[channels], 1.0)?,
            beta: b.constant("beta", &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        group_norm(x, self.gamma.as_tensor(), self.beta.as_tensor(), self.groups, GN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Var,
}

impl Embedding {
    pub fn new(b: &mut Builder, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Embedding {
            table: b.uniform("table", &[vocab, dim], 1.0)?,
        })
    }

    /// `ids`: `(B,)` u32 → `(B, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        Ok(self.table.as_tensor().index_select(ids, 0)?)
    }
}

/// Residual block: two GroupNorm–SiLU–conv stages with an optional
/// per-channel conditioning shift between them.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    cond: Option<Linear>,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(b: &mut Builder, cin: usize, cout: usize, cond_dim: Option<usize>) -> Result<Self> {
        Ok(ResBlock {
            norm1: GroupNorm::new(&mut b.sub("norm1"), cin)?,
            conv1: Conv2d::new(&mut b.sub("conv1"), cin, cout, 3)?,
            cond: cond_dim
                .map(|d| Linear::new(&mut b.sub("cond"), d, cout))
                .transpose()?,
            norm2: GroupNorm::new(&mut b.sub("norm2"), cout)?,
            conv2: Conv2d::new(&mut b.sub("conv2"), cout, cout, 3)?,
            skip: (cin != cout)
                .then(|| Conv2d::new(&mut b.sub("skip"), cin, cout, 1))
                .transpose()?,
        })
    }

    pub fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        if let (Some(lin), Some(c)) = (&self.cond, cond) {
            let shift = lin.forward(c)?;
            let (bsz, ch) = shift.dims2()?;
            h = h.broadcast_add(&shift.reshape((bsz, ch, 1, 1))?)?;
        }
        let h = self.conv2.forward(&silu(&self.norm2.forward(&h)?)?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}
