//! Scalar-loop loss oracles and tiny probe networks for finite-difference
//! checks.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use simgrasp::advsup::Segmenter;
use simgrasp::diffusion::NoisePredictor;
use simgrasp::nn::{silu, Builder, Conv2d, GroupNorm, Linear, ParamStore};

/// `[b][c][i][j]` volume.
pub type Vol = Vec<Vec<Vec<Vec<f64>>>>;

pub struct LossInstance {
    pub b: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vol,
    pub real: Vol,
    pub fake: Vol,
}

fn random_probs(r: &mut ChaCha8Rng, b: usize, k1: usize, h: usize, w: usize) -> Vol {
    let mut v = vec![vec![vec![vec![0.0; w]; h]; k1]; b];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let logits: Vec<f64> = (0..k1).map(|_| r.random_range(-3.0..3.0)).collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for c in 0..k1 {
                    v[bi][c][i][j] = logits[c].exp() / z;
                }
            }
        }
    }
    v
}

pub fn random_instance(r: &mut ChaCha8Rng) -> LossInstance {
    let b = r.random_range(1..=3);
    let n = r.random_range(1..=4);
    let k = n + 1;
    let h = r.random_range(1..=8);
    let w = r.random_range(1..=8);
    let mut labels = vec![vec![vec![vec![0.0; w]; h]; k]; b];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                labels[bi][r.random_range(0..k)][i][j] = 1.0;
            }
        }
    }
    LossInstance {
        b,
        k,
        h,
        w,
        labels,
        real: random_probs(r, b, k + 1, h, w),
        fake: random_probs(r, b, k + 1, h, w),
    }
}

pub fn flatten(v: &Vol) -> Vec<f64> {
    v.iter().flatten().flatten().flatten().copied().collect()
}

pub fn tensor(v: &Vol) -> Tensor {
    let dims = (v.len(), v[0].len(), v[0][0].len(), v[0][0][0].len());
    Tensor::from_vec(flatten(v), dims, &Device::Cpu).unwrap()
}

pub fn unflatten(t: &Tensor) -> Vol {
    let (b, c, h, w) = t.dims4().unwrap();
    let flat: Vec<f64> = t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    (0..b)
        .map(|bi| (0..c).map(|ci| (0..h).map(|i| flat[((bi * c + ci) * h + i) * w..][..w].to_vec()).collect()).collect())
        .collect()
}

/// `γ_c = H·W·B / count_c`, zero for absent classes.
pub fn class_weights_oracle(inst: &LossInstance) -> Vec<f64> {
    let mut counts = vec![0.0; inst.k];
    for bi in 0..inst.b {
        for c in 0..inst.k {
            for i in 0..inst.h {
                for j in 0..inst.w {
                    counts[c] += inst.labels[bi][c][i][j];
                }
            }
        }
    }
    let total = (inst.h * inst.w * inst.b) as f64;
    counts.iter().map(|&n| if n > 0.0 { total / n } else { 0.0 }).collect()
}

fn clamped_ln(p: f64) -> f64 {
    p.max(1e-7).ln()
}

pub fn generator_loss_oracle(inst: &LossInstance, fake: &Vol) -> f64 {
    let gamma = class_weights_oracle(inst);
    let mut s = 0.0;
    for bi in 0..inst.b {
        for c in 0..inst.k {
            for i in 0..inst.h {
                for j in 0..inst.w {
                    s += gamma[c] * inst.labels[bi][c][i][j] * clamped_ln(fake[bi][c][i][j]);
                }
            }
        }
    }
    -s / inst.b as f64
}

pub fn discriminator_loss_oracle(inst: &LossInstance, real: &Vol, fake: &Vol) -> f64 {
    let mut s = generator_loss_oracle(inst, real);
    let mut f = 0.0;
    for bi in 0..inst.b {
        for i in 0..inst.h {
            for j in 0..inst.w {
                f += clamped_ln(fake[bi][inst.k][i][j]);
            }
        }
    }
    s -= f / inst.b as f64;
    s
}

/// A per-pixel classifier with a 3×3 receptive field.
pub struct ProbeSegmenter {
    pub params: ParamStore,
    conv: Conv2d,
    k: usize,
}

impl ProbeSegmenter {
    pub fn new(k: usize, seed: u64) -> Self {
        let mut params = ParamStore::new(DType::F64);
        let mut r = simgrasp::rng::stream(seed, "probe-seg");
        let mut b = Builder::new(&mut params, &mut r);
        let conv = Conv2d::new(&mut b.sub("conv"), 3, k + 1, 3).unwrap();
        ProbeSegmenter { params, conv, k }
    }
}

impl Segmenter for ProbeSegmenter {
    fn probabilities(&self, images: &Tensor) -> simgrasp::Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.conv.forward(images)?, 1)?)
    }

    fn num_layout_classes(&self) -> usize {
        self.k
    }
}

/// Maps a fixed latent to an image: conv, norm, SiLU, conv.
pub struct ProbeGenerator {
    pub params: ParamStore,
    c1: Conv2d,
    norm: GroupNorm,
    c2: Conv2d,
}

impl ProbeGenerator {
    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new(DType::F64);
        let mut r = simgrasp::rng::stream(seed, "probe-gen");
        let mut b = Builder::new(&mut params, &mut r);
        let c1 = Conv2d::new(&mut b.sub("c1"), 2, 4, 3).unwrap();
        let norm = GroupNorm::new(&mut b.sub("norm"), 4).unwrap();
        let c2 = Conv2d::new(&mut b.sub("c2"), 4, 3, 3).unwrap();
        ProbeGenerator { params, c1, norm, c2 }
    }

    pub fn forward(&self, z: &Tensor) -> Tensor {
        let h = self.c1.forward(z).unwrap();
        let h = silu(&self.norm.forward(&h).unwrap()).unwrap();
        self.c2.forward(&h).unwrap().tanh().unwrap()
    }
}

/// Noise predictor conditioned on layout by concatenation and on the
/// timestep through a learned per-channel shift.
pub struct ProbeDenoiser {
    pub params: ParamStore,
    c1: Conv2d,
    time: Linear,
    norm: GroupNorm,
    c2: Conv2d,
    horizon: f64,
}

impl ProbeDenoiser {
    pub fn new(layout_channels: usize, horizon: usize, seed: u64) -> Self {
        let mut params = ParamStore::new(DType::F64);
        let mut r = simgrasp::rng::stream(seed, "probe-den");
        let mut b = Builder::new(&mut params, &mut r);
        let c1 = Conv2d::new(&mut b.sub("c1"), 3 + layout_channels, 4, 3).unwrap();
        let time = Linear::new(&mut b.sub("time"), 1, 4).unwrap();
        let norm = GroupNorm::new(&mut b.sub("norm"), 4).unwrap();
        let c2 = Conv2d::new(&mut b.sub("c2"), 4, 3, 3).unwrap();
        ProbeDenoiser { params, c1, time, norm, c2, horizon: horizon as f64 }
    }
}

impl NoisePredictor for ProbeDenoiser {
    fn predict(&self, x_t: &Tensor, t: &[usize], layout: &Tensor, _style: &[u32]) -> simgrasp::Result<Tensor> {
        let x = Tensor::cat(&[x_t, &layout.to_dtype(x_t.dtype())?], 1)?;
        let h = self.c1.forward(&x)?;
        let tt: Vec<f64> = t.iter().map(|&v| v as f64 / self.horizon).collect();
        let tt = Tensor::from_vec(tt, (t.len(), 1), &Device::Cpu)?.to_dtype(x_t.dtype())?;
        let shift = self.time.forward(&tt)?.reshape((t.len(), 4, 1, 1))?;
        let h = silu(&self.norm.forward(&h.broadcast_add(&shift)?)?)?;
        self.c2.forward(&h)
    }
}

/// Directional finite-difference check on every variable of `params`:
/// returns the relative error between `⟨∇L, v⟩` and the central difference
/// along a random unit direction `v`.
pub fn directional_check(
    params: &ParamStore,
    r: &mut ChaCha8Rng,
    loss: &dyn Fn() -> Tensor,
) -> f64 {
    let grads = loss().backward().unwrap();
    let vars: Vec<_> = params.vars().cloned().collect();
    let dirs: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| (0..v.elem_count()).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let norm = dirs.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let mut analytic = 0.0;
    for (v, d) in vars.iter().zip(&dirs) {
        let g: Vec<f64> = grads.get(v).map(|g| g.flatten_all().unwrap().to_vec1().unwrap()).unwrap_or(vec![0.0; d.len()]);
        analytic += g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / norm;
    }
    let originals: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().copy().unwrap()).collect();
    let h = 1e-5;
    let eval_at = |sign: f64| {
        for ((v, d), o) in vars.iter().zip(&dirs).zip(&originals) {
            let step = Tensor::from_vec(d.iter().map(|x| sign * h * x / norm).collect::<Vec<f64>>(), o.shape(), &Device::Cpu).unwrap();
            v.set(&(o + step).unwrap()).unwrap();
        }
        let l: f64 = loss().to_scalar().unwrap();
        l
    };
    let plus = eval_at(1.0);
    let minus = eval_at(-1.0);
    for (v, o) in vars.iter().zip(&originals) {
        v.set(o).unwrap();
    }
    let numeric = (plus - minus) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
