use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-frequency class weights: `γ_c = (H·W·B) / count_c` for classes
/// present in the batch, `0` for absent classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub gamma: Vec<f64>,
    pub pixel_counts: Vec<u64>,
}

impl ClassWeights {
    pub fn num_classes(&self) -> usize {
        self.gamma.len()
    }

    /// `γ` as a `(1, K, 1, 1)` tensor.
    pub fn tensor(&self, dtype: DType) -> Result<Tensor> {
        let k = self.gamma.len();
        Ok(Tensor::from_vec(self.gamma.clone(), (1, k, 1, 1), &candle_core::Device::Cpu)?
            .to_dtype(dtype)?)
    }
}

/// Counts class pixels of a one-hot `(B, K, H, W)` label volume given as a
/// flat slice, rejecting anything that is not exactly one-hot per pixel.
pub fn class_weights_from_slice(labels: &[f32], dims: (usize, usize, usize, usize)) -> Result<ClassWeights> {
    let (b, k, h, w) = dims;
    if labels.len() != b * k * h * w {
        return Err(Error::shape(format!("{b}x{k}x{h}x{w}"), labels.len()));
    }
    let hw = h * w;
    let mut counts = vec![0u64; k];
    for bi in 0..b {
        for p in 0..hw {
            let mut hot = None;
            let mut valid = true;
            for c in 0..k {
                let v = labels[(bi * k + c) * hw + p];
                if v == 1.0 {
                    valid &= hot.is_none();
                    hot = Some(c);
                } else if v != 0.0 {
                    valid = false;
                }
            }
            match hot {
                Some(c) if valid => counts[c] += 1,
                _ => {
                    return Err(Error::NotOneHot {
                        batch: bi,
                        row: p / w,
                        col: p % w,
                    })
                }
            }
        }
    }
    let total = (b * hw) as f64;
    let gamma = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { total / n as f64 })
        .collect();
    Ok(ClassWeights {
        gamma,
        pixel_counts: counts,
    })
}

pub fn class_weights(labels: &Tensor) -> Result<ClassWeights> {
    let dims = labels.dims4()?;
    let flat = labels.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    class_weights_from_slice(&flat, dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_half_coverage() {
        // One image, 2 classes, 2x2: class 0 everywhere.
        let w = class_weights_from_slice(&[1., 1., 1., 1., 0., 0., 0., 0.], (1, 2, 2, 2)).unwrap();
        assert_eq!(w.gamma, vec![1.0, 0.0]);
        assert_eq!(w.pixel_counts, vec![4, 0]);
        // Half and half.
        let w = class_weights_from_slice(&[1., 1., 0., 0., 0., 0., 1., 1.], (1, 2, 2, 2)).unwrap();
        assert_eq!(w.gamma, vec![2.0, 2.0]);
    }

    #[test]
    fn rejects_non_one_hot() {
        let two_hot = [1., 1., 1., 1., 1., 0., 0., 0.];
        assert!(matches!(
            class_weights_from_slice(&two_hot, (1, 2, 2, 2)),
            Err(Error::NotOneHot { batch: 0, row: 0, col: 0 })
        ));
        let none_hot = [1., 1., 1., 0., 0., 0., 0., 0.];
        assert!(matches!(
            class_weights_from_slice(&none_hot, (1, 2, 2, 2)),
            Err(Error::NotOneHot { row: 1, col: 1, .. })
        ));
        let fractional = [0.5, 1., 1., 1., 0.5, 0., 0., 0.];
        assert!(class_weights_from_slice(&fractional, (1, 2, 2, 2)).is_err());
    }
}
