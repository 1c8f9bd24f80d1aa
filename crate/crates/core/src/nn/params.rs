use candle_core::{DType, Device, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named trainable tensors in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    entries: Vec<(String, Var)>,
}

/// Serializable copy of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            dtype,
            entries: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_params(&self) -> usize {
        self.vars().map(|v| v.elem_count()).sum()
    }

    fn push(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        debug_assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn snapshot(&self) -> Result<ParamSnapshot> {
        let tensors = self
            .entries
            .iter()
            .map(|(name, var)| {
                Ok(NamedTensor {
                    name: name.clone(),
                    shape: var.dims().to_vec(),
                    values: var
                        .as_tensor()
                        .to_dtype(DType::F64)?
                        .flatten_all()?
                        .to_vec1::<f64>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSnapshot { tensors })
    }

    /// Overwrites every parameter from `snap`; names and shapes must match.
    pub fn restore(&self, snap: &ParamSnapshot) -> Result<()> {
        if snap.tensors.len() != self.entries.len() {
            return Err(Error::shape(
                format!("{} tensors", self.entries.len()),
                format!("{} tensors", snap.tensors.len()),
            ));
        }
        for ((name, var), t) in self.entries.iter().zip(&snap.tensors) {
            if *name != t.name || var.dims() != t.shape.as_slice() {
                return Err(Error::shape(
                    format!("{name} {:?}", var.dims()),
                    format!("{} {:?}", t.name, t.shape),
                ));
            }
            let src = Tensor::from_vec(t.values.clone(), t.shape.as_slice(), &Device::Cpu)?
                .to_dtype(self.dtype)?;
            var.set(&src)?;
        }
        Ok(())
    }

    /// Deep copy with fresh storage.
    pub fn deep_clone(&self) -> Result<ParamStore> {
        let entries = self
            .entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamStore {
            dtype: self.dtype,
            entries,
        })
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        let full = self.full_name(name);
        self.store.push(full, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n = shape.iter().product();
        let full = self.full_name(name);
        self.store.push(full, vec![value; n], shape)
    }
}
