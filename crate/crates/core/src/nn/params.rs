use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named trainable tensors, ordered by name.
///
/// Names are slash-separated paths such as `enc3/conv/weight`; a store can be
/// nested into a larger namespace with [`ParamStore::prefixed`] when saved.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            dtype,
            device: device.clone(),
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, tensor: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::config(format!("parameter {name:?} registered twice")));
        }
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    /// Registers a zero-mean Gaussian parameter.
    pub fn normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(name.into(), t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::zeros(shape, self.dtype, &self.device)?;
        self.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Copies each tensor into the matching variable; names and shapes must agree exactly.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.vars.len(),
                tensors.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Snapshot of every parameter, keyed by name with `prefix` prepended.
    pub fn prefixed(&self, prefix: &str) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((format!("{prefix}{k}"), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            for d in var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Namespaced view used while building a network.
pub struct Scope<'a, R: Rng + ?Sized> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

impl<'a, R: Rng + ?Sized> Scope<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn push(&mut self, name: &str) -> Scope<'_, R> {
        Scope {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}{name}/", self.prefix),
        }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let full = format!("{}{name}", self.prefix);
        self.store.normal(full, shape, INIT_STD, self.rng)
    }

    pub fn bias(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let full = format!("{}{name}", self.prefix);
        self.store.zeros(full, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_fingerprint() {
        let build = |seed| {
            let mut store = ParamStore::new(DType::F32, &Device::Cpu);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scope = Scope::new(&mut store, &mut rng);
            scope.push("a").weight("w", &[4, 3]).unwrap();
            scope.bias("b", &[4]).unwrap();
            store.fingerprint().unwrap()
        };
        assert_eq!(build(1), build(1));
        assert_ne!(build(1), build(2));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new(DType::F32, &Device::Cpu);
        store.zeros("x", &[1]).unwrap();
        assert!(store.zeros("x", &[1]).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let mut store = ParamStore::new(DType::F64, &Device::Cpu);
        store.zeros("x", &[2]).unwrap();
        let mut bad = BTreeMap::new();
        bad.insert("x".to_string(), Tensor::zeros(3, DType::F64, &Device::Cpu).unwrap());
        assert!(store.load(&bad).is_err());
        let mut good = BTreeMap::new();
        good.insert("x".to_string(), Tensor::new(&[1.5f64, 2.0], &Device::Cpu).unwrap());
        store.load(&good).unwrap();
        let v: Vec<f64> = store.get("x").unwrap().as_tensor().to_vec1().unwrap();
        assert_eq!(v, [1.5, 2.0]);
    }
}
