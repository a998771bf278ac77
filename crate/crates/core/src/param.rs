//! Trainable parameters, the Adam updater, and the binary checkpoint
//! container (magic "FCARAC01", per-entry name, shape, little-endian f64).

use crate::array::Array;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FCARAC01";

/// A value with its gradient and Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Array,
    pub grad: Array,
    m: Array,
    v: Array,
}

impl Parameter {
    pub fn new(value: Array) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            grad: Array::zeros(&shape),
            m: Array::zeros(&shape),
            v: Array::zeros(&shape),
        }
    }
}

/// Name-ordered parameter collection; iteration order is deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        self.params.insert(name.to_string(), Parameter::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Array::zeros(p.grad.shape());
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Array) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if p.grad.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} for parameter {name} {:?}",
                grad.shape(),
                p.value.shape()
            )));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    /// Bias-corrected Adam update over all parameters; clears gradients.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("adam_step: lr {lr} <= 0")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in self.params.values_mut() {
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let m = beta1 * p.m.data()[i] + (1.0 - beta1) * g;
                let v = beta2 * p.v.data()[i] + (1.0 - beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                p.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.grad = Array::zeros(p.grad.shape());
        }
        Ok(())
    }

    /// Plain gradient-descent update restricted to parameters accepted by
    /// `filter`; clears all gradients.
    pub fn sgd_step(&mut self, lr: f64, filter: impl Fn(&str) -> bool) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("sgd_step: lr {lr} <= 0")));
        }
        for (name, p) in self.params.iter_mut() {
            if filter(name) {
                for i in 0..p.value.len() {
                    let g = p.grad.data()[i];
                    p.value.data_mut()[i] -= lr * g;
                }
            }
            p.grad = Array::zeros(p.grad.shape());
        }
        Ok(())
    }

    /// Raw little-endian bytes of the values of parameters accepted by
    /// `filter`, in name order.
    pub fn value_bytes(&self, filter: impl Fn(&str) -> bool) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, p) in self.params.iter() {
            if filter(name) {
                for v in p.value.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Array)> = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect();
        write_named_arrays(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = read_named_arrays(path)?;
        let mut store = ParamStore::new();
        for (name, value) in entries {
            store.insert(&name, value);
        }
        Ok(store)
    }
}

/// Write a named-array container file.
pub fn write_named_arrays(path: &Path, entries: &[(String, Array)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, arr) in entries {
        let bytes = name.as_bytes();
        f.write_all(&(bytes.len() as u32).to_le_bytes())?;
        f.write_all(bytes)?;
        f.write_all(&(arr.shape().len() as u32).to_le_bytes())?;
        for &dim in arr.shape() {
            f.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in arr.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a named-array container file.
pub fn read_named_arrays(path: &Path) -> Result<Vec<(String, Array)>> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let count = read_u32(&mut f)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated entry name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let ndim = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut f)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated payload for {name}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Array::from_vec(&shape, data)?));
    }
    Ok(entries)
}

fn read_u32(f: &mut std::fs::File) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated field".into()))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("p", Array::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.get("p").unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_adam_step_moves_against_gradient_sign() {
        let mut store = ParamStore::new();
        store.insert("p", Array::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        store
            .accumulate_grad("p", &Array::from_vec(&[2], vec![3.0, -0.5]).unwrap())
            .unwrap();
        let lr = 0.1;
        store.adam_step(lr, 0.9, 0.999, 1e-8).unwrap();
        let p = store.get("p").unwrap();
        // First bias-corrected step is -lr * g/|g| up to eps.
        assert!((p.value.data()[0] + lr).abs() < 1e-6);
        assert!((p.value.data()[1] - lr).abs() < 1e-6);
        // Gradients cleared.
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_descends_on_scalar_quadratic() {
        // f(p) = (p - 3)^2, lr = 0.1: the unit-scale step reaches the
        // optimum within ~3/lr updates.
        let mut store = ParamStore::new();
        store.insert("p", Array::scalar(0.0));
        let mut dists = Vec::new();
        for _ in 0..100 {
            let p = store.get("p").unwrap().value.value();
            store
                .accumulate_grad("p", &Array::scalar(2.0 * (p - 3.0)))
                .unwrap();
            store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
            dists.push((store.get("p").unwrap().value.value() - 3.0).abs());
        }
        // Adam oscillates close to the optimum, so check convergence
        // rather than strict monotonicity.
        assert!(dists[20] < dists[0] / 2.0, "slow start: {:?}", &dists[..21]);
        assert!(dists[99] < 0.05, "did not converge: {}", dists[99]);
    }

    #[test]
    fn adam_rejects_nonpositive_lr() {
        let mut store = ParamStore::new();
        store.insert("p", Array::scalar(0.0));
        assert!(store.adam_step(0.0, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        store.insert("a.w", Array::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap());
        store.insert("b", Array::scalar(-1.5));
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("a.w").unwrap().value, store.get("a.w").unwrap().value);
        assert_eq!(loaded.get("b").unwrap().value, store.get("b").unwrap().value);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00").unwrap();
        assert!(matches!(ParamStore::load(&path), Err(Error::Checkpoint(_))));
    }
}
