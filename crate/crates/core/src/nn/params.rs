//! Named parameter storage, gradient buffers, initialization and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Header string identifying the checkpoint format.
pub const CHECKPOINT_FORMAT: &str = "persuasion-checkpoint/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Matrix `[rows, cols]` drawn from uniform(-1/sqrt(cols), 1/sqrt(cols)).
    pub fn add_matrix<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::new(vec![rows, cols], data).expect("shape"))
    }

    /// Vector initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); used for context vectors.
    pub fn add_uniform_vector<R: Rng>(
        &mut self,
        name: impl Into<String>,
        len: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..len)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::vector(data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            buffers: self.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        values: t.data().iter().map(|x| x.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta: BTreeMap::new(),
            params,
        }
    }

    /// Overwrite every parameter from a checkpoint; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                ckpt.params.len(),
                self.tensors.len()
            )));
        }
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let stored = ckpt
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if stored.shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    stored.shape,
                    tensor.shape()
                )));
            }
            for (dst, src) in tensor.data_mut().iter_mut().zip(&stored.values) {
                *dst = T::from_f64(*src);
            }
        }
        Ok(())
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    buffers: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.buffers[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.buffers[id.0]
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn zero(&mut self) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.buffers.iter().flatten().all(|x| x.is_finite())
    }

    /// Global L2 norm over all buffers.
    pub fn norm(&self) -> f64 {
        self.buffers
            .iter()
            .flatten()
            .map(|x| {
                let v = x.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(T::from_f64(max_norm / n));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized parameter set: a versioned JSON document mapping names to shape and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let w = store.add_matrix("w", 5, 16, &mut rng);
        assert!(store.get(w).data().iter().all(|x| x.abs() <= 0.25));
        assert_eq!(store.get(w).shape(), &[5, 16]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        store.add_matrix("w", 3, 4, &mut rng);
        store.add_zeros("b", &[3]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        store.to_checkpoint().save(&path).unwrap();

        let mut other = ParamStore::<f64>::new();
        other.add_zeros("w", &[3, 4]);
        other.add_zeros("b", &[3]);
        other.load_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(store, other);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add_zeros("w", &[2, 2]);
        let ckpt = store.to_checkpoint();
        let mut other = ParamStore::<f32>::new();
        other.add_zeros("w", &[2, 3]);
        assert!(matches!(other.load_checkpoint(&ckpt), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn clip_norm_bounds_global_norm() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_zeros("w", &[2]);
        let mut g = store.zero_grads();
        g.get_mut(id).copy_from_slice(&[3.0, 4.0]);
        g.clip_norm(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
