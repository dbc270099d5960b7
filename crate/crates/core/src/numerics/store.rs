//! Named parameter storage.
//!
//! Model modules allocate parameters here and keep the returned [`ParamId`];
//! training reads gradients out of a [`Graph`](super::Graph) keyed by the
//! same ids. The store serializes as a versioned name -> shape + values map.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    value: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    version: u32,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            version: STORE_FORMAT_VERSION,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Register a parameter. Names must be unique; they exist for
    /// checkpoints and diagnostics.
    pub fn alloc(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight matrix.
    pub fn alloc_weight(
        &mut self,
        name: impl Into<String>,
        rng: &mut ChaCha20Rng,
        rows: usize,
        cols: usize,
    ) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.alloc(name, Tensor::from_vec(&[rows, cols], data).expect("sized"))
    }

    /// Zero-initialized bias row [1, cols].
    pub fn alloc_bias(&mut self, name: impl Into<String>, cols: usize) -> ParamId {
        self.alloc(name, Tensor::zeros(&[1, cols]))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of scalar values across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Overwrite values from another store with identical layout.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.version != STORE_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter store version {}",
                other.version
            )));
        }
        if other.entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn alloc_and_lookup() {
        let mut store = ParamStore::new();
        let id = store.alloc("w", Tensor::scalar(3.0));
        assert_eq!(store.value(id).item(), 3.0);
        assert_eq!(store.name(id), "w");
        assert_eq!(store.find("w"), Some(id));
        assert_eq!(store.find("nope"), None);
    }

    #[test]
    fn weight_init_is_bounded_and_seeded() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.alloc_weight("w", &mut rng, 16, 8);
        let bound = 1.0 / 4.0;
        assert!(store.value(id).data().iter().all(|v| v.abs() < bound));

        let mut rng2 = ChaCha20Rng::seed_from_u64(1);
        let mut store2 = ParamStore::new();
        let id2 = store2.alloc_weight("w", &mut rng2, 16, 8);
        assert_eq!(store.value(id), store2.value(id2));
    }

    #[test]
    fn store_round_trips_through_json_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.alloc_weight("a", &mut rng, 5, 7);
        store.alloc_bias("b", 4);
        let json = serde_json::to_string(&store).unwrap();
        let back: ParamStore = serde_json::from_str(&json).unwrap();
        for id in store.ids() {
            assert_eq!(store.value(id).data(), back.value(id).data());
        }
    }
}
