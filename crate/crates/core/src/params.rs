//! Named parameter storage and hierarchical construction.

use std::collections::HashMap;
use std::sync::Arc;

use cafu_tensor::ops::BatchStats;
use cafu_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Arc<Tensor>,
    trainable: bool,
}

/// Trainable parameters and non-trainable buffers, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value: Arc::new(value),
            trainable,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.shape(), value.shape(), "shape change for {}", e.name);
        e.value = Arc::new(value);
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Mutable access to every trainable tensor, in creation order.
    pub fn trainable_mut(&mut self) -> Vec<(ParamId, &mut Tensor)> {
        self.entries
            .iter_mut()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, e)| (ParamId(i), Arc::make_mut(&mut e.value)))
            .collect()
    }

    /// `(name, value, trainable)` for every entry, in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), e.value.as_ref(), e.trainable))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|e| e.2).map(|e| e.1.numel()).sum()
    }

    /// Largest absolute difference over all entries of two identically built stores.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        assert_eq!(self.len(), other.len(), "stores built from different configs");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, updates: &[BatchNormUpdate], momentum: f64) {
        for u in updates {
            let mean = Arc::make_mut(&mut self.entries[u.running_mean.0].value);
            for (r, b) in mean.data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            let var = Arc::make_mut(&mut self.entries[u.running_var.0].value);
            for (r, b) in var.data_mut().iter_mut().zip(&u.stats.var_unbiased) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
}

/// Running-statistics update recorded by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

/// Creates parameters under a dotted name prefix with a shared seeded generator.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        Builder {
            prefix: self.qualify(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = self.qualify(name);
        self.store.insert(full, value, true)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = self.qualify(name);
        self.store.insert(full, value, false)
    }

    /// Uniform initialisation in `[-bound, bound)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        self.param(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.param(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.param(name, Tensor::full(shape, value))
    }

    pub fn sample(&mut self) -> f64 {
        self.rng.random()
    }
}
