//! Per-forward-pass execution context.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use cafu_tensor::{Gradients, Tape, Tensor, Var};

use crate::params::{BatchNormUpdate, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalisation layers; running estimates are updated.
    Train,
    /// Running estimates in normalisation layers.
    Eval,
}

/// Summary of one observed activation.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorStat {
    pub name: String,
    pub shape: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Resolves parameters to [`Var`]s, collects batch-norm updates and counts
/// multiply-accumulates per top-level block.
pub struct Ctx<'a> {
    store: &'a ParamStore,
    tape: Option<Tape>,
    mode: Mode,
    leaves: RefCell<Vec<Option<Var>>>,
    bn_updates: RefCell<Vec<BatchNormUpdate>>,
    block: RefCell<String>,
    macs: RefCell<BTreeMap<String, u64>>,
    total_macs: Cell<u64>,
    trace: Option<RefCell<Vec<TensorStat>>>,
}

impl<'a> Ctx<'a> {
    /// Inference context: parameters enter as constants, nothing is recorded.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::new(store, Mode::Eval, None)
    }

    /// Training context recording trainable parameters as leaves on `tape`.
    pub fn train(store: &'a ParamStore, tape: &Tape) -> Self {
        Self::new(store, Mode::Train, Some(tape.clone()))
    }

    pub fn new(store: &'a ParamStore, mode: Mode, tape: Option<Tape>) -> Self {
        Self {
            store,
            tape,
            mode,
            leaves: RefCell::new(vec![None; store.len()]),
            bn_updates: RefCell::default(),
            block: RefCell::default(),
            macs: RefCell::default(),
            total_macs: Cell::new(0),
            trace: None,
        }
    }

    /// Keeps a [`TensorStat`] for every observed activation.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(RefCell::default());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var {
        let mut leaves = self.leaves.borrow_mut();
        if let Some(v) = &leaves[id.0] {
            return v.clone();
        }
        let value = self.store.shared(id);
        let var = match &self.tape {
            Some(tape) if self.store.is_trainable(id) => tape.leaf_shared(value),
            _ => Var::constant_shared(value),
        };
        leaves[id.0] = Some(var.clone());
        var
    }

    /// Gradients of every trainable parameter touched in this pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.leaves
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = v.as_ref()?;
                grads.get(v).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }

    pub(crate) fn push_bn_update(&self, update: BatchNormUpdate) {
        self.bn_updates.borrow_mut().push(update);
    }

    pub fn take_bn_updates(&self) -> Vec<BatchNormUpdate> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    /// Attributes subsequent MACs to `name`; returns the previous label.
    pub fn enter_block(&self, name: &str) -> String {
        std::mem::replace(&mut self.block.borrow_mut(), name.to_string())
    }

    pub fn restore_block(&self, previous: String) {
        *self.block.borrow_mut() = previous;
    }

    /// Runs `f` with MACs attributed to `name`; tensor failures inside are
    /// reported as shape errors at that junction.
    pub fn scoped<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let previous = self.enter_block(name);
        let out = f().map_err(|e| match e {
            Error::Tensor(source) => Error::Shape {
                junction: name.to_string(),
                source,
            },
            other => other,
        });
        self.restore_block(previous);
        out
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.total_macs.set(self.total_macs.get() + n);
        *self
            .macs
            .borrow_mut()
            .entry(self.block.borrow().clone())
            .or_default() += n;
    }

    pub fn total_macs(&self) -> u64 {
        self.total_macs.get()
    }

    pub fn macs_by_block(&self) -> BTreeMap<String, u64> {
        self.macs.borrow().clone()
    }

    /// Records statistics for `value` under `name`; in debug builds a
    /// non-finite activation is reported as a numeric failure.
    pub fn observe(&self, name: &str, value: &Var) -> Result<()> {
        let t = value.value();
        if cfg!(debug_assertions) && !t.is_finite() {
            return Err(Error::Numeric(format!("non-finite values after {name}")));
        }
        if let Some(trace) = &self.trace {
            trace.borrow_mut().push(TensorStat {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                min: t.min(),
                max: t.max(),
                mean: t.mean(),
            });
        }
        Ok(())
    }

    pub fn trace(&self) -> Vec<TensorStat> {
        self.trace
            .as_ref()
            .map(|t| t.borrow().clone())
            .unwrap_or_default()
    }
}
