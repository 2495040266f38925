//! Parameter storage shared across tapes, plus the per-pass `Session`.

use crate::tape::{Arr, Grads, Tape, Var};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::rc::Rc;

/// Handle to an entry in a [`ParamStore`]. Stable for the store's lifetime.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

pub(crate) struct Entry {
    pub name: String,
    pub value: Rc<Arr>,
    pub grad: Arr,
    pub trainable: bool,
    pub buffer: bool,
}

/// Named parameters and buffers in registration order.
///
/// Registration order is the iteration order everywhere (optimizer steps,
/// serialization, hashing), so a fixed construction sequence gives fully
/// deterministic behavior.
pub struct ParamStore {
    pub(crate) entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    fn insert(&mut self, name: &str, value: Arr, trainable: bool, buffer: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let grad = Arr::zeros(value.raw_dim());
        self.entries.push(Entry {
            name: name.to_string(),
            value: Rc::new(value),
            grad,
            trainable,
            buffer,
        });
        let id = self.entries.len() - 1;
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Registers a trainable parameter.
    pub fn register(&mut self, name: &str, value: Arr) -> ParamId {
        self.insert(name, value, true, false)
    }

    /// Registers a non-trainable buffer (e.g. batch-norm running stats);
    /// saved in checkpoints, never optimized.
    pub fn register_buffer(&mut self, name: &str, value: Arr) -> ParamId {
        self.insert(name, value, false, true)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.entries[id.0].value
    }

    pub fn value_rc(&self, id: ParamId) -> Rc<Arr> {
        Rc::clone(&self.entries[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, value: Arr) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.raw_dim(), value.raw_dim(), "set_value shape mismatch for {}", e.name);
        e.value = Rc::new(value);
    }

    pub fn grad(&self, id: ParamId) -> &Arr {
        &self.entries[id.0].grad
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Arr) {
        self.entries[id.0].grad += g;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Enables/disables optimization for every parameter whose name starts
    /// with `prefix`. Buffers stay non-trainable.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if !e.buffer && e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar parameters (excludes buffers).
    pub fn num_scalar_params(&self) -> usize {
        self.entries.iter().filter(|e| !e.buffer).map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// SHA-256 over names, shapes and raw values in registration order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update([0u8]);
            h.update((e.value.ndim() as u64).to_le_bytes());
            for d in e.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// One forward (and optionally backward) pass over a store.
pub struct Session<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    pub train: bool,
    leased: Vec<(usize, Var)>,
    lease_map: HashMap<usize, Var>,
}

impl<'a> Session<'a> {
    /// Training-mode session recording gradients.
    pub fn train(store: &'a mut ParamStore) -> Self {
        Session { tape: Tape::new(), store, train: true, leased: Vec::new(), lease_map: HashMap::new() }
    }

    /// Eval-mode session that still records gradients (saliency, probes).
    pub fn eval(store: &'a mut ParamStore) -> Self {
        Session { tape: Tape::new(), store, train: false, leased: Vec::new(), lease_map: HashMap::new() }
    }

    /// Eval-mode, forward-only session.
    pub fn inference(store: &'a mut ParamStore) -> Self {
        Session { tape: Tape::no_grad(), store, train: false, leased: Vec::new(), lease_map: HashMap::new() }
    }

    /// Leases a parameter onto the tape (deduplicated per session).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.lease_map.get(&id.0) {
            return v;
        }
        let v = self.tape.leaf_rc(self.store.value_rc(id));
        self.lease_map.insert(id.0, v);
        self.leased.push((id.0, v));
        v
    }

    pub fn leaf(&mut self, value: Arr) -> Var {
        self.tape.leaf(value)
    }

    /// Runs backward from `root` and accumulates parameter gradients into
    /// the store. Returns the gradient table for further inspection.
    pub fn backward(&mut self, root: Var) -> Grads {
        self.backward_keeping(root, &[])
    }

    pub fn backward_keeping(&mut self, root: Var, keep: &[Var]) -> Grads {
        let grads = self.tape.backward_keeping(root, keep);
        for &(idx, var) in &self.leased {
            if let Some(g) = grads.get(var) {
                self.store.entries[idx].grad += g;
            }
        }
        grads
    }
}
