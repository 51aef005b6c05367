//! Named parameter storage shared between model, optimizer and checkpoints.

use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::{Scalar, Tensor};

/// Gradients keyed by parameter name. BTreeMap keeps iteration order fixed.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// Sums per-sample gradient maps in slice order and divides by the count —
/// the deterministic batch reduction.
pub fn merge_gradients<T: Scalar>(maps: &[GradMap<T>]) -> GradMap<T> {
    let mut out = GradMap::new();
    if maps.is_empty() {
        return out;
    }
    let inv = T::from_f64(1.0 / maps.len() as f64);
    for map in maps {
        for (name, grad) in map {
            match out.get_mut(name) {
                Some(acc) => {
                    let dst = acc.data_mut();
                    for (d, &s) in dst.iter_mut().zip(grad.data()) {
                        *d += s;
                    }
                }
                None => {
                    out.insert(name.clone(), grad.clone());
                }
            }
        }
    }
    for grad in out.values_mut() {
        for v in grad.data_mut() {
            *v *= inv;
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Entry<T: Scalar> {
    value: Tensor<T>,
    trainable: bool,
}

/// Ordered map of named parameters with trainable flags.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f64> {
    entries: IndexMap<String, Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        self.entries.insert(name.into(), Entry { value, trainable });
    }

    pub fn lookup(&self, name: &str) -> Option<(&Tensor<T>, bool)> {
        self.entries.get(name).map(|e| (&e.value, e.trainable))
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.entries.get(name).unwrap_or_else(|| panic!("missing parameter {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("missing parameter {name}")).value
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        self.entries.get_mut(name).unwrap_or_else(|| panic!("missing parameter {name}")).value =
            value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(e) = self.entries.get_mut(name) {
            e.trainable = trainable;
        }
    }

    /// Marks parameters trainable iff the predicate accepts their name.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, e) in self.entries.iter_mut() {
            e.trainable = pred(name);
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    /// Insertion-ordered iteration over all parameters.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, bool)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), &e.value, e.trainable))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Converts every tensor to another storage mode, keeping flags.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.cast::<U>(), e.trainable);
        }
        out
    }
}
