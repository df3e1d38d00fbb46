use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to an entry of a [`ParamStore`]. Only valid for the store that issued it
/// (or a clone of it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
    version: u64,
}

impl<T: Real> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Named, shaped parameter blocks with gradient accumulators.
///
/// Every value mutation through [`ParamStore::value_mut`] bumps the entry's
/// version, which is how tapes detect that they were recorded against older
/// parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        if numel(shape) != value.len() {
            return Err(Error::shape(format!("parameter `{name}`"), numel(shape), value.len()));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![T::zero(); value.len()],
            value,
            trainable: true,
            version: 0,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, shape, vec![T::zero(); numel(shape)])
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .map(ParamId)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        let p = &mut self.params[id.0];
        p.version += 1;
        &mut p.value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].grad
    }

    /// Value and gradient accumulator of the same entry, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&[T], &mut [T]) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    /// Adds `g` into the accumulator of a trainable entry; frozen entries are
    /// left untouched.
    pub fn accumulate(&mut self, id: ParamId, g: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        crate::error::ensure_len(&p.name, p.grad.len(), g.len())?;
        if p.trainable {
            p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    /// Like [`ParamStore::accumulate`] into a sub-range starting at `offset`.
    pub fn accumulate_at(&mut self, id: ParamId, offset: usize, g: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        if offset + g.len() > p.grad.len() {
            return Err(Error::shape(format!("{} slice at {offset}", p.name), p.grad.len(), offset + g.len()));
        }
        if p.trainable {
            p.grad[offset..offset + g.len()].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    pub fn version(&self, id: ParamId) -> u64 {
        self.params[id.0].version
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Freezes or unfreezes every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces an entry's values, keeping its id. Shape must be unchanged.
    pub fn set(&mut self, id: ParamId, value: &[T]) -> Result<()> {
        let p = &self.params[id.0];
        if p.value.len() != value.len() {
            return Err(Error::shape(format!("parameter `{}`", p.name), p.value.len(), value.len()));
        }
        self.value_mut(id).copy_from_slice(value);
        Ok(())
    }

    /// Copies one entry by name from another store (shape, values, trainable flag).
    pub fn copy_entry_from(&mut self, other: &ParamStore<T>, name: &str) -> Result<ParamId> {
        let src = other.get(other.id(name)?);
        let id = self.insert(name, &src.shape, src.value.clone())?;
        self.set_trainable(id, src.trainable);
        Ok(id)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                value: p.value.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
                grad: p.grad.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
                trainable: p.trainable,
                version: p.version,
            })
            .collect();
        ParamStore {
            params,
            index: self.index.clone(),
        }
    }

    /// Checks that the recorded versions still match; used by every tape.
    pub fn check_versions(&self, recorded: &[(ParamId, u64)]) -> Result<()> {
        for &(id, v) in recorded {
            if self.params.get(id.0).map(|p| p.version) != Some(v) {
                let name = self.params.get(id.0).map(|p| p.name.as_str()).unwrap_or("<unknown>");
                return Err(Error::StaleTape(format!("parameter `{name}`")));
            }
        }
        Ok(())
    }
}
