//! Flat parameter store with named slots.
//!
//! Slots live in a BTreeMap so every iteration —
//! checkpoint serialization included — walks them in name-sorted order.

use crate::error::{Error, Result};
use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2};
use std::collections::BTreeMap;

/// Floating-point scalar the denoiser is generic over: f32 for training and
/// sampling, f64 for gradient-check tooling.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive {
    fn fromf(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    slots: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { slots: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<F>) {
        self.slots.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.slots
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter slot {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<F> {
        self.slots
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter slot {name}"))
    }

    pub fn mat(&self, name: &str) -> ArrayView2<'_, F> {
        self.get(name).view().into_dimensionality::<Ix2>().expect("slot is a matrix")
    }

    pub fn vec(&self, name: &str) -> ArrayView1<'_, F> {
        self.get(name).view().into_dimensionality::<Ix1>().expect("slot is a vector")
    }

    pub fn mat_mut(&mut self, name: &str) -> ArrayViewMut2<'_, F> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("slot is a matrix")
    }

    pub fn vec_mut(&mut self, name: &str) -> ArrayViewMut1<'_, F> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("slot is a vector")
    }

    /// Name-sorted iteration (BTreeMap order).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.slots.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<F>)> {
        self.slots.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn total_elements(&self) -> usize {
        self.slots.values().map(|a| a.len()).sum()
    }

    /// A store of the same slot names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, arr) in &self.slots {
            out.insert(name, ArrayD::zeros(arr.raw_dim()));
        }
        out
    }

    /// `self += other * scale`, slot by slot.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for (name, arr) in self.slots.iter_mut() {
            let o = other.get(name);
            arr.zip_mut_with(o, |a, &b| *a += b * scale);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (name, arr) in &self.slots {
            out.insert(name, arr.mapv(|v| G::fromf(v.to_f64().unwrap())));
        }
        out
    }

    /// Concatenates all slots in name-sorted order into one flat buffer.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.total_elements());
        for arr in self.slots.values() {
            out.extend(arr.iter().copied());
        }
        out
    }

    /// Restores slot contents from a flat buffer produced by `to_flat` on a
    /// store with identical slots.
    pub fn load_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.total_elements() {
            return Err(Error::Data(format!(
                "flat parameter buffer has {} elements, store expects {}",
                flat.len(),
                self.total_elements()
            )));
        }
        let mut offset = 0;
        for arr in self.slots.values_mut() {
            let n = arr.len();
            for (dst, src) in arr.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }
}
