use std::ops::Range;

use crate::error::{Error, Result};

/// Flat parameter vector with a parallel gradient buffer and named slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    layout: Vec<(String, Range<usize>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { values: Vec::new(), grads: Vec::new(), layout: Vec::new() }
    }

    /// Appends a named zero-filled slice and returns its range.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> Range<usize> {
        let start = self.values.len();
        let range = start..start + len;
        self.values.resize(start + len, 0.0);
        self.grads.resize(start + len, 0.0);
        self.layout.push((name.into(), range.clone()));
        range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub(crate) fn swap_grads(&mut self, buf: &mut Vec<f64>) {
        std::mem::swap(&mut self.grads, buf);
    }

    /// Simultaneous mutable access to values and grads.
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn layout(&self) -> &[(String, Range<usize>)] {
        &self.layout
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.layout.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.grads.len() {
            return Err(Error::Input(format!(
                "gradient length {} does not match parameter count {}",
                delta.len(),
                self.grads.len()
            )));
        }
        for (g, d) in self.grads.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Replaces all values, keeping layout. Grads are untouched.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Input(format!(
                "expected {} parameter values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
