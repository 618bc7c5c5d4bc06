//! Named parameter storage and binding onto a tape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::RandomSource;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named learnable tensors. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters of a [`ParamStore`] placed on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars already on a tape, one per store tensor in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl core::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Places every tensor on `tape` as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        }
    }

    /// Per-tensor gradients in store order; zeros where the tape produced none.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, v)| match grads.get(*v) {
                Some(g) => g.to_vec(),
                None => alloc::vec![0.0; t.len()],
            })
            .collect()
    }

    /// Overwrites values from `(name, tensor)` pairs, requiring the same
    /// names in the same order with identical shapes.
    pub fn load_named(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::data(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(Error::data(format!(
                    "tensor {i}: expected `{}`, found `{name}`",
                    self.names[i]
                )));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::dim("load_named", self.tensors[i].shape(), t.shape()));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

/// Uniform in `[-bound, bound]`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut RandomSource) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform(-bound, bound);
    }
    t
}

/// Glorot-uniform init for a `fan_in × fan_out` weight.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut RandomSource) -> Tensor {
    let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform(&[fan_in, fan_out], bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_checks_names_and_shapes() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[2]));
        s.add("b", Tensor::zeros(&[1, 3]));
        let ok = alloc::vec![
            (String::from("a"), Tensor::vector(&[1.0, 2.0])),
            (String::from("b"), Tensor::full(&[1, 3], 4.0)),
        ];
        s.load_named(ok).unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[1.0, 2.0]);

        let wrong_name = alloc::vec![
            (String::from("a"), Tensor::zeros(&[2])),
            (String::from("c"), Tensor::zeros(&[1, 3])),
        ];
        assert!(s.load_named(wrong_name).is_err());
        let wrong_shape = alloc::vec![
            (String::from("a"), Tensor::zeros(&[3])),
            (String::from("b"), Tensor::zeros(&[1, 3])),
        ];
        assert!(s.load_named(wrong_shape).is_err());
    }

    #[test]
    fn xavier_bound() {
        let mut rng = RandomSource::new(5);
        let w = xavier(4, 2, &mut rng);
        let b = math::sqrt(1.0);
        assert!(w.data().iter().all(|v| v.abs() <= b));
    }
}
