//! Ordered, named parameter blocks and their binding onto a tape.

use crate::ad::{Gradients, Tape, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
}

/// Parameter blocks in a fixed order. Block order is part of the checkpoint
/// format, so it never depends on hashing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its index.
    ///
    /// # Panics
    ///
    /// Panics on a duplicate name.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter block {name}");
        self.blocks.push(ParamBlock { name, value });
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> &ParamBlock {
        &self.blocks[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.blocks[index].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.blocks[i].value)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.numel()).sum()
    }

    /// All values concatenated in block order.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.value.data().iter().copied()).collect()
    }

    /// `(name, tensor)` pairs, the input format of the gradient checker.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.blocks.iter().map(|b| (b.name.clone(), b.value.clone())).collect()
    }

    /// Records every block on `tape`; blocks for which `trainable` is true
    /// become parameters, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: &Trainable) -> Vec<Var<'t>> {
        self.blocks
            .iter()
            .map(|b| {
                if trainable.includes(&b.name) {
                    tape.param(b.value.clone())
                } else {
                    tape.constant(b.value.clone())
                }
            })
            .collect()
    }

    /// Gradients aligned with block order; `None` for blocks the root does
    /// not depend on or that were bound as constants.
    pub fn collect_gradients(vars: &[Var<'_>], grads: &Gradients) -> Vec<Option<Vec<f64>>> {
        vars.iter().map(|v| grads.get(*v).map(<[f64]>::to_vec)).collect()
    }
}

/// Which blocks receive gradients, selected by name prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    Nothing,
    Only(Vec<String>),
    Except(Vec<String>),
}

impl Trainable {
    pub fn includes(&self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Nothing => false,
            Trainable::Only(prefixes) => prefixes.iter().any(|p| name.starts_with(p.as_str())),
            Trainable::Except(prefixes) => !prefixes.iter().any(|p| name.starts_with(p.as_str())),
        }
    }
}

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::new([fan_in, fan_out], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trainable_prefixes() {
        let only = Trainable::Only(vec!["readout.".into()]);
        assert!(only.includes("readout.w1"));
        assert!(!only.includes("encoder.embedding"));
        let except = Trainable::Except(vec!["encoder.".into()]);
        assert!(!except.includes("encoder.layer0.msg.w1"));
        assert!(except.includes("decoder.vec"));
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = Rng::new(0);
        let w = xavier_uniform(&mut rng, 10, 20);
        let b = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= b));
        assert_eq!(w.shape(), &[10, 20]);
    }
}
