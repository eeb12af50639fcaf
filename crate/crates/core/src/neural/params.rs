use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::TensorSpec;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered weights and biases of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub tensors: Vec<Tensor>,
    pub seed: u64,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(specs: &[TensorSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.fans {
                Some((fi, fo)) => {
                    let bound = (6.0 / (fi + fo) as f64).sqrt();
                    let data = (0..s.len())
                        .map(|_| rng.gen_range(-bound..=bound))
                        .collect();
                    Tensor::new(s.shape.clone(), data).expect("spec shape")
                }
                None => Tensor::zeros(&s.shape),
            })
            .collect();
        NetParams { tensors, seed }
    }

    pub fn zeros(specs: &[TensorSpec]) -> Self {
        NetParams {
            tensors: specs.iter().map(|s| Tensor::zeros(&s.shape)).collect(),
            seed: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Check tensor shapes against a layout.
    pub fn check(&self, specs: &[TensorSpec]) -> Result<()> {
        if self.tensors.len() != specs.len()
            || self
                .tensors
                .iter()
                .zip(specs)
                .any(|(t, s)| t.shape() != s.shape.as_slice())
        {
            return Err(Error::Architecture(
                "parameter shapes do not match the architecture".into(),
            ));
        }
        Ok(())
    }

    /// Register every tensor on `tape` with consecutive ids starting at `base_id`.
    pub fn bind(&self, tape: &mut Tape, base_id: usize) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(base_id + i, t.clone()))
            .collect()
    }

    /// Register every tensor as a constant (no gradient).
    pub fn bind_const(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }
}
