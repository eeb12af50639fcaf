use std::cell::RefCell;

use num_traits::Float;

use super::mlp::{MlpEval, MlpScratch};
use super::model::{DynamicsKind, ReducedNet};
use super::params::NetParams;
use crate::error::{Error, Result};
use crate::integrators::{HamiltonianField, VectorField};

fn eval_for<T: Float>(
    net: &ReducedNet,
    params: &NetParams,
    kind: DynamicsKind,
    mu: &[f64],
) -> Result<MlpEval<T>> {
    if net.kind != kind {
        return Err(Error::usage(format!(
            "model has {:?} dynamics, {kind:?} requested",
            net.kind
        )));
    }
    if mu.len() != net.param_dim() {
        return Err(Error::dimension(format!(
            "parameter of length {}, expected {}",
            mu.len(),
            net.param_dim()
        )));
    }
    MlpEval::new(&net.dynamics, &net.dynamics_params(params))
}

/// Learned latent Hamiltonian `H̄(·, μ)` at a fixed parameter, usable by the shared integrators.
///
/// `μ` is folded into the first layer, so each evaluation only sees `(q, p)`.
pub struct LatentHnn<T> {
    mlp: MlpEval<T>,
    k: usize,
    scratch: RefCell<(MlpScratch<T>, Vec<T>, Vec<T>)>,
}

impl<T: Float> LatentHnn<T> {
    /// `mu` is the standardized parameter vector.
    pub fn new(net: &ReducedNet, params: &NetParams, mu: &[f64]) -> Result<Self> {
        let tail: Vec<T> = mu.iter().map(|&v| T::from(v).unwrap()).collect();
        let mlp = eval_for(net, params, DynamicsKind::Hnn, mu)?.with_fixed_tail(&tail);
        let k = net.latent_dim() / 2;
        let scratch = RefCell::new((
            mlp.scratch(),
            vec![T::zero(); 2 * k],
            vec![T::zero(); 2 * k],
        ));
        Ok(LatentHnn { mlp, k, scratch })
    }

    pub fn value(&self, q: &[T], p: &[T]) -> T {
        let x: Vec<T> = q.iter().chain(p).copied().collect();
        let mut out = [T::zero()];
        self.mlp.forward(&x, &mut out);
        out[0]
    }

    /// Writes the `k` gradient entries starting at `offset` (0: `∂H̄/∂q`, `k`: `∂H̄/∂p`).
    fn gradient_part(&self, q: &[T], p: &[T], offset: usize, out: &mut [T]) {
        let mut guard = self.scratch.borrow_mut();
        let (s, x, g) = &mut *guard;
        x[..self.k].copy_from_slice(q);
        x[self.k..].copy_from_slice(p);
        self.mlp.input_gradient_with(x, g, s);
        out.copy_from_slice(&g[offset..offset + self.k]);
    }
}

impl<T: Float> HamiltonianField<T> for LatentHnn<T> {
    fn dim(&self) -> usize {
        self.k
    }

    fn separable(&self) -> bool {
        false
    }

    fn grad_q(&self, q: &[T], p: &[T], out: &mut [T]) {
        self.gradient_part(q, p, 0, out);
    }

    fn grad_p(&self, q: &[T], p: &[T], out: &mut [T]) {
        self.gradient_part(q, p, self.k, out);
    }
}

/// Learned latent vector field at a fixed parameter.
pub struct LatentFlow<T> {
    mlp: MlpEval<T>,
    mu: Vec<T>,
    dim: usize,
}

impl<T: Float> LatentFlow<T> {
    pub fn new(net: &ReducedNet, params: &NetParams, mu: &[f64]) -> Result<Self> {
        let mlp = eval_for(net, params, DynamicsKind::Flow, mu)?;
        Ok(LatentFlow {
            mlp,
            dim: net.latent_dim(),
            mu: mu.iter().map(|&v| T::from(v).unwrap()).collect(),
        })
    }
}

impl<T: Float> VectorField<T> for LatentFlow<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[T], out: &mut [T]) {
        let mut x = Vec::with_capacity(self.mlp.input_dim());
        x.extend_from_slice(y);
        x.extend_from_slice(&self.mu);
        self.mlp.forward(&x, out);
    }
}
