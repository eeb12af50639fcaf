use num_traits::Float;

use super::arch::MlpArchitecture;
use super::params::NetParams;
use crate::autodiff::{Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Forward pass on the tape; returns the output and the hidden `(pre, post)` activations.
pub(crate) fn forward(
    tape: &mut Tape,
    arch: &MlpArchitecture,
    w: &[Var],
    x: Var,
) -> Result<(Var, Vec<(Var, Var)>)> {
    let layers = w.len() / 2;
    let mut h = x;
    let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
    for l in 0..layers {
        let z = tape.matmul(h, w[2 * l])?;
        let z = tape.add_row_bias(z, w[2 * l + 1])?;
        if l + 1 == layers {
            h = z;
        } else {
            h = tape.activation(z, arch.activation);
            hidden.push((z, h));
        }
    }
    Ok((h, hidden))
}

/// Gradient of a scalar-output MLP with respect to its whole input, as a tape expression.
///
/// Backpropagation written as a forward computation: `G = 1·W_Lᵀ`, then
/// `G ← (G ⊙ σ'(z_l)) W_lᵀ` down to the input, so parameter gradients of anything built
/// on top need only one reverse pass.
pub(crate) fn input_gradient(
    tape: &mut Tape,
    arch: &MlpArchitecture,
    w: &[Var],
    x: Var,
) -> Result<Var> {
    if arch.output_dim != 1 {
        return Err(Error::usage(
            "input gradient requires a scalar-output network",
        ));
    }
    let (_, hidden) = forward(tape, arch, w, x)?;
    let batch = tape.shape(x)[0];
    let layers = w.len() / 2;
    let ones = tape.constant(Tensor::full(&[batch, 1], 1.0));
    let mut g = tape.matmul_t(ones, w[2 * (layers - 1)], false, true)?;
    for l in (0..layers - 1).rev() {
        let (z, h) = hidden[l];
        let d = tape.activation_derivative_from_output(z, h, arch.activation)?;
        let gd = tape.mul(g, d)?;
        g = tape.matmul_t(gd, w[2 * l], false, true)?;
    }
    Ok(g)
}

#[inline]
fn act<T: Float>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Elu => {
            if x > T::zero() {
                x
            } else {
                x.exp() - T::one()
            }
        }
        // Through exp: about 3x cheaper than `tanh`, with absolute error near one ulp.
        Activation::Tanh => {
            let two = T::one() + T::one();
            T::one() - two / ((two * x).exp() + T::one())
        }
        Activation::Swish => x / (T::one() + (-x).exp()),
        Activation::None => x,
    }
}

/// `σ'(x)` given `y = σ(x)`.
#[inline]
fn act_deriv<T: Float>(kind: Activation, x: T, y: T) -> T {
    match kind {
        Activation::Elu => {
            if x > T::zero() {
                T::one()
            } else {
                y + T::one()
            }
        }
        Activation::Tanh => T::one() - y * y,
        Activation::Swish => {
            let s = T::one() / (T::one() + (-x).exp());
            s + x * s * (T::one() - s)
        }
        Activation::None => T::one(),
    }
}

/// Hidden pre-activations, activations and adjoint buffers of one gradient evaluation.
#[derive(Clone, Debug)]
pub struct MlpScratch<T> {
    z: Vec<Vec<T>>,
    h: Vec<Vec<T>>,
    g: Vec<T>,
    next: Vec<T>,
}

/// Tape-free single-sample MLP evaluation in any float precision.
#[derive(Clone, Debug)]
pub struct MlpEval<T> {
    /// Per layer: weights stored output-major (`out × in`) and biases.
    layers: Vec<(Vec<T>, Vec<T>)>,
    sizes: Vec<usize>,
    activation: Activation,
}

impl<T: Float> MlpEval<T> {
    pub fn new(arch: &MlpArchitecture, params: &NetParams) -> Result<Self> {
        params.check(&arch.specs())?;
        let sizes = arch.sizes();
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, s)| {
                let (nin, nout) = (s[0], s[1]);
                let w = params.tensors[2 * l].data();
                let mut wt = Vec::with_capacity(nin * nout);
                for o in 0..nout {
                    for i in 0..nin {
                        wt.push(T::from(w[i * nout + o]).unwrap());
                    }
                }
                let b = params.tensors[2 * l + 1]
                    .data()
                    .iter()
                    .map(|&v| T::from(v).unwrap())
                    .collect();
                (wt, b)
            })
            .collect();
        Ok(Self::from_layers(layers, sizes, arch.activation))
    }

    fn from_layers(
        layers: Vec<(Vec<T>, Vec<T>)>,
        sizes: Vec<usize>,
        activation: Activation,
    ) -> Self {
        MlpEval {
            layers,
            sizes,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn affine(&self, l: usize, x: &[T], out: &mut Vec<T>) {
        let (w, b) = &self.layers[l];
        let nin = self.sizes[l];
        out.clear();
        for (row, &bias) in w.chunks_exact(nin).zip(b) {
            out.push(row.iter().zip(x).fold(bias, |s, (a, v)| s + *a * *v));
        }
    }

    pub fn forward(&self, x: &[T], out: &mut [T]) {
        let mut h = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for l in 0..self.layers.len() {
            self.affine(l, &h, &mut z);
            if l != last {
                for v in z.iter_mut() {
                    *v = act(self.activation, *v);
                }
            }
            std::mem::swap(&mut h, &mut z);
        }
        out.copy_from_slice(&h);
    }

    /// `∂out/∂x` of a scalar-output network, written into `grad` (length = input dim).
    pub fn input_gradient(&self, x: &[T], grad: &mut [T]) {
        self.input_gradient_with(x, grad, &mut self.scratch());
    }

    /// Buffers for [`MlpEval::input_gradient_with`].
    pub fn scratch(&self) -> MlpScratch<T> {
        let hidden = &self.sizes[1..self.sizes.len() - 1];
        MlpScratch {
            z: hidden.iter().map(|&n| vec![T::zero(); n]).collect(),
            h: hidden.iter().map(|&n| vec![T::zero(); n]).collect(),
            g: Vec::new(),
            next: Vec::new(),
        }
    }

    /// Allocation-free [`MlpEval::input_gradient`].
    pub fn input_gradient_with(&self, x: &[T], grad: &mut [T], s: &mut MlpScratch<T>) {
        let hidden = self.layers.len() - 1;
        for l in 0..hidden {
            let (w, b) = &self.layers[l];
            let nin = self.sizes[l];
            let (done, rest) = s.h.split_at_mut(l);
            let input: &[T] = if l == 0 { x } else { &done[l - 1] };
            for ((row, &bias), (z, h)) in w
                .chunks_exact(nin)
                .zip(b)
                .zip(s.z[l].iter_mut().zip(rest[0].iter_mut()))
            {
                *z = row
                    .iter()
                    .zip(input)
                    .fold(bias, |acc, (a, v)| acc + *a * *v);
                *h = act(self.activation, *z);
            }
        }
        // Output layer weights (1 × n_last) give the starting adjoint.
        s.g.clear();
        s.g.extend_from_slice(&self.layers[hidden].0);
        for l in (0..hidden).rev() {
            for ((gi, &zi), &yi) in s.g.iter_mut().zip(&s.z[l]).zip(&s.h[l]) {
                *gi = *gi * act_deriv(self.activation, zi, yi);
            }
            let nin = self.sizes[l];
            s.next.clear();
            s.next.resize(nin, T::zero());
            for (row, &gi) in self.layers[l].0.chunks_exact(nin).zip(&s.g) {
                for (n, a) in s.next.iter_mut().zip(row) {
                    *n = *n + *a * gi;
                }
            }
            std::mem::swap(&mut s.g, &mut s.next);
        }
        grad.copy_from_slice(&s.g);
    }

    /// The same network with its trailing inputs fixed to `values`, folded into the
    /// first-layer bias.
    pub fn with_fixed_tail(&self, values: &[T]) -> Self {
        let nin = self.sizes[0];
        let keep = nin - values.len();
        let (w, b) = &self.layers[0];
        let mut w0 = Vec::with_capacity(keep * b.len());
        let mut b0 = b.clone();
        for (row, bias) in w.chunks_exact(nin).zip(b0.iter_mut()) {
            w0.extend_from_slice(&row[..keep]);
            *bias = row[keep..]
                .iter()
                .zip(values)
                .fold(*bias, |acc, (a, v)| acc + *a * *v);
        }
        let mut layers = self.layers.clone();
        layers[0] = (w0, b0);
        let mut sizes = self.sizes.clone();
        sizes[0] = keep;
        Self::from_layers(layers, sizes, self.activation)
    }
}
