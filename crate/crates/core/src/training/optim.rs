use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::neural::NetParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const BASE_LR: f64 = 1e-3;
const DECAY: f64 = 0.99;
const DECAY_EVERY: usize = 150;

/// Staircase schedule `0.001 · 0.99^⌊k'/150⌋`, with `k'` counted from the latest reset.
pub fn lr_schedule(k: usize, resets: &[usize]) -> f64 {
    let since = resets
        .iter()
        .copied()
        .filter(|&r| r <= k)
        .max()
        .unwrap_or(0);
    BASE_LR * DECAY.powi(((k - since) / DECAY_EVERY) as i32)
}

/// Adam moments, step counter and schedule reset points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    #[serde(skip)]
    pub m: Vec<Tensor>,
    #[serde(skip)]
    pub v: Vec<Tensor>,
    pub k: usize,
    pub resets: Vec<usize>,
}

impl OptimizerState {
    pub fn new(params: &NetParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            k: 0,
            resets: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.k, &self.resets)
    }

    /// Restart the schedule decay at the current step.
    pub fn reset_schedule(&mut self) {
        self.resets.push(self.k);
    }
}

/// One bias-corrected Adam update. Gradient ids are tensor indices; missing ids count as zero.
pub fn adam_step(
    params: &mut NetParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if state.m.len() != params.tensors.len() {
        return Err(Error::dimension(
            "optimizer state does not match the parameters",
        ));
    }
    state.k += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.k as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.k as i32);
    for (i, p) in params.tensors.iter_mut().enumerate() {
        let g = grads.get(i);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::dimension(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let mut m = std::mem::take(&mut state.m[i]).into_data();
        let mut v = std::mem::take(&mut state.v[i]).into_data();
        let shape = p.shape().to_vec();
        let mut w = std::mem::take(p).into_data();
        for j in 0..w.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
        }
        state.m[i] = Tensor::new(shape.clone(), m)?;
        state.v[i] = Tensor::new(shape.clone(), v)?;
        *p = Tensor::new(shape, w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn staircase() {
        assert_eq!(lr_schedule(0, &[]), 0.001);
        assert_eq!(lr_schedule(149, &[]), 0.001);
        assert!((lr_schedule(150, &[]) - 0.00099).abs() < 1e-18);
        assert!((lr_schedule(450, &[]) - 0.001 * 0.99f64.powi(3)).abs() < 1e-18);
        assert_eq!(lr_schedule(1000, &[1000]), 0.001);
        assert_eq!(lr_schedule(1149, &[1000]), 0.001);
        let mut prev = f64::INFINITY;
        for k in 0..3000 {
            let lr = lr_schedule(k, &[]);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn one_param(v: f64) -> NetParams {
        NetParams {
            tensors: vec![Tensor::vector(vec![v])],
            seed: 0,
        }
    }

    fn grads_of(g: f64) -> Gradients {
        let mut tape = Tape::new();
        let x = tape.param(0, Tensor::vector(vec![1.0]));
        let s = tape.sum(x);
        let l = tape.scale(s, g);
        tape.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = one_param(0.7);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &Gradients::default(), &mut st, 1e-3).unwrap();
        assert_eq!(p.tensors[0].data(), &[0.7]);
        assert_eq!(st.k, 1);
    }

    #[test]
    fn first_step_hand_computation() {
        let g = 0.3;
        let mut p = one_param(1.0);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &grads_of(g), &mut st, 1e-3).unwrap();
        let m_hat = (1.0 - ADAM_BETA1) * g / (1.0 - ADAM_BETA1);
        let v_hat = (1.0 - ADAM_BETA2) * g * g / (1.0 - ADAM_BETA2);
        let expect = 1.0 - 1e-3 * m_hat / (v_hat.sqrt() + ADAM_EPS);
        assert!((p.tensors[0].data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = one_param(1.0);
            let mut st = OptimizerState::new(&p);
            for k in 0..20 {
                adam_step(
                    &mut p,
                    &grads_of((k as f64).sin()),
                    &mut st,
                    lr_schedule(k, &[]),
                )
                .unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
