use num_traits::Float;

use super::{c, Grid1D, Params, State, WaveFamily, WaveParams};
use crate::error::{Error, Result};

fn w(x: f64, p: &WaveParams) -> f64 {
    match p.family {
        WaveFamily::Linear => 0.5 * x * x,
        WaveFamily::Nonlinear => 0.5 * x * x + (p.mu_b * x).sin(),
    }
}

pub(super) fn hamiltonian(p: &WaveParams, dx: f64, u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut h = 0.0;
    for i in 0..n {
        let fwd = (u[(i + 1) % n] - u[i]) / dx;
        h += p.mu_a * w(fwd, p) + 10.0 * p.mu_c * u[i] * u[i] * u[i] + 0.5 * v[i] * v[i];
    }
    h
}

/// `dH_c/du`, written into `out`.
pub(super) fn grad_u<T: Float>(p: &WaveParams, dx: f64, u: &[T], out: &mut [T]) {
    let n = u.len();
    let inv_dx: T = c(1.0 / dx);
    let scale: T = c(p.mu_a / dx);
    let mu_b: T = c(p.mu_b);
    let g3: T = c(30.0 * p.mu_c);
    let nonlinear = p.family == WaveFamily::Nonlinear;
    let wprime = |x: T| {
        if nonlinear {
            x + mu_b * (mu_b * x).cos()
        } else {
            x
        }
    };
    // out[i] temporarily holds w'(forward difference at i).
    for i in 0..n {
        let next = if i + 1 == n { u[0] } else { u[i + 1] };
        out[i] = wprime((next - u[i]) * inv_dx);
    }
    let last = out[n - 1];
    let mut prev = last;
    for i in 0..n {
        let fwd = out[i];
        out[i] = scale * (prev - fwd) + g3 * u[i] * u[i];
        prev = fwd;
    }
}

fn check_wave(s: &State) -> Result<&WaveParams> {
    match &s.mu {
        Params::Wave(w) => Ok(w),
        _ => Err(Error::usage("wave Hamiltonian called on a non-wave state")),
    }
}

/// Computational wave Hamiltonian of a state.
pub fn wave_hamiltonian(s: &State, grid: &Grid1D) -> Result<f64> {
    let p = check_wave(s)?;
    Ok(hamiltonian(p, grid.dx, &s.q, &s.p))
}

/// `(dH_c/du, dH_c/dv)` of a wave state.
pub fn wave_grad(s: &State, grid: &Grid1D) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = check_wave(s)?;
    let mut gu = vec![0.0; s.q.len()];
    grad_u(p, grid.dx, &s.q, &mut gu);
    Ok((gu, s.p.clone()))
}
