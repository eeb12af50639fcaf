use num_traits::Float;

use super::{c, Grid1D, Params, State};
use crate::error::{Error, Result};

/// Centered periodic first difference `(φ_{i+1} - φ_{i-1}) / (2Δx)`.
pub fn dx_apply(phi: &[f64], dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; phi.len()];
    dx_into(phi, dx, &mut out);
    out
}

pub(super) fn dx_into<T: Float>(phi: &[T], dx: f64, out: &mut [T]) {
    let n = phi.len();
    let s: T = c(0.5 / dx);
    for i in 0..n {
        let next = phi[if i + 1 == n { 0 } else { i + 1 }];
        let prev = phi[if i == 0 { n - 1 } else { i - 1 }];
        out[i] = s * (next - prev);
    }
}

pub(super) fn hamiltonian(dx: f64, chi: &[f64], phi: &[f64]) -> f64 {
    let d = dx_apply(phi, dx);
    chi.iter()
        .zip(&d)
        .map(|(&x, &dp)| 0.5 * (1.0 + x) * dp * dp + 0.5 * x * x)
        .sum()
}

/// `dH_c/dχ = ½(Dφ)² + χ`.
pub(super) fn grad_chi<T: Float>(dx: f64, chi: &[T], phi: &[T], out: &mut [T]) {
    dx_into(phi, dx, out);
    let half: T = c(0.5);
    for (o, &x) in out.iter_mut().zip(chi) {
        *o = half * *o * *o + x;
    }
}

/// `dH_c/dφ = -D((1+χ) Dφ)`.
pub(super) fn grad_phi<T: Float>(dx: f64, chi: &[T], phi: &[T], out: &mut [T]) {
    let mut flux = vec![T::zero(); phi.len()];
    dx_into(phi, dx, &mut flux);
    for (f, &x) in flux.iter_mut().zip(chi) {
        *f = (T::one() + x) * *f;
    }
    dx_into(&flux, dx, out);
    for o in out.iter_mut() {
        *o = -*o;
    }
}

fn check_sw(s: &State) -> Result<()> {
    match s.mu {
        Params::ShallowWater(_) => Ok(()),
        _ => Err(Error::usage(
            "shallow-water Hamiltonian called on a wave state",
        )),
    }
}

/// Computational shallow-water Hamiltonian, `q = χ`, `p = φ`.
pub fn sw_hamiltonian(s: &State, grid: &Grid1D) -> Result<f64> {
    check_sw(s)?;
    Ok(hamiltonian(grid.dx, &s.q, &s.p))
}

/// `(dH_c/dχ, dH_c/dφ)`.
pub fn sw_grad(s: &State, grid: &Grid1D) -> Result<(Vec<f64>, Vec<f64>)> {
    check_sw(s)?;
    let n = s.q.len();
    let (mut gq, mut gp) = (vec![0.0; n], vec![0.0; n]);
    grad_chi(grid.dx, &s.q, &s.p, &mut gq);
    grad_phi(grid.dx, &s.q, &s.p, &mut gp);
    Ok((gq, gp))
}
