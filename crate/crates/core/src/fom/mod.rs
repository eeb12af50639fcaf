//! Full-order models: grids, parameters, initial conditions, Hamiltonians and gradients.

mod shallow_water;
mod wave;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::HamiltonianField;

pub use shallow_water::{dx_apply, sw_grad, sw_hamiltonian};
pub use wave::{wave_grad, wave_hamiltonian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearWave,
    NonlinearWave,
    ShallowWater,
}

impl Family {
    /// Number of parameter components the family actually varies.
    pub fn param_dim(self) -> usize {
        match self {
            Family::LinearWave => 1,
            Family::NonlinearWave => 3,
            Family::ShallowWater => 2,
        }
    }

    pub fn is_separable(self) -> bool {
        !matches!(self, Family::ShallowWater)
    }

    pub fn grid(self, n: usize) -> Result<Grid1D> {
        match self {
            Family::ShallowWater => Grid1D::shallow_water(n),
            _ => Grid1D::wave(n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveFamily {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub mu_a: f64,
    pub mu_b: f64,
    pub mu_c: f64,
    pub family: WaveFamily,
}

impl WaveParams {
    pub fn linear(mu_a: f64) -> Self {
        WaveParams {
            mu_a,
            mu_b: 0.0,
            mu_c: 0.0,
            family: WaveFamily::Linear,
        }
    }

    pub fn nonlinear(mu_a: f64, mu_b: f64, mu_c: f64) -> Result<Self> {
        if !(mu_a > 0.0 && mu_b > 0.0 && mu_c > 0.0) {
            return Err(Error::Config(format!(
                "nonlinear wave parameters must be positive, got ({mu_a}, {mu_b}, {mu_c})"
            )));
        }
        Ok(WaveParams {
            mu_a,
            mu_b,
            mu_c,
            family: WaveFamily::Nonlinear,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwParams {
    pub c: f64,
    pub sigma: f64,
}

impl SwParams {
    pub fn new(c: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!(
                "shallow-water sigma must be positive, got {sigma}"
            )));
        }
        Ok(SwParams { c, sigma })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Wave(WaveParams),
    ShallowWater(SwParams),
}

impl Params {
    pub fn family(&self) -> Family {
        match self {
            Params::Wave(w) if w.family == WaveFamily::Linear => Family::LinearWave,
            Params::Wave(_) => Family::NonlinearWave,
            Params::ShallowWater(_) => Family::ShallowWater,
        }
    }

    /// Varying components, in the order fed to the networks.
    pub fn active(&self) -> Vec<f64> {
        match self {
            Params::Wave(w) if w.family == WaveFamily::Linear => vec![w.mu_a],
            Params::Wave(w) => vec![w.mu_a, w.mu_b, w.mu_c],
            Params::ShallowWater(s) => vec![s.c, s.sigma],
        }
    }

    pub fn from_active(family: Family, v: &[f64]) -> Result<Self> {
        if v.len() != family.param_dim() {
            return Err(Error::Config(format!(
                "{family:?} takes {} parameters, got {}",
                family.param_dim(),
                v.len()
            )));
        }
        Ok(match family {
            Family::LinearWave => Params::Wave(WaveParams::linear(v[0])),
            Family::NonlinearWave => Params::Wave(WaveParams::nonlinear(v[0], v[1], v[2])?),
            Family::ShallowWater => Params::ShallowWater(SwParams::new(v[0], v[1])?),
        })
    }
}

/// `count` points regularly spaced on the segment `[lo, hi]`, endpoints included.
pub fn segment_points(lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let t = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64
            };
            lo.iter().zip(hi).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect()
}

/// `count` points evenly inside the open segment `(lo, hi)`.
pub fn interior_points(lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let t = (i + 1) as f64 / (count + 1) as f64;
            lo.iter().zip(hi).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect()
}

/// Uniform periodic 1D grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n: usize,
    pub dx: f64,
    pub x: Vec<f64>,
    pub domain: (f64, f64),
    pub periodic: bool,
}

impl Grid1D {
    /// Nodes `x_i = i/(N-1)` on `[0, 1]`.
    pub fn wave(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes, got {n}"
            )));
        }
        let dx = 1.0 / (n - 1) as f64;
        let x = (0..n).map(|i| i as f64 * dx).collect();
        Ok(Grid1D {
            n,
            dx,
            x,
            domain: (0.0, 1.0),
            periodic: true,
        })
    }

    /// `N` nodes `x_i = -1 + 2i/N` on the periodic interval `[-1, 1)`.
    pub fn shallow_water(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes, got {n}"
            )));
        }
        let dx = 2.0 / n as f64;
        let x = (0..n).map(|i| -1.0 + i as f64 * dx).collect();
        Ok(Grid1D {
            n,
            dx,
            x,
            domain: (-1.0, 1.0),
            periodic: true,
        })
    }
}

/// A full-order phase-space point.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Params,
    pub t: f64,
}

/// Compactly supported single bump.
pub fn bump(r: f64) -> f64 {
    if (0.0..=1.0).contains(&r) {
        1.0 - 1.5 * r * r + 0.75 * r * r * r
    } else if r > 1.0 && r <= 2.0 {
        0.25 * (2.0 - r).powi(3)
    } else {
        0.0
    }
}

pub fn initial_state(params: &Params, grid: &Grid1D) -> Result<State> {
    let expected = params.family().grid(grid.n)?;
    if expected.domain != grid.domain {
        return Err(Error::usage(format!(
            "grid on {:?} does not match the {:?} domain",
            grid.domain,
            params.family()
        )));
    }
    let q = match params {
        Params::Wave(_) => grid
            .x
            .iter()
            .map(|&x| bump(10.0 * (x - 0.5).abs()))
            .collect(),
        Params::ShallowWater(s) => {
            let a = 0.02 / (s.sigma * (2.0 * std::f64::consts::PI).sqrt());
            grid.x
                .iter()
                .map(|&x| {
                    let z = (x - s.c) / s.sigma;
                    a * (-0.5 * z * z).exp()
                })
                .collect()
        }
    };
    Ok(State {
        q,
        p: vec![0.0; grid.n],
        mu: *params,
        t: 0.0,
    })
}

/// A full-order model: parameter record plus grid, usable as an integrator field.
#[derive(Clone, Debug)]
pub struct Fom {
    pub params: Params,
    pub grid: Grid1D,
}

impl Fom {
    pub fn new(params: Params, grid: Grid1D) -> Result<Self> {
        let expected = params.family().grid(grid.n)?;
        if expected.domain != grid.domain {
            return Err(Error::usage("grid does not match the model family"));
        }
        Ok(Fom { params, grid })
    }

    pub fn for_family(params: Params, n: usize) -> Result<Self> {
        let grid = params.family().grid(n)?;
        Ok(Fom { params, grid })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn initial_state(&self) -> Result<State> {
        initial_state(&self.params, &self.grid)
    }

    /// Computational Hamiltonian `H_c(q, p)`.
    pub fn hamiltonian(&self, q: &[f64], p: &[f64]) -> f64 {
        match &self.params {
            Params::Wave(w) => wave::hamiltonian(w, self.grid.dx, q, p),
            Params::ShallowWater(_) => shallow_water::hamiltonian(self.grid.dx, q, p),
        }
    }
}

impl<T: Float> HamiltonianField<T> for Fom {
    fn dim(&self) -> usize {
        self.grid.n
    }

    fn separable(&self) -> bool {
        self.params.family().is_separable()
    }

    fn grad_q(&self, q: &[T], p: &[T], out: &mut [T]) {
        match &self.params {
            Params::Wave(w) => wave::grad_u(w, self.grid.dx, q, out),
            Params::ShallowWater(_) => shallow_water::grad_chi(self.grid.dx, q, p, out),
        }
    }

    fn grad_p(&self, q: &[T], p: &[T], out: &mut [T]) {
        match &self.params {
            Params::Wave(_) => out.copy_from_slice(p),
            Params::ShallowWater(_) => shallow_water::grad_phi(self.grid.dx, q, p, out),
        }
    }
}

#[inline]
pub(crate) fn c<T: Float>(x: f64) -> T {
    T::from(x).expect("representable constant")
}
