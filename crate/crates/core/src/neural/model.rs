use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::arch::{AeArchitecture, MlpArchitecture, TensorSpec};
use super::params::NetParams;
use super::{ae, mlp};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::integrators::IntegratorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    /// Scalar reduced Hamiltonian rolled out with Störmer-Verlet.
    Hnn,
    /// Unconstrained reduced vector field rolled out with RK2.
    Flow,
}

/// Autoencoder plus latent dynamics network, sharing one flat parameter list.
///
/// Tensor order: encoder halves, decoder halves, dynamics network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedNet {
    pub ae: AeArchitecture,
    pub dynamics: MlpArchitecture,
    pub kind: DynamicsKind,
}

struct Layout {
    encoders: Vec<Range<usize>>,
    decoders: Vec<Range<usize>>,
    dynamics: Range<usize>,
}

impl ReducedNet {
    pub fn new(ae: AeArchitecture, dynamics: MlpArchitecture, kind: DynamicsKind) -> Result<Self> {
        let net = ReducedNet { ae, dynamics, kind };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.ae.validate()?;
        self.dynamics.validate()?;
        let latent = self.ae.latent_dim;
        let expect_out = match self.kind {
            DynamicsKind::Hnn => 1,
            DynamicsKind::Flow => latent,
        };
        if self.dynamics.input_dim < latent || self.dynamics.output_dim != expect_out {
            return Err(Error::Architecture(format!(
                "dynamics network {}→{} does not fit latent dimension {latent}",
                self.dynamics.input_dim, self.dynamics.output_dim
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim
    }

    pub fn param_dim(&self) -> usize {
        self.dynamics.input_dim - self.ae.latent_dim
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut s = Vec::new();
        for _ in 0..self.ae.halves() {
            s.extend(self.ae.encoder_specs());
        }
        for _ in 0..self.ae.halves() {
            s.extend(self.ae.decoder_specs());
        }
        s.extend(self.dynamics.specs());
        s
    }

    fn layout(&self) -> Layout {
        let ne = self.ae.encoder_specs().len();
        let nd = self.ae.decoder_specs().len();
        let h = self.ae.halves();
        let encoders = (0..h).map(|i| i * ne..(i + 1) * ne).collect();
        let base = h * ne;
        let decoders = (0..h).map(|i| base + i * nd..base + (i + 1) * nd).collect();
        let base = base + h * nd;
        let dynamics = base..base + self.dynamics.specs().len();
        Layout {
            encoders,
            decoders,
            dynamics,
        }
    }

    /// Range of tensor indices holding the dynamics network.
    pub fn dynamics_range(&self) -> Range<usize> {
        self.layout().dynamics
    }

    /// Range of tensor indices holding the encoders.
    pub fn encoder_range(&self) -> Range<usize> {
        let l = self.layout();
        l.encoders[0].start..l.encoders.last().unwrap().end
    }

    pub fn init(&self, seed: u64) -> NetParams {
        NetParams::init(&self.specs(), seed)
    }

    pub fn param_count(&self) -> usize {
        self.specs().iter().map(TensorSpec::len).sum()
    }

    /// Standalone dynamics-network parameters.
    pub fn dynamics_params(&self, params: &NetParams) -> NetParams {
        NetParams {
            tensors: params.tensors[self.dynamics_range()].to_vec(),
            seed: params.seed,
        }
    }

    /// Put every tensor on the tape, as trainable parameters (ids = tensor index) or constants.
    pub fn bind<'a>(
        &'a self,
        tape: &mut Tape,
        params: &NetParams,
        trainable: bool,
    ) -> Result<BoundNet<'a>> {
        params.check(&self.specs())?;
        let vars = if trainable {
            params.bind(tape, 0)
        } else {
            params.bind_const(tape)
        };
        let l = self.layout();
        Ok(BoundNet {
            net: self,
            encoders: l.encoders.into_iter().map(|r| vars[r].to_vec()).collect(),
            decoders: l.decoders.into_iter().map(|r| vars[r].to_vec()).collect(),
            dynamics: vars[l.dynamics].to_vec(),
        })
    }

    /// Encode standardized states (rows of `(q, p)`) without recording gradients.
    pub fn encode_states(&self, params: &NetParams, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, params, false)?;
        let x = tape.constant(rows_tensor(states, 2 * self.ae.input_length)?);
        let z = b.encode(&mut tape, x)?;
        Ok(split_rows(tape.value(z)))
    }

    /// Decode latents without recording gradients.
    pub fn decode_latents(
        &self,
        params: &NetParams,
        latents: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, params, false)?;
        let z = tape.constant(rows_tensor(latents, self.ae.latent_dim)?);
        let y = b.decode(&mut tape, z)?;
        Ok(split_rows(tape.value(y)))
    }
}

pub(crate) fn rows_tensor(rows: &[Vec<f64>], width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::dimension(format!(
                "row of length {} where {width} expected",
                r.len()
            )));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), width], data)
}

pub(crate) fn split_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape()[1];
    t.data().chunks_exact(w).map(<[f64]>::to_vec).collect()
}

/// A [`ReducedNet`] whose parameters live on a tape.
pub struct BoundNet<'a> {
    pub net: &'a ReducedNet,
    pub encoders: Vec<Vec<Var>>,
    pub decoders: Vec<Vec<Var>>,
    pub dynamics: Vec<Var>,
}

impl BoundNet<'_> {
    /// `(B, 2N)` standardized states to `(B, 2K)` latents.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_width(tape, x, 2 * self.net.ae.input_length, "encoder input")?;
        ae::encode(tape, &self.net.ae, &self.encoders, x)
    }

    /// `(B, 2K)` latents to `(B, 2N)` states.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        check_width(tape, z, self.net.ae.latent_dim, "decoder input")?;
        ae::decode(tape, &self.net.ae, &self.decoders, z)
    }

    fn dyn_input(&self, tape: &mut Tape, z: Var, mu: Var) -> Result<Var> {
        check_width(tape, z, self.net.latent_dim(), "latent")?;
        check_width(tape, mu, self.net.param_dim(), "parameter")?;
        if self.net.param_dim() == 0 {
            return Ok(z);
        }
        tape.concat_cols(&[z, mu])
    }

    /// Reduced Hamiltonian values, shape `(B, 1)`.
    pub fn hnn_value(&self, tape: &mut Tape, z: Var, mu: Var) -> Result<Var> {
        self.require(DynamicsKind::Hnn)?;
        let x = self.dyn_input(tape, z, mu)?;
        Ok(mlp::forward(tape, &self.net.dynamics, &self.dynamics, x)?.0)
    }

    /// `∇_ȳ H̄(ȳ, μ)`, shape `(B, 2K)`.
    pub fn hnn_gradient(&self, tape: &mut Tape, z: Var, mu: Var) -> Result<Var> {
        self.require(DynamicsKind::Hnn)?;
        let x = self.dyn_input(tape, z, mu)?;
        let g = mlp::input_gradient(tape, &self.net.dynamics, &self.dynamics, x)?;
        tape.slice_cols(g, 0, self.net.latent_dim())
    }

    /// Learned vector field, shape `(B, 2K)`.
    pub fn flow_field(&self, tape: &mut Tape, z: Var, mu: Var) -> Result<Var> {
        self.require(DynamicsKind::Flow)?;
        let x = self.dyn_input(tape, z, mu)?;
        Ok(mlp::forward(tape, &self.net.dynamics, &self.dynamics, x)?.0)
    }

    fn require(&self, kind: DynamicsKind) -> Result<()> {
        if self.net.kind != kind {
            return Err(Error::usage(format!(
                "operation needs a {kind:?} network, model has {:?}",
                self.net.kind
            )));
        }
        Ok(())
    }

    fn hnn_halves(&self, tape: &mut Tape, q: Var, p: Var, mu: Var) -> Result<(Var, Var)> {
        let k = self.net.latent_dim() / 2;
        let z = tape.concat_cols(&[q, p])?;
        let g = self.hnn_gradient(tape, z, mu)?;
        Ok((tape.slice_cols(g, 0, k)?, tape.slice_cols(g, k, k)?))
    }

    /// `s` Störmer-Verlet steps of the latent Hamiltonian system, recorded on the tape.
    ///
    /// The implicit stages are unrolled fixed-point iterations with the same stopping rule
    /// as the numerical integrator, evaluated on the whole batch at once.
    pub fn sv_rollout(
        &self,
        tape: &mut Tape,
        z: Var,
        mu: Var,
        s: usize,
        cfg: &IntegratorConfig,
    ) -> Result<Var> {
        self.require(DynamicsKind::Hnn)?;
        cfg.validate()?;
        let k = self.net.latent_dim() / 2;
        let h = 0.5 * cfg.dt;
        let mut q = tape.slice_cols(z, 0, k)?;
        let mut p = tape.slice_cols(z, k, k)?;
        for _ in 0..s {
            let mut half = p;
            let mut it = 0;
            loop {
                it += 1;
                let (gq, _) = self.hnn_halves(tape, q, half, mu)?;
                let next = tape.axpy(p, gq, -h)?;
                let diff = converged(tape, next, half, cfg, it)?;
                half = next;
                if diff {
                    break;
                }
            }
            let (_, g0) = self.hnn_halves(tape, q, half, mu)?;
            let mut next = tape.axpy(q, g0, cfg.dt)?;
            let mut it = 0;
            loop {
                it += 1;
                let (_, g) = self.hnn_halves(tape, next, half, mu)?;
                let sum = tape.add(g0, g)?;
                let cand = tape.axpy(q, sum, h)?;
                let diff = converged(tape, cand, next, cfg, it)?;
                next = cand;
                if diff {
                    break;
                }
            }
            q = next;
            let (gq, _) = self.hnn_halves(tape, q, half, mu)?;
            p = tape.axpy(half, gq, -h)?;
        }
        tape.concat_cols(&[q, p])
    }

    /// `s` explicit midpoint (RK2) steps of the learned flow, recorded on the tape.
    pub fn rk2_rollout(&self, tape: &mut Tape, z: Var, mu: Var, s: usize, dt: f64) -> Result<Var> {
        self.require(DynamicsKind::Flow)?;
        let mut y = z;
        for _ in 0..s {
            let k1 = self.flow_field(tape, y, mu)?;
            let mid = tape.axpy(y, k1, 0.5 * dt)?;
            let k2 = self.flow_field(tape, mid, mu)?;
            y = tape.axpy(y, k2, dt)?;
        }
        Ok(y)
    }

    /// Latent prediction over `s` steps with the scheme matching the dynamics kind.
    pub fn predict_latent(
        &self,
        tape: &mut Tape,
        z: Var,
        mu: Var,
        s: usize,
        cfg: &IntegratorConfig,
    ) -> Result<Var> {
        match self.net.kind {
            DynamicsKind::Hnn => self.sv_rollout(tape, z, mu, s, cfg),
            DynamicsKind::Flow => self.rk2_rollout(tape, z, mu, s, cfg.dt),
        }
    }
}

fn check_width(tape: &Tape, x: Var, width: usize, what: &str) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != width {
        return Err(Error::dimension(format!(
            "{what} has shape {s:?}, expected (B, {width})"
        )));
    }
    Ok(())
}

/// Fixed-point stopping test on values; errors past the iteration cap.
fn converged(tape: &Tape, new: Var, old: Var, cfg: &IntegratorConfig, it: usize) -> Result<bool> {
    let a = tape.value(new).data();
    let b = tape.value(old).data();
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = cfg.fp_tol.max(8.0 * f64::EPSILON * scale);
    if diff <= tol {
        return Ok(true);
    }
    if it >= cfg.fp_max_iter || !diff.is_finite() {
        return Err(Error::Integration {
            iterations: it,
            residual: diff,
        });
    }
    Ok(false)
}
