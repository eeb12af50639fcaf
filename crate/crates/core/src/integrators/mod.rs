//! Symplectic and explicit one-step integrators with a shared rollout driver.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{Params, State};

/// A Hamiltonian system in canonical coordinates, exposed through its partial gradients.
///
/// `q` and `p` both have length [`HamiltonianField::dim`].
pub trait HamiltonianField<T: Float = f64> {
    fn dim(&self) -> usize;

    /// `true` when `grad_q` ignores `p` and `grad_p` ignores `q`.
    fn separable(&self) -> bool;

    fn grad_q(&self, q: &[T], p: &[T], out: &mut [T]);

    fn grad_p(&self, q: &[T], p: &[T], out: &mut [T]);
}

impl<T: Float, F: HamiltonianField<T> + ?Sized> HamiltonianField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn separable(&self) -> bool {
        (**self).separable()
    }
    fn grad_q(&self, q: &[T], p: &[T], out: &mut [T]) {
        (**self).grad_q(q, p, out)
    }
    fn grad_p(&self, q: &[T], p: &[T], out: &mut [T]) {
        (**self).grad_p(q, p, out)
    }
}

/// A general autonomous vector field `dy/dt = F(y)`.
pub trait VectorField<T: Float = f64> {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[T], out: &mut [T]);
}

/// `dy/dt = J∇H(y)` of a Hamiltonian field, with `y = (q, p)`.
pub struct Canonical<F>(pub F);

impl<T: Float, F: HamiltonianField<T>> VectorField<T> for Canonical<F> {
    fn dim(&self) -> usize {
        2 * self.0.dim()
    }

    fn eval(&self, y: &[T], out: &mut [T]) {
        let n = self.0.dim();
        let (q, p) = y.split_at(n);
        let (oq, op) = out.split_at_mut(n);
        self.0.grad_p(q, p, oq);
        self.0.grad_q(q, p, op);
        for v in op.iter_mut() {
            *v = -*v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SvExplicit,
    SvImplicit,
    Rk2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
}

fn default_fp_tol() -> f64 {
    1e-10
}

fn default_fp_max_iter() -> usize {
    100
}

impl IntegratorConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        IntegratorConfig {
            dt,
            scheme,
            fp_tol: default_fp_tol(),
            fp_max_iter: default_fp_max_iter(),
        }
    }

    /// Störmer-Verlet, explicit when the field allows it.
    pub fn stormer_verlet(dt: f64, separable: bool) -> Self {
        Self::new(
            dt,
            if separable {
                Scheme::SvExplicit
            } else {
                Scheme::SvImplicit
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.fp_tol > 0.0) || self.fp_max_iter == 0 {
            return Err(Error::Config(
                "fixed-point tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-point iteration counts of one implicit step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub stage1: usize,
    pub stage2: usize,
}

/// Aggregate solver statistics of a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RolloutStats {
    pub steps: usize,
    pub mean_stage1: f64,
    pub mean_stage2: f64,
    pub max_iterations: usize,
}

/// Explicit Störmer-Verlet step for a separable Hamiltonian `H¹(q) + H²(p)`.
pub fn sv_explicit_step(
    q: &[f64],
    p: &[f64],
    dt: f64,
    grad_h1: impl Fn(&[f64]) -> Vec<f64>,
    grad_h2: impl Fn(&[f64]) -> Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let g = grad_h1(q);
    let half: Vec<f64> = p.iter().zip(&g).map(|(p, g)| p - 0.5 * dt * g).collect();
    let v = grad_h2(&half);
    let q1: Vec<f64> = q.iter().zip(&v).map(|(q, v)| q + dt * v).collect();
    let g1 = grad_h1(&q1);
    let p1 = half
        .iter()
        .zip(&g1)
        .map(|(p, g)| p - 0.5 * dt * g)
        .collect();
    (q1, p1)
}

/// Implicit Störmer-Verlet step for a general Hamiltonian, stages solved by fixed-point iteration.
pub fn sv_implicit_step(
    q: &[f64],
    p: &[f64],
    dt: f64,
    grad_q: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    grad_p: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<f64>, StepStats)> {
    struct Closures<A, B>(A, B, usize);
    impl<A, B> HamiltonianField<f64> for Closures<A, B>
    where
        A: Fn(&[f64], &[f64]) -> Vec<f64>,
        B: Fn(&[f64], &[f64]) -> Vec<f64>,
    {
        fn dim(&self) -> usize {
            self.2
        }
        fn separable(&self) -> bool {
            false
        }
        fn grad_q(&self, q: &[f64], p: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&(self.0)(q, p));
        }
        fn grad_p(&self, q: &[f64], p: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&(self.1)(q, p));
        }
    }
    let field = Closures(grad_q, grad_p, q.len());
    let mut ws = Workspace::new(q.len());
    let (mut q1, mut p1) = (q.to_vec(), p.to_vec());
    let stats = implicit_step(&field, &mut q1, &mut p1, dt, cfg, &mut ws)?;
    Ok((q1, p1, stats))
}

/// Explicit midpoint rule: `y' = y + dt F(y + dt/2 F(y))`.
pub fn rk2_step(y: &[f64], dt: f64, field: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let k1 = field(y);
    let mid: Vec<f64> = y.iter().zip(&k1).map(|(y, k)| y + 0.5 * dt * k).collect();
    let k2 = field(&mid);
    y.iter().zip(&k2).map(|(y, k)| y + dt * k).collect()
}

struct Workspace<T> {
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
}

impl<T: Float> Workspace<T> {
    fn new(n: usize) -> Self {
        Workspace {
            a: vec![T::zero(); n],
            b: vec![T::zero(); n],
            c: vec![T::zero(); n],
            d: vec![T::zero(); n],
        }
    }
}

fn max_norm<T: Float>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Tolerance actually used: the configured one, floored at a few ulps of the iterate.
fn effective_tol<T: Float>(tol: f64, iterate: &[T]) -> T {
    let t = T::from(tol).unwrap();
    let floor = T::epsilon() * T::from(8.0).unwrap() * max_norm(iterate).max(T::one());
    t.max(floor)
}

fn implicit_step<T: Float, F: HamiltonianField<T> + ?Sized>(
    field: &F,
    q: &mut [T],
    p: &mut [T],
    dt: f64,
    cfg: &IntegratorConfig,
    ws: &mut Workspace<T>,
) -> Result<StepStats> {
    let h: T = T::from(0.5 * dt).unwrap();
    let dtt: T = T::from(dt).unwrap();
    let Workspace {
        a: half,
        b: g,
        c: next,
        d: g0,
    } = ws;

    // Stage 1: p½ = p - dt/2 ∇_q H(q, p½), starting from p.
    half.copy_from_slice(p);
    let mut stage1 = 0;
    loop {
        stage1 += 1;
        field.grad_q(q, half, g);
        let mut diff = T::zero();
        for i in 0..half.len() {
            let v = p[i] - h * g[i];
            diff = diff.max((v - half[i]).abs());
            half[i] = v;
        }
        if diff <= effective_tol(cfg.fp_tol, half) {
            break;
        }
        if stage1 >= cfg.fp_max_iter || !diff.is_finite() {
            return Err(Error::Integration {
                iterations: stage1,
                residual: diff.to_f64().unwrap_or(f64::NAN),
            });
        }
    }

    // Stage 2: q' = q + dt/2 (∇_p H(q, p½) + ∇_p H(q', p½)), starting from q + dt ∇_p H(q, p½).
    field.grad_p(q, half, g0);
    for i in 0..q.len() {
        next[i] = q[i] + dtt * g0[i];
    }
    let mut stage2 = 0;
    loop {
        stage2 += 1;
        field.grad_p(next, half, g);
        let mut diff = T::zero();
        for i in 0..q.len() {
            let v = q[i] + h * (g0[i] + g[i]);
            diff = diff.max((v - next[i]).abs());
            next[i] = v;
        }
        if diff <= effective_tol(cfg.fp_tol, next) {
            break;
        }
        if stage2 >= cfg.fp_max_iter || !diff.is_finite() {
            return Err(Error::Integration {
                iterations: stage2,
                residual: diff.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    q.copy_from_slice(next);

    // Stage 3: explicit.
    field.grad_q(q, half, g);
    for i in 0..p.len() {
        p[i] = half[i] - h * g[i];
    }
    Ok(StepStats { stage1, stage2 })
}

/// Shared driver: advance `(q, p)` by `n_steps` steps of the configured scheme in place,
/// calling `observe(step, q, p)` after every step.
///
/// The explicit scheme reuses `∇_q H` of the end of one step as the start of the next,
/// so each step costs one `grad_q` and one `grad_p` evaluation.
pub fn rollout<T, F, O>(
    field: &F,
    q: &mut [T],
    p: &mut [T],
    cfg: &IntegratorConfig,
    n_steps: usize,
    mut observe: O,
) -> Result<RolloutStats>
where
    T: Float,
    F: HamiltonianField<T> + ?Sized,
    O: FnMut(usize, &[T], &[T]) -> Result<()>,
{
    cfg.validate()?;
    let n = field.dim();
    if q.len() != n || p.len() != n {
        return Err(Error::dimension(format!(
            "state halves {} / {} for a field of dimension {n}",
            q.len(),
            p.len()
        )));
    }
    let mut stats = RolloutStats {
        steps: n_steps,
        ..Default::default()
    };
    match cfg.scheme {
        Scheme::SvExplicit => {
            if !field.separable() {
                return Err(Error::usage(
                    "explicit Störmer-Verlet needs a separable Hamiltonian",
                ));
            }
            let h: T = T::from(0.5 * cfg.dt).unwrap();
            let dt: T = T::from(cfg.dt).unwrap();
            let mut gq = vec![T::zero(); n];
            let mut gp = vec![T::zero(); n];
            field.grad_q(q, p, &mut gq);
            for step in 1..=n_steps {
                for i in 0..n {
                    p[i] = p[i] - h * gq[i];
                }
                field.grad_p(q, p, &mut gp);
                for i in 0..n {
                    q[i] = q[i] + dt * gp[i];
                }
                field.grad_q(q, p, &mut gq);
                for i in 0..n {
                    p[i] = p[i] - h * gq[i];
                }
                observe(step, q, p)?;
            }
        }
        Scheme::SvImplicit => {
            let mut ws = Workspace::new(n);
            let (mut s1, mut s2) = (0usize, 0usize);
            for step in 1..=n_steps {
                let st = implicit_step(field, q, p, cfg.dt, cfg, &mut ws)?;
                s1 += st.stage1;
                s2 += st.stage2;
                stats.max_iterations = stats.max_iterations.max(st.stage1).max(st.stage2);
                observe(step, q, p)?;
            }
            if n_steps > 0 {
                stats.mean_stage1 = s1 as f64 / n_steps as f64;
                stats.mean_stage2 = s2 as f64 / n_steps as f64;
            }
        }
        Scheme::Rk2 => {
            let canon = Canonical(field);
            let mut y: Vec<T> = q.iter().chain(p.iter()).copied().collect();
            let mut ws = Rk2Workspace::new(2 * n);
            for step in 1..=n_steps {
                rk2_in_place(&canon, &mut y, cfg.dt, &mut ws);
                q.copy_from_slice(&y[..n]);
                p.copy_from_slice(&y[n..]);
                observe(step, q, p)?;
            }
        }
    }
    Ok(stats)
}

struct Rk2Workspace<T> {
    k: Vec<T>,
    mid: Vec<T>,
}

impl<T: Float> Rk2Workspace<T> {
    fn new(n: usize) -> Self {
        Rk2Workspace {
            k: vec![T::zero(); n],
            mid: vec![T::zero(); n],
        }
    }
}

fn rk2_in_place<T: Float, V: VectorField<T> + ?Sized>(
    field: &V,
    y: &mut [T],
    dt: f64,
    ws: &mut Rk2Workspace<T>,
) {
    let h: T = T::from(0.5 * dt).unwrap();
    let dtt: T = T::from(dt).unwrap();
    field.eval(y, &mut ws.k);
    for i in 0..y.len() {
        ws.mid[i] = y[i] + h * ws.k[i];
    }
    field.eval(&ws.mid, &mut ws.k);
    for i in 0..y.len() {
        y[i] = y[i] + dtt * ws.k[i];
    }
}

/// Advance `y` in place by `n_steps` explicit-midpoint steps of a general vector field.
pub fn rollout_rk2<T, V, O>(
    field: &V,
    y: &mut [T],
    dt: f64,
    n_steps: usize,
    mut observe: O,
) -> Result<()>
where
    T: Float,
    V: VectorField<T> + ?Sized,
    O: FnMut(usize, &[T]) -> Result<()>,
{
    if y.len() != field.dim() {
        return Err(Error::dimension(format!(
            "state of length {} for a field of dimension {}",
            y.len(),
            field.dim()
        )));
    }
    let mut ws = Rk2Workspace::new(y.len());
    for step in 1..=n_steps {
        rk2_in_place(field, y, dt, &mut ws);
        observe(step, y)?;
    }
    Ok(())
}

/// `s` composed steps of the configured scheme applied to `y0 = (q, p)`.
pub fn predict_s<F: HamiltonianField<f64> + ?Sized>(
    y0: &[f64],
    s: usize,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<Vec<f64>> {
    let n = field.dim();
    if y0.len() != 2 * n {
        return Err(Error::dimension(format!(
            "state of length {} for a field of dimension {}",
            y0.len(),
            2 * n
        )));
    }
    let (mut q, mut p) = (y0[..n].to_vec(), y0[n..].to_vec());
    rollout(field, &mut q, &mut p, cfg, s, |_, _, _| Ok(()))?;
    q.extend_from_slice(&p);
    Ok(q)
}

/// Stored states of a time integration.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<(Vec<f64>, Vec<f64>)>,
    pub mu: Option<Params>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Integrate from `y0` for `n_steps`, keeping every state (including `y0`).
pub fn integrate<F: HamiltonianField<f64> + ?Sized>(
    y0: &State,
    n_steps: usize,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::usage("integrate needs at least one step"));
    }
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(y0.t);
    states.push((y0.q.clone(), y0.p.clone()));
    let (mut q, mut p) = (y0.q.clone(), y0.p.clone());
    rollout(field, &mut q, &mut p, cfg, n_steps, |n, q, p| {
        times.push(y0.t + n as f64 * cfg.dt);
        states.push((q.to_vec(), p.to_vec()));
        Ok(())
    })?;
    Ok(Trajectory {
        times,
        states,
        mu: Some(y0.mu),
    })
}
