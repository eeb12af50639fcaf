use std::time::Instant;

use log::{info, warn};
use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ReducedModel};
use super::config::{ExperimentConfig, Method};
use super::snapshot::{fom_trajectory, SnapshotReader};
use crate::error::{Error, Result};
use crate::fom::{Family, Fom, Params};
use crate::integrators::{
    rollout, rollout_rk2, HamiltonianField, IntegratorConfig, RolloutStats, Scheme,
};
use crate::linear::{
    cotangent_lift_from_gram, pod_basis_from_gram, project, reconstruct, GramAccumulator,
    LinearRom, SymplecticBasis,
};
use crate::neural::{DynamicsKind, LatentFlow, LatentHnn, NetParams, ReducedNet};
use crate::training::{build_dataset, train, History, LossValues, Preprocessor, TrajectoryData};

/// Latent states decoded per batch.
const DECODE_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Result of a reduce run.
pub struct Reduction {
    pub checkpoint: Checkpoint,
    pub history: Option<History>,
}

fn check_snapshots(cfg: &ExperimentConfig, reader: &SnapshotReader) -> Result<()> {
    let h = reader.header();
    if h.family != cfg.family || h.n != cfg.n || h.dt != cfg.dt {
        return Err(Error::Config(format!(
            "snapshots ({:?}, N={}, dt={}) do not match the configuration ({:?}, N={}, dt={})",
            h.family, h.n, h.dt, cfg.family, cfg.n, cfg.dt
        )));
    }
    if h.n_train == 0 {
        return Err(Error::Config(
            "snapshot file has no training trajectories".into(),
        ));
    }
    Ok(())
}

/// Leading basis of the training trajectories, streamed one trajectory at a time.
pub fn linear_basis(
    method: Method,
    k: usize,
    n: usize,
    trajs: impl Iterator<Item = Result<TrajectoryData>>,
) -> Result<SymplecticBasis> {
    let dim = match method {
        Method::Psd => n,
        Method::Pod => 2 * n,
        _ => return Err(Error::usage("linear_basis needs psd or pod")),
    };
    let mut acc = GramAccumulator::new(dim);
    for t in trajs {
        // States are (q, p) back to back: read in chunks of N they are the columns of the
        // stacked matrix [Q, P]; in chunks of 2N, the snapshot matrix itself.
        let flat: Vec<f64> = t?.states.concat();
        acc.add_columns(&flat)?;
    }
    match method {
        Method::Psd => cotangent_lift_from_gram(&acc, k),
        _ => pod_basis_from_gram(&acc, k),
    }
}

/// Build the reduced model described by `cfg` from a snapshot file.
pub fn reduce(cfg: &ExperimentConfig, reader: &mut SnapshotReader) -> Result<Reduction> {
    cfg.validate()?;
    check_snapshots(cfg, reader)?;
    let n_train = reader.header().n_train;
    if cfg.method.is_linear() {
        let trajs = (0..n_train).map(|j| reader.read_trajectory(j));
        let basis = linear_basis(cfg.method, cfg.k, cfg.n, trajs)?;
        info!(
            "{:?} basis: leading singular values {:?}",
            cfg.method,
            &basis.sigma[..basis.sigma.len().min(4)]
        );
        return Ok(Reduction {
            checkpoint: Checkpoint::linear(cfg, basis)?,
            history: None,
        });
    }
    let (train_set, val_set) = reader.read_split()?;
    if val_set.is_empty() {
        return Err(Error::Config(
            "neural methods need validation trajectories in the snapshot file".into(),
        ));
    }
    let trained = train_network(cfg, &train_set, &val_set)?;
    let history = trained.history.clone();
    Ok(Reduction {
        checkpoint: trained.into_checkpoint(cfg)?,
        history: Some(history),
    })
}

/// Output of [`train_network`].
pub struct TrainedNetwork {
    pub net: ReducedNet,
    pub params: NetParams,
    pub pre: Preprocessor,
    pub history: History,
    /// Unweighted validation losses of the final parameters.
    pub val_losses: LossValues,
}

impl TrainedNetwork {
    pub fn into_checkpoint(self, cfg: &ExperimentConfig) -> Result<Checkpoint> {
        let steps = self.history.len();
        Checkpoint::neural(cfg, self.net, self.params, self.pre, steps)
    }
}

/// Standardize, sample pairs and train the configured autoencoder + dynamics network.
pub fn train_network(
    cfg: &ExperimentConfig,
    train_set: &[TrajectoryData],
    val_set: &[TrajectoryData],
) -> Result<TrainedNetwork> {
    let net = cfg.reduced_net()?;
    let pre = Preprocessor::fit(train_set)?;
    let train_std: Vec<_> = train_set.iter().map(|t| pre.apply_trajectory(t)).collect();
    let val_std: Vec<_> = val_set.iter().map(|t| pre.apply_trajectory(t)).collect();
    let (mut sampler, val) = build_dataset(train_std, &val_std, cfg.s, cfg.val_pairs, cfg.seed)?;
    let tcfg = cfg.train_config();
    info!(
        "training {:?} ({} parameters) for up to {} steps",
        cfg.method,
        net.param_count(),
        tcfg.steps
    );
    let out = train(&net, net.init(cfg.seed), &mut sampler, &val, &tcfg)?;
    info!("validation losses {:?}", out.val_losses);
    Ok(TrainedNetwork {
        net,
        params: out.params,
        pre,
        history: out.history,
        val_losses: out.val_losses,
    })
}

/// Decoded reduced-model trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub dt: f64,
    /// `steps + 1` full states `(q, p)`.
    pub states: Vec<Vec<f64>>,
    /// Matching reduced states `(q̄, p̄)`.
    pub latent: Vec<Vec<f64>>,
    pub stats: Option<RolloutStats>,
}

fn warn_outside(ckpt: &Checkpoint, mu: &[f64]) {
    let r = &ckpt.manifest.train_range;
    let inside = mu
        .iter()
        .zip(r.lo.iter().zip(&r.hi))
        .all(|(&m, (&a, &b))| m >= a.min(b) && m <= a.max(b));
    if !inside {
        warn!(
            "parameter {mu:?} lies outside the training range {:?}..{:?}",
            r.lo, r.hi
        );
    }
}

/// Latent integrator of a checkpoint: Störmer-Verlet (explicit when separable) or RK2.
pub fn latent_integrator(ckpt: &Checkpoint, separable: bool) -> IntegratorConfig {
    let m = &ckpt.manifest;
    let scheme = match m.method {
        Method::Aeflow => Scheme::Rk2,
        _ if separable => Scheme::SvExplicit,
        _ => Scheme::SvImplicit,
    };
    IntegratorConfig {
        dt: m.dt,
        scheme,
        fp_tol: m.fp_tol,
        fp_max_iter: m.fp_max_iter,
    }
}

fn full_model(ckpt: &Checkpoint, mu: &[f64]) -> Result<Fom> {
    Fom::for_family(
        Params::from_active(ckpt.manifest.family, mu)?,
        ckpt.manifest.n,
    )
}

/// Reduced initial condition `ȳ⁰` at `mu`.
pub fn encode_initial(ckpt: &Checkpoint, mu: &[f64]) -> Result<Vec<f64>> {
    let fom = full_model(ckpt, mu)?;
    let y0 = fom.initial_state()?;
    let y: Vec<f64> = y0.q.iter().chain(&y0.p).copied().collect();
    match &ckpt.model {
        ReducedModel::Linear(b) => project(&y, b),
        ReducedModel::Neural { net, params, pre } => {
            Ok(net.encode_states(params, &[pre.apply_state(&y)])?.remove(0))
        }
    }
}

/// Full states from reduced ones.
pub fn decode(ckpt: &Checkpoint, latent: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match &ckpt.model {
        ReducedModel::Linear(b) => latent.iter().map(|z| reconstruct(z, b)).collect(),
        ReducedModel::Neural { net, params, pre } => {
            let mut out = Vec::with_capacity(latent.len());
            for chunk in latent.chunks(DECODE_CHUNK) {
                out.extend(
                    net.decode_latents(params, chunk)?
                        .iter()
                        .map(|y| pre.invert_state(y)),
                );
            }
            Ok(out)
        }
    }
}

/// Advance the reduced state `z` by `steps` steps, calling `observe` after each.
pub fn roll_latent<T: Float>(
    ckpt: &Checkpoint,
    mu: &[f64],
    z: &mut [T],
    steps: usize,
    mut observe: impl FnMut(usize, &[T]) -> Result<()>,
) -> Result<Option<RolloutStats>> {
    let k = z.len() / 2;
    let mut run = |field: &dyn HamiltonianField<T>,
                   cfg: IntegratorConfig,
                   z: &mut [T]|
     -> Result<RolloutStats> {
        let (mut q, mut p) = (z[..k].to_vec(), z[k..].to_vec());
        let mut buf = vec![T::zero(); 2 * k];
        let stats = rollout(field, &mut q, &mut p, &cfg, steps, |n, q, p| {
            buf[..k].copy_from_slice(q);
            buf[k..].copy_from_slice(p);
            observe(n, &buf)
        })?;
        z[..k].copy_from_slice(&q);
        z[k..].copy_from_slice(&p);
        Ok(stats)
    };
    match &ckpt.model {
        ReducedModel::Linear(b) => {
            let rom = LinearRom::<T>::new(b, full_model(ckpt, mu)?)?;
            let cfg = latent_integrator(ckpt, rom.separable());
            run(&rom, cfg, z).map(Some)
        }
        ReducedModel::Neural { net, params, pre } => {
            let mu_std = pre.apply_mu(mu);
            match net.kind {
                DynamicsKind::Hnn => {
                    let field = LatentHnn::<T>::new(net, params, &mu_std)?;
                    run(&field, latent_integrator(ckpt, false), z).map(Some)
                }
                DynamicsKind::Flow => {
                    let field = LatentFlow::<T>::new(net, params, &mu_std)?;
                    rollout_rk2(&field, z, ckpt.manifest.dt, steps, observe)?;
                    Ok(None)
                }
            }
        }
    }
}

/// Encode the initial condition at `mu`, roll the reduced model `steps` steps and decode
/// every state.
pub fn predict(ckpt: &Checkpoint, mu: &[f64], steps: usize) -> Result<Prediction> {
    warn_outside(ckpt, mu);
    let z0 = encode_initial(ckpt, mu)?;
    let mut latent = Vec::with_capacity(steps + 1);
    latent.push(z0.clone());
    let mut z = z0;
    let stats = roll_latent(ckpt, mu, &mut z, steps, |_, z| {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "reduced solution at {mu:?} became non-finite"
            )));
        }
        latent.push(z.to_vec());
        Ok(())
    })?;
    let states = decode(ckpt, &latent)?;
    Ok(Prediction {
        mu: mu.to_vec(),
        dt: ckpt.manifest.dt,
        states,
        latent,
        stats,
    })
}

/// Relative discrete L² errors of the `q` and `p` halves over steps `1..`:
/// `sqrt(Σ_n Σ_i (ref − pred)² / Σ_n Σ_i ref²)` (the Δt·Δx weights cancel).
pub fn relative_errors(reference: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<(f64, f64)> {
    if reference.len() != predicted.len() || reference.is_empty() {
        return Err(Error::dimension(format!(
            "{} reference vs {} predicted states",
            reference.len(),
            predicted.len()
        )));
    }
    let n = reference[0].len() / 2;
    let (mut num, mut den) = ([0.0; 2], [0.0; 2]);
    for (r, p) in reference.iter().zip(predicted).skip(1) {
        if r.len() != 2 * n || p.len() != 2 * n {
            return Err(Error::dimension("state length mismatch"));
        }
        for (i, (a, b)) in r.iter().zip(p).enumerate() {
            let h = usize::from(i >= n);
            num[h] += (a - b) * (a - b);
            den[h] += a * a;
        }
    }
    let ratio = |h: usize| {
        if den[h] > 0.0 {
            (num[h] / den[h]).sqrt()
        } else if num[h] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok((ratio(0), ratio(1)))
}

/// `max_t |H(t) − H(0)| / |H(0)|`.
pub fn hamiltonian_drift(h: &[f64]) -> f64 {
    let h0 = h.first().copied().unwrap_or(0.0);
    let dev = h.iter().map(|v| (v - h0).abs()).fold(0.0, f64::max);
    if h0 == 0.0 {
        dev
    } else {
        dev / h0.abs()
    }
}

/// Errors and Hamiltonian traces at one test parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub name: String,
    pub mu: Vec<f64>,
    pub err_q: f64,
    pub err_p: f64,
    /// `H_c` of the decoded prediction at every stored step.
    pub hamiltonian: Vec<f64>,
    /// `H_c` of the reference.
    pub hamiltonian_ref: Vec<f64>,
    /// Per-step relative error of `q`, `sqrt(Σ_i (ref − pred)² / Σ_i ref²)`.
    pub error_trace: Vec<f64>,
    pub drift: f64,
    pub fom_seconds: f64,
    pub rom_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: Option<Method>,
    pub family: Option<Family>,
    pub k: usize,
    pub dt: f64,
    pub entries: Vec<ErrorEntry>,
}

impl ErrorReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Format(format!("malformed report: {e}")))
    }
}

/// Compare the reduced model with the full-order reference at each named parameter;
/// parameters run in parallel and entries keep the order of `tests`.
pub fn evaluate(
    ckpt: &Checkpoint,
    tests: &[(String, Vec<f64>)],
    steps: usize,
) -> Result<ErrorReport> {
    let m = &ckpt.manifest;
    let entries = tests
        .par_iter()
        .map(|(name, mu)| -> Result<ErrorEntry> {
            let fom = full_model(ckpt, mu)?;
            let mut icfg = IntegratorConfig::stormer_verlet(m.dt, m.family.is_separable());
            icfg.fp_tol = m.fp_tol;
            icfg.fp_max_iter = m.fp_max_iter;
            let t0 = Instant::now();
            let reference = fom_trajectory(m.family, m.n, mu, steps, &icfg)?;
            let fom_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let pred = predict(ckpt, mu, steps)?;
            let rom_seconds = t1.elapsed().as_secs_f64();
            let (err_q, err_p) = relative_errors(&reference, &pred.states)?;
            let h = |s: &Vec<f64>| fom.hamiltonian(&s[..m.n], &s[m.n..]);
            let hamiltonian: Vec<f64> = pred.states.iter().map(h).collect();
            let hamiltonian_ref: Vec<f64> = reference.iter().map(h).collect();
            let drift = hamiltonian_drift(&hamiltonian);
            let error_trace = reference
                .iter()
                .zip(&pred.states)
                .map(|(r, p)| {
                    let num: f64 = r[..m.n]
                        .iter()
                        .zip(&p[..m.n])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let den: f64 = r[..m.n].iter().map(|a| a * a).sum();
                    if den > 0.0 {
                        (num / den).sqrt()
                    } else {
                        num.sqrt()
                    }
                })
                .collect();
            info!("{name} {mu:?}: err_q {err_q:.3e} err_p {err_p:.3e} drift {drift:.3e}");
            Ok(ErrorEntry {
                name: name.clone(),
                mu: mu.clone(),
                err_q,
                err_p,
                hamiltonian,
                hamiltonian_ref,
                error_trace,
                drift,
                fom_seconds,
                rom_seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport {
        method: Some(m.method),
        family: Some(m.family),
        k: m.k,
        dt: m.dt,
        entries,
    })
}

/// Wall-clock statistics of one timed rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub reps: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

fn stats_ms(label: &str, samples: &[f64]) -> TimingRow {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    TimingRow {
        label: label.into(),
        reps: samples.len(),
        mean_ms: mean * 1e3,
        std_ms: var.sqrt() * 1e3,
    }
}

fn cast<T: Float>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from(x).unwrap()).collect()
}

fn time_fom<T: Float>(family: Family, n: usize, mu: &[f64], dt: f64, steps: usize) -> Result<f64> {
    let fom = Fom::for_family(Params::from_active(family, mu)?, n)?;
    let y0 = fom.initial_state()?;
    let cfg = IntegratorConfig::stormer_verlet(dt, family.is_separable());
    let t = Instant::now();
    let (mut q, mut p) = (cast::<T>(&y0.q), cast::<T>(&y0.p));
    rollout(&fom, &mut q, &mut p, &cfg, steps, |_, _, _| Ok(()))?;
    let elapsed = t.elapsed().as_secs_f64();
    if q.iter().chain(&p).any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "full-order benchmark rollout became non-finite",
        ));
    }
    Ok(elapsed)
}

/// Reduce, roll and reconstruct the final state, as one timed unit.
fn time_rom<T: Float>(ckpt: &Checkpoint, mu: &[f64], steps: usize) -> Result<f64> {
    let t = Instant::now();
    let z0 = encode_initial(ckpt, mu)?;
    let mut z = cast::<T>(&z0);
    roll_latent(ckpt, mu, &mut z, steps, |_, _| Ok(()))?;
    let zf: Vec<f64> = z.iter().map(|v| v.to_f64().unwrap()).collect();
    let y = decode(ckpt, &[zf])?;
    let elapsed = t.elapsed().as_secs_f64();
    if y[0].iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "reduced benchmark rollout became non-finite",
        ));
    }
    Ok(elapsed)
}

/// Time the full-order rollout and each reduced rollout from the initial condition at `mu`
/// over `steps` steps, `reps` times each, with the shared integrator driver. Reduced timings
/// include encoding the initial state and decoding the final one.
pub fn benchmark(
    family: Family,
    n: usize,
    dt: f64,
    ckpts: &[&Checkpoint],
    mu: &[f64],
    steps: usize,
    reps: usize,
    precision: Precision,
) -> Result<Vec<TimingRow>> {
    if reps == 0 {
        return Err(Error::Config(
            "benchmark needs at least one repetition".into(),
        ));
    }
    for c in ckpts {
        let m = &c.manifest;
        if m.family != family || m.n != n || m.dt != dt {
            return Err(Error::Config(format!(
                "{:?} checkpoint does not match the benchmark case",
                m.method
            )));
        }
    }
    let mut rows = Vec::new();
    let fom: Vec<f64> = (0..reps)
        .map(|_| match precision {
            Precision::F32 => time_fom::<f32>(family, n, mu, dt, steps),
            Precision::F64 => time_fom::<f64>(family, n, mu, dt, steps),
        })
        .collect::<Result<_>>()?;
    rows.push(stats_ms("fom", &fom));
    for c in ckpts {
        let t: Vec<f64> = (0..reps)
            .map(|_| match precision {
                Precision::F32 => time_rom::<f32>(c, mu, steps),
                Precision::F64 => time_rom::<f64>(c, mu, steps),
            })
            .collect::<Result<_>>()?;
        let label = serde_json::to_value(c.manifest.method)?
            .as_str()
            .unwrap_or("rom")
            .to_string();
        rows.push(stats_ms(&label, &t));
    }
    Ok(rows)
}
