use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::data::{PairBatch, PairSampler};
use super::loss::{evaluate_losses, objective, total_objective, LossValues, LossWeights};
use super::optim::{adam_step, OptimizerState};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::integrators::{IntegratorConfig, Scheme};
use crate::neural::{NetParams, ReducedNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub weights: LossWeights,
    /// Latent time step; equal to the snapshot time step.
    pub dt: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Steps over which the validation objective must improve by `plateau_gain`.
    pub plateau_window: usize,
    pub plateau_gain: f64,
    /// Minimum number of steps between two schedule resets.
    pub reset_gap: usize,
    /// Stop once the validation objective reaches this value.
    pub target: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 64,
            eval_interval: 100,
            weights: LossWeights::default(),
            dt: 1e-4,
            fp_tol: 1e-10,
            fp_max_iter: 100,
            plateau_window: 2000,
            plateau_gain: 0.01,
            reset_gap: 5000,
            target: Some(1e-5),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            scheme: Scheme::SvImplicit,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.integrator().validate()?;
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config(
                "batch size and evaluation interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One optimizer step: weighted training losses, validation objective when evaluated, rate used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub weighted: LossValues,
    pub total: f64,
    pub val: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub const CSV_HEADER: &'static str = "step,ae,pred_reduced,stab,pred,total,val,lr";

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let val = r.val.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                r.step,
                r.weighted.ae,
                r.weighted.pred_reduced,
                r.weighted.stab,
                r.weighted.pred,
                r.total,
                val,
                r.lr
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub history: History,
    pub optimizer: OptimizerState,
    /// Unweighted validation losses of the final parameters.
    pub val_losses: LossValues,
}

/// Run Adam on the weighted objective.
///
/// Every `eval_interval` steps the validation objective is computed; the schedule is reset when
/// it improved by less than `plateau_gain` (relative) over `plateau_window` steps, at most once
/// per `reset_gap` steps. Training stops at `steps` or when the validation objective reaches
/// `target`.
pub fn train(
    net: &ReducedNet,
    init: NetParams,
    sampler: &mut PairSampler,
    val: &PairBatch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    init.check(&net.specs())?;
    let icfg = cfg.integrator();
    let mut params = init;
    let mut opt = OptimizerState::new(&params);
    let mut history = History::default();
    let mut evals: Vec<(usize, f64)> = Vec::new();
    let mut last_reset = 0usize;

    for step in 0..cfg.steps {
        let batch = sampler.sample(cfg.batch_size)?;
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, &params, true)?;
        let (loss, values) = objective(&mut tape, &bound, &batch, &cfg.weights, &icfg)?;
        let total = tape.value(loss).item()?;
        if !total.is_finite() {
            return Err(Error::numeric(format!(
                "objective diverged at step {step}: {values:?}"
            )));
        }
        let grads = tape.backward(loss)?;
        drop(tape);
        let lr = opt.lr();
        adam_step(&mut params, &grads, &mut opt, lr)?;

        let last = step + 1 == cfg.steps;
        let val_obj = if (step + 1) % cfg.eval_interval == 0 || last {
            let v = total_objective(&evaluate_losses(net, &params, val, &icfg)?, &cfg.weights);
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "validation objective diverged at step {step}"
                )));
            }
            evals.push((step + 1, v));
            debug!(
                "step {} train {total:.3e} val {v:.3e} lr {lr:.3e}",
                step + 1
            );
            Some(v)
        } else {
            None
        };
        history.rows.push(HistoryRow {
            step: step + 1,
            weighted: values.weighted(&cfg.weights),
            total,
            val: val_obj,
            lr,
        });

        if let Some(v) = val_obj {
            if cfg.target.is_some_and(|t| v <= t) {
                info!(
                    "validation objective {v:.3e} reached the target at step {}",
                    step + 1
                );
                break;
            }
            if plateaued(&evals, cfg) && step + 1 - last_reset >= cfg.reset_gap {
                info!("learning-rate schedule reset at step {}", step + 1);
                opt.reset_schedule();
                last_reset = step + 1;
            }
        }
    }
    let val_losses = evaluate_losses(net, &params, val, &icfg)?;
    Ok(TrainOutcome {
        params,
        history,
        optimizer: opt,
        val_losses,
    })
}

/// Mean of the last three evaluations, compared with the same smoothing one window earlier.
fn plateaued(evals: &[(usize, f64)], cfg: &TrainConfig) -> bool {
    let smooth = |upto: usize| {
        let lo = upto.saturating_sub(3);
        let s = &evals[lo..upto];
        s.iter().map(|e| e.1).sum::<f64>() / s.len() as f64
    };
    let Some(&(now, _)) = evals.last() else {
        return false;
    };
    if now < cfg.plateau_window {
        return false;
    }
    let Some(past) = evals.iter().rposition(|e| e.0 <= now - cfg.plateau_window) else {
        return false;
    };
    let old = smooth(past + 1);
    let new = smooth(evals.len());
    old > 0.0 && (old - new) / old < cfg.plateau_gain
}
