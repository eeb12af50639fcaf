use serde::{Deserialize, Serialize};

use super::data::PairBatch;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::integrators::IntegratorConfig;
use crate::neural::{BoundNet, DynamicsKind, NetParams, ReducedNet};

/// Weights of the four terms of the objective. For a flow model the reduced-prediction
/// weight applies to the flow loss and the stability weight is unused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ae: f64,
    pub w_pred_reduced: f64,
    pub w_stab: f64,
    pub w_pred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ae: 0.1,
            w_pred_reduced: 80.0,
            w_stab: 7e-4,
            w_pred: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_ae, self.w_pred_reduced, self.w_stab, self.w_pred];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {w:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub ae: f64,
    pub pred_reduced: f64,
    pub stab: f64,
    pub pred: f64,
}

impl LossValues {
    pub fn weighted(&self, w: &LossWeights) -> LossValues {
        LossValues {
            ae: w.w_ae * self.ae,
            pred_reduced: w.w_pred_reduced * self.pred_reduced,
            stab: w.w_stab * self.stab,
            pred: w.w_pred * self.pred,
        }
    }
}

/// `Σ ω_i L_i`.
pub fn total_objective(losses: &LossValues, weights: &LossWeights) -> f64 {
    let w = losses.weighted(weights);
    w.ae + w.pred_reduced + w.stab + w.pred
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let n = tape.value(a).len().max(1);
    let d = tape.sub(a, b)?;
    let s = tape.sum_squares(d);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Mean squared reconstruction error of `y`.
pub fn loss_ae(tape: &mut Tape, net: &BoundNet, y: Var) -> Result<Var> {
    let z = net.encode(tape, y)?;
    let r = net.decode(tape, z)?;
    mse(tape, r, y)
}

/// Mean squared mismatch between `E(y^{n+s})` and the Störmer-Verlet prediction from `E(y^n)`.
pub fn loss_pred_reduced(
    tape: &mut Tape,
    net: &BoundNet,
    z_n: Var,
    z_ns: Var,
    mu: Var,
    s: usize,
    cfg: &IntegratorConfig,
) -> Result<Var> {
    let pred = net.sv_rollout(tape, z_n, mu, s, cfg)?;
    mse(tape, z_ns, pred)
}

/// Same as [`loss_pred_reduced`] for a learned flow advanced with RK2.
pub fn loss_flow(
    tape: &mut Tape,
    net: &BoundNet,
    z_n: Var,
    z_ns: Var,
    mu: Var,
    s: usize,
    dt: f64,
) -> Result<Var> {
    let pred = net.rk2_rollout(tape, z_n, mu, s, dt)?;
    mse(tape, z_ns, pred)
}

/// Mean squared change of the learned Hamiltonian between the two encoded endpoints.
pub fn loss_stab(tape: &mut Tape, net: &BoundNet, z_n: Var, z_ns: Var, mu: Var) -> Result<Var> {
    let a = net.hnn_value(tape, z_n, mu)?;
    let b = net.hnn_value(tape, z_ns, mu)?;
    mse(tape, b, a)
}

/// Mean squared error of the decoded latent prediction against `y^{n+s}`.
pub fn loss_pred(tape: &mut Tape, net: &BoundNet, z_pred: Var, y_ns: Var) -> Result<Var> {
    let y = net.decode(tape, z_pred)?;
    mse(tape, y, y_ns)
}

/// Record the weighted objective of one batch. Terms with zero weight are skipped and
/// reported as zero.
pub fn objective(
    tape: &mut Tape,
    net: &BoundNet,
    batch: &PairBatch,
    weights: &LossWeights,
    cfg: &IntegratorConfig,
) -> Result<(Var, LossValues)> {
    let y_n = tape.constant(batch.y_n.clone());
    let y_ns = tape.constant(batch.y_ns.clone());
    let mu = tape.constant(batch.mu.clone());
    let kind = net.net.kind;
    let mut values = LossValues::default();
    let mut terms: Vec<(Var, f64)> = Vec::new();

    let z_n = net.encode(tape, y_n)?;
    if weights.w_ae > 0.0 {
        let r = net.decode(tape, z_n)?;
        let l = mse(tape, r, y_n)?;
        values.ae = tape.value(l).item()?;
        terms.push((l, weights.w_ae));
    }
    let need_latent = weights.w_pred_reduced > 0.0 || weights.w_pred > 0.0;
    let need_target =
        weights.w_pred_reduced > 0.0 || (kind == DynamicsKind::Hnn && weights.w_stab > 0.0);
    let z_ns = if need_target {
        Some(net.encode(tape, y_ns)?)
    } else {
        None
    };
    if need_latent {
        let pred = net.predict_latent(tape, z_n, mu, batch.s, cfg)?;
        if let (true, Some(z_ns)) = (weights.w_pred_reduced > 0.0, z_ns) {
            let l = mse(tape, z_ns, pred)?;
            values.pred_reduced = tape.value(l).item()?;
            terms.push((l, weights.w_pred_reduced));
        }
        if weights.w_pred > 0.0 {
            let l = loss_pred(tape, net, pred, y_ns)?;
            values.pred = tape.value(l).item()?;
            terms.push((l, weights.w_pred));
        }
    }
    if let (DynamicsKind::Hnn, true, Some(z_ns)) = (kind, weights.w_stab > 0.0, z_ns) {
        let l = loss_stab(tape, net, z_n, z_ns, mu)?;
        values.stab = tape.value(l).item()?;
        terms.push((l, weights.w_stab));
    }

    let mut total = match terms.first() {
        Some(&(l, w)) => tape.scale(l, w),
        None => {
            let zero = tape.constant(crate::autodiff::Tensor::scalar(0.0));
            return Ok((zero, values));
        }
    };
    for &(l, w) in &terms[1..] {
        total = tape.axpy(total, l, w)?;
    }
    Ok((total, values))
}

/// All loss terms on a batch, without recording gradients.
pub fn evaluate_losses(
    net: &ReducedNet,
    params: &NetParams,
    batch: &PairBatch,
    cfg: &IntegratorConfig,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let b = net.bind(&mut tape, params, false)?;
    let all = LossWeights {
        w_ae: 1.0,
        w_pred_reduced: 1.0,
        w_stab: 1.0,
        w_pred: 1.0,
    };
    Ok(objective(&mut tape, &b, batch, &all, cfg)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Tensor};
    use crate::integrators::Scheme;
    use crate::neural::{AeArchitecture, AeVariant, MlpArchitecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: DynamicsKind) -> ReducedNet {
        let ae = AeArchitecture {
            variant: AeVariant::Bichannel,
            n_blocks: 1,
            dense_sizes: vec![3],
            latent_dim: 2,
            activation: Activation::Elu,
            input_length: 4,
        };
        let dynamics = match kind {
            DynamicsKind::Hnn => MlpArchitecture::hnn(vec![4], Activation::Tanh, 2, 1),
            DynamicsKind::Flow => MlpArchitecture::flow(vec![4], Activation::Tanh, 2, 1),
        };
        ReducedNet::new(ae, dynamics, kind).unwrap()
    }

    fn batch(seed: u64, s: usize) -> PairBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |r, c| {
            Tensor::new(
                vec![r, c],
                (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        PairBatch {
            y_n: t(2, 8),
            y_ns: t(2, 8),
            mu: t(2, 1),
            s,
        }
    }

    fn cfg() -> IntegratorConfig {
        IntegratorConfig {
            dt: 0.05,
            scheme: Scheme::SvImplicit,
            fp_tol: 1e-14,
            fp_max_iter: 200,
        }
    }

    #[test]
    fn objective_arithmetic() {
        let ones = LossValues {
            ae: 1.0,
            pred_reduced: 1.0,
            stab: 1.0,
            pred: 1.0,
        };
        assert!((total_objective(&ones, &LossWeights::default()) - 80.2007).abs() < 1e-12);
        assert_eq!(
            total_objective(&LossValues::default(), &LossWeights::default()),
            0.0
        );
        let zero = LossWeights {
            w_ae: 0.0,
            w_pred_reduced: 0.0,
            w_stab: 0.0,
            w_pred: 0.0,
        };
        assert_eq!(total_objective(&ones, &zero), 0.0);
    }

    #[test]
    fn ae_loss_matches_loop_oracle() {
        let net = tiny(DynamicsKind::Hnn);
        let params = net.init(2);
        let b = batch(1, 1);
        let rows: Vec<Vec<f64>> = b.y_n.data().chunks(8).map(<[f64]>::to_vec).collect();
        let z = net.encode_states(&params, &rows).unwrap();
        let r = net.decode_latents(&params, &z).unwrap();
        let mut acc = 0.0;
        for (a, c) in rows.iter().zip(&r) {
            for (x, y) in a.iter().zip(c) {
                acc += (x - y) * (x - y);
            }
        }
        let expect = acc / 16.0;
        let got = evaluate_losses(&net, &params, &b, &cfg()).unwrap().ae;
        assert!((got - expect).abs() < 1e-12);

        // Zero decoder: the loss is the mean square of the data.
        let mut zp = params.clone();
        let nd = net.ae.decoder_specs().len();
        let start = net.ae.encoder_specs().len();
        for t in &mut zp.tensors[start..start + nd] {
            *t = Tensor::zeros(t.shape());
        }
        let got = evaluate_losses(&net, &zp, &b, &cfg()).unwrap().ae;
        assert!((got - b.y_n.sum_squares() / 16.0).abs() < 1e-12);
    }

    #[test]
    fn zero_watch_duration() {
        let net = tiny(DynamicsKind::Hnn);
        let params = net.init(3);
        let mut b = batch(2, 0);
        b.y_ns = b.y_n.clone();
        let v = evaluate_losses(&net, &params, &b, &cfg()).unwrap();
        assert_eq!(v.pred_reduced, 0.0);
        assert_eq!(v.stab, 0.0);
        assert!((v.pred - v.ae).abs() < 1e-15);
    }

    #[test]
    fn constant_hamiltonian_gives_identity_prediction() {
        let net = tiny(DynamicsKind::Hnn);
        let mut params = net.init(4);
        for t in &mut params.tensors[net.dynamics_range()] {
            *t = Tensor::zeros(t.shape());
        }
        let b = batch(5, 3);
        let v = evaluate_losses(&net, &params, &b, &cfg()).unwrap();
        let rows = |t: &Tensor| t.data().chunks(8).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let za = net.encode_states(&params, &rows(&b.y_n)).unwrap();
        let zb = net.encode_states(&params, &rows(&b.y_ns)).unwrap();
        let expect: f64 = za
            .iter()
            .flatten()
            .zip(zb.iter().flatten())
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / 4.0;
        assert!((v.pred_reduced - expect).abs() < 1e-14);
        assert_eq!(v.stab, 0.0);
    }

    #[test]
    fn pred_reduced_matches_unrolled_integrator() {
        use crate::integrators::rollout;
        use crate::neural::LatentHnn;
        let net = tiny(DynamicsKind::Hnn);
        let params = net.init(6);
        let b = batch(7, 2);
        let c = cfg();
        let rows = |t: &Tensor| t.data().chunks(8).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let za = net.encode_states(&params, &rows(&b.y_n)).unwrap();
        let zb = net.encode_states(&params, &rows(&b.y_ns)).unwrap();
        let mut acc = 0.0;
        for i in 0..2 {
            let hnn = LatentHnn::<f64>::new(&net, &params, &b.mu.data()[i..i + 1]).unwrap();
            let (mut q, mut p) = ([za[i][0]], [za[i][1]]);
            rollout(&hnn, &mut q, &mut p, &c, 2, |_, _, _| Ok(())).unwrap();
            acc += (zb[i][0] - q[0]).powi(2) + (zb[i][1] - p[0]).powi(2);
        }
        let v = evaluate_losses(&net, &params, &b, &c).unwrap();
        assert!((v.pred_reduced - acc / 4.0).abs() < 1e-10);
    }

    #[test]
    fn flow_losses() {
        let net = tiny(DynamicsKind::Flow);
        let mut params = net.init(8);
        for t in &mut params.tensors[net.dynamics_range()] {
            *t = Tensor::zeros(t.shape());
        }
        let mut b = batch(9, 3);
        b.y_ns = b.y_n.clone();
        let v = evaluate_losses(&net, &params, &b, &cfg()).unwrap();
        assert_eq!(v.pred_reduced, 0.0);
        assert_eq!(v.stab, 0.0);
    }

    #[test]
    fn losses_are_non_negative() {
        for seed in 0..5 {
            let net = tiny(DynamicsKind::Hnn);
            let v = evaluate_losses(&net, &net.init(seed), &batch(seed, 2), &cfg()).unwrap();
            assert!(v.ae >= 0.0 && v.pred_reduced >= 0.0 && v.stab >= 0.0 && v.pred >= 0.0);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let net = tiny(DynamicsKind::Hnn);
        let params = net.init(10);
        let b = batch(11, 2);
        let c = cfg();
        let w = LossWeights::default();
        let eval = |p: &NetParams| {
            let mut tape = Tape::new();
            let bn = net.bind(&mut tape, p, true).unwrap();
            let (l, _) = objective(&mut tape, &bn, &b, &w, &c).unwrap();
            (tape.value(l).item().unwrap(), tape.backward(l).unwrap())
        };
        let (_, g) = eval(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        while checked < 10 {
            let t = rng.gen_range(0..params.tensors.len());
            let i = rng.gen_range(0..params.tensors[t].len());
            let ad = g.get(t).map_or(0.0, |x| x.data()[i]);
            let eps = 1e-6;
            let shift = |delta: f64| {
                let mut p = params.clone();
                let mut d = p.tensors[t].data().to_vec();
                d[i] += delta;
                p.tensors[t] = Tensor::new(p.tensors[t].shape().to_vec(), d).unwrap();
                eval(&p).0
            };
            let fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
            let rel = (fd - ad).abs() / (fd.abs() + ad.abs() + 1e-12);
            assert!(
                rel <= 1e-4 || (fd - ad).abs() < 1e-8,
                "tensor {t}[{i}]: fd {fd}, ad {ad}"
            );
            checked += 1;
        }
    }
}
