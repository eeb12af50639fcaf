//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! `HAMROM_CRITERIA=1,4` runs a subset; `HAMROM_TRAIN_STEPS` overrides the optimizer budget of
//! the desk-scale training runs (criteria 6 and 7).

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hamrom::autodiff::{finite_diff_report, Activation, Tape, Tensor, Var};
use hamrom::fom::{Family, Fom, Params};
use hamrom::integrators::{rollout, sv_explicit_step, HamiltonianField, IntegratorConfig};
use hamrom::linear::{cotangent_lift_from_gram, pod_basis_from_gram, GramAccumulator};
use hamrom::neural::{
    AeArchitecture, AeVariant, DynamicsKind, MlpArchitecture, NetParams, ReducedNet,
};
use hamrom::training::{objective, LossWeights, PairBatch, TrajectoryData};
use hamrom::workbench::{
    benchmark, evaluate, fom_trajectory, linear_basis, train_network, Checkpoint, ExperimentConfig,
    Method, Precision,
};
use hamrom::Result;

const SEEDS: [u64; 3] = [0, 1, 2];
const DESK_STEPS: usize = 6_000;
/// Common validation objective both latent models are trained to before their drift is compared.
const STABILITY_TARGET: f64 = 2e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Written past the test harness's output capture so results show in a plain `cargo test`.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_factor(value: f64, target: f64, factor: f64) -> bool {
    value > 0.0 && value <= target * factor && value >= target / factor
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn desk_steps() -> usize {
    std::env::var("HAMROM_TRAIN_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DESK_STEPS)
}

fn trajectories(cfg: &ExperimentConfig, params: Vec<Vec<f64>>) -> Result<Vec<TrajectoryData>> {
    params
        .into_iter()
        .map(|mu| {
            let states = fom_trajectory(cfg.family, cfg.n, &mu, cfg.steps(), &cfg.integrator())?;
            Ok(TrajectoryData { mu, states })
        })
        .collect()
}

fn preset(cfg: &ExperimentConfig, i: usize) -> Vec<(String, Vec<f64>)> {
    vec![(format!("test{i}"), cfg.test_params[i - 1].clone())]
}

fn all_presets(cfg: &ExperimentConfig) -> Vec<(String, Vec<f64>)> {
    (1..=cfg.test_params.len())
        .flat_map(|i| preset(cfg, i))
        .collect()
}

/// Gram matrices of the training snapshots for PSD (`N`) and, optionally, POD (`2N`),
/// accumulated one trajectory at a time.
fn grams(
    cfg: &ExperimentConfig,
    with_pod: bool,
) -> Result<(GramAccumulator, Option<GramAccumulator>)> {
    let mut psd = GramAccumulator::new(cfg.n);
    let mut pod = with_pod.then(|| GramAccumulator::new(2 * cfg.n));
    for mu in cfg.train_params() {
        let flat = fom_trajectory(cfg.family, cfg.n, &mu, cfg.steps(), &cfg.integrator())?.concat();
        psd.add_columns(&flat)?;
        if let Some(acc) = pod.as_mut() {
            acc.add_columns(&flat)?;
        }
    }
    Ok((psd, pod))
}

fn linear_error(
    cfg: &ExperimentConfig,
    basis: hamrom::linear::SymplecticBasis,
    test: usize,
) -> Result<f64> {
    let ck = Checkpoint::linear(cfg, basis)?;
    Ok(evaluate(&ck, &preset(cfg, test), cfg.steps())?.entries[0].err_q)
}

fn criterion_1_and_2() -> Result<(Outcome, Outcome)> {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::for_family(Family::LinearWave);
    cfg.method = Method::Psd;
    let (psd, pod) = grams(&cfg, true)?;
    let gram_time = t.elapsed().as_secs_f64();
    cfg.k = 6;
    let err_psd = linear_error(&cfg, cotangent_lift_from_gram(&psd, 6)?, 3)?;
    let psd_time = t.elapsed().as_secs_f64();
    let t_pod = Instant::now();
    cfg.k = 10;
    cfg.method = Method::Pod;
    let err_pod = linear_error(&cfg, pod_basis_from_gram(pod.as_ref().unwrap(), 10)?, 2)?;
    let pod_time = t_pod.elapsed().as_secs_f64();
    Ok((
        outcome(
            within_factor(err_psd, 5.89e-3, 3.0) && psd_time <= 600.0,
            format!("PSD K=6 test3 err_u {err_psd:.3e} (target 5.89e-3, x3); {psd_time:.0} s incl. shared snapshot pass {gram_time:.0} s"),
        ),
        outcome(
            within_factor(err_pod, 2.30e-3, 3.0),
            format!("POD K=10 test2 err_u {err_pod:.3e} (target 2.30e-3, x3); {pod_time:.0} s"),
        ),
    ))
}

fn criterion_3() -> Result<Outcome> {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::for_family(Family::NonlinearWave);
    cfg.method = Method::Psd;
    let (psd, _) = grams(&cfg, false)?;
    cfg.k = 15;
    let err15 = linear_error(&cfg, cotangent_lift_from_gram(&psd, 15)?, 3)?;
    cfg.k = 3;
    let err3 = linear_error(&cfg, cotangent_lift_from_gram(&psd, 3)?, 3)?;
    Ok(outcome(
        within_factor(err15, 5.29e-3, 4.0) && err3 >= 0.2,
        format!(
            "PSD nonlinear wave test3: K=15 err_u {err15:.3e} (target 5.29e-3, x4), K=3 err_u {err3:.3e} (>= 0.2); {:.0} s",
            t.elapsed().as_secs_f64()
        ),
    ))
}

struct Oscillator;

impl HamiltonianField<f64> for Oscillator {
    fn dim(&self) -> usize {
        1
    }
    fn separable(&self) -> bool {
        true
    }
    fn grad_q(&self, q: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = q[0];
    }
    fn grad_p(&self, _: &[f64], p: &[f64], out: &mut [f64]) {
        out[0] = p[0];
    }
}

fn criterion_4() -> Result<Outcome> {
    let t = Instant::now();
    // Symplecticity of one pendulum step, H = p²/2 − cos q, by central differences.
    let step = |q: f64, p: f64| {
        let (q1, p1) = sv_explicit_step(&[q], &[p], 0.1, |q| vec![q[0].sin()], |p| vec![p[0]]);
        [q1[0], p1[0]]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut defect: f64 = 0.0;
    for _ in 0..100 {
        let (q, p) = (rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0));
        let e = 1e-6;
        let (a, b) = (step(q + e, p), step(q - e, p));
        let (c, d) = (step(q, p + e), step(q, p - e));
        let m = [
            [(a[0] - b[0]) / (2.0 * e), (c[0] - d[0]) / (2.0 * e)],
            [(a[1] - b[1]) / (2.0 * e), (c[1] - d[1]) / (2.0 * e)],
        ];
        // For 2×2 matrices MᵀJM = det(M)·J.
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        defect = defect.max((det - 1.0).abs());
    }

    // Global error at t = 1 against the exact rotation, halving dt.
    let err_at = |dt: f64| -> Result<f64> {
        let n = (1.0 / dt).round() as usize;
        let (mut q, mut p) = ([1.0], [0.0]);
        rollout(
            &Oscillator,
            &mut q,
            &mut p,
            &IntegratorConfig::stormer_verlet(dt, true),
            n,
            |_, _, _| Ok(()),
        )?;
        Ok(((q[0] - 1f64.cos()).powi(2) + (p[0] + 1f64.sin()).powi(2)).sqrt())
    };
    let ratio = err_at(0.02)? / err_at(0.01)?;

    // Energy over 1e5 steps: bounded by C·dt², no growth between halves.
    let dt = 0.05;
    let steps = 100_000;
    let (mut q, mut p) = ([1.0], [0.5]);
    let h0 = 0.5 * (1.0 + 0.25);
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    rollout(
        &Oscillator,
        &mut q,
        &mut p,
        &IntegratorConfig::stormer_verlet(dt, true),
        steps,
        |n, q, p| {
            let dev = (0.5 * (q[0] * q[0] + p[0] * p[0]) - h0).abs();
            if n <= steps / 2 {
                first = first.max(dev);
            } else {
                second = second.max(dev);
            }
            Ok(())
        },
    )?;
    let c = first.max(second) / (dt * dt);
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        defect <= 1e-6 && (3.5..=4.5).contains(&ratio) && second <= 2.0 * first && c <= 1.0 && secs <= 60.0,
        format!(
            "symplectic defect {defect:.1e}, convergence ratio {ratio:.3}, energy deviation {first:.2e} / {second:.2e} over halves (C = {c:.3}); {secs:.2} s"
        ),
    ))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

type Op = Box<dyn Fn(&mut Tape, Var, &mut ChaCha8Rng) -> Result<Var>>;

fn primitive_cases() -> Vec<(String, Vec<usize>, Op)> {
    let mut cases: Vec<(String, Vec<usize>, Op)> = vec![
        (
            "matmul lhs".into(),
            vec![3, 4],
            Box::new(|t, x, r| {
                let b = t.constant(rand_tensor(r, &[4, 2]));
                t.matmul(x, b)
            }),
        ),
        (
            "matmul rhs".into(),
            vec![4, 2],
            Box::new(|t, x, r| {
                let a = t.constant(rand_tensor(r, &[3, 4]));
                t.matmul(a, x)
            }),
        ),
        (
            "matmul transposed".into(),
            vec![4, 3],
            Box::new(|t, x, r| {
                let b = t.constant(rand_tensor(r, &[2, 4]));
                t.matmul_t(x, b, true, true)
            }),
        ),
        (
            "row bias".into(),
            vec![3],
            Box::new(|t, x, r| {
                let a = t.constant(rand_tensor(r, &[2, 3]));
                t.add_row_bias(a, x)
            }),
        ),
        (
            "channel bias".into(),
            vec![3],
            Box::new(|t, x, r| {
                let a = t.constant(rand_tensor(r, &[2, 3, 4]));
                t.add_channel_bias(a, x)
            }),
        ),
        (
            "sub".into(),
            vec![2, 3],
            Box::new(|t, x, r| {
                let o = t.constant(rand_tensor(r, &[2, 3]));
                t.sub(o, x)
            }),
        ),
        ("mul".into(), vec![2, 3], Box::new(|t, x, _| t.mul(x, x))),
        (
            "axpy".into(),
            vec![2, 3],
            Box::new(|t, x, r| {
                let o = t.constant(rand_tensor(r, &[2, 3]));
                let y = t.axpy(x, o, -0.7)?;
                t.add(y, x)
            }),
        ),
        (
            "scale".into(),
            vec![4],
            Box::new(|t, x, _| Ok(t.scale(x, 2.5))),
        ),
        (
            "conv kernel".into(),
            vec![4, 3, 3],
            Box::new(|t, x, r| {
                let a = t.constant(rand_tensor(r, &[2, 3, 8]));
                t.conv1d_periodic(a, x, 1)
            }),
        ),
        (
            "strided conv input".into(),
            vec![2, 3, 8],
            Box::new(|t, x, r| {
                let k = t.constant(rand_tensor(r, &[4, 3, 2]));
                t.conv1d_periodic(x, k, 2)
            }),
        ),
        (
            "repeat2".into(),
            vec![2, 3],
            Box::new(|t, x, _| Ok(t.repeat2(x))),
        ),
        (
            "upsample".into(),
            vec![2, 3, 4],
            Box::new(|t, x, r| {
                let k = t.constant(rand_tensor(r, &[2, 3, 2]));
                t.upsample2_smooth(x, k)
            }),
        ),
        (
            "reshape".into(),
            vec![2, 6],
            Box::new(|t, x, _| t.reshape(x, &[3, 4])),
        ),
        (
            "slice".into(),
            vec![3, 5],
            Box::new(|t, x, _| t.slice_cols(x, 1, 3)),
        ),
        (
            "concat".into(),
            vec![3, 2],
            Box::new(|t, x, r| {
                let o = t.constant(rand_tensor(r, &[3, 4]));
                t.concat_cols(&[o, x, x])
            }),
        ),
        (
            "sum squares".into(),
            vec![7],
            Box::new(|t, x, _| Ok(t.sum_squares(x))),
        ),
    ];
    for a in [
        Activation::Elu,
        Activation::Tanh,
        Activation::Swish,
        Activation::None,
    ] {
        cases.push((
            format!("{a:?}"),
            vec![2, 5],
            Box::new(move |t, x, _| Ok(t.activation(x, a))),
        ));
        cases.push((
            format!("{a:?} derivative"),
            vec![2, 5],
            Box::new(move |t, x, _| {
                // Stay off the ELU kink at 0.
                let s = t.constant(t.value(x).map(|v| if v >= 0.0 { 0.01 } else { -0.01 }));
                let z = t.add(x, s)?;
                let y = t.activation(z, a);
                let d1 = t.activation_derivative(z, a);
                let d2 = t.activation_derivative_from_output(z, y, a)?;
                t.add(d1, d2)
            }),
        ));
    }
    cases
}

/// Tiny AE-HNN with two latent dimensions on a length-8 grid.
fn tiny_net() -> ReducedNet {
    let ae = AeArchitecture {
        variant: AeVariant::Bichannel,
        n_blocks: 1,
        dense_sizes: vec![4],
        latent_dim: 2,
        activation: Activation::Elu,
        input_length: 8,
    };
    ReducedNet::new(
        ae,
        MlpArchitecture::hnn(vec![5], Activation::Tanh, 2, 1),
        DynamicsKind::Hnn,
    )
    .unwrap()
}

fn criterion_5() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst_primitive: (f64, String) = (0.0, "none".to_string());
    let mut worst_raw: f64 = 0.0;
    for (name, shape, op) in primitive_cases() {
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let x = rand_tensor(&mut rng, &shape);
            let state = rng.clone();
            let report = finite_diff_report(
                |tape, v| {
                    let mut r = state.clone();
                    let y = op(tape, v, &mut r)?;
                    let w = tape.constant(rand_tensor(
                        &mut ChaCha8Rng::seed_from_u64(99 + trial),
                        tape.shape(y),
                    ));
                    let m = tape.mul(y, w)?;
                    Ok(tape.sum(m))
                },
                &x,
                1e-5,
            )?;
            let err = report.max_rel_err_above(1e-14 * report.value.abs().max(1.0) / 1e-5);
            worst_raw = worst_raw.max(report.max_rel_err());
            if err > worst_primitive.0 {
                worst_primitive = (err, name.clone());
            }
        }
    }

    // Whole objective (all four losses through an unrolled implicit integrator) against
    // central differences in every network parameter.
    let net = tiny_net();
    let params = net.init(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = PairBatch {
        y_n: rand_tensor(&mut rng, &[3, 16]),
        y_ns: rand_tensor(&mut rng, &[3, 16]),
        mu: rand_tensor(&mut rng, &[3, 1]),
        s: 3,
    };
    let icfg = IntegratorConfig {
        fp_tol: 1e-14,
        fp_max_iter: 200,
        ..IntegratorConfig::stormer_verlet(0.05, false)
    };
    let w = LossWeights::default();
    let eval = |p: &NetParams| -> Result<(f64, hamrom::autodiff::Gradients)> {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, p, true)?;
        let (l, _) = objective(&mut tape, &bound, &batch, &w, &icfg)?;
        Ok((tape.value(l).item()?, tape.backward(l)?))
    };
    let (f0, grads) = eval(&params)?;
    // Fourth-order five-point stencil; roundoff in the objective sets the comparison floor.
    let eps = 1e-4;
    let floor = 1e-14 * f0.abs().max(1.0) / eps;
    let (mut worst_e2e, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for (ti, tensor) in params.tensors.iter().enumerate() {
        for i in 0..tensor.len() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let mut d = tensor.data().to_vec();
                d[i] += delta;
                p.tensors[ti] = Tensor::new(tensor.shape().to_vec(), d)?;
                Ok(eval(&p)?.0)
            };
            let fd = (8.0 * (shifted(eps)? - shifted(-eps)?)
                - (shifted(2.0 * eps)? - shifted(-2.0 * eps)?))
                / (12.0 * eps);
            let ad = grads.get(ti).map_or(0.0, |g| g.data()[i]);
            worst_abs = worst_abs.max((fd - ad).abs());
            if (fd - ad).abs() > floor {
                worst_e2e = worst_e2e.max((fd - ad).abs() / (fd.abs() + ad.abs()));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        worst_primitive.0 <= 1e-5 && worst_e2e <= 1e-4 && secs <= 60.0,
        format!(
            "worst primitive rel. err {:.1e} above roundoff floor ({}; {worst_raw:.1e} unfiltered), end-to-end objective rel. err {worst_e2e:.1e} above floor {floor:.1e} (max abs. diff {worst_abs:.1e}, |f| {f0:.2}) over {} parameters; {secs:.1} s",
            worst_primitive.0,
            worst_primitive.1,
            params.param_count()
        ),
    ))
}

/// Desk-scale wave setup: N = 256, Δt = 1e-3, eight training and six validation parameters.
fn desk_config(family: Family, method: Method, k: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_family(family);
    cfg.n = 256;
    cfg.dt = 1e-3;
    cfg.n_train = 8;
    cfg.n_val = 6;
    cfg.method = method;
    cfg.k = k;
    cfg.seed = seed;
    cfg.training.steps = desk_steps();
    cfg.training.target = None;
    cfg
}

fn criterion_6() -> Result<Outcome> {
    let t = Instant::now();
    let base = desk_config(Family::LinearWave, Method::Aehnn, 1, 0);
    let train = trajectories(&base, base.train_params())?;
    let val = trajectories(&base, base.val_params())?;
    let (mut errs, mut ratios, mut ranked) = (Vec::new(), Vec::new(), Vec::new());
    let w = &base.training.weights;
    for seed in SEEDS {
        let cfg = desk_config(Family::LinearWave, Method::Aehnn, 1, seed);
        let trained = train_network(&cfg, &train, &val)?;
        let v = trained.val_losses.clone();
        let ck = trained.into_checkpoint(&cfg)?;
        let err = evaluate(&ck, &preset(&cfg, 3), cfg.steps())?.entries[0].err_q;
        emit(&format!(
            "  seed {seed}: err_u {err:.3e}, validation losses {v:?}"
        ));
        errs.push(err);
        ratios.push(v.pred / v.ae);
        ranked.push(if w.w_pred_reduced * v.pred_reduced < w.w_pred * v.pred {
            1.0
        } else {
            0.0
        });
    }
    let mut lin = base.clone();
    lin.method = Method::Psd;
    let basis = linear_basis(Method::Psd, 1, lin.n, train.iter().cloned().map(Ok))?;
    let psd = linear_error(&lin, basis, 3)?;
    let (err, ratio, rank) = (median(errs), median(ratios), median(ranked));
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        err <= 0.1 && 5.0 * err <= psd && (0.8..=1.2).contains(&ratio) && rank == 1.0 && secs <= 7200.0,
        format!(
            "AE-HNN K=1 test3 median err_u {err:.3e} vs PSD K=1 {psd:.3e}; median L_pred/L_AE {ratio:.3}; weighted L_pred-red < L_pred: {}; {} steps/seed, {secs:.0} s",
            rank == 1.0,
            desk_steps()
        ),
    ))
}

fn criterion_7() -> Result<Outcome> {
    let t = Instant::now();
    let base = desk_config(Family::NonlinearWave, Method::Aehnn, 3, 0);
    let train = trajectories(&base, base.train_params())?;
    let val = trajectories(&base, base.val_params())?;
    let mut drifts = [Vec::new(), Vec::new()];
    let mut reached = true;
    for seed in SEEDS {
        for (slot, method) in [Method::Aehnn, Method::Aeflow].into_iter().enumerate() {
            let mut cfg = desk_config(Family::NonlinearWave, method, 3, seed);
            cfg.training.target = Some(STABILITY_TARGET);
            let trained = train_network(&cfg, &train, &val)?;
            let used = trained.history.rows.last().map_or(0, |r| r.step);
            reached &= trained
                .history
                .rows
                .iter()
                .any(|r| r.val.is_some_and(|v| v <= STABILITY_TARGET));
            let objective =
                hamrom::training::total_objective(&trained.val_losses, &cfg.training.weights);
            let ck = trained.into_checkpoint(&cfg)?;
            let report = evaluate(&ck, &all_presets(&cfg), cfg.steps())?;
            let drift =
                report.entries.iter().map(|e| e.drift).sum::<f64>() / report.entries.len() as f64;
            let err =
                report.entries.iter().map(|e| e.err_q).sum::<f64>() / report.entries.len() as f64;
            emit(&format!("  seed {seed} {method:?}: {used} steps, validation objective {objective:.3e}, mean drift {drift:.3e}, mean err_u {err:.3e}"));
            drifts[slot].push(drift);
        }
    }
    let (hnn, flow) = (median(drifts[0].clone()), median(drifts[1].clone()));
    Ok(outcome(
        hnn <= flow && reached,
        format!(
            "median Hamiltonian drift AE-HNN {hnn:.3e} vs AE-Flow {flow:.3e}; validation objective {STABILITY_TARGET:.0e} reached by every run: {reached} (cap {} steps); {:.0} s",
            desk_steps(),
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let mut cfg = ExperimentConfig::for_family(Family::NonlinearWave);
    cfg.k = 3;
    // A short training run on a short horizon gives representative latent dynamics; the
    // timed rollouts below use the full benchmark horizon.
    cfg.t_end = 0.02;
    cfg.n_train = 3;
    cfg.n_val = 1;
    cfg.val_pairs = 16;
    cfg.training.steps = 30;
    cfg.training.eval_interval = 10;
    let train = trajectories(&cfg, cfg.train_params())?;
    let val = trajectories(&cfg, cfg.val_params())?;
    let hnn = train_network(&cfg, &train, &val)?.into_checkpoint(&cfg)?;
    cfg.method = Method::Psd;
    let psd = Checkpoint::linear(
        &cfg,
        linear_basis(Method::Psd, 3, cfg.n, train.into_iter().map(Ok))?,
    )?;
    let steps = (0.4 / cfg.dt).round() as usize;
    let mu = cfg.test_params[1].clone();
    let rows = benchmark(
        cfg.family,
        cfg.n,
        cfg.dt,
        &[&hnn, &psd],
        &mu,
        steps,
        5,
        Precision::F64,
    )?;
    let f32_rows = benchmark(
        cfg.family,
        cfg.n,
        cfg.dt,
        &[&hnn, &psd],
        &mu,
        steps,
        5,
        Precision::F32,
    )?;
    let ms = |rows: &[hamrom::workbench::TimingRow], label: &str| {
        rows.iter().find(|r| r.label == label).unwrap().mean_ms
    };
    let (fom, ae, lin) = (ms(&rows, "fom"), ms(&rows, "aehnn"), ms(&rows, "psd"));
    let fmt = |rows: &[hamrom::workbench::TimingRow]| {
        rows.iter()
            .map(|r| format!("{} {:.1}±{:.1} ms", r.label, r.mean_ms, r.std_ms))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(outcome(
        fom / ae >= 2.0 && lin >= 0.8 * fom,
        format!(
            "{steps} steps, f64: {} (AE-HNN speed-up {:.2}x, PSD/FOM time {:.2}); f32: {}",
            fmt(&rows),
            fom / ae,
            lin / fom,
            fmt(&f32_rows)
        ),
    ))
}

fn criterion_9() -> Result<Outcome> {
    let mut cfg = ExperimentConfig::for_family(Family::ShallowWater);
    cfg.n = 256;
    let icfg = cfg.integrator();
    let (mut worst_osc, mut worst_iter): (f64, f64) = (0.0, 0.0);
    let mut max_iter = 0;
    for mu in &cfg.test_params {
        let fom = Fom::for_family(Params::from_active(cfg.family, mu)?, cfg.n)?;
        let y0 = fom.initial_state()?;
        let (mut q, mut p) = (y0.q, y0.p);
        let h0 = fom.hamiltonian(&q, &p);
        let mut dev: f64 = 0.0;
        let stats = rollout(&fom, &mut q, &mut p, &icfg, cfg.steps(), |_, q, p| {
            dev = dev.max((fom.hamiltonian(q, p) - h0).abs());
            Ok(())
        })?;
        worst_osc = worst_osc.max(dev / h0.abs());
        worst_iter = worst_iter.max(0.5 * (stats.mean_stage1 + stats.mean_stage2));
        max_iter = max_iter.max(stats.max_iterations);
    }
    Ok(outcome(
        worst_osc <= 1e-4 && worst_iter <= 20.0,
        format!(
            "N=256, {} steps: max relative H_c oscillation {worst_osc:.2e}, mean fixed-point iterations per stage {worst_iter:.2} (max {max_iter})",
            cfg.steps()
        ),
    ))
}

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("HAMROM_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|v| v.contains(&i));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut errors = Vec::new();
    let mut record = |i: usize, r: Result<Outcome>| {
        let o = r.unwrap_or_else(|e| {
            errors.push(i);
            outcome(false, format!("error: {e}"))
        });
        emit(&format!(
            "criterion {i}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        ));
        results.push((i, o));
    };
    if wanted(1) || wanted(2) {
        match criterion_1_and_2() {
            Ok((a, b)) => {
                if wanted(1) {
                    record(1, Ok(a));
                }
                if wanted(2) {
                    record(2, Ok(b));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                record(1, Err(e));
                record(2, Err(hamrom::Error::numeric(msg)));
            }
        }
    }
    let rest: [(usize, fn() -> Result<Outcome>); 7] = [
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (i, f) in rest {
        if wanted(i) {
            record(i, f());
        }
    }
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(i, _)| *i)
        .collect();
    emit(&format!(
        "acceptance: {} of {} criteria passed; failed: {failed:?}",
        results.len() - failed.len(),
        results.len()
    ));
    // A criterion that misses its tolerance is reported above; only a run that could not
    // complete fails the test.
    assert!(
        errors.is_empty(),
        "criteria aborted with errors: {errors:?}"
    );
}
