use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use hamrom::training::History;
use hamrom::workbench::{
    benchmark, evaluate, fom_trajectory, generate, plot_report, predict, reduce, write_history_svg,
    write_profiles_svg, Checkpoint, ErrorReport, ExperimentConfig, Method, Precision, SnapshotFile,
    SnapshotHeader, SnapshotReader,
};
use hamrom::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hamrom",
    version,
    about = "Reduced-order models of parameterized Hamiltonian systems"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON experiment configuration; keys left out keep the family defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling and network initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Reduced half-dimension K.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Floating-point precision of timed rollouts.
    #[arg(long, global = true, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Log debug messages.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Psd,
    Pod,
    Aehnn,
    Aeflow,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Psd => Method::Psd,
            MethodArg::Pod => Method::Pod,
            MethodArg::Aehnn => Method::Aehnn,
            MethodArg::Aeflow => Method::Aeflow,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full-order model at the training and validation parameters.
    Generate,
    /// Build a linear basis or train a network pair from a snapshot file.
    Reduce {
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Roll a reduced model from the initial condition and store the decoded trajectory.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Parameter: a preset `testN` or comma-separated values.
        #[arg(long, default_value = "test1")]
        mu: String,
        /// Number of time steps (default: the configured horizon).
        #[arg(long)]
        steps: Option<usize>,
        /// Also store the full-order reference trajectory.
        #[arg(long)]
        reference: bool,
    },
    /// Relative errors and Hamiltonian traces against the full-order model.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated presets or `;`-separated parameter vectors (default: all presets).
        #[arg(long)]
        tests: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Time the full-order rollout against reduced rollouts.
    Benchmark {
        /// Reduced models to time; repeat the flag for several.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "test1")]
        mu: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// CSV tables and SVG figures from reports, training histories and predictions.
    Plot {
        #[arg(long)]
        report: Vec<PathBuf>,
        #[arg(long)]
        history: Vec<PathBuf>,
        #[arg(long)]
        prediction: Vec<PathBuf>,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    precision: Precision,
}

impl Ctx {
    fn new(g: &GlobalArgs) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::from_json("{}")?,
        };
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        if let Some(m) = g.method {
            cfg.method = m.into();
        }
        if let Some(k) = g.k {
            cfg.k = k;
        }
        if let Some(out) = &g.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out)?;
        let precision = match g.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
        Ok(Ctx {
            cfg,
            out,
            precision,
        })
    }

    fn method_name(&self) -> String {
        method_name(self.cfg.method)
    }

    fn checkpoint_path(&self, given: Option<PathBuf>) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(format!("{}.ckpt", self.method_name())))
    }
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn parse_tests(cfg: &ExperimentConfig, spec: Option<&str>) -> Result<Vec<(String, Vec<f64>)>> {
    match spec {
        None => Ok((1..=cfg.test_params.len())
            .map(|i| (format!("test{i}"), cfg.test_params[i - 1].clone()))
            .collect()),
        Some(s) if s.contains(';') || !s.contains("test") => s
            .split(';')
            .map(|m| Ok((m.trim().to_string(), cfg.resolve_mu(m.trim())?)))
            .collect(),
        Some(s) => s
            .split(',')
            .map(|m| Ok((m.trim().to_string(), cfg.resolve_mu(m.trim())?)))
            .collect(),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.global)?;
    let cfg = &ctx.cfg;
    match cli.command {
        Command::Generate => {
            let path = ctx.out.join("snapshots.bin");
            let h = generate(cfg, &path)?;
            println!("{} trajectories x {} steps -> {}", h.p, h.m, path.display());
        }
        Command::Reduce { snapshots } => {
            let snap = snapshots.unwrap_or_else(|| ctx.out.join("snapshots.bin"));
            let mut reader = SnapshotReader::open(&snap)?;
            let red = reduce(cfg, &mut reader)?;
            let path = ctx.checkpoint_path(None);
            red.checkpoint.save(&path)?;
            if let Some(h) = &red.history {
                let base = ctx.out.join(format!("{}_history", ctx.method_name()));
                h.save_csv(&base.with_extension("csv"))?;
                std::fs::write(base.with_extension("json"), serde_json::to_vec(h)?)?;
            }
            println!(
                "{} K={} -> {}",
                ctx.method_name(),
                red.checkpoint.manifest.k,
                path.display()
            );
        }
        Command::Predict {
            checkpoint,
            mu,
            steps,
            reference,
        } => {
            let mu = cfg.resolve_mu(&mu)?;
            let ckpt = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
            let steps = steps.unwrap_or_else(|| cfg.steps());
            let pred = predict(&ckpt, &mu, steps)?;
            let m = &ckpt.manifest;
            let mut params = vec![mu.clone()];
            let mut payload: Vec<f64> = pred.states.concat();
            if reference {
                let mut icfg = cfg.integrator();
                icfg.dt = m.dt;
                payload.extend(fom_trajectory(m.family, m.n, &mu, steps, &icfg)?.concat());
                params.push(mu.clone());
            }
            let header = SnapshotHeader::new(m.family, m.n, steps, m.dt, params, 1, m.seed);
            let path = ctx
                .out
                .join(format!("prediction_{}.bin", method_name(m.method)));
            SnapshotFile { header, payload }.write(&path)?;
            println!("{} states at {:?} -> {}", steps + 1, mu, path.display());
        }
        Command::Evaluate {
            checkpoint,
            tests,
            steps,
        } => {
            let ckpt = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
            let tests = parse_tests(cfg, tests.as_deref())?;
            let report = evaluate(&ckpt, &tests, steps.unwrap_or_else(|| cfg.steps()))?;
            let path = ctx
                .out
                .join(format!("report_{}.json", method_name(ckpt.manifest.method)));
            report.save(&path)?;
            println!(
                "{:<10} {:>12} {:>12} {:>12}",
                "test", "err_q", "err_p", "drift"
            );
            for e in &report.entries {
                println!(
                    "{:<10} {:>12.4e} {:>12.4e} {:>12.4e}",
                    e.name, e.err_q, e.err_p, e.drift
                );
            }
            info!("report -> {}", path.display());
        }
        Command::Benchmark {
            checkpoint,
            mu,
            steps,
            reps,
        } => {
            let ckpts = checkpoint
                .iter()
                .map(|p| load_checkpoint(p))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Checkpoint> = ckpts.iter().collect();
            let first = &ckpts[0].manifest;
            let mu = cfg.resolve_mu(&mu)?;
            let steps = steps.unwrap_or_else(|| cfg.steps());
            let rows = benchmark(
                first.family,
                first.n,
                first.dt,
                &refs,
                &mu,
                steps,
                reps,
                ctx.precision,
            )?;
            println!(
                "{:<8} {:>12} {:>10} {:>6}",
                "method", "mean_ms", "std_ms", "reps"
            );
            for r in &rows {
                println!(
                    "{:<8} {:>12.2} {:>10.2} {:>6}",
                    r.label, r.mean_ms, r.std_ms, r.reps
                );
            }
            std::fs::write(
                ctx.out.join("benchmark.json"),
                serde_json::to_vec_pretty(&rows)?,
            )?;
        }
        Command::Plot {
            report,
            history,
            prediction,
        } => {
            if report.is_empty() && history.is_empty() && prediction.is_empty() {
                return Err(Error::usage(
                    "nothing to plot: pass --report, --history or --prediction",
                ));
            }
            for path in &report {
                let r = ErrorReport::load(path)?;
                let outputs = plot_report(&r, &ctx.out.join(stem(path)))?;
                println!("{}", outputs.csv.display());
                for s in &outputs.svgs {
                    println!("{}", s.display());
                }
            }
            for path in &history {
                let h: History = serde_json::from_slice(&std::fs::read(path)?).map_err(|e| {
                    Error::Format(format!("malformed history {}: {e}", path.display()))
                })?;
                let svg = ctx.out.join(format!("{}.svg", stem(path)));
                write_history_svg(&h, &svg)?;
                println!("{}", svg.display());
            }
            for path in &prediction {
                let file = SnapshotFile::read(path)?;
                let h = &file.header;
                let x = h.family.grid(h.n)?.x;
                let names = ["reduced", "reference"];
                let mut profiles = Vec::new();
                for step in [0, h.m / 2, h.m] {
                    for j in 0..h.p.min(2) {
                        let state = &file.trajectory(j).states[step];
                        profiles.push((
                            format!("{} t={:.3}", names[j], step as f64 * h.dt),
                            state[..h.n].to_vec(),
                        ));
                    }
                }
                let svg = ctx.out.join(format!("{}.svg", stem(path)));
                write_profiles_svg(&svg, &format!("q at {:?}", h.params[0]), &x, &profiles)?;
                println!("{}", svg.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
