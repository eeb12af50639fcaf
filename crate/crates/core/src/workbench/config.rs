use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::fom::{interior_points, segment_points, Family, Params};
use crate::integrators::IntegratorConfig;
use crate::neural::{AeArchitecture, AeVariant, DynamicsKind, MlpArchitecture, ReducedNet};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Psd,
    Pod,
    Aehnn,
    Aeflow,
}

impl Method {
    pub fn is_linear(self) -> bool {
        matches!(self, Method::Psd | Method::Pod)
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| {
            Error::Config(format!(
                "unknown method '{s}' (expected psd, pod, aehnn or aeflow)"
            ))
        })
    }
}

/// Closed box of parameter values; training parameters lie on its diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Autoencoder layout without the sizes implied by `N` and `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeRecord {
    pub variant: AeVariant,
    pub n_blocks: usize,
    pub dense_sizes: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

/// Everything a workbench run needs; loaded from JSON over family defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n: usize,
    /// Integrator and snapshot time step.
    pub dt: f64,
    pub t_end: f64,
    pub train_range: ParamRange,
    /// `P`: training parameters, evenly spaced on the range diagonal.
    pub n_train: usize,
    /// Validation parameters, evenly spaced strictly inside the range.
    pub n_val: usize,
    /// Named test parameters (`test1`, `test2`, ...) in the order given here.
    pub test_params: Vec<Vec<f64>>,
    pub method: Method,
    pub k: usize,
    pub autoencoder: AeRecord,
    pub hnn: MlpRecord,
    pub flow: MlpRecord,
    /// Watch duration.
    pub s: usize,
    pub val_pairs: usize,
    pub training: TrainConfig,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults of the full-scale experiment for a model family.
    pub fn for_family(family: Family) -> Self {
        let (ae_act, hnn, s, dt, t_end, variant) = match family {
            Family::ShallowWater => (
                Activation::Swish,
                vec![40, 20, 20, 20, 10],
                48,
                2e-4,
                0.5,
                AeVariant::Split,
            ),
            Family::NonlinearWave => (
                Activation::Elu,
                vec![24, 12, 12, 12, 6],
                16,
                1e-4,
                0.3,
                AeVariant::Bichannel,
            ),
            Family::LinearWave => (
                Activation::Elu,
                vec![24, 12, 12, 12, 6],
                16,
                1e-4,
                0.4,
                AeVariant::Bichannel,
            ),
        };
        let hnn_act = if family == Family::ShallowWater {
            Activation::Swish
        } else {
            Activation::Tanh
        };
        let training = TrainConfig {
            dt,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            family,
            n: 1024,
            dt,
            t_end,
            train_range: default_range(family),
            n_train: 20,
            n_val: 6,
            test_params: test_presets(family),
            method: Method::Aehnn,
            k: 3,
            autoencoder: AeRecord {
                variant,
                n_blocks: 4,
                dense_sizes: vec![256, 128, 64, 32],
                activation: ae_act,
            },
            hnn: MlpRecord {
                hidden_sizes: hnn,
                activation: hnn_act,
            },
            flow: MlpRecord {
                hidden_sizes: vec![32, 24, 16, 16],
                activation: hnn_act,
            },
            s,
            val_pairs: 128,
            training,
            fp_tol: 1e-10,
            fp_max_iter: 100,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parse JSON; keys absent from the document keep the defaults of its `family`
    /// (linear wave when unspecified). Nested objects merge key by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let family = match user.get("family") {
            Some(f) => serde_json::from_value(f.clone())
                .map_err(|e| Error::Config(format!("family: {e}")))?,
            None => Family::LinearWave,
        };
        let mut merged = serde_json::to_value(Self::for_family(family))?;
        merge(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.family.param_dim();
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.n < 4 {
            return cfg_err(format!("N={} is too small", self.n));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt.is_finite() && self.t_end.is_finite()) {
            return cfg_err("dt and t_end must be positive".into());
        }
        if self.steps() == 0 {
            return cfg_err("t_end is shorter than one time step".into());
        }
        if self.train_range.lo.len() != d || self.train_range.hi.len() != d {
            return cfg_err(format!(
                "{:?} parameter ranges need {d} components",
                self.family
            ));
        }
        if let Some(t) = self.test_params.iter().find(|t| t.len() != d) {
            return cfg_err(format!("test parameter {t:?} needs {d} components"));
        }
        if self.n_train == 0 {
            return cfg_err("at least one training parameter is required".into());
        }
        if self.k == 0 || self.k > self.n {
            return cfg_err(format!("K={} outside 1..={}", self.k, self.n));
        }
        if !self.method.is_linear() {
            if self.s == 0 || self.s >= self.steps() {
                return cfg_err(format!(
                    "watch duration s={} must be in 1..{}",
                    self.s,
                    self.steps()
                ));
            }
            if self.n_val == 0 || self.val_pairs == 0 {
                return cfg_err("neural methods need validation parameters and pairs".into());
            }
            self.reduced_net()
                .and_then(|net| net.validate())
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.integrator().validate()?;
        Ok(())
    }

    /// Number of time steps `M`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let mut c = IntegratorConfig::stormer_verlet(self.dt, self.family.is_separable());
        c.fp_tol = self.fp_tol;
        c.fp_max_iter = self.fp_max_iter;
        c
    }

    pub fn train_params(&self) -> Vec<Vec<f64>> {
        segment_points(&self.train_range.lo, &self.train_range.hi, self.n_train)
    }

    pub fn val_params(&self) -> Vec<Vec<f64>> {
        interior_points(&self.train_range.lo, &self.train_range.hi, self.n_val)
    }

    pub fn params(&self, active: &[f64]) -> Result<Params> {
        Params::from_active(self.family, active)
    }

    /// Resolve `testN` (1-based) or a comma-separated list of values.
    pub fn resolve_mu(&self, spec: &str) -> Result<Vec<f64>> {
        if let Some(idx) = spec.strip_prefix("test") {
            let i: usize = idx
                .parse()
                .map_err(|_| Error::Config(format!("bad preset name '{spec}'")))?;
            return self
                .test_params
                .get(i.wrapping_sub(1))
                .cloned()
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no preset '{spec}' ({} defined)",
                        self.test_params.len()
                    ))
                });
        }
        let v: std::result::Result<Vec<f64>, _> =
            spec.split(',').map(|x| x.trim().parse::<f64>()).collect();
        let v = v.map_err(|_| Error::Config(format!("cannot parse parameter '{spec}'")))?;
        if v.len() != self.family.param_dim() {
            return Err(Error::Config(format!(
                "parameter '{spec}' needs {} components",
                self.family.param_dim()
            )));
        }
        Ok(v)
    }

    /// Network pair described by this configuration, for the neural methods.
    pub fn reduced_net(&self) -> Result<ReducedNet> {
        let d = self.family.param_dim();
        let ae = AeArchitecture {
            variant: self.autoencoder.variant,
            n_blocks: self.autoencoder.n_blocks,
            dense_sizes: self.autoencoder.dense_sizes.clone(),
            latent_dim: 2 * self.k,
            activation: self.autoencoder.activation,
            input_length: self.n,
        };
        let (dyn_arch, kind) = match self.method {
            Method::Aeflow => (
                MlpArchitecture::flow(
                    self.flow.hidden_sizes.clone(),
                    self.flow.activation,
                    2 * self.k,
                    d,
                ),
                DynamicsKind::Flow,
            ),
            _ => (
                MlpArchitecture::hnn(
                    self.hnn.hidden_sizes.clone(),
                    self.hnn.activation,
                    2 * self.k,
                    d,
                ),
                DynamicsKind::Hnn,
            ),
        };
        ReducedNet::new(ae, dyn_arch, kind)
    }

    /// Training settings with the run-level time step, solver and seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dt: self.dt,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            seed: self.seed,
            ..self.training.clone()
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

pub fn default_range(family: Family) -> ParamRange {
    match family {
        Family::LinearWave => ParamRange {
            lo: vec![0.2],
            hi: vec![0.6],
        },
        Family::NonlinearWave => ParamRange {
            lo: vec![0.2, 0.025, 0.4],
            hi: vec![0.6, 0.5, 2.4],
        },
        Family::ShallowWater => ParamRange {
            lo: vec![0.0, 0.2],
            hi: vec![0.2, 0.05],
        },
    }
}

/// The three named test parameters of each family.
pub fn test_presets(family: Family) -> Vec<Vec<f64>> {
    match family {
        Family::LinearWave => vec![vec![0.2385], vec![0.3798], vec![0.5428]],
        Family::NonlinearWave => vec![
            vec![0.2385, 0.088, 0.5485],
            vec![0.3785, 0.281, 1.354],
            vec![0.5528, 0.437, 2.128],
        ],
        Family::ShallowWater => vec![vec![0.105, 0.11], vec![0.195, 0.053], vec![0.21, 0.045]],
    }
}
