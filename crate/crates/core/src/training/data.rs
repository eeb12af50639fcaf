use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// One trajectory at one parameter: `M + 1` states of length `2N` laid out `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryData {
    pub mu: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl TrajectoryData {
    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Affine standardization: one scalar mean/std for `q`, one for `p`, and per-component
/// statistics for the parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub mean_q: f64,
    pub std_q: f64,
    pub mean_p: f64,
    pub std_p: f64,
    pub mu_mean: Vec<f64>,
    pub mu_std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Preprocessor {
    /// Fit on training trajectories only.
    pub fn fit(train: &[TrajectoryData]) -> Result<Self> {
        let first = train
            .first()
            .and_then(|t| t.states.first())
            .ok_or_else(|| Error::usage("empty training set"))?;
        let n = first.len() / 2;
        let states = || train.iter().flat_map(|t| t.states.iter());
        let (mean_q, std_q) = mean_std(states().flat_map(|s| s[..n].iter().copied()));
        let (mean_p, std_p) = mean_std(states().flat_map(|s| s[n..].iter().copied()));
        let d = train[0].mu.len();
        let (mu_mean, mu_std) = (0..d)
            .map(|j| mean_std(train.iter().map(move |t| t.mu[j])))
            .unzip();
        Ok(Preprocessor {
            mean_q,
            std_q,
            mean_p,
            std_p,
            mu_mean,
            mu_std,
        })
    }

    pub fn identity(param_dim: usize) -> Self {
        Preprocessor {
            mean_q: 0.0,
            std_q: 1.0,
            mean_p: 0.0,
            std_p: 1.0,
            mu_mean: vec![0.0; param_dim],
            mu_std: vec![1.0; param_dim],
        }
    }

    pub fn apply_state(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len() / 2;
        let (q, p) = y.split_at(n);
        q.iter()
            .map(|v| (v - self.mean_q) / self.std_q)
            .chain(p.iter().map(|v| (v - self.mean_p) / self.std_p))
            .collect()
    }

    pub fn invert_state(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len() / 2;
        let (q, p) = y.split_at(n);
        q.iter()
            .map(|v| v * self.std_q + self.mean_q)
            .chain(p.iter().map(|v| v * self.std_p + self.mean_p))
            .collect()
    }

    pub fn apply_mu(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(self.mu_mean.iter().zip(&self.mu_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_mu(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(self.mu_mean.iter().zip(&self.mu_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_trajectory(&self, t: &TrajectoryData) -> TrajectoryData {
        TrajectoryData {
            mu: self.apply_mu(&t.mu),
            states: t.states.iter().map(|s| self.apply_state(s)).collect(),
        }
    }
}

/// Pairs `(y^n, y^{n+s})` from the same trajectory, with that trajectory's parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub y_n: Tensor,
    pub y_ns: Tensor,
    pub mu: Tensor,
    pub s: usize,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.y_n.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_indices(trajs: &[TrajectoryData], picks: &[(usize, usize)], s: usize) -> Result<Self> {
        let w = trajs[0].states[0].len();
        let d = trajs[0].mu.len();
        let b = picks.len();
        let (mut a, mut c, mut m) = (
            Vec::with_capacity(b * w),
            Vec::with_capacity(b * w),
            Vec::with_capacity(b * d),
        );
        for &(t, n) in picks {
            a.extend_from_slice(&trajs[t].states[n]);
            c.extend_from_slice(&trajs[t].states[n + s]);
            m.extend_from_slice(&trajs[t].mu);
        }
        Ok(PairBatch {
            y_n: Tensor::new(vec![b, w], a)?,
            y_ns: Tensor::new(vec![b, w], c)?,
            mu: Tensor::new(vec![b, d], m)?,
            s,
        })
    }
}

/// Seeded uniform sampler over `(trajectory, n)` with `n + s ≤ M`.
#[derive(Clone, Debug)]
pub struct PairSampler {
    trajs: Vec<TrajectoryData>,
    s: usize,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(trajs: Vec<TrajectoryData>, s: usize, seed: u64) -> Result<Self> {
        check_trajectories(&trajs, s)?;
        Ok(PairSampler {
            trajs,
            s,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Draw `(trajectory, n)` indices.
    pub fn draw_indices(&mut self, batch: usize) -> Vec<(usize, usize)> {
        (0..batch)
            .map(|_| {
                let t = self.rng.gen_range(0..self.trajs.len());
                let n = self.rng.gen_range(0..=self.trajs[t].steps() - self.s);
                (t, n)
            })
            .collect()
    }

    pub fn sample(&mut self, batch: usize) -> Result<PairBatch> {
        if batch == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        let picks = self.draw_indices(batch);
        PairBatch::from_indices(&self.trajs, &picks, self.s)
    }
}

fn check_trajectories(trajs: &[TrajectoryData], s: usize) -> Result<()> {
    if trajs.is_empty() {
        return Err(Error::usage("no trajectories"));
    }
    let w = trajs[0].states.first().map_or(0, Vec::len);
    let d = trajs[0].mu.len();
    for t in trajs {
        if s >= t.steps() {
            return Err(Error::usage(format!(
                "watch duration {s} needs trajectories longer than {} steps",
                t.steps()
            )));
        }
        if t.states.iter().any(|y| y.len() != w) || t.mu.len() != d {
            return Err(Error::dimension(
                "trajectories disagree in state or parameter size",
            ));
        }
    }
    Ok(())
}

/// Training sampler plus a fixed validation batch of `val_pairs` pairs per validation trajectory.
pub fn build_dataset(
    train: Vec<TrajectoryData>,
    val: &[TrajectoryData],
    s: usize,
    val_pairs: usize,
    seed: u64,
) -> Result<(PairSampler, PairBatch)> {
    check_trajectories(val, s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11);
    let picks: Vec<(usize, usize)> = (0..val.len())
        .flat_map(|t| (0..val_pairs).map(move |_| t).collect::<Vec<_>>())
        .map(|t| (t, rng.gen_range(0..=val[t].steps() - s)))
        .collect();
    let val_batch = PairBatch::from_indices(val, &picks, s)?;
    Ok((PairSampler::new(train, s, seed)?, val_batch))
}
