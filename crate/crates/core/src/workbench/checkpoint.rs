use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, ParamRange};
use super::container::{
    expect_eof, header_bytes, read_f64s, read_prefix, write_f64s, write_prefix,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fom::Family;
use crate::linear::{BasisKind, SymplecticBasis};
use crate::neural::{NetParams, ReducedNet};
use crate::training::Preprocessor;

const MAGIC: &[u8; 8] = b"HRCKPT01";

/// Shape and singular values of a stored linear basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisRecord {
    pub kind: BasisKind,
    pub rows: usize,
    pub cols: usize,
    pub sigma: Vec<f64>,
}

/// JSON manifest of a checkpoint.
///
/// The payload is `param_count` values: for PSD the `N × K` block `Φ`, for POD the
/// `2N × 2K` basis, both row-major; for the neural methods every tensor of the network in
/// the order of `tensor_shapes` (encoders, decoders, dynamics), each row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub method: Method,
    pub family: Family,
    pub n: usize,
    pub k: usize,
    pub dt: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub train_range: ParamRange,
    pub basis: Option<BasisRecord>,
    pub architecture: Option<ReducedNet>,
    pub preprocessor: Option<Preprocessor>,
    pub tensor_shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub steps: usize,
    pub param_count: usize,
    pub created_by: String,
}

/// Reduced model ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub enum ReducedModel {
    Linear(SymplecticBasis),
    Neural {
        net: ReducedNet,
        params: NetParams,
        pre: Preprocessor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: ReducedModel,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn base_manifest(cfg: &ExperimentConfig, method: Method) -> CheckpointManifest {
    CheckpointManifest {
        method,
        family: cfg.family,
        n: cfg.n,
        k: cfg.k,
        dt: cfg.dt,
        fp_tol: cfg.fp_tol,
        fp_max_iter: cfg.fp_max_iter,
        train_range: cfg.train_range.clone(),
        basis: None,
        architecture: None,
        preprocessor: None,
        tensor_shapes: Vec::new(),
        seed: cfg.seed,
        steps: 0,
        param_count: 0,
        created_by: concat!("hamrom ", env!("CARGO_PKG_VERSION")).into(),
    }
}

impl Checkpoint {
    pub fn linear(cfg: &ExperimentConfig, basis: SymplecticBasis) -> Result<Self> {
        let method = match basis.kind {
            BasisKind::PsdCotangentLift => Method::Psd,
            BasisKind::Pod => Method::Pod,
        };
        let (rows, cols) = match (&basis.kind, &basis.phi) {
            (BasisKind::PsdCotangentLift, Some(phi)) => phi.shape(),
            (BasisKind::PsdCotangentLift, None) => {
                return Err(Error::usage("PSD basis without its Φ block"))
            }
            (BasisKind::Pod, _) => basis.a.shape(),
        };
        let mut manifest = base_manifest(cfg, method);
        manifest.k = basis.k();
        manifest.basis = Some(BasisRecord {
            kind: basis.kind,
            rows,
            cols,
            sigma: basis.sigma.clone(),
        });
        manifest.tensor_shapes = vec![vec![rows, cols]];
        manifest.param_count = rows * cols;
        Ok(Checkpoint {
            manifest,
            model: ReducedModel::Linear(basis),
        })
    }

    pub fn neural(
        cfg: &ExperimentConfig,
        net: ReducedNet,
        params: NetParams,
        pre: Preprocessor,
        steps: usize,
    ) -> Result<Self> {
        params.check(&net.specs())?;
        let method = match net.kind {
            crate::neural::DynamicsKind::Hnn => Method::Aehnn,
            crate::neural::DynamicsKind::Flow => Method::Aeflow,
        };
        let mut manifest = base_manifest(cfg, method);
        manifest.k = net.latent_dim() / 2;
        manifest.seed = params.seed;
        manifest.steps = steps;
        manifest.tensor_shapes = params.tensors.iter().map(|t| t.shape().to_vec()).collect();
        manifest.param_count = params.param_count();
        manifest.architecture = Some(net.clone());
        manifest.preprocessor = Some(pre.clone());
        Ok(Checkpoint {
            manifest,
            model: ReducedModel::Neural { net, params, pre },
        })
    }

    fn payload(&self) -> Vec<f64> {
        match &self.model {
            ReducedModel::Linear(b) => match (&b.kind, &b.phi) {
                (BasisKind::PsdCotangentLift, Some(phi)) => row_major(phi),
                _ => row_major(&b.a),
            },
            ReducedModel::Neural { params, .. } => params
                .tensors
                .iter()
                .flat_map(|t| t.data().iter().copied())
                .collect(),
        }
    }

    fn from_parts(manifest: CheckpointManifest, payload: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint manifest: {m}"));
        let declared: usize = manifest
            .tensor_shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        if declared != manifest.param_count || payload.len() != manifest.param_count {
            return Err(bad(
                "parameter count disagrees with the tensor shapes or payload",
            ));
        }
        let model = if manifest.method.is_linear() {
            let rec = manifest
                .basis
                .as_ref()
                .ok_or_else(|| bad("linear method without a basis record"))?;
            let m = DMatrix::from_row_slice(rec.rows, rec.cols, &payload);
            match rec.kind {
                BasisKind::PsdCotangentLift => SymplecticBasis::from_phi(m, rec.sigma.clone()),
                BasisKind::Pod => SymplecticBasis::from_pod(m, rec.sigma.clone())?,
            }
            .into()
        } else {
            let net = manifest
                .architecture
                .clone()
                .ok_or_else(|| bad("neural method without an architecture"))?;
            let pre = manifest
                .preprocessor
                .clone()
                .ok_or_else(|| bad("neural method without preprocessing statistics"))?;
            let mut tensors = Vec::with_capacity(manifest.tensor_shapes.len());
            let mut offset = 0;
            for shape in &manifest.tensor_shapes {
                let len: usize = shape.iter().product();
                tensors.push(Tensor::new(
                    shape.clone(),
                    payload[offset..offset + len].to_vec(),
                )?);
                offset += len;
            }
            let params = NetParams {
                tensors,
                seed: manifest.seed,
            };
            params
                .check(&net.specs())
                .map_err(|_| bad("tensor shapes do not match the architecture"))?;
            ReducedModel::Neural { net, params, pre }
        };
        Ok(Checkpoint { manifest, model })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(payload.len() * 8 + 4096);
        write_prefix(&mut out, MAGIC, &header_bytes(&self.manifest)?)?;
        write_f64s(&mut out, &payload)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let (manifest, _): (CheckpointManifest, u64) = read_prefix(&mut r, MAGIC)?;
        let payload = read_f64s(&mut r, manifest.param_count)?;
        expect_eof(&mut r)?;
        Self::from_parts(manifest, payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl From<SymplecticBasis> for ReducedModel {
    fn from(b: SymplecticBasis) -> Self {
        ReducedModel::Linear(b)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::training::TrajectoryData;
    use crate::workbench::pipeline::{linear_basis, train_network};
    use crate::workbench::snapshot::fom_trajectory;

    pub(crate) fn tiny_neural_config(method: Method) -> ExperimentConfig {
        let mut c = ExperimentConfig::for_family(Family::LinearWave);
        c.n = 16;
        c.dt = 2e-3;
        c.t_end = 2e-2;
        c.n_train = 2;
        c.n_val = 1;
        c.k = 1;
        c.s = 2;
        c.val_pairs = 4;
        c.method = method;
        c.autoencoder.n_blocks = 2;
        c.autoencoder.dense_sizes = vec![8, 6];
        c.hnn.hidden_sizes = vec![6, 6];
        c.flow.hidden_sizes = vec![6, 6];
        c.training.steps = 3;
        c.training.batch_size = 4;
        c.training.eval_interval = 1;
        c
    }

    fn trajectories(c: &ExperimentConfig, params: Vec<Vec<f64>>) -> Vec<TrajectoryData> {
        params
            .into_iter()
            .map(|mu| TrajectoryData {
                states: fom_trajectory(c.family, c.n, &mu, c.steps(), &c.integrator()).unwrap(),
                mu,
            })
            .collect()
    }

    fn neural_checkpoint(method: Method) -> Checkpoint {
        let c = tiny_neural_config(method);
        let (train, val) = (
            trajectories(&c, c.train_params()),
            trajectories(&c, c.val_params()),
        );
        train_network(&c, &train, &val)
            .unwrap()
            .into_checkpoint(&c)
            .unwrap()
    }

    #[test]
    fn neural_checkpoints_round_trip_bytewise() {
        for method in [Method::Aehnn, Method::Aeflow] {
            let ck = neural_checkpoint(method);
            assert_eq!(ck.manifest.method, method);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn linear_checkpoints_round_trip_bytewise() {
        let mut c = tiny_neural_config(Method::Psd);
        c.k = 3;
        let trajs = trajectories(&c, c.train_params());
        for method in [Method::Psd, Method::Pod] {
            let basis = linear_basis(method, c.k, c.n, trajs.iter().cloned().map(Ok)).unwrap();
            let ck = Checkpoint::linear(&c, basis).unwrap();
            assert_eq!((ck.manifest.method, ck.manifest.k), (method, 3));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ck.bin");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
            let (ReducedModel::Linear(a), ReducedModel::Linear(b)) = (&ck.model, &back.model)
            else {
                panic!()
            };
            assert_eq!(a.a, b.a);
        }
    }

    #[test]
    fn inconsistent_manifests_are_rejected() {
        let ck = neural_checkpoint(Method::Aehnn);
        let mut m = ck.manifest.clone();
        m.param_count += 1;
        let bad = Checkpoint {
            manifest: m,
            model: ck.model.clone(),
        };
        assert!(matches!(
            Checkpoint::from_bytes(&bad.to_bytes().unwrap()),
            Err(Error::Format(_))
        ));
        let mut m = ck.manifest.clone();
        m.tensor_shapes.swap(0, 1);
        let bad = Checkpoint {
            manifest: m,
            model: ck.model.clone(),
        };
        assert!(Checkpoint::from_bytes(&bad.to_bytes().unwrap()).is_err());
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
