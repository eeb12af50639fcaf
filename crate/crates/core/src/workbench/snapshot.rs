use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::container::{
    expect_eof, header_bytes, read_f64s, read_prefix, write_f64s, write_prefix,
};
use crate::error::{Error, Result};
use crate::fom::{Family, Fom};
use crate::integrators::{rollout, IntegratorConfig};
use crate::training::TrajectoryData;

const MAGIC: &[u8; 8] = b"HRSNAP01";

/// JSON header of a snapshot file.
///
/// The payload holds `p` trajectories of `m + 1` states each; every state is `q` followed by
/// `p` (`2n` values). Trajectories `0..n_train` are training data, the rest validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub dt: f64,
    pub params: Vec<Vec<f64>>,
    pub n_train: usize,
    pub byte_order: String,
    pub precision: String,
    pub created_by: String,
    pub seed: u64,
}

impl SnapshotHeader {
    pub fn new(
        family: Family,
        n: usize,
        m: usize,
        dt: f64,
        params: Vec<Vec<f64>>,
        n_train: usize,
        seed: u64,
    ) -> Self {
        SnapshotHeader {
            family,
            n,
            p: params.len(),
            m,
            dt,
            params,
            n_train,
            byte_order: "little".into(),
            precision: "f64".into(),
            created_by: concat!("hamrom ", env!("CARGO_PKG_VERSION")).into(),
            seed,
        }
    }

    pub fn state_len(&self) -> usize {
        2 * self.n
    }

    pub fn trajectory_len(&self) -> usize {
        (self.m + 1) * self.state_len()
    }

    pub fn payload_len(&self) -> usize {
        self.p * self.trajectory_len()
    }

    fn validate(&self) -> Result<()> {
        if self.params.len() != self.p || self.n_train > self.p {
            return Err(Error::Format(format!(
                "header lists {} parameters for p={}",
                self.params.len(),
                self.p
            )));
        }
        if self.byte_order != "little" || self.precision != "f64" {
            return Err(Error::Format(format!(
                "unsupported layout {}/{}",
                self.byte_order, self.precision
            )));
        }
        Ok(())
    }
}

/// Streaming writer: trajectories are appended in order.
pub struct SnapshotWriter {
    out: BufWriter<File>,
    header: SnapshotHeader,
    written: usize,
}

impl SnapshotWriter {
    pub fn create(path: &Path, header: SnapshotHeader) -> Result<Self> {
        header.validate()?;
        let mut out = BufWriter::new(File::create(path)?);
        write_prefix(&mut out, MAGIC, &header_bytes(&header)?)?;
        Ok(SnapshotWriter {
            out,
            header,
            written: 0,
        })
    }

    pub fn write_trajectory(&mut self, states: &[Vec<f64>]) -> Result<()> {
        if self.written == self.header.p {
            return Err(Error::usage(
                "all trajectories declared in the header are written",
            ));
        }
        if states.len() != self.header.m + 1
            || states.iter().any(|s| s.len() != self.header.state_len())
        {
            return Err(Error::dimension(
                "trajectory does not match the snapshot header",
            ));
        }
        for s in states {
            write_f64s(&mut self.out, s)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.p {
            return Err(Error::usage(format!(
                "{} of {} trajectories written",
                self.written, self.header.p
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Random-access reader over a snapshot file.
pub struct SnapshotReader {
    file: BufReader<File>,
    header: SnapshotHeader,
    offset: u64,
}

impl SnapshotReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let (header, offset): (SnapshotHeader, u64) = read_prefix(&mut file, MAGIC)?;
        header.validate()?;
        let expected = offset + 8 * header.payload_len() as u64;
        let actual = file.get_ref().metadata()?.len();
        if actual != expected {
            return Err(Error::Format(format!(
                "snapshot file has {actual} bytes, header implies {expected}"
            )));
        }
        Ok(SnapshotReader {
            file,
            header,
            offset,
        })
    }

    pub fn header(&self) -> &SnapshotHeader {
        &self.header
    }

    pub fn read_trajectory(&mut self, j: usize) -> Result<TrajectoryData> {
        let h = &self.header;
        if j >= h.p {
            return Err(Error::usage(format!("trajectory {j} of {}", h.p)));
        }
        let start = self.offset + 8 * (j * h.trajectory_len()) as u64;
        self.file.seek(SeekFrom::Start(start))?;
        let flat = read_f64s(&mut self.file, h.trajectory_len())?;
        let states = flat
            .chunks_exact(h.state_len())
            .map(<[f64]>::to_vec)
            .collect();
        Ok(TrajectoryData {
            mu: h.params[j].clone(),
            states,
        })
    }

    /// Training and validation trajectories.
    pub fn read_split(&mut self) -> Result<(Vec<TrajectoryData>, Vec<TrajectoryData>)> {
        let (n_train, p) = (self.header.n_train, self.header.p);
        let train = (0..n_train)
            .map(|j| self.read_trajectory(j))
            .collect::<Result<_>>()?;
        let val = (n_train..p)
            .map(|j| self.read_trajectory(j))
            .collect::<Result<_>>()?;
        Ok((train, val))
    }
}

/// Whole snapshot file in memory, for small data sets and round-trip checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotFile {
    pub header: SnapshotHeader,
    pub payload: Vec<f64>,
}

impl SnapshotFile {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let (header, _): (SnapshotHeader, u64) = read_prefix(&mut r, MAGIC)?;
        header.validate()?;
        let payload = read_f64s(&mut r, header.payload_len())?;
        expect_eof(&mut r)?;
        Ok(SnapshotFile { header, payload })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.payload.len() != self.header.payload_len() {
            return Err(Error::Format(
                "payload length does not match the header".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.payload.len() * 8 + 1024);
        write_prefix(&mut out, MAGIC, &header_bytes(&self.header)?)?;
        write_f64s(&mut out, &self.payload)?;
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn trajectory(&self, j: usize) -> TrajectoryData {
        let len = self.header.trajectory_len();
        let flat = &self.payload[j * len..(j + 1) * len];
        TrajectoryData {
            mu: self.header.params[j].clone(),
            states: flat
                .chunks_exact(self.header.state_len())
                .map(<[f64]>::to_vec)
                .collect(),
        }
    }
}

/// FOM trajectory from the family's initial condition: `steps + 1` states, each `(q, p)`.
pub fn fom_trajectory(
    family: Family,
    n: usize,
    mu: &[f64],
    steps: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>> {
    let fom = Fom::for_family(crate::fom::Params::from_active(family, mu)?, n)?;
    let y0 = fom.initial_state()?;
    let (mut q, mut p) = (y0.q, y0.p);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(q.iter().chain(&p).copied().collect::<Vec<f64>>());
    rollout(&fom, &mut q, &mut p, cfg, steps, |_, q, p| {
        if q.iter().chain(p).any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "full-order solution at {mu:?} became non-finite"
            )));
        }
        states.push(q.iter().chain(p).copied().collect());
        Ok(())
    })?;
    Ok(states)
}

/// Integrate the full-order model at every training and validation parameter and write the
/// snapshot file. Trajectories are computed in parallel and written in parameter order.
pub fn generate(cfg: &ExperimentConfig, path: &Path) -> Result<SnapshotHeader> {
    cfg.validate()?;
    let mut params = cfg.train_params();
    let n_train = params.len();
    params.extend(cfg.val_params());
    let header = SnapshotHeader::new(
        cfg.family,
        cfg.n,
        cfg.steps(),
        cfg.dt,
        params.clone(),
        n_train,
        cfg.seed,
    );
    let mut writer = SnapshotWriter::create(path, header.clone())?;
    let icfg = cfg.integrator();
    let chunk = rayon::current_num_threads().max(1);
    for group in params.chunks(chunk) {
        let trajs: Vec<Vec<Vec<f64>>> = group
            .par_iter()
            .map(|mu| fom_trajectory(cfg.family, cfg.n, mu, cfg.steps(), &icfg))
            .collect::<Result<_>>()?;
        for t in &trajs {
            writer.write_trajectory(t)?;
        }
    }
    writer.finish()?;
    info!(
        "wrote {} trajectories of {} steps to {}",
        header.p,
        header.m,
        path.display()
    );
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::for_family(Family::LinearWave);
        c.n = 32;
        c.dt = 1e-3;
        c.t_end = 2e-3;
        c.n_train = 1;
        c.n_val = 0;
        c.method = super::super::config::Method::Psd;
        c
    }

    #[test]
    fn tiny_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        let cfg = tiny_config();
        let h = generate(&cfg, &path).unwrap();
        assert_eq!((h.p, h.m), (1, 2));
        let file = SnapshotFile::read(&path).unwrap();
        assert_eq!(file.payload.len(), 3 * 64);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(file.to_bytes().unwrap(), bytes);
        let mut r = SnapshotReader::open(&path).unwrap();
        let t = r.read_trajectory(0).unwrap();
        assert_eq!(t.states.len(), 3);
        assert_eq!(t, file.trajectory(0));
        let direct = fom_trajectory(cfg.family, cfg.n, &[0.2], 2, &cfg.integrator()).unwrap();
        assert_eq!(t.states, direct);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let mut cfg = tiny_config();
        cfg.n_train = 3;
        cfg.n_val = 2;
        generate(&cfg, &a).unwrap();
        generate(&cfg, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let mut r = SnapshotReader::open(&a).unwrap();
        let (train, val) = r.read_split().unwrap();
        assert_eq!((train.len(), val.len()), (3, 2));
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        generate(&tiny_config(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(
            SnapshotFile::from_bytes(&bytes[..bytes.len() - 8]),
            Err(Error::Format(_))
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            SnapshotFile::from_bytes(&longer),
            Err(Error::Format(_))
        ));
        let mut tagged = bytes.clone();
        tagged[0] = b'X';
        assert!(matches!(
            SnapshotFile::from_bytes(&tagged),
            Err(Error::Format(_))
        ));
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(SnapshotReader::open(&path), Err(Error::Format(_))));
    }

    #[test]
    fn writer_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let h = SnapshotHeader::new(Family::LinearWave, 2, 1, 0.1, vec![vec![0.3]], 1, 0);
        let w = SnapshotWriter::create(&dir.path().join("x.bin"), h.clone()).unwrap();
        assert!(w.finish().is_err());
        let mut w = SnapshotWriter::create(&dir.path().join("y.bin"), h).unwrap();
        assert!(w.write_trajectory(&[vec![0.0; 4]]).is_err());
        w.write_trajectory(&[vec![0.0; 4], vec![1.0; 4]]).unwrap();
        assert!(w.write_trajectory(&[vec![0.0; 4], vec![1.0; 4]]).is_err());
        w.finish().unwrap();
    }
}
