use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub param: usize,
    pub step: usize,
}

/// Column snapshots `y = (q, p)` of length `2N`, stored contiguously one after another.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    half_dim: usize,
    data: Vec<f64>,
    meta: Vec<SnapshotMeta>,
}

impl SnapshotSet {
    pub fn new(half_dim: usize) -> Self {
        SnapshotSet {
            half_dim,
            data: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn from_parts(half_dim: usize, data: Vec<f64>, meta: Vec<SnapshotMeta>) -> Result<Self> {
        if data.len() != 2 * half_dim * meta.len() {
            return Err(Error::dimension(format!(
                "{} values for {} snapshots of length {}",
                data.len(),
                meta.len(),
                2 * half_dim
            )));
        }
        Ok(SnapshotSet {
            half_dim,
            data,
            meta,
        })
    }

    pub fn push(&mut self, q: &[f64], p: &[f64], meta: SnapshotMeta) -> Result<()> {
        if q.len() != self.half_dim || p.len() != self.half_dim {
            return Err(Error::dimension(format!(
                "snapshot halves {} / {} for N = {}",
                q.len(),
                p.len(),
                self.half_dim
            )));
        }
        self.data.extend_from_slice(q);
        self.data.extend_from_slice(p);
        self.meta.push(meta);
        Ok(())
    }

    /// `N`; every snapshot has length `2N`.
    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn meta(&self) -> &[SnapshotMeta] {
        &self.meta
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let w = 2 * self.half_dim;
        &self.data[j * w..(j + 1) * w]
    }

    pub fn q(&self, j: usize) -> &[f64] {
        &self.column(j)[..self.half_dim]
    }

    pub fn p(&self, j: usize) -> &[f64] {
        &self.column(j)[self.half_dim..]
    }

    /// Snapshot matrix `Y` of shape `2N × p`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2 * self.half_dim, self.len(), &self.data)
    }

    /// `[q_1, …, q_p, p_1, …, p_p]` of shape `N × 2p`.
    pub fn stacked_qp(&self) -> DMatrix<f64> {
        let n = self.half_dim;
        let p = self.len();
        DMatrix::from_fn(n, 2 * p, |i, j| {
            if j < p {
                self.q(j)[i]
            } else {
                self.p(j - p)[i]
            }
        })
    }
}
