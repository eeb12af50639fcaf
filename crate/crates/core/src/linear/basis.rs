use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{canonical_j, svd_truncated, GramAccumulator, SnapshotSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PsdCotangentLift,
    Pod,
}

/// Reduction basis `A` (`2N × 2K`); for the cotangent lift also the block `Φ` (`N × K`).
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticBasis {
    pub a: DMatrix<f64>,
    pub phi: Option<DMatrix<f64>>,
    pub kind: BasisKind,
    /// Singular values associated with the retained columns.
    pub sigma: Vec<f64>,
}

impl SymplecticBasis {
    /// `K`: half the reduced dimension.
    pub fn k(&self) -> usize {
        self.a.ncols() / 2
    }

    /// `N`: half the full dimension.
    pub fn n(&self) -> usize {
        self.a.nrows() / 2
    }

    pub fn is_symplectic(&self) -> bool {
        self.kind == BasisKind::PsdCotangentLift
    }

    /// `A = blockdiag(Φ, Φ)` from an orthonormal `Φ`.
    pub fn from_phi(phi: DMatrix<f64>, sigma: Vec<f64>) -> Self {
        let (n, k) = phi.shape();
        let mut a = DMatrix::zeros(2 * n, 2 * k);
        a.view_mut((0, 0), (n, k)).copy_from(&phi);
        a.view_mut((n, k), (n, k)).copy_from(&phi);
        SymplecticBasis {
            a,
            phi: Some(phi),
            kind: BasisKind::PsdCotangentLift,
            sigma,
        }
    }

    pub fn from_pod(a: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        if a.nrows() % 2 != 0 || a.ncols() % 2 != 0 {
            return Err(Error::dimension(format!(
                "POD basis must be even-sized, got {:?}",
                a.shape()
            )));
        }
        Ok(SymplecticBasis {
            a,
            phi: None,
            kind: BasisKind::Pod,
            sigma,
        })
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::usage(format!(
            "reduced dimension K={k} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Cotangent-lift PSD basis from the leading `K` left singular vectors of `[Q, P]`.
pub fn cotangent_lift(snapshots: &SnapshotSet, k: usize) -> Result<SymplecticBasis> {
    let n = snapshots.half_dim();
    check_k(k, n)?;
    let stacked = snapshots.stacked_qp();
    if k > stacked.ncols() {
        return Err(Error::usage(format!(
            "K={k} exceeds the {} stacked snapshots",
            stacked.ncols()
        )));
    }
    let svd = svd_truncated(&stacked, k)?;
    Ok(SymplecticBasis::from_phi(svd.u, svd.sigma))
}

/// Cotangent lift from a Gram accumulator fed with every `q` and `p` half separately.
pub fn cotangent_lift_from_gram(acc: &GramAccumulator, k: usize) -> Result<SymplecticBasis> {
    check_k(k, acc.dim())?;
    let (phi, sigma) = acc.leading(k)?;
    Ok(SymplecticBasis::from_phi(phi, sigma))
}

/// POD basis: the leading `2K` left singular vectors of the snapshot matrix.
pub fn pod_basis(snapshots: &SnapshotSet, k: usize) -> Result<SymplecticBasis> {
    let n = snapshots.half_dim();
    if k == 0 || 2 * k > (2 * n).min(snapshots.len()) {
        return Err(Error::usage(format!(
            "POD needs 2K ≤ min(2N, p); got K={k}, N={n}, p={}",
            snapshots.len()
        )));
    }
    let svd = svd_truncated(&snapshots.matrix(), 2 * k)?;
    SymplecticBasis::from_pod(svd.u, svd.sigma)
}

/// POD basis from a Gram accumulator fed with whole snapshots.
pub fn pod_basis_from_gram(acc: &GramAccumulator, k: usize) -> Result<SymplecticBasis> {
    if k == 0 || 2 * k > acc.dim().min(acc.count()) {
        return Err(Error::usage(format!(
            "POD needs 2K ≤ min(2N, p); got K={k}"
        )));
    }
    let (a, sigma) = acc.leading(2 * k)?;
    SymplecticBasis::from_pod(a, sigma)
}

/// `A⁺ = J_{2K}ᵀ Aᵀ J_{2N}`.
pub fn symplectic_inverse(basis: &SymplecticBasis) -> Result<DMatrix<f64>> {
    if basis.kind != BasisKind::PsdCotangentLift {
        return Err(Error::usage(
            "symplectic inverse is defined for PSD bases; POD uses Aᵀ",
        ));
    }
    let jk = canonical_j(basis.k());
    let jn = canonical_j(basis.n());
    Ok(jk.transpose() * basis.a.transpose() * jn)
}
