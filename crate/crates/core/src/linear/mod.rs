//! Linear reductions: cotangent-lift PSD and POD bases, and the Galerkin-reduced model.

mod basis;
mod rom;
mod snapshots;
mod svd;

pub use basis::{
    cotangent_lift, cotangent_lift_from_gram, pod_basis, pod_basis_from_gram, symplectic_inverse,
    BasisKind, SymplecticBasis,
};
pub use rom::{project, reconstruct, reduced_rhs, LinearRom};
pub use snapshots::{SnapshotMeta, SnapshotSet};
pub use svd::{svd_truncated, GramAccumulator, TruncatedSvd};

use nalgebra::DMatrix;

/// Canonical symplectic matrix `J_{2n} = [[0, I], [-I, 0]]`.
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}
