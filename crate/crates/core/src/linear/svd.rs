use nalgebra::DMatrix;

use crate::autodiff::gemm;
use crate::error::{Error, Result};

/// Leading singular triplets, `σ` sorted in decreasing order.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Leading-`k` SVD of `x`.
pub fn svd_truncated(x: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    let (m, n) = x.shape();
    if k == 0 || k > m.min(n) {
        return Err(Error::usage(format!(
            "svd_truncated: K={k} outside 1..={} for a {m}x{n} matrix",
            m.min(n)
        )));
    }
    // Work on the thin side: the SVD of xᵀ swaps the roles of U and V.
    let wide = m < n;
    let work = if wide { x.transpose() } else { x.clone() };
    let svd = work
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numeric("SVD did not converge"))?;
    let u = svd
        .u
        .ok_or_else(|| Error::numeric("SVD produced no left vectors"))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::numeric("SVD produced no right vectors"))?;
    let sigma: Vec<f64> = svd.singular_values.iter().take(k).copied().collect();
    let left = u.columns(0, k).into_owned();
    let right = vt.rows(0, k).transpose();
    let (u, v) = if wide { (right, left) } else { (left, right) };
    Ok(TruncatedSvd { u, sigma, v })
}

/// Streaming accumulation of `Σ y yᵀ` over columns `y` of fixed length.
///
/// Leading left singular vectors of the (never stored) snapshot matrix are the leading
/// eigenvectors of the accumulated Gram matrix.
#[derive(Clone, Debug)]
pub struct GramAccumulator {
    dim: usize,
    gram: Vec<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        GramAccumulator {
            dim,
            gram: vec![0.0; dim * dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of columns seen so far.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Add `ncols` columns stored back to back in `block` (each of length `dim`).
    pub fn add_columns(&mut self, block: &[f64]) -> Result<()> {
        if block.len() % self.dim.max(1) != 0 {
            return Err(Error::dimension(format!(
                "block of {} values is not a multiple of {}",
                block.len(),
                self.dim
            )));
        }
        let ncols = block.len() / self.dim.max(1);
        if ncols == 0 {
            return Ok(());
        }
        // block is row-major (ncols x dim) = C; gram += Cᵀ C.
        gemm(
            self.dim,
            ncols,
            self.dim,
            block,
            true,
            block,
            false,
            1.0,
            &mut self.gram,
        );
        self.count += ncols;
        Ok(())
    }

    pub fn gram(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.gram)
    }

    /// Leading `k` left singular vectors and values of the accumulated columns.
    pub fn leading(&self, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
        if k == 0 || k > self.dim {
            return Err(Error::usage(format!(
                "cannot extract {k} vectors in dimension {}",
                self.dim
            )));
        }
        let mut g = self.gram();
        // Symmetrize against accumulated roundoff.
        for i in 0..self.dim {
            for j in 0..i {
                let s = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = s;
                g[(j, i)] = s;
            }
        }
        let eig = g
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut u = DMatrix::zeros(self.dim, k);
        let mut sigma = Vec::with_capacity(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            u.set_column(c, &eig.eigenvectors.column(idx));
            sigma.push(eig.eigenvalues[idx].max(0.0).sqrt());
        }
        Ok((u, sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn diagonal_case() {
        let x = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let s = svd_truncated(&x, 2).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 2.0).abs() < 1e-14);
        assert!((s.u[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((s.u[(1, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one() {
        let u = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let v = nalgebra::DVector::from_vec(vec![0.3, 0.1, -1.0]);
        let x = &u * v.transpose();
        let s = svd_truncated(&x, 3).unwrap();
        assert!((s.sigma[0] - u.norm() * v.norm()).abs() < 1e-10);
        assert!(s.sigma[1].abs() < 1e-10 && s.sigma[2].abs() < 1e-10);
        let utu = s.u.transpose() * &s.u;
        assert!((utu - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (m, n) in [(20, 12), (12, 20)] {
            let x = random(m, n, 4);
            let k = m.min(n);
            let s = svd_truncated(&x, k).unwrap();
            let sig = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.sigma.clone()));
            let r = &s.u * sig * s.v.transpose() - &x;
            assert!(r.norm() <= 1e-9 * x.norm());
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rejects_bad_rank() {
        let x = random(4, 3, 1);
        assert!(svd_truncated(&x, 0).is_err());
        assert!(svd_truncated(&x, 4).is_err());
    }

    #[test]
    fn gram_route_agrees_with_svd() {
        let x = random(10, 40, 9);
        let mut acc = GramAccumulator::new(10);
        let cols: Vec<f64> = (0..40)
            .flat_map(|j| x.column(j).iter().copied().collect::<Vec<_>>())
            .collect();
        acc.add_columns(&cols[..200]).unwrap();
        acc.add_columns(&cols[200..]).unwrap();
        assert_eq!(acc.count(), 40);
        let (u, sigma) = acc.leading(4).unwrap();
        let s = svd_truncated(&x, 4).unwrap();
        for i in 0..4 {
            assert!((sigma[i] - s.sigma[i]).abs() < 1e-10 * s.sigma[0]);
            let dot = u.column(i).dot(&s.u.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }
}
