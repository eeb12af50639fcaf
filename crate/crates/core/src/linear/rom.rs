use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use super::{canonical_j, BasisKind, SymplecticBasis};
use crate::error::{Error, Result};
use crate::fom::Fom;
use crate::integrators::HamiltonianField;

fn check_len(len: usize, expected: usize, what: &str) -> Result<()> {
    if len != expected {
        return Err(Error::dimension(format!(
            "{what}: length {len}, expected {expected}"
        )));
    }
    Ok(())
}

/// Reduced coordinates: `A⁺y` for PSD, `Aᵀy` for POD.
pub fn project(y: &[f64], basis: &SymplecticBasis) -> Result<Vec<f64>> {
    check_len(y.len(), basis.a.nrows(), "project")?;
    // For blockdiag(Φ, Φ), A⁺ = Aᵀ, so both kinds reduce to a transpose product.
    let v = basis.a.tr_mul(&DVector::from_column_slice(y));
    Ok(v.as_slice().to_vec())
}

/// Full state `Aȳ`.
pub fn reconstruct(ybar: &[f64], basis: &SymplecticBasis) -> Result<Vec<f64>> {
    check_len(ybar.len(), basis.a.ncols(), "reconstruct")?;
    let v = &basis.a * DVector::from_column_slice(ybar);
    Ok(v.as_slice().to_vec())
}

/// Galerkin-reduced vector field: `J_{2K} Aᵀ ∇H(Aȳ)` (PSD) or `Aᵀ J_{2N} ∇H(Aȳ)` (POD).
pub fn reduced_rhs(ybar: &[f64], basis: &SymplecticBasis, fom: &Fom) -> Result<Vec<f64>> {
    let n = fom.n();
    if basis.n() != n {
        return Err(Error::dimension(format!(
            "basis for N={} used with a model of N={n}",
            basis.n()
        )));
    }
    let y = reconstruct(ybar, basis)?;
    let (q, p) = y.split_at(n);
    let mut grad = vec![0.0; 2 * n];
    {
        let (gq, gp) = grad.split_at_mut(n);
        fom.grad_q(q, p, gq);
        fom.grad_p(q, p, gp);
    }
    let grad = DVector::from_vec(grad);
    let out = match basis.kind {
        BasisKind::PsdCotangentLift => canonical_j(basis.k()) * basis.a.tr_mul(&grad),
        BasisKind::Pod => basis.a.tr_mul(&(canonical_j(n) * grad)),
    };
    Ok(out.as_slice().to_vec())
}

enum Reduction<T> {
    /// Row-major `N × K` block Φ.
    Psd(Vec<T>),
    /// Row-major `2N × 2K` matrix A.
    Pod(Vec<T>),
}

/// Linear reduced model usable by the shared integrator driver.
///
/// PSD: gradients `Φᵀ∇_{q,p}H(Φq̄, Φp̄)`, evaluated through the full-order model.
/// POD: the projected field `AᵀJ∇H(Aȳ)` expressed as pseudo-gradients, so the implicit
/// Störmer-Verlet driver integrates exactly `dȳ/dt = AᵀJ∇H(Aȳ)`.
pub struct LinearRom<T> {
    fom: Fom,
    n: usize,
    k: usize,
    red: Reduction<T>,
}

fn to_row_major<T: Float>(m: &DMatrix<f64>) -> Vec<T> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(T::from(m[(i, j)]).unwrap());
        }
    }
    out
}

impl<T: Float> LinearRom<T> {
    pub fn new(basis: &SymplecticBasis, fom: Fom) -> Result<Self> {
        let n = fom.n();
        if basis.n() != n {
            return Err(Error::dimension(format!(
                "basis for N={} used with a model of N={n}",
                basis.n()
            )));
        }
        let k = basis.k();
        let red = match (&basis.kind, &basis.phi) {
            (BasisKind::PsdCotangentLift, Some(phi)) => Reduction::Psd(to_row_major(phi)),
            (BasisKind::PsdCotangentLift, None) => {
                return Err(Error::usage("PSD basis without its Φ block"));
            }
            (BasisKind::Pod, _) => Reduction::Pod(to_row_major(&basis.a)),
        };
        Ok(LinearRom { fom, n, k, red })
    }

    pub fn fom(&self) -> &Fom {
        &self.fom
    }

    /// `x = M x̄` for a row-major `rows × cols` matrix.
    fn lift(m: &[T], cols: usize, xbar: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
            *o = row
                .iter()
                .zip(xbar)
                .fold(T::zero(), |s, (a, b)| s + *a * *b);
        }
    }

    /// `x̄ = Mᵀ x` for a row-major `rows × cols` matrix.
    fn restrict(m: &[T], cols: usize, x: &[T], out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        for (row, &xi) in m.chunks_exact(cols).zip(x) {
            for (o, a) in out.iter_mut().zip(row) {
                *o = *o + *a * xi;
            }
        }
    }

    /// Projected field `F = AᵀJ∇H(Aȳ)` for POD, split as `(F_q, F_p)`.
    fn pod_field(&self, a: &[T], qbar: &[T], pbar: &[T]) -> Vec<T> {
        let (n, k) = (self.n, self.k);
        let ybar: Vec<T> = qbar.iter().chain(pbar).copied().collect();
        let mut y = vec![T::zero(); 2 * n];
        Self::lift(a, 2 * k, &ybar, &mut y);
        let (q, p) = y.split_at(n);
        let mut f = vec![T::zero(); 2 * n];
        {
            let (fq, fp) = f.split_at_mut(n);
            self.fom.grad_p(q, p, fq);
            self.fom.grad_q(q, p, fp);
            for v in fp.iter_mut() {
                *v = -*v;
            }
        }
        let mut out = vec![T::zero(); 2 * k];
        Self::restrict(a, 2 * k, &f, &mut out);
        out
    }
}

impl<T: Float> HamiltonianField<T> for LinearRom<T> {
    fn dim(&self) -> usize {
        self.k
    }

    fn separable(&self) -> bool {
        matches!(self.red, Reduction::Psd(_)) && HamiltonianField::<T>::separable(&self.fom)
    }

    fn grad_q(&self, qbar: &[T], pbar: &[T], out: &mut [T]) {
        match &self.red {
            Reduction::Psd(phi) => {
                let n = self.n;
                let mut q = vec![T::zero(); n];
                Self::lift(phi, self.k, qbar, &mut q);
                let mut p = vec![T::zero(); n];
                if !HamiltonianField::<T>::separable(&self.fom) {
                    Self::lift(phi, self.k, pbar, &mut p);
                }
                let mut g = vec![T::zero(); n];
                self.fom.grad_q(&q, &p, &mut g);
                Self::restrict(phi, self.k, &g, out);
            }
            Reduction::Pod(a) => {
                let f = self.pod_field(a, qbar, pbar);
                for (o, v) in out.iter_mut().zip(&f[self.k..]) {
                    *o = -*v;
                }
            }
        }
    }

    fn grad_p(&self, qbar: &[T], pbar: &[T], out: &mut [T]) {
        match &self.red {
            Reduction::Psd(phi) => {
                let n = self.n;
                let mut p = vec![T::zero(); n];
                Self::lift(phi, self.k, pbar, &mut p);
                let mut q = vec![T::zero(); n];
                if !HamiltonianField::<T>::separable(&self.fom) {
                    Self::lift(phi, self.k, qbar, &mut q);
                }
                let mut g = vec![T::zero(); n];
                self.fom.grad_p(&q, &p, &mut g);
                Self::restrict(phi, self.k, &g, out);
            }
            Reduction::Pod(a) => {
                let f = self.pod_field(a, qbar, pbar);
                out.copy_from_slice(&f[..self.k]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{Params, SwParams, WaveParams};
    use crate::integrators::{rollout, IntegratorConfig, Scheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormal(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        m.qr().q().columns(0, k).into_owned()
    }

    fn wave(n: usize) -> Fom {
        Fom::for_family(
            Params::Wave(WaveParams::nonlinear(0.4, 0.3, 1.2).unwrap()),
            n,
        )
        .unwrap()
    }

    #[test]
    fn project_reconstruct_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for basis in [
            SymplecticBasis::from_phi(orthonormal(8, 3, 2), vec![]),
            SymplecticBasis::from_pod(orthonormal(16, 6, 3), vec![]).unwrap(),
        ] {
            let ybar: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = reconstruct(&ybar, &basis).unwrap();
            let back = project(&y, &basis).unwrap();
            assert!(back.iter().zip(&ybar).all(|(a, b)| (a - b).abs() < 1e-10));
            let again = reconstruct(&back, &basis).unwrap();
            assert!(again.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        assert!(project(
            &[0.0; 3],
            &SymplecticBasis::from_phi(orthonormal(8, 3, 2), vec![])
        )
        .is_err());
    }

    #[test]
    fn orthogonal_complement_projects_to_zero() {
        let q = orthonormal(8, 4, 5);
        let basis = SymplecticBasis::from_pod(q.columns(0, 2).into_owned(), vec![]).unwrap();
        let y: Vec<f64> = q.column(3).iter().copied().collect();
        let r = reconstruct(&project(&y, &basis).unwrap(), &basis).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_state_gives_zero_field() {
        let fom = Fom::for_family(Params::Wave(WaveParams::linear(0.4)), 8).unwrap();
        let basis = SymplecticBasis::from_phi(orthonormal(8, 2, 1), vec![]);
        assert!(reduced_rhs(&[0.0; 4], &basis, &fom)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn identity_reduction_is_the_full_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fom = wave(6);
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (q, p) = y.split_at(6);
        let (mut gq, mut gp) = (vec![0.0; 6], vec![0.0; 6]);
        fom.grad_q(q, p, &mut gq);
        fom.grad_p(q, p, &mut gp);
        let full: Vec<f64> = gp.iter().copied().chain(gq.iter().map(|v| -v)).collect();
        let psd = SymplecticBasis::from_phi(DMatrix::identity(6, 6), vec![]);
        let pod = SymplecticBasis::from_pod(DMatrix::identity(12, 12), vec![]).unwrap();
        for b in [psd, pod] {
            let r = reduced_rhs(&y, &b, &fom).unwrap();
            assert_eq!(r, full);
        }
    }

    #[test]
    fn small_case_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fom = wave(4);
        let phi = orthonormal(4, 1, 9);
        let basis = SymplecticBasis::from_phi(phi.clone(), vec![]);
        let ybar = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        // Dense oracle: build A, J₂, and ∇H by finite algebra on explicit matrices.
        let mut a = DMatrix::zeros(8, 2);
        for i in 0..4 {
            a[(i, 0)] = phi[(i, 0)];
            a[(4 + i, 1)] = phi[(i, 0)];
        }
        let y = &a * DVector::from_column_slice(&ybar);
        let s = crate::fom::State {
            q: y.as_slice()[..4].to_vec(),
            p: y.as_slice()[4..].to_vec(),
            mu: fom.params,
            t: 0.0,
        };
        let (gq, gp) = crate::fom::wave_grad(&s, &fom.grid).unwrap();
        let grad = DVector::from_vec([gq, gp].concat());
        let j2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let oracle = j2 * a.transpose() * grad;
        let r = reduced_rhs(&ybar, &basis, &fom).unwrap();
        assert!((r[0] - oracle[0]).abs() < 1e-12 && (r[1] - oracle[1]).abs() < 1e-12);
    }

    #[test]
    fn rom_gradients_match_reduced_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sw =
            Fom::for_family(Params::ShallowWater(SwParams::new(0.0, 0.1).unwrap()), 8).unwrap();
        for fom in [wave(8), sw] {
            for basis in [
                SymplecticBasis::from_phi(orthonormal(8, 3, 6), vec![]),
                SymplecticBasis::from_pod(orthonormal(16, 6, 7), vec![]).unwrap(),
            ] {
                let rom = LinearRom::<f64>::new(&basis, fom.clone()).unwrap();
                let ybar: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.05..0.05)).collect();
                let (qb, pb) = ybar.split_at(3);
                let (mut gq, mut gp) = (vec![0.0; 3], vec![0.0; 3]);
                rom.grad_q(qb, pb, &mut gq);
                rom.grad_p(qb, pb, &mut gp);
                let field: Vec<f64> = gp.iter().copied().chain(gq.iter().map(|v| -v)).collect();
                let rhs = reduced_rhs(&ybar, &basis, &fom).unwrap();
                for (a, b) in field.iter().zip(&rhs) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn galerkin_consistency_on_invariant_subspace() {
        // A linear oscillator chain whose dynamics leave span(Φ) invariant: H = ½qᵀLq + ½pᵀp
        // with L = Φ D Φᵀ, so the reduced trajectory reproduces the full one.
        let n = 6;
        let phi = orthonormal(n, 2, 8);
        struct Quadratic(DMatrix<f64>);
        impl HamiltonianField<f64> for Quadratic {
            fn dim(&self) -> usize {
                self.0.nrows()
            }
            fn separable(&self) -> bool {
                true
            }
            fn grad_q(&self, q: &[f64], _p: &[f64], out: &mut [f64]) {
                out.copy_from_slice((&self.0 * DVector::from_column_slice(q)).as_slice());
            }
            fn grad_p(&self, _q: &[f64], p: &[f64], out: &mut [f64]) {
                out.copy_from_slice(p);
            }
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let l = &phi * d * phi.transpose();
        let full = Quadratic(l.clone());
        let reduced = Quadratic(phi.transpose() * &l * &phi);
        let cfg = IntegratorConfig::new(0.01, Scheme::SvExplicit);
        let qbar0 = vec![0.3, -0.7];
        let mut q = (&phi * DVector::from_column_slice(&qbar0))
            .as_slice()
            .to_vec();
        let mut p = vec![0.0; n];
        let (mut qb, mut pb) = (qbar0, vec![0.0; 2]);
        rollout(&full, &mut q, &mut p, &cfg, 500, |_, _, _| Ok(())).unwrap();
        rollout(&reduced, &mut qb, &mut pb, &cfg, 500, |_, _, _| Ok(())).unwrap();
        let decoded = &phi * DVector::from_column_slice(&qb);
        for (a, b) in decoded.iter().zip(&q) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
}
