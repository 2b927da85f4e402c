use faer::{Mat, Side};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::hamiltonian::block_hamiltonian;
use crate::model::params::{ModelParams, Parity};
use crate::scalar::Real;

/// Eigenvalue comparison settings used to certify converged levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceSettings {
    /// Tolerance on scaled eigenvalues `E_k / j`.
    pub tol: f64,
    /// Cutoff of the reference diagonalization; must be below the working cutoff.
    pub reference_n_max: u32,
}

impl ConvergenceSettings {
    pub const DEFAULT_TOL: f64 = 1e-8;

    /// Reference cutoff at five sixths of `n_max`.
    pub fn for_cutoff(n_max: u32) -> Self {
        Self { tol: Self::DEFAULT_TOL, reference_n_max: (n_max * 5 / 6).max(1) }
    }
}

/// Spectrum of one Hamiltonian block.
///
/// Eigenvalues ascend; eigenvector `k` is column `k` of `eigenvectors`, over
/// the block basis of `params.basis`.
#[derive(Clone, Debug)]
pub struct SpectralData<T: Real> {
    pub params: ModelParams<T>,
    pub parity: Parity,
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Mat<T>,
    /// Levels `0..n_converged` are certified. Without certification every
    /// level counts as converged.
    pub n_converged: usize,
    pub digest: [u8; 32],
}

impl<T: Real> SpectralData<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn j(&self) -> T {
        self.params.j()
    }

    pub fn scaled_energies(&self) -> Vec<T> {
        let j = self.j();
        self.eigenvalues.iter().map(|&e| e / j).collect()
    }

    /// Scaled energy of the highest certified level.
    pub fn converged_energy_limit(&self) -> Option<T> {
        self.n_converged.checked_sub(1).map(|k| self.eigenvalues[k] / self.j())
    }
}

/// Content hash of the parameters that generate a spectrum.
pub fn params_digest<T: Real>(
    params: &ModelParams<T>,
    parity: Parity,
    conv: Option<&ConvergenceSettings>,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dicke-spectrum/v1");
    h.update(params.omega.as_f64().to_le_bytes());
    h.update(params.omega0.as_f64().to_le_bytes());
    h.update(params.coupling.as_f64().to_le_bytes());
    h.update(params.two_j().to_le_bytes());
    h.update(params.n_max.to_le_bytes());
    h.update([params.basis.tag(), parity.tag()]);
    h.update(std::mem::size_of::<T>().to_le_bytes());
    if let Some(c) = conv {
        h.update(c.tol.to_le_bytes());
        h.update(c.reference_n_max.to_le_bytes());
    }
    h.finalize().into()
}

/// Full eigendecomposition of a real symmetric matrix, eigenvalues ascending.
pub fn diagonalize<T: Real>(h: &Mat<T>, block: &str) -> Result<(Vec<T>, Mat<T>)> {
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), got: h.ncols() });
    }
    if h.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenNonConvergence { block: block.to_string() })?;
    let vals: Vec<T> = evd.S().column_vector().iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenNonConvergence { block: block.to_string() });
    }
    Ok((vals, evd.U().to_owned()))
}

/// Eigenvalues only; cheaper than [`diagonalize`].
pub fn eigenvalues<T: Real>(h: &Mat<T>, block: &str) -> Result<Vec<T>> {
    if h.nrows() == 0 {
        return Ok(Vec::new());
    }
    h.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::EigenNonConvergence { block: block.to_string() })
}

fn block_label<T: Real>(params: &ModelParams<T>, parity: Parity) -> String {
    format!(
        "j={} n_max={} parity={} basis={:?}",
        params.j(),
        params.n_max,
        parity.label(),
        params.basis
    )
}

/// Builds and diagonalizes one block. With `conv`, the levels are certified
/// against a second diagonalization at `conv.reference_n_max`.
pub fn compute_spectrum<T: Real>(
    params: &ModelParams<T>,
    parity: Parity,
    conv: Option<&ConvergenceSettings>,
) -> Result<SpectralData<T>> {
    let label = block_label(params, parity);
    let h = block_hamiltonian(params, parity)?;
    let (eigenvalues, eigenvectors) = diagonalize(&h, &label)?;
    drop(h);
    let n_converged = match conv {
        None => eigenvalues.len(),
        Some(c) => {
            if c.reference_n_max >= params.n_max {
                return Err(Error::ParamMismatch(format!(
                    "reference cutoff {} must be below n_max {}",
                    c.reference_n_max, params.n_max
                )));
            }
            let lo_params = params.with_n_max(c.reference_n_max);
            let lo = eigenvalues_of(&lo_params, parity)?;
            converged_prefix(&lo, &eigenvalues, params.j(), c.tol)
        }
    };
    Ok(SpectralData {
        params: *params,
        parity,
        eigenvalues,
        eigenvectors,
        n_converged,
        digest: params_digest(params, parity, conv),
    })
}

/// Eigenvalues of one block without eigenvectors.
pub fn eigenvalues_of<T: Real>(params: &ModelParams<T>, parity: Parity) -> Result<Vec<T>> {
    let h = block_hamiltonian(params, parity)?;
    eigenvalues(&h, &block_label(params, parity))
}

/// Largest `K` with `|E_k(lo) - E_k(hi)| / j <= tol` for every `k < K`.
pub fn converged_prefix<T: Real>(lo: &[T], hi: &[T], j: T, tol: f64) -> usize {
    let tol = T::lit(tol);
    lo.iter()
        .zip(hi)
        .take_while(|(a, b)| ((**a - **b) / j).abs() <= tol)
        .count()
}

/// Number of leading levels that agree between two cutoffs of the same model.
pub fn converged_count<T: Real>(lo: &SpectralData<T>, hi: &SpectralData<T>, tol: f64) -> Result<usize> {
    if !lo.params.same_model(&hi.params) || lo.parity != hi.parity {
        return Err(Error::ParamMismatch("spectra come from different models or blocks".into()));
    }
    if lo.params.n_max > hi.params.n_max {
        return Err(Error::ParamMismatch(format!(
            "first cutoff {} exceeds second cutoff {}",
            lo.params.n_max, hi.params.n_max
        )));
    }
    Ok(converged_prefix(&lo.eigenvalues, &hi.eigenvalues, lo.j(), tol))
}

/// Scaled ground energy `E_0 / j` over the given blocks.
pub fn ground_energy_intensive<T: Real>(spectra: &[&SpectralData<T>]) -> Option<T> {
    spectra
        .iter()
        .filter_map(|s| s.eigenvalues.first().map(|&e| e / s.j()))
        .fold(None, |acc: Option<T>, e| Some(acc.map_or(e, |a| a.min(e))))
}

/// `max |H V - V Lambda|`.
pub fn reconstruction_residual<T: Real>(h: &Mat<T>, vals: &[T], vecs: &Mat<T>) -> T {
    let hv = h * vecs;
    let mut worst = T::zero();
    for k in 0..vals.len() {
        for i in 0..h.nrows() {
            worst = worst.max((hv[(i, k)] - vecs[(i, k)] * vals[k]).abs());
        }
    }
    worst
}

/// `max |V^T V - I|`.
pub fn orthonormality_error<T: Real>(vecs: &Mat<T>) -> T {
    let g = vecs.transpose() * vecs;
    let mut worst = T::zero();
    for a in 0..g.nrows() {
        for b in 0..g.ncols() {
            let target = if a == b { T::one() } else { T::zero() };
            worst = worst.max((g[(a, b)] - target).abs());
        }
    }
    worst
}

pub fn max_abs<T: Real>(h: &Mat<T>) -> T {
    let mut m = T::zero();
    for a in 0..h.nrows() {
        for b in 0..h.ncols() {
            m = m.max(h[(a, b)].abs());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::BasisKind;

    #[test]
    fn one_by_one() {
        let h = Mat::from_fn(1, 1, |_, _| 3.25f64);
        let (v, u) = diagonalize(&h, "1x1").unwrap();
        assert_eq!(v, vec![3.25]);
        assert_eq!(u[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn decoupled_spectrum_is_the_sorted_diagonal() {
        let p = ModelParams::<f64>::new(1.3, 0.7, 0.0, 2.5, 4).unwrap().with_basis(BasisKind::Fock);
        let s = compute_spectrum(&p, Parity::Both, None).unwrap();
        let mut expect = Vec::new();
        for n in 0..=4 {
            for k in 0..=5 {
                expect.push(1.3 * n as f64 + 0.7 * (k as f64 - 2.5));
            }
        }
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in s.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn residual_and_orthonormality() {
        for basis in [BasisKind::Fock, BasisKind::Displaced] {
            let p = ModelParams::<f64>::standard(3.0, 20).unwrap().with_basis(basis);
            let h = block_hamiltonian(&p, Parity::Positive).unwrap();
            let (vals, vecs) = diagonalize(&h, "t").unwrap();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            assert!(orthonormality_error(&vecs) < 1e-10);
            assert!(reconstruction_residual(&h, &vals, &vecs) <= 1e-9 * max_abs(&h));
        }
    }

    #[test]
    fn converged_count_edge_cases() {
        let p = ModelParams::<f64>::standard(2.0, 12).unwrap();
        let s = compute_spectrum(&p, Parity::Positive, None).unwrap();
        assert_eq!(converged_count(&s, &s, 1e-8).unwrap(), s.dim());
        let lo = compute_spectrum(&p.with_n_max(6), Parity::Positive, None).unwrap();
        assert_eq!(converged_count(&lo, &s, 0.0).unwrap(), 0);
        let other = compute_spectrum(&p, Parity::Negative, None).unwrap();
        assert!(converged_count(&s, &other, 1e-8).is_err());
        assert!(converged_count(&s, &lo, 1e-8).is_err());
        // monotone in tol
        let mut last = 0;
        for tol in [1e-14, 1e-10, 1e-6, 1e-2, 1.0] {
            let k = converged_count(&lo, &s, tol).unwrap();
            assert!(k >= last);
            last = k;
        }
    }

    #[test]
    fn decoupled_ground_energy_is_minus_omega0() {
        let p = ModelParams::<f64>::new(1.0, 1.0, 0.0, 3.0, 5).unwrap();
        let pos = compute_spectrum(&p, Parity::Positive, None).unwrap();
        let neg = compute_spectrum(&p, Parity::Negative, None).unwrap();
        assert!((ground_energy_intensive(&[&pos, &neg]).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn certification_uses_reference_cutoff() {
        let p = ModelParams::<f64>::standard(2.0, 24).unwrap();
        let conv = ConvergenceSettings::for_cutoff(24);
        let s = compute_spectrum(&p, Parity::Positive, Some(&conv)).unwrap();
        assert!(s.n_converged > 0 && s.n_converged < s.dim());
        assert_ne!(s.digest, params_digest(&p, Parity::Positive, None));
        let bad = ConvergenceSettings { tol: 1e-8, reference_n_max: 24 };
        assert!(compute_spectrum(&p, Parity::Positive, Some(&bad)).is_err());
    }

    #[test]
    fn single_precision_smoke() {
        let p = ModelParams::<f32>::standard(1.0, 6).unwrap();
        let s = compute_spectrum(&p, Parity::Positive, None).unwrap();
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!(orthonormality_error(&s.eigenvectors) < 1e-4);
    }
}
