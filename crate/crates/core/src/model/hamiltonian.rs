//! Dicke Hamiltonian in the truncated Fock (x) `J_z` basis.
//!
//! `H = omega a^dag a + omega0 J_z + (coupling / sqrt(2j)) (a + a^dag) J_x`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::model::basis::FockBasis;
use crate::model::displaced;
use crate::model::params::{BasisKind, ModelParams, Parity};
use crate::scalar::Real;

/// `<j, m +- 1| J_+- |j, m> = sqrt(j(j+1) - m(m +- 1))`, with doubled arguments.
pub(crate) fn ladder<T: Real>(two_j: u32, two_m: i32, raise: bool) -> T {
    let j = two_j as f64 * 0.5;
    let m = two_m as f64 * 0.5;
    let s = if raise { m + 1.0 } else { m - 1.0 };
    T::lit((j * (j + 1.0) - m * s).max(0.0).sqrt())
}

pub(crate) fn check_dim<T: Real>(params: &ModelParams<T>, dim: usize) -> Result<()> {
    if dim > params.max_block_dim {
        return Err(Error::DimensionOverflow { dim, max: params.max_block_dim });
    }
    Ok(())
}

/// Real symmetric Hamiltonian over the Fock product basis of one parity block.
///
/// Diagonal `omega n + omega0 m`; each coupling `(n, m) <-> (n + 1, m +- 1)`
/// is computed once and mirrored, so the matrix equals its transpose exactly.
pub fn build_hamiltonian<T: Real>(params: &ModelParams<T>, parity: Parity) -> Result<Mat<T>> {
    params.validate()?;
    let dim = (params.n_max as usize + 1) * (params.two_j() as usize + 1);
    let dim = match parity {
        Parity::Both => dim,
        _ => dim.div_ceil(2),
    };
    check_dim(params, dim)?;
    let basis = FockBasis::new(params, parity);
    check_dim(params, basis.len())?;

    let two_j = params.two_j();
    let g = params.coupling / (T::lit(two_j as f64)).sqrt();
    let half = T::lit(0.5);
    let mut h = Mat::<T>::zeros(basis.len(), basis.len());
    for s in basis.states() {
        let m: T = s.m();
        h[(s.index, s.index)] = params.omega * T::lit(s.n as f64) + params.omega0 * m;
        if s.n == params.n_max {
            continue;
        }
        let boson = T::lit((s.n as f64 + 1.0).sqrt());
        for raise in [true, false] {
            let two_m_to = if raise { s.two_m + 2 } else { s.two_m - 2 };
            if let Some(t) = basis.index_of(s.n + 1, two_m_to) {
                let v = g * boson * half * ladder::<T>(two_j, s.two_m, raise);
                h[(s.index, t)] = v;
                h[(t, s.index)] = v;
            }
        }
    }
    Ok(h)
}

/// Hamiltonian of one block in whichever basis `params.basis` selects.
pub fn block_hamiltonian<T: Real>(params: &ModelParams<T>, parity: Parity) -> Result<Mat<T>> {
    match params.basis {
        BasisKind::Fock => build_hamiltonian(params, parity),
        BasisKind::Displaced => displaced::build_displaced_hamiltonian(params, parity),
    }
}

/// Largest `|H_ab|` over pairs of Fock states with opposite parity.
pub fn max_off_parity_element<T: Real>(params: &ModelParams<T>, h: &Mat<T>) -> T {
    let basis = FockBasis::new(params, Parity::Both);
    let two_j = params.two_j();
    let mut worst = T::zero();
    for a in basis.states() {
        for b in basis.states() {
            if a.parity(two_j) != b.parity(two_j) {
                worst = worst.max(h[(a.index, b.index)].abs());
            }
        }
    }
    worst
}
