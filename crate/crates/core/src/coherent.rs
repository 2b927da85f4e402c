//! Glauber (x) Bloch coherent states, their eigenbasis expansions, and
//! classical energy surfaces.

use faer::Mat;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::model::displaced::DisplacedBasis;
use crate::model::params::{BasisKind, ModelParams, Parity};
use crate::model::spectrum::SpectralData;
use crate::model::FockBasis;
use crate::scalar::{ln_factorials, Real};

pub const DEFAULT_POLE_GUARD: f64 = 1e-12;
/// Default bound on discarded norm (tail plus truncation) for a converged expansion.
pub const DEFAULT_TAIL_BUDGET: f64 = 1e-6;

/// Point `(x, p; phi, jz)` of the classical phase space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSpacePoint<T> {
    pub x: T,
    pub p: T,
    pub phi: T,
    pub jz: T,
}

impl<T: Real> PhaseSpacePoint<T> {
    pub fn new(x: T, p: T, phi: T, jz: T) -> Result<Self> {
        let pt = Self { x, p, phi, jz };
        pt.validate()?;
        Ok(pt)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite() && self.p.is_finite() && self.phi.is_finite();
        if !finite || !(self.jz.abs() <= T::one()) {
            return Err(Error::InvalidPoint(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `beta = sqrt(j/2)(x + i p)` and `w = tan(theta/2) e^{i phi}` with `jz = -cos(theta)`.
///
/// `w` diverges at the north pole `jz = 1`; points closer than `pole_guard`
/// are rejected. The south pole maps to `w = 0`.
pub fn canonical_to_complex<T: Real>(
    point: &PhaseSpacePoint<T>,
    j: T,
    pole_guard: T,
) -> Result<(Complex<T>, Complex<T>)> {
    point.validate()?;
    let s = (j * T::lit(0.5)).sqrt();
    let beta = Complex::new(s * point.x, s * point.p);
    if T::one() - point.jz < pole_guard {
        return Err(Error::Pole { jz: point.jz.as_f64() });
    }
    let modulus = ((T::one() + point.jz) / (T::one() - point.jz)).sqrt();
    Ok((beta, Complex::from_polar(modulus, point.phi)))
}

/// `<n|beta>` for `n = 0..=n_max`, evaluated in the log domain.
pub fn glauber_amplitudes<T: Real>(beta: Complex<T>, n_max: usize, ln_fact: &[T]) -> Vec<Complex<T>> {
    let r = beta.norm();
    let mut out = vec![Complex::new(T::zero(), T::zero()); n_max + 1];
    if r == T::zero() {
        out[0] = Complex::new(T::one(), T::zero());
        return out;
    }
    let arg = beta.arg();
    let ln_r = r.ln();
    let half = T::lit(0.5);
    for (n, slot) in out.iter_mut().enumerate() {
        let nf = T::from_usize_lossy(n);
        let ln_mag = -half * r * r + nf * ln_r - half * ln_fact[n];
        *slot = Complex::from_polar(ln_mag.exp(), nf * arg);
    }
    out
}

/// `<j, -j + k|w>` for `k = 0..=2j`, written through half-angles so that
/// both poles are regular: `sqrt(C(2j,k)) cos^{2j-k}(theta/2) sin^k(theta/2) e^{i k phi}`.
pub fn bloch_amplitudes<T: Real>(two_j: u32, jz: T, phi: T, ln_fact: &[T]) -> Vec<Complex<T>> {
    let half = T::lit(0.5);
    let cos2 = (T::one() - jz) * half;
    let sin2 = (T::one() + jz) * half;
    let n = two_j as usize;
    (0..=n)
        .map(|k| {
            let kf = T::from_usize_lossy(k);
            let rest = T::from_usize_lossy(n - k);
            let pow_term = |count: T, base: T| {
                if count == T::zero() {
                    T::zero()
                } else {
                    count * half * base.ln()
                }
            };
            let ln_binom = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
            let ln_mag = half * ln_binom + pow_term(rest, cos2) + pow_term(kf, sin2);
            Complex::from_polar(ln_mag.exp(), kf * phi)
        })
        .collect()
}

/// Coherent-state coefficients over the full Fock (x) `J_z` product basis.
#[derive(Clone, Debug)]
pub struct ProductCoefficients<T> {
    /// n-major, m ascending.
    pub coeffs: Vec<Complex<T>>,
    /// `1 - sum |c|^2`, the norm lost to the bosonic cutoff.
    pub deficit: T,
}

/// Product-basis coefficients of `|beta> (x) |w>` (Fock basis).
pub fn basis_coeffs<T: Real>(point: &PhaseSpacePoint<T>, params: &ModelParams<T>) -> Result<ProductCoefficients<T>> {
    point.validate()?;
    let two_j = params.two_j();
    let n_max = params.n_max as usize;
    let lf = ln_factorials::<T>(n_max.max(two_j as usize));
    let s = (params.j() * T::lit(0.5)).sqrt();
    let beta = Complex::new(s * point.x, s * point.p);
    let field = glauber_amplitudes(beta, n_max, &lf);
    let spin = bloch_amplitudes(two_j, point.jz, point.phi, &lf);
    let mut coeffs = Vec::with_capacity(field.len() * spin.len());
    for f in &field {
        for sp in &spin {
            coeffs.push(f * sp);
        }
    }
    let norm: T = coeffs.iter().map(|c| c.norm_sqr()).sum();
    Ok(ProductCoefficients { coeffs, deficit: T::one() - norm })
}

/// Coefficients over the unsymmetrized displaced basis `|N; m>`.
///
/// `<N; m|z> = e^{-i alpha m Im(beta)} <N|beta + alpha m> <m_x|w>`, where the
/// `J_x` projection is a Bloch state rotated onto the x axis (up to a global
/// phase).
fn displaced_full_coeffs<T: Real>(point: &PhaseSpacePoint<T>, params: &ModelParams<T>) -> (Vec<Complex<T>>, T) {
    let two_j = params.two_j();
    let n_max = params.n_max as usize;
    let lf = ln_factorials::<T>(n_max.max(two_j as usize));
    let s = (params.j() * T::lit(0.5)).sqrt();
    let beta = Complex::new(s * point.x, s * point.p);
    let g = params.coupling / T::lit(two_j as f64).sqrt();
    let alpha = g / params.omega;

    let rho = (T::one() - point.jz * point.jz).max(T::zero()).sqrt();
    let jz_rot = (rho * point.phi.cos()).max(-T::one()).min(T::one());
    let phi_rot = (rho * point.phi.sin()).atan2(-point.jz);
    let spin = bloch_amplitudes(two_j, jz_rot, phi_rot, &lf);

    let width = two_j as usize + 1;
    let mut full = vec![Complex::new(T::zero(), T::zero()); (n_max + 1) * width];
    for (k, sp) in spin.iter().enumerate() {
        let m = T::lit(k as f64 - two_j as f64 * 0.5);
        let shifted = beta + Complex::new(alpha * m, T::zero());
        let phase = Complex::from_polar(T::one(), -alpha * m * beta.im);
        let field = glauber_amplitudes(shifted, n_max, &lf);
        for (n, f) in field.iter().enumerate() {
            full[n * width + k] = f * sp * phase;
        }
    }
    let norm: T = full.iter().map(|c| c.norm_sqr()).sum();
    (full, T::one() - norm)
}

/// Coefficients of the coherent state in the basis of one block, ordered as
/// the block Hamiltonian of `params.basis`. Returns the truncation deficit.
pub fn block_coeffs<T: Real>(
    point: &PhaseSpacePoint<T>,
    params: &ModelParams<T>,
    parity: Parity,
) -> Result<(Vec<Complex<T>>, T)> {
    point.validate()?;
    match params.basis {
        BasisKind::Fock => {
            let prod = basis_coeffs(point, params)?;
            let basis = FockBasis::new(params, parity);
            let v = basis.states().iter().map(|s| prod.coeffs[basis.product_slot(s)]).collect();
            Ok((v, prod.deficit))
        }
        BasisKind::Displaced => {
            let (full, deficit) = displaced_full_coeffs(point, params);
            Ok((DisplacedBasis::new(params, parity).project_amplitudes(&full), deficit))
        }
    }
}

/// `|<E_k|z>|^2` for each eigenvector of `spectrum`, for several states at once.
pub fn project_many<T: Real>(coeff_sets: &[Vec<Complex<T>>], spectrum: &SpectralData<T>) -> Result<Vec<Vec<T>>> {
    let dim = spectrum.dim();
    for c in coeff_sets {
        if c.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
        }
    }
    let cols = coeff_sets.len();
    let z = Mat::<T>::from_fn(dim, 2 * cols, |i, c| {
        let v = coeff_sets[c / 2][i];
        if c % 2 == 0 {
            v.re
        } else {
            v.im
        }
    });
    let proj = spectrum.eigenvectors.transpose() * &z;
    Ok((0..cols)
        .map(|c| (0..dim).map(|k| proj[(k, 2 * c)].powi(2) + proj[(k, 2 * c + 1)].powi(2)).collect())
        .collect())
}

/// Coherent state expanded in the eigenbasis of one or two parity blocks.
///
/// Entries from all blocks are merged in ascending energy order.
#[derive(Clone, Debug)]
pub struct EigenExpansion<T> {
    pub coeffs_sq: Vec<T>,
    pub scaled_energies: Vec<T>,
    pub converged: Vec<bool>,
    pub mean_energy: T,
    /// Weight on uncertified eigenstates.
    pub tail_weight: T,
    /// Norm lost to the bosonic cutoff of the basis.
    pub truncation_deficit: T,
    pub source_point: PhaseSpacePoint<T>,
    pub two_j: u32,
    pub parities: Vec<Parity>,
}

impl<T: Real> EigenExpansion<T> {
    /// Assembles an expansion from per-block projections.
    pub fn from_projections(
        point: PhaseSpacePoint<T>,
        parts: &[(&SpectralData<T>, Vec<T>)],
        truncation_deficit: T,
    ) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InsufficientData("no spectra".into()))?.0;
        let mut entries = Vec::new();
        let mut parities = Vec::new();
        for (spec, w) in parts {
            if !spec.params.same_model(&first.params) || spec.params.n_max != first.params.n_max {
                return Err(Error::ParamMismatch("expansion blocks come from different models".into()));
            }
            if parities.contains(&spec.parity) || (spec.parity == Parity::Both && parts.len() > 1) {
                return Err(Error::ParamMismatch("overlapping parity blocks".into()));
            }
            if w.len() != spec.dim() {
                return Err(Error::DimensionMismatch { expected: spec.dim(), got: w.len() });
            }
            parities.push(spec.parity);
            let j = spec.j();
            for (k, &wk) in w.iter().enumerate() {
                entries.push((spec.eigenvalues[k] / j, wk, k < spec.n_converged, spec.parity));
            }
        }
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.3.cmp(&b.3)));
        let coeffs_sq: Vec<T> = entries.iter().map(|e| e.1).collect();
        let scaled_energies: Vec<T> = entries.iter().map(|e| e.0).collect();
        let converged: Vec<bool> = entries.iter().map(|e| e.2).collect();
        let norm: T = coeffs_sq.iter().copied().sum();
        let mean_energy = if norm > T::zero() {
            coeffs_sq.iter().zip(&scaled_energies).map(|(&w, &e)| w * e).sum::<T>() / norm
        } else {
            T::zero()
        };
        let tail_weight = entries.iter().filter(|e| !e.2).map(|e| e.1).sum();
        Ok(Self {
            coeffs_sq,
            scaled_energies,
            converged,
            mean_energy,
            tail_weight,
            truncation_deficit,
            source_point: point,
            two_j: first.params.two_j(),
            parities,
        })
    }

    pub fn j(&self) -> T {
        T::lit(self.two_j as f64 * 0.5)
    }

    pub fn norm(&self) -> T {
        self.coeffs_sq.iter().copied().sum()
    }

    /// Discarded norm (tail plus truncation) within `budget`.
    pub fn is_converged(&self, budget: T) -> bool {
        self.tail_weight + self.truncation_deficit.max(T::zero()) <= budget
    }

    /// Weights on certified eigenstates, renormalized to unit sum.
    pub fn converged_weights(&self) -> Vec<T> {
        let kept: Vec<T> = self.coeffs_sq.iter().zip(&self.converged).filter(|(_, &c)| c).map(|(&w, _)| w).collect();
        let total: T = kept.iter().copied().sum();
        if total > T::zero() {
            kept.into_iter().map(|w| w / total).collect()
        } else {
            kept
        }
    }

    pub fn converged_energies(&self) -> Vec<T> {
        self.scaled_energies.iter().zip(&self.converged).filter(|(_, &c)| c).map(|(&e, _)| e).collect()
    }

    /// Standard deviation of the scaled energy under `|c_k|^2`.
    pub fn energy_std(&self) -> T {
        let norm = self.norm();
        let second: T = self.coeffs_sq.iter().zip(&self.scaled_energies).map(|(&w, &e)| w * e * e).sum::<T>() / norm;
        (second - self.mean_energy * self.mean_energy).max(T::zero()).sqrt()
    }
}

fn check_blocks<T: Real>(spectra: &[&SpectralData<T>]) -> Result<()> {
    let first = spectra.first().ok_or_else(|| Error::InsufficientData("no spectra".into()))?;
    for s in spectra {
        if !s.params.same_model(&first.params) || s.params.n_max != first.params.n_max {
            return Err(Error::ParamMismatch("spectra come from different models".into()));
        }
    }
    Ok(())
}

/// Expands `point` over the union of the given blocks' eigenstates.
pub fn eigen_expansion<T: Real>(point: &PhaseSpacePoint<T>, spectra: &[&SpectralData<T>]) -> Result<EigenExpansion<T>> {
    Ok(expand_points(std::slice::from_ref(point), spectra)?.remove(0))
}

/// Batched [`eigen_expansion`]: one matrix product per block.
pub fn expand_points<T: Real>(points: &[PhaseSpacePoint<T>], spectra: &[&SpectralData<T>]) -> Result<Vec<EigenExpansion<T>>> {
    check_blocks(spectra)?;
    let params = spectra[0].params;
    let mut per_block: Vec<Vec<Vec<T>>> = Vec::with_capacity(spectra.len());
    let mut deficits = vec![T::zero(); points.len()];
    for spec in spectra {
        let mut sets = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (c, d) = block_coeffs(p, &params, spec.parity)?;
            deficits[i] = d;
            sets.push(c);
        }
        per_block.push(project_many(&sets, spec)?);
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let parts: Vec<(&SpectralData<T>, Vec<T>)> =
                spectra.iter().zip(&per_block).map(|(s, w)| (*s, w[i].clone())).collect();
            EigenExpansion::from_projections(*p, &parts, deficits[i])
        })
        .collect()
}

/// Classical energy per `j`:
/// `(omega/2)(x^2 + p^2) + omega0 jz + coupling sqrt(1 - jz^2) x cos(phi)`.
pub fn classical_energy<T: Real>(point: &PhaseSpacePoint<T>, params: &ModelParams<T>) -> T {
    let half = T::lit(0.5);
    let rho = (T::one() - point.jz * point.jz).max(T::zero()).sqrt();
    params.omega * half * (point.x * point.x + point.p * point.p)
        + params.omega0 * point.jz
        + params.coupling * rho * point.x * point.phi.cos()
}

/// Larger root `x+` of `h(x, p = 0; phi, jz) = eps0`, if real.
pub fn solve_xplus<T: Real>(eps0: T, phi: T, jz: T, params: &ModelParams<T>) -> Option<T> {
    if !(jz.abs() <= T::one()) {
        return None;
    }
    let b = params.coupling * (T::one() - jz * jz).max(T::zero()).sqrt() * phi.cos();
    let disc = b * b - T::lit(2.0) * params.omega * (params.omega0 * jz - eps0);
    if disc < T::zero() {
        return None;
    }
    Some((-b + disc.sqrt()) / params.omega)
}

/// Interval of `jz` in `[-1, 1]` where `x+` exists at fixed `phi`.
pub fn allowed_jz_interval<T: Real>(eps0: T, phi: T, params: &ModelParams<T>) -> Option<(T, T)> {
    let two = T::lit(2.0);
    let c2 = params.coupling * params.coupling * phi.cos() * phi.cos();
    // disc(jz) = -c2 jz^2 - 2 w w0 jz + c2 + 2 w eps0
    let b = -two * params.omega * params.omega0;
    let c0 = c2 + two * params.omega * eps0;
    let (lo, hi) = if c2 <= T::epsilon() {
        (-T::one(), c0 / (-b))
    } else {
        let a = -c2;
        let d = b * b - T::lit(4.0) * a * c0;
        if d < T::zero() {
            return None;
        }
        let sd = d.sqrt();
        let r1 = (-b + sd) / (two * a);
        let r2 = (-b - sd) / (two * a);
        (r1.min(r2), r1.max(r2))
    };
    let lo = lo.max(-T::one());
    let hi = hi.min(T::one());
    (lo <= hi).then_some((lo, hi))
}

/// Why a grid value produced no surface point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    OutOfRange,
    OffSurface,
}

#[derive(Clone, Debug)]
pub struct SurfaceSample<T> {
    pub points: Vec<PhaseSpacePoint<T>>,
    pub skipped: Vec<(T, SkipReason)>,
}

/// Points `(x+, 0; phi, jz)` on the energy surface for every grid `jz` with a real root.
pub fn surface_sample<T: Real>(eps0: T, jz_grid: &[T], params: &ModelParams<T>, phi: T) -> SurfaceSample<T> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &jz in jz_grid {
        if !(jz.abs() <= T::one()) {
            skipped.push((jz, SkipReason::OutOfRange));
            continue;
        }
        match solve_xplus(eps0, phi, jz, params) {
            Some(x) => points.push(PhaseSpacePoint { x, p: T::zero(), phi, jz }),
            None => skipped.push((jz, SkipReason::OffSurface)),
        }
    }
    SurfaceSample { points, skipped }
}

/// `n` uniformly spaced `jz` values spanning the allowed interval, pulled in
/// by a relative `1e-9` so the endpoints keep a real root.
pub fn uniform_surface_grid<T: Real>(eps0: T, phi: T, params: &ModelParams<T>, n: usize) -> Result<Vec<T>> {
    let (lo, hi) = allowed_jz_interval(eps0, phi, params).ok_or(Error::EmptySurface(eps0.as_f64()))?;
    let pad = (hi - lo) * T::lit(1e-9);
    let (lo, hi) = (lo + pad, hi - pad);
    if n == 1 {
        return Ok(vec![(lo + hi) * T::lit(0.5)]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1)).collect())
}
