//! Generalized IPRs, mass exponents, fractal-dimension fits, anomalous
//! exponents, participation densities and synthetic scaling oracles.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::coherent::EigenExpansion;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `sum_k w_k^q` over the nonzero weights.
pub fn ipr_q<T: Real>(weights: &[T], q: T) -> T {
    if q == T::one() {
        return weights.iter().copied().sum();
    }
    weights.iter().filter(|&&w| w > T::zero()).map(|&w| w.powf(q)).sum()
}

/// IPR over the certified eigenstates of an expansion, with its convergence flag.
pub fn ipr_expansion<T: Real>(expansion: &EigenExpansion<T>, q: T, tail_budget: T) -> (T, bool) {
    (ipr_q(&expansion.converged_weights(), q), expansion.is_converged(tail_budget))
}

/// `aleph_eff = j^{3/2}`.
pub fn effective_dim<T: Real>(j: T) -> T {
    j * j.sqrt()
}

/// `0.10, 0.15, ..., 4.00`.
pub fn default_q_grid() -> Vec<f64> {
    (2..=80).map(|i| i as f64 * 0.05).collect()
}

/// `IPR_q(j)` over a grid of moments and spin lengths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IPRSeries {
    pub q_grid: Vec<f64>,
    pub j_list: Vec<f64>,
    pub aleph_eff: Vec<f64>,
    /// `ipr[iq][ij]`.
    pub ipr: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
}

impl IPRSeries {
    /// Builds the series from normalized weights for each `j`.
    pub fn from_weights(q_grid: &[f64], j_list: &[f64], weights: &[Vec<f64>], flags: &[bool]) -> Result<Self> {
        if weights.len() != j_list.len() || flags.len() != j_list.len() {
            return Err(Error::DimensionMismatch { expected: j_list.len(), got: weights.len().min(flags.len()) });
        }
        Self::from_fn(q_grid, j_list, |q, ij| (ipr_q(&weights[ij], q), flags[ij]))
    }

    /// Builds the series from `f(q, j_index) -> (ipr, converged)`.
    pub fn from_fn<F: FnMut(f64, usize) -> (f64, bool)>(q_grid: &[f64], j_list: &[f64], mut f: F) -> Result<Self> {
        if j_list.windows(2).any(|w| !(w[0] < w[1])) || j_list.iter().any(|&j| !(j > 0.0)) {
            return Err(Error::InvalidParams("j list must be positive and ascending".into()));
        }
        if q_grid.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::InvalidParams("moments must be positive".into()));
        }
        let mut ipr = Vec::with_capacity(q_grid.len());
        let mut converged = Vec::with_capacity(q_grid.len());
        for &q in q_grid {
            let (row, flags): (Vec<f64>, Vec<bool>) = (0..j_list.len()).map(|ij| f(q, ij)).unzip();
            ipr.push(row);
            converged.push(flags);
        }
        Ok(Self {
            q_grid: q_grid.to_vec(),
            j_list: j_list.to_vec(),
            aleph_eff: j_list.iter().map(|&j| effective_dim(j)).collect(),
            ipr,
            converged,
        })
    }
}

/// Least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} points for a line")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit { slope, intercept, slope_stderr })
}

/// Unweighted least squares for `y ~ sum_c coeff_c basis_c(x)`; returns coefficients and rms residual.
pub fn least_squares(x: &[f64], y: &[f64], basis: &[&dyn Fn(f64) -> f64]) -> Result<(Vec<f64>, f64)> {
    let (n, m) = (x.len(), basis.len());
    if n < m {
        return Err(Error::InsufficientData(format!("{n} points for {m} coefficients")));
    }
    let a = Mat::<f64>::from_fn(n, m, |i, c| basis[c](x[i]));
    let b = Mat::<f64>::from_fn(n, 1, |i, _| y[i]);
    let sol = a.qr().solve_lstsq(&b);
    let coeffs: Vec<f64> = (0..m).map(|c| sol[(c, 0)]).collect();
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InsufficientData("singular least-squares system".into()));
    }
    let rms = (x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - basis.iter().zip(&coeffs).map(|(f, c)| c * f(xi)).sum::<f64>()).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok((coeffs, rms))
}

/// Bounds for the curvature scan and the positive-curvature rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureThresholds {
    /// Largest accepted `d^2 tau / dq^2`.
    pub eps_curv: f64,
    /// Largest accepted parabolic coefficient `D2`.
    pub eps_pos: f64,
}

impl Default for CurvatureThresholds {
    fn default() -> Self {
        Self { eps_curv: 0.01, eps_pos: 0.005 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassExponentCurve {
    pub q_grid: Vec<f64>,
    pub tau: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trusted_range: (f64, f64),
    /// Number of `j` values entering each regression.
    pub n_points: Vec<usize>,
}

impl MassExponentCurve {
    pub fn is_trusted(&self, q: f64) -> bool {
        q >= self.trusted_range.0 - 1e-12 && q <= self.trusted_range.1 + 1e-12
    }

    /// `(q, tau)` pairs with `q` in `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        self.q_grid
            .iter()
            .zip(&self.tau)
            .filter(|(q, _)| **q >= lo - 1e-12 && **q <= hi + 1e-12)
            .map(|(q, t)| (*q, *t))
            .unzip()
    }

    /// Renyi dimensions `tau_q / (q - 1)`, `None` at `q = 1`.
    pub fn renyi_dimensions(&self) -> Vec<Option<f64>> {
        self.q_grid
            .iter()
            .zip(&self.tau)
            .map(|(&q, &t)| ((q - 1.0).abs() > 1e-12).then(|| t / (q - 1.0)))
            .collect()
    }

    /// Rebuilds a curve from tabulated values, running the curvature scan.
    pub fn from_values(q_grid: Vec<f64>, tau: Vec<f64>, stderr: Vec<f64>, thresholds: &CurvatureThresholds) -> Result<Self> {
        if tau.len() != q_grid.len() || stderr.len() != q_grid.len() {
            return Err(Error::DimensionMismatch { expected: q_grid.len(), got: tau.len().min(stderr.len()) });
        }
        let trusted_range = curvature_scan(&q_grid, &tau, thresholds.eps_curv)?;
        let n_points = vec![0; q_grid.len()];
        Ok(Self { q_grid, tau, stderr, trusted_range, n_points })
    }
}

/// Fits `tau_q = -d log IPR_q / d log aleph_eff` over `j >= j_exclude_below`.
///
/// Unconverged cells are left out of each regression; a moment with fewer
/// than four usable `j` values is an error.
pub fn mass_exponents(series: &IPRSeries, j_exclude_below: f64, thresholds: &CurvatureThresholds) -> Result<MassExponentCurve> {
    let keep: Vec<usize> = (0..series.j_list.len()).filter(|&i| series.j_list[i] >= j_exclude_below).collect();
    if keep.len() < 4 {
        return Err(Error::InsufficientData(format!("{} j values at or above {j_exclude_below}", keep.len())));
    }
    let mut tau = Vec::with_capacity(series.q_grid.len());
    let mut stderr = Vec::with_capacity(series.q_grid.len());
    let mut n_points = Vec::with_capacity(series.q_grid.len());
    for (iq, &q) in series.q_grid.iter().enumerate() {
        let cells: Vec<usize> = keep.iter().copied().filter(|&ij| series.converged[iq][ij]).collect();
        if cells.is_empty() {
            return Err(Error::Unconverged(format!("every j is unconverged at q = {q}")));
        }
        if cells.len() < 4 {
            return Err(Error::InsufficientData(format!("{} converged j values at q = {q}", cells.len())));
        }
        let x: Vec<f64> = cells.iter().map(|&ij| series.aleph_eff[ij].ln()).collect();
        let y: Vec<f64> = cells.iter().map(|&ij| series.ipr[iq][ij].ln()).collect();
        let fit = linear_regression(&x, &y)?;
        tau.push(-fit.slope);
        stderr.push(fit.slope_stderr);
        n_points.push(cells.len());
    }
    let trusted_range = curvature_scan(&series.q_grid, &tau, thresholds.eps_curv)?;
    Ok(MassExponentCurve { q_grid: series.q_grid.clone(), tau, stderr, trusted_range, n_points })
}

/// Largest contiguous `q` interval around `q = 1` on which `tau` is
/// nondecreasing and its centered second difference stays below `eps_curv`.
///
/// On a uniform grid the second difference is `tau[i+1] - 2 tau[i] + tau[i-1]`;
/// uneven spacings use the second derivative times the squared mean spacing.
pub fn curvature_scan(q_grid: &[f64], tau: &[f64], eps_curv: f64) -> Result<(f64, f64)> {
    let n = q_grid.len();
    if n < 3 || tau.len() != n {
        return Err(Error::InsufficientData(format!("{n} moments for a curvature scan")));
    }
    let bad = |i: usize| -> bool {
        let (h1, h2) = (q_grid[i] - q_grid[i - 1], q_grid[i + 1] - q_grid[i]);
        let d2 = 2.0 * (h1 * tau[i + 1] - (h1 + h2) * tau[i] + h2 * tau[i - 1]) / (h1 * h2 * (h1 + h2));
        let h = 0.5 * (h1 + h2);
        !(d2 * h * h <= eps_curv)
    };
    let start = (0..n)
        .min_by(|&a, &b| (q_grid[a] - 1.0).abs().total_cmp(&(q_grid[b] - 1.0).abs()))
        .unwrap_or(0);
    let (mut lo, mut hi) = (start, start);
    while lo > 0 && tau[lo - 1] <= tau[lo] && (lo == hi || !bad(lo)) {
        lo -= 1;
    }
    while hi + 1 < n && tau[hi] <= tau[hi + 1] && (hi == lo || !bad(hi)) {
        hi += 1;
    }
    Ok((q_grid[lo], q_grid[hi]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    /// `D0 + D1 (q - 1)`
    Linear,
    /// `D0 + D1 (q - 1) + D2 q^2`
    Parabolic,
    /// `D0 + D1 (q - 1) + D_half q^{1/2}`
    Sqrt,
}

impl FitModel {
    pub const ALL: [FitModel; 3] = [FitModel::Linear, FitModel::Parabolic, FitModel::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            FitModel::Linear => "linear",
            FitModel::Parabolic => "parabolic",
            FitModel::Sqrt => "sqrt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Ergodic,
    Regular,
    Localized,
    Intermediate,
    Discard,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Ergodic => "ergodic",
            Classification::Regular => "regular",
            Classification::Localized => "localized",
            Classification::Intermediate => "intermediate",
            Classification::Discard => "discard",
        }
    }

    /// Classification of a linear coefficient `D1`.
    pub fn from_d1(d1: f64) -> Self {
        if d1 <= 0.05 {
            Classification::Localized
        } else if (d1 - 1.0 / 3.0).abs() <= 0.1 {
            Classification::Regular
        } else if (d1 - 1.0).abs() <= 0.1 {
            Classification::Ergodic
        } else {
            Classification::Intermediate
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FitModel,
    pub d0: f64,
    pub d1: f64,
    /// `D2` for the parabolic model, `D_half` for the square-root model.
    pub d2: Option<f64>,
    pub q_range: (f64, f64),
    pub rms: f64,
    pub classification: Classification,
    /// False when `q_range` reaches outside the curve's trusted range.
    pub within_trusted: bool,
    pub n_points: usize,
}

/// Least-squares fit of `tau_q` on the grid points inside `q_range`.
pub fn fit_tau(curve: &MassExponentCurve, q_range: (f64, f64), model: FitModel, thresholds: &CurvatureThresholds) -> Result<FitReport> {
    let (q, tau) = curve.window(q_range.0, q_range.1);
    let one = |_: f64| 1.0;
    let lin = |q: f64| q - 1.0;
    let sq = |q: f64| q * q;
    let rt = |q: f64| q.sqrt();
    let basis: Vec<&dyn Fn(f64) -> f64> = match model {
        FitModel::Linear => vec![&one, &lin],
        FitModel::Parabolic => vec![&one, &lin, &sq],
        FitModel::Sqrt => vec![&one, &lin, &rt],
    };
    let (c, rms) = least_squares(&q, &tau, &basis)?;
    let d2 = c.get(2).copied();
    let classification = match (model, d2) {
        (FitModel::Parabolic, Some(d2)) if d2 > thresholds.eps_pos => Classification::Discard,
        _ => Classification::from_d1(c[1]),
    };
    let within_trusted = curve.is_trusted(q_range.0) && curve.is_trusted(q_range.1);
    Ok(FitReport { model, d0: c[0], d1: c[1], d2, q_range, rms, classification, within_trusted, n_points: q.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalousExponents {
    pub q: Vec<f64>,
    /// `tau_q - D (q - 1)`
    pub delta: Vec<f64>,
    /// Least-squares `Delta` in `Delta_q ~ Delta q (1 - q)`.
    pub weak_delta: Option<f64>,
    /// `max |Delta_q - Delta_{1-q}|` over grid pairs inside the trusted range.
    pub reciprocity_residual: Option<f64>,
}

pub fn anomalous_exponent(curve: &MassExponentCurve, d_linear: f64) -> AnomalousExponents {
    let (q, tau) = curve.window(curve.trusted_range.0, curve.trusted_range.1);
    let delta: Vec<f64> = q.iter().zip(&tau).map(|(&q, &t)| t - d_linear * (q - 1.0)).collect();
    let shape: Vec<f64> = q.iter().map(|&q| q * (1.0 - q)).collect();
    let ss: f64 = shape.iter().map(|s| s * s).sum();
    let weak_delta = (ss > 0.0).then(|| shape.iter().zip(&delta).map(|(s, d)| s * d).sum::<f64>() / ss);
    let mut residual: Option<f64> = None;
    for (i, &qi) in q.iter().enumerate() {
        if let Some(k) = q.iter().position(|&qk| (qk - (1.0 - qi)).abs() < 1e-9) {
            let r = (delta[i] - delta[k]).abs();
            residual = Some(residual.map_or(r, |m| m.max(r)));
        }
    }
    AnomalousExponents { q, delta, weak_delta, reciprocity_residual: residual }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PDoSHistogram {
    pub q: f64,
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub mean_energy: f64,
}

impl PDoSHistogram {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Histogram of `w_k^q` over `n_bins` uniform bins in `range`.
pub fn pdos_q(energies: &[f64], weights: &[f64], q: f64, n_bins: usize, range: (f64, f64)) -> Result<PDoSHistogram> {
    if !(q > 0.0) || n_bins == 0 {
        return Err(Error::InvalidParams(format!("q = {q}, n_bins = {n_bins}")));
    }
    if energies.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: energies.len(), got: weights.len() });
    }
    let (lo, hi) = range;
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let bin_edges = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut mass = vec![0.0; n_bins];
    for (&e, &w) in energies.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let b = ((e - lo) / width).floor();
        if b < 0.0 || e > hi {
            continue;
        }
        mass[(b as usize).min(n_bins - 1)] += w.powf(q);
    }
    let norm: f64 = weights.iter().sum();
    let mean_energy = if norm > 0.0 { energies.iter().zip(weights).map(|(e, w)| e * w).sum::<f64>() / norm } else { 0.0 };
    Ok(PDoSHistogram { q, bin_edges, mass, mean_energy })
}

/// PDoS of the certified part of an expansion over its converged energy span.
pub fn pdos_expansion(expansion: &EigenExpansion<f64>, q: f64, n_bins: usize) -> Result<PDoSHistogram> {
    let e = expansion.converged_energies();
    let w = expansion.converged_weights();
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= hi) {
        return Err(Error::InsufficientData("no converged levels".into()));
    }
    pdos_q(&e, &w, q, n_bins, (lo, hi))
}

/// Distribution of the random amplitudes `r_k` in the random-Gaussian oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomWeights {
    /// `r_k = 1`.
    Constant,
    /// Unit-mean exponential.
    Exponential,
}

impl RandomWeights {
    /// `E[r^q]`.
    pub fn moment(self, q: f64) -> f64 {
        match self {
            RandomWeights::Constant => 1.0,
            RandomWeights::Exponential => statrs::function::gamma::gamma(q + 1.0),
        }
    }
}

/// Synthetic state with Gaussian envelope over equally spaced levels.
#[derive(Clone, Debug)]
pub struct SyntheticState {
    pub energies: Vec<f64>,
    /// Normalized `|c_k|^2`.
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub nu_bar: f64,
    pub r_weights: RandomWeights,
}

impl SyntheticState {
    /// `sqrt((2 pi)^{1-q} / q) E[r^q] (sigma nu_bar)^{1-q}`.
    pub fn predicted_ipr(&self, q: f64) -> f64 {
        ((2.0 * std::f64::consts::PI).powf(1.0 - q) / q).sqrt() * self.r_weights.moment(q) * (self.sigma * self.nu_bar).powf(1.0 - q)
    }

    pub fn ipr(&self, q: f64) -> f64 {
        ipr_q(&self.weights, q)
    }

    /// Weighted mean of the level energies.
    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().zip(&self.weights).map(|(e, w)| e * w).sum()
    }
}

/// Levels at spacing `1 / nu_bar` within `half_width_sigmas` of `center`,
/// weighted by `r_k exp(-(E - center)^2 / (2 sigma^2))`.
pub fn gaussian_state<R: Rng + ?Sized>(
    sigma: f64,
    nu_bar: f64,
    center: f64,
    r_weights: RandomWeights,
    half_width_sigmas: f64,
    rng: &mut R,
) -> SyntheticState {
    let draw = || match r_weights {
        RandomWeights::Constant => 1.0,
        RandomWeights::Exponential => Exp1.sample(rng),
    };
    build_gaussian(sigma, nu_bar, center, r_weights, half_width_sigmas, draw)
}

/// [`gaussian_state`] with `r_k = 1`.
pub fn gaussian_profile_state(sigma: f64, nu_bar: f64, center: f64, half_width_sigmas: f64) -> SyntheticState {
    build_gaussian(sigma, nu_bar, center, RandomWeights::Constant, half_width_sigmas, || 1.0)
}

fn build_gaussian(
    sigma: f64,
    nu_bar: f64,
    center: f64,
    r_weights: RandomWeights,
    half_width_sigmas: f64,
    mut draw: impl FnMut() -> f64,
) -> SyntheticState {
    let spacing = 1.0 / nu_bar;
    let half = (half_width_sigmas * sigma / spacing).ceil() as i64;
    let mut energies = Vec::with_capacity(2 * half as usize + 1);
    let mut weights = Vec::with_capacity(2 * half as usize + 1);
    for k in -half..=half {
        let e = center + k as f64 * spacing;
        energies.push(e);
        weights.push(draw() * (-(e - center).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= norm);
    SyntheticState { energies, weights, sigma, nu_bar, r_weights }
}

/// Scale factors of the random-Gaussian oracle: `nu_bar = nu0 j`, `sigma = s0 sqrt(j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomOracle {
    pub nu0: f64,
    pub s0: f64,
    pub r_weights: RandomWeights,
    pub half_width_sigmas: f64,
}

impl Default for RandomOracle {
    fn default() -> Self {
        Self { nu0: 20.0, s0: 1.0, r_weights: RandomWeights::Exponential, half_width_sigmas: 10.0 }
    }
}

pub fn synth_random_gaussian<R: Rng + ?Sized>(j: f64, oracle: &RandomOracle, rng: &mut R) -> SyntheticState {
    gaussian_state(oracle.s0 * j.sqrt(), oracle.nu0 * j, 0.0, oracle.r_weights, oracle.half_width_sigmas, rng)
}

/// Sequence oracle: fixed spacing `omega_cl`, `sigma = s0 sqrt(j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceOracle {
    pub omega_cl: f64,
    pub s0: f64,
    pub half_width_sigmas: f64,
}

impl Default for SequenceOracle {
    fn default() -> Self {
        Self { omega_cl: 0.1, s0: 1.0, half_width_sigmas: 10.0 }
    }
}

pub fn synth_sequence_state(j: f64, oracle: &SequenceOracle) -> SyntheticState {
    gaussian_profile_state(oracle.s0 * j.sqrt(), 1.0 / oracle.omega_cl, 0.0, oracle.half_width_sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_curve(q: &[f64], f: impl Fn(f64) -> f64) -> MassExponentCurve {
        MassExponentCurve::from_values(q.to_vec(), q.iter().map(|&x| f(x)).collect(), vec![0.0; q.len()], &CurvatureThresholds::default()).unwrap()
    }

    #[test]
    fn ipr_examples() {
        assert!((ipr_q(&[0.25f64; 4], 2.0) - 0.25).abs() < 1e-15);
        assert_eq!(ipr_q(&[0.0, 1.0, 0.0], 3.7), 1.0);
        assert!((ipr_q(&[0.1f64, 0.2, 0.3, 0.4], 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(effective_dim(100.0), 1000.0);
        assert_eq!(effective_dim(4.0), 8.0);
        assert_eq!(effective_dim(25.0), 125.0);
        let g = default_q_grid();
        assert_eq!(g.len(), 79);
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[78] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mass_exponents_of_power_laws() {
        let q = default_q_grid();
        let j: Vec<f64> = (1..=8).map(|i| 5.0 * i as f64).collect();
        let s = IPRSeries::from_fn(&q, &j, |q, ij| (effective_dim(j[ij]).powf(-(q - 1.0)), true)).unwrap();
        let c = mass_exponents(&s, 20.0, &CurvatureThresholds::default()).unwrap();
        for (i, &qq) in q.iter().enumerate() {
            assert!((c.tau[i] - (qq - 1.0)).abs() < 1e-12);
            assert!(c.stderr[i] < 1e-12);
            assert_eq!(c.n_points[i], 5);
        }
        assert_eq!(c.trusted_range, (0.1, 4.0));

        let flat = IPRSeries::from_fn(&q, &j, |q, _| (0.3f64.powf(q), true)).unwrap();
        let c = mass_exponents(&flat, 20.0, &CurvatureThresholds::default()).unwrap();
        assert!(c.tau.iter().all(|t| t.abs() < 1e-12));

        assert!(matches!(mass_exponents(&s, 30.0, &CurvatureThresholds::default()), Err(Error::InsufficientData(_))));
        let dead = IPRSeries::from_fn(&q, &j, |_, _| (1.0, false)).unwrap();
        assert!(matches!(mass_exponents(&dead, 20.0, &CurvatureThresholds::default()), Err(Error::Unconverged(_))));
    }

    #[test]
    fn curvature_scan_examples() {
        let q = default_q_grid();
        let c = exact_curve(&q, |q| (q - 1.0) - 0.05 * q * (q - 1.0));
        assert_eq!(c.trusted_range.0, 0.1);
        // upturn below 0.3
        let c = exact_curve(&q, |q| if q >= 0.3 { 0.8 * (q - 1.0) } else { 0.8 * (q - 1.0) + 2.0 * (0.3 - q).powi(2) });
        assert!((c.trusted_range.0 - 0.3).abs() < 0.051, "{:?}", c.trusted_range);
        assert_eq!(c.trusted_range.1, 4.0);
        // decreasing tail at large q
        let c = exact_curve(&q, |q| if q <= 3.0 { q - 1.0 } else { 2.0 - 0.5 * (q - 3.0) });
        assert!(c.trusted_range.1 <= 3.0 + 1e-12);
    }

    #[test]
    fn fit_recovers_parabola() {
        let q = default_q_grid();
        let c = exact_curve(&q, |q| 0.1 + 0.5 * (q - 1.0) - 0.02 * q * q);
        let th = CurvatureThresholds::default();
        let r = fit_tau(&c, (0.1, 4.0), FitModel::Parabolic, &th).unwrap();
        assert!((r.d0 - 0.1).abs() < 1e-10 && (r.d1 - 0.5).abs() < 1e-10 && (r.d2.unwrap() + 0.02).abs() < 1e-10);
        assert!(r.rms < 1e-10 && r.within_trusted);
        assert_eq!(r.classification, Classification::Intermediate);

        let c = exact_curve(&q, |q| 0.3 + 0.4 * (q - 1.0) - 0.1 * q.sqrt());
        let r = fit_tau(&c, (0.3, 1.0), FitModel::Sqrt, &th).unwrap();
        assert!((r.d1 - 0.4).abs() < 1e-9 && (r.d2.unwrap() + 0.1).abs() < 1e-9);

        let convex = exact_curve(&q, |q| (q - 1.0) + 0.01 * q * q);
        let r = fit_tau(&convex, (1.0, 2.0), FitModel::Parabolic, &th).unwrap();
        assert_eq!(r.classification, Classification::Discard);

        let short = exact_curve(&[0.5, 1.0, 1.5], |q| q - 1.0);
        assert!(fit_tau(&short, (1.0, 1.5), FitModel::Parabolic, &th).is_err());
    }

    #[test]
    fn classification_rules() {
        assert_eq!(Classification::from_d1(1.05), Classification::Ergodic);
        assert_eq!(Classification::from_d1(0.3), Classification::Regular);
        assert_eq!(Classification::from_d1(0.02), Classification::Localized);
        assert_eq!(Classification::from_d1(0.65), Classification::Intermediate);
    }

    #[test]
    fn anomalous_examples() {
        let q = default_q_grid();
        let a = anomalous_exponent(&exact_curve(&q, |q| 0.7 * (q - 1.0)), 0.7);
        assert!(a.delta.iter().all(|d| d.abs() < 1e-12));
        let a = anomalous_exponent(&exact_curve(&q, |q| (q - 1.0) - 0.05 * q * (q - 1.0)), 1.0);
        for (q, d) in a.q.iter().zip(&a.delta) {
            assert!((d - 0.05 * q * (1.0 - q)).abs() < 1e-12);
        }
        assert!((a.weak_delta.unwrap() - 0.05).abs() < 1e-12);
        assert!(a.reciprocity_residual.unwrap() < 1e-12);
    }

    #[test]
    fn pdos_examples() {
        let e = [-1.0, -0.5, 0.0, 0.5];
        let h = pdos_q(&e, &[0.0, 1.0, 0.0, 0.0], 0.5, 10, (-1.0, 0.5)).unwrap();
        assert_eq!(h.mass.iter().filter(|m| **m > 0.0).count(), 1);
        let w = [0.1, 0.2, 0.3, 0.4];
        let h = pdos_q(&e, &w, 1.0, 3, (-1.0, 0.5)).unwrap();
        assert!((h.total() - 1.0).abs() < 1e-15);
        assert!(pdos_q(&e, &w, 0.0, 3, (-1.0, 0.5)).is_err());

        let s = gaussian_profile_state(0.05, 400.0, -0.7, 8.0);
        let h = pdos_q(&s.energies, &s.weights, 1.0, 200, (-1.2, -0.2)).unwrap();
        let peak = h.mass.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let width = h.bin_edges[1] - h.bin_edges[0];
        assert!((h.mean_energy + 0.7).abs() < width);
        assert!(((h.bin_edges[peak] + h.bin_edges[peak + 1]) / 2.0 + 0.7).abs() < 0.05);
    }

    #[test]
    fn closed_form_matches_summation() {
        for sn in [50.0, 200.0] {
            let s = gaussian_profile_state(sn / 10.0, 10.0, 0.0, 10.0);
            for q in [0.5, 1.0, 2.0, 4.0] {
                let rel = (s.ipr(q) / s.predicted_ipr(q) - 1.0).abs();
                assert!(rel < 0.01, "sigma nu = {sn}, q = {q}: {rel}");
            }
            let expect = 1.0 / (2.0 * std::f64::consts::PI.sqrt() * sn);
            assert!((s.ipr(2.0) / expect - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn sequence_oracle_scaling() {
        let o = SequenceOracle::default();
        let a = synth_sequence_state(30.0, &o);
        let b = synth_sequence_state(30.0, &SequenceOracle { omega_cl: 2.0 * o.omega_cl, ..o });
        assert!((b.nu_bar - a.nu_bar / 2.0).abs() < 1e-12);
        for q in [0.5, 2.0, 3.0] {
            assert!((b.predicted_ipr(q) / a.predicted_ipr(q) - 2f64.powf(q - 1.0)).abs() < 1e-12);
            assert!((b.ipr(q) / a.ipr(q) / 2f64.powf(q - 1.0) - 1.0).abs() < 0.01);
        }
        assert!((a.ipr(1.0) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ipr_normalization_and_lower_bound(raw in prop::collection::vec(0.0f64..1.0, 1..60), q in 1.01f64..5.0) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            prop_assert!((ipr_q(&w, 1.0) - 1.0).abs() < 1e-10);
            let nz = w.iter().filter(|&&x| x > 0.0).count() as f64;
            prop_assert!(ipr_q(&w, q) >= nz.powf(1.0 - q) * (1.0 - 1e-12));
        }

        #[test]
        fn ipr_decreases_in_q(raw in prop::collection::vec(0.01f64..1.0, 2..40), q in 0.1f64..4.0) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            prop_assert!(ipr_q(&w, q + 0.05) < ipr_q(&w, q));
        }

        #[test]
        fn power_laws_are_recovered(a in -2.0f64..2.0, b in 0.0f64..3.0) {
            let q = [0.5, 1.0, 2.0];
            let j = [10.0, 20.0, 30.0, 40.0, 50.0];
            let s = IPRSeries::from_fn(&q, &j, |q, ij| ((a * q).exp() * effective_dim(j[ij]).powf(-b * (q - 1.0)), true)).unwrap();
            let c = mass_exponents(&s, 0.0, &CurvatureThresholds::default()).unwrap();
            for (i, &qq) in q.iter().enumerate() {
                prop_assert!((c.tau[i] - b * (qq - 1.0)).abs() < 1e-10);
            }
        }

        #[test]
        fn regression_recovers_lines(m in -5.0f64..5.0, c in -5.0f64..5.0) {
            let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 + 1.0).collect();
            let y: Vec<f64> = x.iter().map(|x| m * x + c).collect();
            let f = linear_regression(&x, &y).unwrap();
            prop_assert!((f.slope - m).abs() < 1e-10 && (f.intercept - c).abs() < 1e-10);
        }
    }
}
