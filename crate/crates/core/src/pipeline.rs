//! End-to-end experiments: state analysis, surface scans, oracle checks,
//! convergence sweeps and Poincare sections, with CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{digest_hex, SpectrumStore};
use crate::classical::{
    poincare_section, section_coverage, IntegratorSettings, PoincareSection, SectionCoverage, TrajectoryStatus,
};
use crate::coherent::{classical_energy, expand_points, surface_sample, uniform_surface_grid, EigenExpansion, PhaseSpacePoint};
use crate::error::{Error, Result};
use crate::model::params::DEFAULT_MAX_BLOCK_DIM;
use crate::model::spectrum::ground_energy_intensive;
use crate::model::{BasisKind, ConvergenceSettings, ModelParams, Parity};
use crate::multifractal::{
    anomalous_exponent, default_q_grid, effective_dim, fit_tau, ipr_q, linear_regression, mass_exponents,
    pdos_expansion, synth_random_gaussian, synth_sequence_state, AnomalousExponents, Classification,
    CurvatureThresholds, FitModel, FitReport, IPRSeries, MassExponentCurve, PDoSHistogram, RandomOracle,
    RandomWeights, SequenceOracle,
};

/// Lowest scaled energy of the classical Hamiltonian for the default couplings.
fn classical_minimum(omega: f64, omega0: f64, coupling: f64) -> f64 {
    let wc2 = omega * omega0;
    let g2 = coupling * coupling;
    if g2 <= wc2 {
        -omega0
    } else {
        -0.5 * omega0 * (g2 / wc2 + wc2 / g2)
    }
}

/// Coherent-state centre given by energy surface and `jz` on the `x+` branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub eps0: f64,
    pub jz: f64,
    #[serde(default)]
    pub phi: f64,
}

/// Representative points of the four energy surfaces (`phi = 0`).
pub fn table_points() -> Vec<PointSpec> {
    let rows: [(f64, [f64; 3]); 4] = [
        (-1.8, [-0.492, -0.290, -0.143]),
        (-1.5, [-0.548, -0.250, 0.123]),
        (-1.1, [-0.512, -0.202, 0.418]),
        (-0.5, [-0.807, -0.257, 0.431]),
    ];
    rows.iter().flat_map(|(e, jzs)| jzs.iter().map(move |&jz| PointSpec { eps0: *e, jz, phi: 0.0 })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoincareConfig {
    pub surfaces: Vec<f64>,
    /// Explicit seeds; when empty a grid of `seed_phi x seed_jz` surface points is used.
    pub seeds: Vec<PointSpec>,
    pub seed_phi: usize,
    pub seed_jz: usize,
    pub t_max: f64,
    pub tol: f64,
    pub drift_tol: f64,
    pub grid_bins: usize,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        Self {
            surfaces: vec![-1.8, -1.5, -1.1, -0.5],
            seeds: Vec::new(),
            seed_phi: 4,
            seed_jz: 6,
            t_max: 2000.0,
            tol: 1e-12,
            drift_tol: 1e-8,
            grid_bins: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub j_list: Vec<f64>,
    pub random: RandomOracle,
    pub sequence: SequenceOracle,
    pub q_check: Vec<f64>,
    /// Closed forms are compared only where `sigma nu_bar` reaches this value.
    pub min_sigma_nu: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            j_list: (1..=12).map(|i| 10.0 * i as f64).collect(),
            random: RandomOracle::default(),
            sequence: SequenceOracle::default(),
            q_check: vec![0.5, 1.0, 2.0, 4.0],
            min_sigma_nu: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub omega: f64,
    pub omega0: f64,
    pub coupling: f64,
    pub basis: BasisKind,
    pub j_list: Vec<f64>,
    /// Bosonic cutoff; when absent, 120 for `eps0 <= -1.1` and 160 above.
    pub n_max: Option<u32>,
    /// Second cutoff for convergence sweeps.
    pub n_max_alt: Option<u32>,
    /// Eigenvalue tolerance for certifying levels.
    pub convergence_tol: f64,
    /// Reference cutoff for certification, as a fraction of the working cutoff.
    pub reference_fraction: f64,
    pub max_block_dim: usize,
    pub surfaces: Vec<f64>,
    pub points: Vec<PointSpec>,
    pub jz_grid_points: usize,
    /// Explicit `jz` values for surface scans, replacing the uniform grid.
    pub jz_values: Option<Vec<f64>>,
    pub phi: f64,
    pub q_grid: Vec<f64>,
    pub q_range_high: (f64, f64),
    pub q_range_low: (f64, f64),
    pub j_exclude_below: f64,
    pub thresholds: CurvatureThresholds,
    /// Largest discarded norm for an expansion to count as converged.
    pub tail_budget: f64,
    pub pdos_bins: usize,
    pub pdos_q: Vec<f64>,
    /// `j` window of the energy-width fit.
    pub width_j_range: (f64, f64),
    /// Relative `tau` difference marking separation in convergence sweeps.
    pub separation_tol: f64,
    pub poincare: PoincareConfig,
    pub oracles: OracleConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            omega0: 1.0,
            coupling: 2.0,
            basis: BasisKind::default(),
            j_list: (1..=8).map(|i| 5.0 * i as f64).collect(),
            n_max: None,
            n_max_alt: None,
            convergence_tol: ConvergenceSettings::DEFAULT_TOL,
            reference_fraction: 5.0 / 6.0,
            max_block_dim: DEFAULT_MAX_BLOCK_DIM,
            surfaces: vec![-1.8, -1.1, -0.5],
            points: table_points(),
            jz_grid_points: 101,
            jz_values: None,
            phi: 0.0,
            q_grid: default_q_grid(),
            q_range_high: (1.0, 2.0),
            q_range_low: (0.3, 1.0),
            j_exclude_below: 20.0,
            thresholds: CurvatureThresholds::default(),
            tail_budget: crate::coherent::DEFAULT_TAIL_BUDGET,
            pdos_bins: 200,
            pdos_q: vec![0.5, 1.0, 2.0],
            width_j_range: (10.0, 40.0),
            separation_tol: 0.01,
            poincare: PoincareConfig::default(),
            oracles: OracleConfig::default(),
            seed: 0,
            threads: None,
            out_dir: None,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn eps_min(&self) -> f64 {
        classical_minimum(self.omega, self.omega0, self.coupling)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for v in [self.omega, self.omega0, self.coupling] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("frequencies and coupling must be finite and nonnegative, got {v}"));
            }
        }
        if self.omega <= 0.0 {
            return bad("omega must be positive".into());
        }
        if self.j_list.is_empty() || self.j_list.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("j_list must be nonempty and strictly ascending".into());
        }
        for &j in &self.j_list {
            if !(j > 0.0) || (2.0 * j - (2.0 * j).round()).abs() > 1e-9 {
                return bad(format!("j = {j} is not a positive multiple of 1/2"));
            }
        }
        let emin = self.eps_min();
        let energies = self.surfaces.iter().chain(self.points.iter().map(|p| &p.eps0)).chain(&self.poincare.surfaces);
        for &e in energies {
            if !e.is_finite() || e < emin {
                return bad(format!("energy surface {e} lies below the classical minimum {emin}"));
            }
        }
        for p in &self.points {
            if !(p.jz.abs() <= 1.0) || !p.phi.is_finite() {
                return bad(format!("point {p:?} out of range"));
            }
        }
        if self.q_grid.len() < 3 || self.q_grid.iter().any(|&q| !(q > 0.0)) || self.q_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("q_grid needs at least three positive ascending moments".into());
        }
        for (lo, hi) in [self.q_range_high, self.q_range_low] {
            if !(lo < hi) {
                return bad(format!("q range ({lo}, {hi}) is empty"));
            }
        }
        if !(self.reference_fraction > 0.0 && self.reference_fraction < 1.0) {
            return bad("reference_fraction must lie in (0, 1)".into());
        }
        if !(self.convergence_tol > 0.0) || !(self.tail_budget >= 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.jz_grid_points == 0 || self.pdos_bins == 0 || self.poincare.grid_bins == 0 {
            return bad("grid sizes must be positive".into());
        }
        if self.n_max == Some(0) || self.n_max_alt == Some(0) {
            return bad("cutoffs must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the settings that determine results; output, cache and
    /// thread settings are left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.cache_dir = None;
        c.threads = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        digest_hex(&Sha256::digest(&json).into())
    }

    pub fn n_max_for(&self, eps0: f64) -> u32 {
        self.n_max.unwrap_or(if eps0 <= -1.1 { 120 } else { 160 })
    }

    pub fn model(&self, j: f64, n_max: u32) -> Result<ModelParams<f64>> {
        Ok(ModelParams::new(self.omega, self.omega0, self.coupling, j, n_max)?
            .with_basis(self.basis)
            .with_max_block_dim(self.max_block_dim))
    }

    pub fn convergence(&self, n_max: u32) -> ConvergenceSettings {
        let r = ((n_max as f64) * self.reference_fraction).floor() as u32;
        ConvergenceSettings { tol: self.convergence_tol, reference_n_max: r.clamp(1, n_max.saturating_sub(1).max(1)) }
    }

    /// Centre of a coherent state on the `x+` branch.
    pub fn point(&self, spec: &PointSpec) -> Result<PhaseSpacePoint<f64>> {
        let params = self.model(self.j_list[0], 1)?;
        surface_sample(spec.eps0, &[spec.jz], &params, spec.phi)
            .points
            .first()
            .copied()
            .ok_or_else(|| Error::Config(format!("no x+ root for {spec:?}")))
    }
}

/// Per-state data gathered over the `j` list.
#[derive(Clone, Debug)]
pub struct StateSeries {
    pub series: IPRSeries,
    /// Scaled-energy standard deviation at each `j`.
    pub widths: Vec<f64>,
    /// `|IPR_1 - 1|` at each `j`.
    pub ipr1_error: Vec<f64>,
    /// Expansion at the largest `j`.
    pub last: Option<EigenExpansion<f64>>,
}

/// Runs experiments against one spectrum store.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub store: SpectrumStore,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let store = SpectrumStore::new(config.cache_dir.clone());
        Ok(Self { config, store })
    }

    /// Both parity blocks at `(j, n_max)`, certified against the reference cutoff.
    pub fn spectra(&self, j: f64, n_max: u32) -> Result<[crate::model::SpectralData<f64>; 2]> {
        let params = self.config.model(j, n_max)?;
        let conv = self.config.convergence(n_max);
        self.store.get_pair(&params, Some(&conv))
    }

    /// IPR series for several coherent states sharing one cutoff.
    pub fn collect_series(&self, points: &[PhaseSpacePoint<f64>], n_max: u32, keep_last: bool) -> Result<Vec<StateSeries>> {
        let cfg = &self.config;
        let nq = cfg.q_grid.len();
        let nj = cfg.j_list.len();
        let mut ipr = vec![vec![vec![0.0; nj]; nq]; points.len()];
        let mut flags = vec![vec![false; nj]; points.len()];
        let mut widths = vec![vec![0.0; nj]; points.len()];
        let mut ipr1 = vec![vec![0.0; nj]; points.len()];
        let mut last = vec![None; points.len()];
        for (ij, &j) in cfg.j_list.iter().enumerate() {
            let [pos, neg] = self.spectra(j, n_max)?;
            let expansions = expand_points(points, &[&pos, &neg])?;
            drop((pos, neg));
            let rows: Vec<(Vec<f64>, bool, f64, f64)> = expansions
                .par_iter()
                .map(|e| {
                    let w = e.converged_weights();
                    let values = cfg.q_grid.iter().map(|&q| ipr_q(&w, q)).collect();
                    (values, e.is_converged(cfg.tail_budget), e.energy_std(), (ipr_q(&w, 1.0) - 1.0).abs())
                })
                .collect();
            for (ip, (values, ok, std, err1)) in rows.into_iter().enumerate() {
                if !ok {
                    log::warn!(
                        "expansion at j = {j}, point {:?} unconverged: tail {:.3e}, truncation {:.3e}",
                        points[ip],
                        expansions[ip].tail_weight,
                        expansions[ip].truncation_deficit
                    );
                }
                for (iq, v) in values.into_iter().enumerate() {
                    ipr[ip][iq][ij] = v;
                }
                flags[ip][ij] = ok;
                widths[ip][ij] = std;
                ipr1[ip][ij] = err1;
            }
            if keep_last && ij + 1 == nj {
                last = expansions.into_iter().map(Some).collect();
            }
            log::info!("j = {j}: {} states projected", points.len());
        }
        let mut out = Vec::with_capacity(points.len());
        for ip in 0..points.len() {
            let f = &flags[ip];
            let series = IPRSeries::from_fn(&cfg.q_grid, &cfg.j_list, |q, ij| {
                let iq = cfg.q_grid.iter().position(|&x| x == q).expect("q from grid");
                (ipr[ip][iq][ij], f[ij])
            })?;
            out.push(StateSeries {
                series,
                widths: widths[ip].clone(),
                ipr1_error: ipr1[ip].clone(),
                last: last[ip].take(),
            });
        }
        Ok(out)
    }

    /// Full per-state analysis for the given points.
    pub fn run_state_analysis(&self, specs: &[PointSpec]) -> Result<Vec<StateBundle>> {
        let cfg = &self.config;
        let mut bundles: Vec<Option<StateBundle>> = vec![None; specs.len()];
        let mut cutoffs: Vec<u32> = specs.iter().map(|s| cfg.n_max_for(s.eps0)).collect();
        cutoffs.sort_unstable();
        cutoffs.dedup();
        for n_max in cutoffs {
            let idx: Vec<usize> = (0..specs.len()).filter(|&i| cfg.n_max_for(specs[i].eps0) == n_max).collect();
            let points: Vec<PhaseSpacePoint<f64>> = idx.iter().map(|&i| cfg.point(&specs[i])).collect::<Result<_>>()?;
            let series = self.collect_series(&points, n_max, true)?;
            for ((&i, pt), s) in idx.iter().zip(points).zip(series) {
                bundles[i] = Some(self.bundle(specs[i], pt, n_max, s)?);
            }
        }
        Ok(bundles.into_iter().map(|b| b.expect("every point analyzed")).collect())
    }

    fn bundle(&self, spec: PointSpec, point: PhaseSpacePoint<f64>, n_max: u32, s: StateSeries) -> Result<StateBundle> {
        let cfg = &self.config;
        let curve = mass_exponents(&s.series, cfg.j_exclude_below, &cfg.thresholds)?;
        let mut fits = Vec::new();
        for range in [cfg.q_range_high, cfg.q_range_low] {
            for model in FitModel::ALL {
                match fit_tau(&curve, range, model, &cfg.thresholds) {
                    Ok(r) => fits.push(r),
                    Err(e) => log::warn!("{spec:?}: {} fit on {range:?} skipped: {e}", model.name()),
                }
            }
        }
        let d_linear = fits
            .iter()
            .find(|r| r.model == FitModel::Linear && r.q_range == cfg.q_range_high)
            .map_or(1.0, |r| r.d1);
        let anomalous = anomalous_exponent(&curve, d_linear);
        let pdos = match &s.last {
            Some(e) => cfg.pdos_q.iter().map(|&q| pdos_expansion(e, q, cfg.pdos_bins)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let width_fit = width_exponent(&cfg.j_list, &s.widths, cfg.width_j_range);
        let converged_ipr1: Vec<f64> =
            s.ipr1_error.iter().zip(&s.series.converged[0]).filter(|(_, &ok)| ok).map(|(&e, _)| e).collect();
        Ok(StateBundle {
            spec,
            point,
            n_max,
            curve,
            fits,
            anomalous,
            pdos,
            j_list: cfg.j_list.clone(),
            widths: s.widths,
            width_exponent: width_fit,
            max_ipr1_error: converged_ipr1.iter().copied().fold(0.0, f64::max),
            converged: s.series.converged[0].clone(),
            expansion: s.last,
        })
    }

    /// Parabolic fits over the surface `eps0` along the `jz` grid.
    pub fn run_surface_scan(&self, eps0: f64) -> Result<SurfaceScan> {
        let cfg = &self.config;
        let n_max = cfg.n_max_for(eps0);
        let geometry = cfg.model(cfg.j_list[0], 1)?;
        let grid = match &cfg.jz_values {
            Some(v) => v.clone(),
            None => uniform_surface_grid(eps0, cfg.phi, &geometry, cfg.jz_grid_points)?,
        };
        let sample = surface_sample(eps0, &grid, &geometry, cfg.phi);
        if sample.points.is_empty() {
            return Err(Error::EmptySurface(eps0));
        }
        let series = self.collect_series(&sample.points, n_max, false)?;
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for (pt, s) in sample.points.iter().zip(series) {
            let curve = match mass_exponents(&s.series, cfg.j_exclude_below, &cfg.thresholds) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("surface {eps0}, jz = {}: {e}", pt.jz);
                    skipped.push(pt.jz);
                    continue;
                }
            };
            let fits = (
                fit_tau(&curve, cfg.q_range_high, FitModel::Parabolic, &cfg.thresholds),
                fit_tau(&curve, cfg.q_range_low, FitModel::Parabolic, &cfg.thresholds),
                fit_tau(&curve, cfg.q_range_high, FitModel::Linear, &cfg.thresholds),
            );
            let (high, low, linear) = match fits {
                (Ok(h), Ok(l), Ok(n)) => (h, l, n),
                (h, l, n) => {
                    let e = [h.err(), l.err(), n.err()].into_iter().flatten().next().expect("one fit failed");
                    log::warn!("surface {eps0}, jz = {}: {e}", pt.jz);
                    skipped.push(pt.jz);
                    continue;
                }
            };
            let converged1: Vec<f64> =
                s.ipr1_error.iter().zip(&s.series.converged[0]).filter(|(_, &ok)| ok).map(|(&e, _)| e).collect();
            let tau1 = curve.q_grid.iter().position(|&q| (q - 1.0).abs() < 1e-9).map(|i| (curve.tau[i], curve.stderr[i]));
            rows.push(SurfaceRow {
                eps0,
                jz: pt.jz,
                x: pt.x,
                phi: pt.phi,
                d1: high.d1,
                d2_high: high.d2.unwrap_or(f64::NAN),
                d2_low: low.d2.unwrap_or(f64::NAN),
                d1_linear: linear.d1,
                discard_high: high.classification == Classification::Discard,
                discard_low: low.classification == Classification::Discard,
                classification: if high.classification == Classification::Discard {
                    Classification::Discard
                } else {
                    Classification::from_d1(high.d1)
                },
                trusted_range: curve.trusted_range,
                max_ipr1_error: converged1.iter().copied().fold(0.0, f64::max),
                tau1,
            });
        }
        Ok(SurfaceScan { eps0, n_max, rows, skipped })
    }

    /// `tau_q` at two cutoffs for each point.
    pub fn run_convergence_sweep(&self, specs: &[PointSpec]) -> Result<Vec<ConvergenceSweep>> {
        let cfg = &self.config;
        let alt = cfg.n_max_alt.ok_or_else(|| Error::Config("convergence sweep needs n_max_alt".into()))?;
        let points: Vec<PhaseSpacePoint<f64>> = specs.iter().map(|s| cfg.point(s)).collect::<Result<_>>()?;
        let mut out = Vec::new();
        let mut by_cutoff: Vec<(u32, Vec<MassExponentCurve>)> = Vec::new();
        let mains: Vec<u32> = specs.iter().map(|s| cfg.n_max_for(s.eps0)).collect();
        let mut wanted: Vec<u32> = mains.clone();
        wanted.push(alt);
        wanted.sort_unstable();
        wanted.dedup();
        for n_max in wanted {
            let series = self.collect_series(&points, n_max, false)?;
            let curves = series
                .iter()
                .map(|s| mass_exponents(&s.series, cfg.j_exclude_below, &cfg.thresholds))
                .collect::<Result<Vec<_>>>()?;
            by_cutoff.push((n_max, curves));
        }
        let curves_at = |n: u32| &by_cutoff.iter().find(|(m, _)| *m == n).expect("cutoff computed").1;
        for (i, spec) in specs.iter().enumerate() {
            let (lo_n, hi_n) = if alt <= mains[i] { (alt, mains[i]) } else { (mains[i], alt) };
            out.push(ConvergenceSweep::compare(
                *spec,
                lo_n,
                hi_n,
                &curves_at(lo_n)[i],
                &curves_at(hi_n)[i],
                cfg.separation_tol,
            ));
        }
        Ok(out)
    }

    /// Spectra summary for every `j` at the cutoff of each configured surface.
    pub fn run_spectrum(&self) -> Result<Vec<SpectrumRow>> {
        let cfg = &self.config;
        let mut cutoffs: Vec<u32> = cfg.surfaces.iter().map(|&e| cfg.n_max_for(e)).collect();
        if cutoffs.is_empty() {
            cutoffs.push(cfg.n_max.unwrap_or(120));
        }
        cutoffs.sort_unstable();
        cutoffs.dedup();
        let mut rows = Vec::new();
        for n_max in cutoffs {
            for &j in &cfg.j_list {
                let pair = self.spectra(j, n_max)?;
                let ground = ground_energy_intensive(&[&pair[0], &pair[1]]).unwrap_or(f64::NAN);
                for s in &pair {
                    rows.push(SpectrumRow {
                        j,
                        n_max,
                        parity: s.parity,
                        dim: s.dim(),
                        n_converged: s.n_converged,
                        ground_energy: ground,
                        converged_limit: s.converged_energy_limit().unwrap_or(f64::NAN),
                        digest: digest_hex(&s.digest),
                    });
                }
            }
        }
        Ok(rows)
    }

    /// Poincare sections on each configured surface.
    pub fn run_poincare(&self) -> Result<Vec<SectionRun>> {
        let cfg = &self.config;
        let pc = &cfg.poincare;
        let geometry = cfg.model(cfg.j_list[0], 1)?;
        let settings = IntegratorSettings::default().with_tol(pc.tol);
        let mut runs = Vec::new();
        for &eps0 in &pc.surfaces {
            let seeds: Vec<PhaseSpacePoint<f64>> = if pc.seeds.is_empty() {
                crate::classical::surface_seeds(eps0, &geometry, pc.seed_phi, pc.seed_jz)
            } else {
                pc.seeds
                    .iter()
                    .filter(|s| (s.eps0 - eps0).abs() < 1e-12)
                    .map(|s| cfg.point(s))
                    .collect::<Result<_>>()?
            };
            let section = poincare_section(eps0, &seeds, pc.t_max, &settings, pc.drift_tol, &geometry)?;
            let coverage = section_coverage(&section.points, eps0, &geometry, pc.grid_bins);
            runs.push(SectionRun { eps0, seeds, section, coverage });
        }
        Ok(runs)
    }
}

/// Least-squares exponent of `width ~ j^a` over `j` in `range`.
pub fn width_exponent(j_list: &[f64], widths: &[f64], range: (f64, f64)) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = j_list
        .iter()
        .zip(widths)
        .filter(|(&j, &w)| j >= range.0 - 1e-12 && j <= range.1 + 1e-12 && w > 0.0)
        .map(|(j, w)| (j.ln(), w.ln()))
        .unzip();
    linear_regression(&x, &y).ok().map(|f| f.slope)
}

#[derive(Clone, Debug)]
pub struct StateBundle {
    pub spec: PointSpec,
    pub point: PhaseSpacePoint<f64>,
    pub n_max: u32,
    pub curve: MassExponentCurve,
    /// Linear, parabolic and square-root fits on the high range, then on the low range.
    pub fits: Vec<FitReport>,
    pub anomalous: AnomalousExponents,
    pub pdos: Vec<PDoSHistogram>,
    pub j_list: Vec<f64>,
    pub widths: Vec<f64>,
    pub width_exponent: Option<f64>,
    /// Largest `|IPR_1 - 1|` over converged expansions.
    pub max_ipr1_error: f64,
    pub converged: Vec<bool>,
    /// Expansion at the largest `j`.
    pub expansion: Option<EigenExpansion<f64>>,
}

impl StateBundle {
    pub fn fit(&self, model: FitModel, range: (f64, f64)) -> Option<&FitReport> {
        self.fits.iter().find(|f| f.model == model && f.q_range == range)
    }

    pub fn tau_at_one(&self) -> Option<(f64, f64)> {
        let i = self.curve.q_grid.iter().position(|&q| (q - 1.0).abs() < 1e-9)?;
        Some((self.curve.tau[i], self.curve.stderr[i]))
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceRow {
    pub eps0: f64,
    pub jz: f64,
    pub x: f64,
    pub phi: f64,
    /// Linear coefficient of the parabolic fit on the high range.
    pub d1: f64,
    pub d2_high: f64,
    pub d2_low: f64,
    /// Slope of the linear fit on the high range.
    pub d1_linear: f64,
    pub discard_high: bool,
    pub discard_low: bool,
    pub classification: Classification,
    pub trusted_range: (f64, f64),
    pub max_ipr1_error: f64,
    pub tau1: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct SurfaceScan {
    pub eps0: f64,
    pub n_max: u32,
    pub rows: Vec<SurfaceRow>,
    /// Grid values whose analysis failed.
    pub skipped: Vec<f64>,
}

impl SurfaceScan {
    /// Rows whose `D1` survives the positive-curvature rule.
    pub fn retained(&self) -> impl Iterator<Item = &SurfaceRow> {
        self.rows.iter().filter(|r| !r.discard_high)
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub q: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub abs_diff: f64,
    /// `|delta tau| / |tau_hi|`, zero when both vanish.
    pub rel_diff: f64,
}

/// Absolute floor of the separation test, for `q` near 1 where `tau` vanishes.
pub const SEPARATION_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ConvergenceSweep {
    pub spec: PointSpec,
    pub n_max_lo: u32,
    pub n_max_hi: u32,
    pub rows: Vec<ConvergenceRow>,
    /// Smallest grid `q` from which on every difference stays within
    /// `tol |tau| + SEPARATION_FLOOR`.
    pub separation_q: Option<f64>,
}

impl ConvergenceSweep {
    pub fn compare(spec: PointSpec, n_lo: u32, n_hi: u32, lo: &MassExponentCurve, hi: &MassExponentCurve, tol: f64) -> Self {
        let rows: Vec<ConvergenceRow> = lo
            .q_grid
            .iter()
            .zip(lo.tau.iter().zip(&hi.tau))
            .map(|(&q, (&a, &b))| {
                let d = (a - b).abs();
                ConvergenceRow { q, tau_lo: a, tau_hi: b, abs_diff: d, rel_diff: if d == 0.0 { 0.0 } else { d / b.abs() } }
            })
            .collect();
        let mut separation_q = None;
        for r in rows.iter().rev() {
            if r.abs_diff > tol * r.tau_hi.abs() + SEPARATION_FLOOR {
                break;
            }
            separation_q = Some(r.q);
        }
        Self { spec, n_max_lo: n_lo, n_max_hi: n_hi, rows, separation_q }
    }

    /// Largest relative difference over `q >= q_min`.
    pub fn max_rel_diff_above(&self, q_min: f64) -> f64 {
        self.rows.iter().filter(|r| r.q >= q_min - 1e-12).map(|r| r.rel_diff).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumRow {
    pub j: f64,
    pub n_max: u32,
    pub parity: Parity,
    pub dim: usize,
    pub n_converged: usize,
    pub ground_energy: f64,
    pub converged_limit: f64,
    pub digest: String,
}

#[derive(Clone, Debug)]
pub struct SectionRun {
    pub eps0: f64,
    pub seeds: Vec<PhaseSpacePoint<f64>>,
    pub section: PoincareSection<f64>,
    pub coverage: SectionCoverage,
}

/// Slopes and closed-form checks of the synthetic oracles.
#[derive(Clone, Debug)]
pub struct BoundsReport {
    pub random_curve: MassExponentCurve,
    pub sequence_curve: MassExponentCurve,
    pub random_d1: f64,
    pub sequence_d1: f64,
    /// Largest `|tau_q - expected|` on the high range.
    pub random_max_dev: f64,
    pub sequence_max_dev: f64,
    pub closed_form: Vec<ClosedFormRow>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosedFormRow {
    pub oracle: &'static str,
    pub j: f64,
    pub sigma_nu: f64,
    pub q: f64,
    pub summed: f64,
    pub predicted: f64,
    pub rel_error: f64,
}

impl BoundsReport {
    pub fn max_closed_form_error(&self) -> f64 {
        self.closed_form.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }
}

/// Synthetic-oracle bounds check; uses only the configuration's oracle
/// settings, `q` grid, fit range and seed.
pub fn run_bounds_check(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let oc = &cfg.oracles;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let random: Vec<_> = oc.j_list.iter().map(|&j| synth_random_gaussian(j, &oc.random, &mut rng)).collect();
    let sequence: Vec<_> = oc.j_list.iter().map(|&j| synth_sequence_state(j, &oc.sequence)).collect();
    let no_cut = CurvatureThresholds { eps_curv: f64::INFINITY, ..cfg.thresholds };
    let curve_of = |states: &[crate::multifractal::SyntheticState]| -> Result<MassExponentCurve> {
        let s = IPRSeries::from_fn(&cfg.q_grid, &oc.j_list, |q, ij| (states[ij].ipr(q), true))?;
        let mut c = mass_exponents(&s, 0.0, &no_cut)?;
        c.trusted_range = crate::multifractal::curvature_scan(&c.q_grid, &c.tau, cfg.thresholds.eps_curv)?;
        Ok(c)
    };
    let random_curve = curve_of(&random)?;
    let sequence_curve = curve_of(&sequence)?;
    let fit = |c: &MassExponentCurve| fit_tau(c, cfg.q_range_high, FitModel::Linear, &cfg.thresholds).map(|f| f.d1);
    let max_dev = |c: &MassExponentCurve, slope: f64| {
        let (q, t) = c.window(cfg.q_range_high.0, cfg.q_range_high.1);
        q.iter().zip(&t).map(|(q, t)| (t - slope * (q - 1.0)).abs()).fold(0.0, f64::max)
    };

    let mut closed_form = Vec::new();
    let flat = RandomOracle { r_weights: RandomWeights::Constant, ..oc.random };
    for &j in &oc.j_list {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let pairs = [("random", synth_random_gaussian(j, &flat, &mut unused)), ("sequence", synth_sequence_state(j, &oc.sequence))];
        for (name, st) in pairs {
            let sn = st.sigma * st.nu_bar;
            if sn < oc.min_sigma_nu {
                continue;
            }
            for &q in &oc.q_check {
                let (summed, predicted) = (st.ipr(q), st.predicted_ipr(q));
                closed_form.push(ClosedFormRow { oracle: name, j, sigma_nu: sn, q, summed, predicted, rel_error: (summed / predicted - 1.0).abs() });
            }
        }
    }
    Ok(BoundsReport {
        random_d1: fit(&random_curve)?,
        sequence_d1: fit(&sequence_curve)?,
        random_max_dev: max_dev(&random_curve, 1.0),
        sequence_max_dev: max_dev(&sequence_curve, 1.0 / 3.0),
        random_curve,
        sequence_curve,
        closed_form,
    })
}

/// CSV writer whose first line is `# config_digest=<hex> <extra>`.
pub struct CsvOut {
    writer: csv::Writer<Box<dyn Write>>,
}

impl CsvOut {
    pub fn create(path: &Path, digest: &str, extra: &str) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path)?;
        Self::from_writer(Box::new(std::io::BufWriter::new(file)), digest, extra)
    }

    pub fn from_writer(mut w: Box<dyn Write>, digest: &str, extra: &str) -> Result<Self> {
        if extra.is_empty() {
            write!(w, "# config_digest={digest}\r\n")?;
        } else {
            write!(w, "# config_digest={digest} {extra}\r\n")?;
        }
        let writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w);
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn b(v: bool) -> String {
    (v as u8).to_string()
}

fn point_tag(spec: &PointSpec) -> String {
    format!("eps{}_jz{}_phi{}", spec.eps0, spec.jz, spec.phi)
}

/// Writes the artifacts of [`Pipeline::run_state_analysis`] under `dir`.
pub fn write_state_bundles(dir: &Path, digest: &str, bundles: &[StateBundle]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let fit_path = dir.join("fit_report.csv");
    let mut fits = CsvOut::create(&fit_path, digest, "table=fit_report")?;
    fits.row(["eps0", "x", "p", "phi", "jz", "n_max", "q_lo", "q_hi", "model", "D0", "D1", "D2", "rms", "classification"])?;
    for bnd in bundles {
        let tag = point_tag(&bnd.spec);
        let tau_path = dir.join(format!("tau_{tag}.csv"));
        let mut tau = CsvOut::create(&tau_path, digest, &format!("table=tau point={tag} n_max={}", bnd.n_max))?;
        tau.row(["q", "tau", "stderr", "trusted"])?;
        for (i, &q) in bnd.curve.q_grid.iter().enumerate() {
            tau.row([f(q), f(bnd.curve.tau[i]), f(bnd.curve.stderr[i]), b(bnd.curve.is_trusted(q))])?;
        }
        tau.finish()?;
        written.push(tau_path);

        for r in &bnd.fits {
            let p = &bnd.point;
            fits.row([
                f(bnd.spec.eps0),
                f(p.x),
                f(p.p),
                f(p.phi),
                f(p.jz),
                bnd.n_max.to_string(),
                f(r.q_range.0),
                f(r.q_range.1),
                r.model.name().to_string(),
                f(r.d0),
                f(r.d1),
                r.d2.map(f).unwrap_or_default(),
                f(r.rms),
                r.classification.name().to_string(),
            ])?;
        }

        let pdos_path = dir.join(format!("pdos_{tag}.csv"));
        let mut pd = CsvOut::create(&pdos_path, digest, &format!("table=pdos point={tag} j={}", bnd.j_list.last().unwrap()))?;
        pd.row(["q", "bin_lo", "bin_hi", "mass", "mean_energy"])?;
        for h in &bnd.pdos {
            for (k, m) in h.mass.iter().enumerate() {
                pd.row([f(h.q), f(h.bin_edges[k]), f(h.bin_edges[k + 1]), f(*m), f(h.mean_energy)])?;
            }
        }
        pd.finish()?;
        written.push(pdos_path);

        let an_path = dir.join(format!("anomalous_{tag}.csv"));
        let an = &bnd.anomalous;
        let extra = format!(
            "table=anomalous point={tag} weak_delta={} reciprocity_residual={}",
            an.weak_delta.map(f).unwrap_or_default(),
            an.reciprocity_residual.map(f).unwrap_or_default()
        );
        let mut a = CsvOut::create(&an_path, digest, &extra)?;
        a.row(["q", "delta_q"])?;
        for (q, d) in an.q.iter().zip(&an.delta) {
            a.row([f(*q), f(*d)])?;
        }
        a.finish()?;
        written.push(an_path);

        if let Some(e) = &bnd.expansion {
            let path = dir.join(format!("expansion_{tag}.csv"));
            write_expansion_dump(&path, digest, e)?;
            written.push(path);
        }

        let w_path = dir.join(format!("width_{tag}.csv"));
        let extra = format!("table=width point={tag} exponent={}", bnd.width_exponent.map(f).unwrap_or_default());
        let mut w = CsvOut::create(&w_path, digest, &extra)?;
        w.row(["j", "aleph_eff", "energy_std", "converged"])?;
        for (i, &j) in bnd.j_list.iter().enumerate() {
            w.row([f(j), f(effective_dim(j)), f(bnd.widths[i]), b(bnd.converged[i])])?;
        }
        w.finish()?;
        written.push(w_path);
    }
    fits.finish()?;
    written.push(fit_path);
    Ok(written)
}

pub fn write_expansion_dump(path: &Path, digest: &str, e: &EigenExpansion<f64>) -> Result<()> {
    let mut out = CsvOut::create(path, digest, &format!("table=expansion j={}", e.j()))?;
    out.row(["k", "E_k", "eps_k", "ck_sq"])?;
    let j = e.j();
    for (k, (&eps, &w)) in e.scaled_energies.iter().zip(&e.coeffs_sq).enumerate() {
        out.row([k.to_string(), f(eps * j), f(eps), f(w)])?;
    }
    out.finish()
}

pub fn write_surface_scan(path: &Path, digest: &str, scan: &SurfaceScan) -> Result<()> {
    let mut out = CsvOut::create(path, digest, &format!("table=surface eps0={} n_max={}", scan.eps0, scan.n_max))?;
    out.row([
        "eps0", "x", "p", "phi", "jz", "D1", "D2_high", "D2_low", "D1_linear", "discard_high", "discard_low",
        "classification", "q_lo", "q_hi",
    ])?;
    for r in &scan.rows {
        out.row([
            f(r.eps0),
            f(r.x),
            f(0.0),
            f(r.phi),
            f(r.jz),
            f(r.d1),
            f(r.d2_high),
            f(r.d2_low),
            f(r.d1_linear),
            b(r.discard_high),
            b(r.discard_low),
            r.classification.name().to_string(),
            f(r.trusted_range.0),
            f(r.trusted_range.1),
        ])?;
    }
    out.finish()
}

pub fn write_convergence_sweep(path: &Path, digest: &str, sweeps: &[ConvergenceSweep]) -> Result<()> {
    let mut out = CsvOut::create(path, digest, "table=convergence")?;
    out.row(["eps0", "jz", "phi", "n_max_lo", "n_max_hi", "q", "tau_lo", "tau_hi", "abs_diff", "rel_diff", "separation_q"])?;
    for s in sweeps {
        for r in &s.rows {
            out.row([
                f(s.spec.eps0),
                f(s.spec.jz),
                f(s.spec.phi),
                s.n_max_lo.to_string(),
                s.n_max_hi.to_string(),
                f(r.q),
                f(r.tau_lo),
                f(r.tau_hi),
                f(r.abs_diff),
                f(r.rel_diff),
                s.separation_q.map(f).unwrap_or_default(),
            ])?;
        }
    }
    out.finish()
}

pub fn write_spectrum_rows(path: &Path, digest: &str, rows: &[SpectrumRow]) -> Result<()> {
    let mut out = CsvOut::create(path, digest, "table=spectrum")?;
    out.row(["j", "n_max", "parity", "dim", "n_converged", "ground_energy", "converged_limit", "digest"])?;
    for r in rows {
        out.row([
            f(r.j),
            r.n_max.to_string(),
            r.parity.label().to_string(),
            r.dim.to_string(),
            r.n_converged.to_string(),
            f(r.ground_energy),
            f(r.converged_limit),
            r.digest.clone(),
        ])?;
    }
    out.finish()
}

pub fn write_sections(dir: &Path, digest: &str, runs: &[SectionRun]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let summary_path = dir.join("poincare_summary.csv");
    let mut summary = CsvOut::create(&summary_path, digest, "table=poincare_summary")?;
    summary.row(["eps0", "trajectories", "dropped", "points", "occupied", "allowed", "fraction"])?;
    for run in runs {
        let path = dir.join(format!("section_eps{}.csv", run.eps0));
        let mut out = CsvOut::create(&path, digest, &format!("table=section eps0={}", run.eps0))?;
        out.row(["trajectory_id", "t", "phi", "jz"])?;
        for p in &run.section.points {
            out.row([p.trajectory_id.to_string(), f(p.crossing_time), f(p.phi), f(p.jz)])?;
        }
        out.finish()?;
        written.push(path);
        let dropped = run.section.diagnostics.iter().filter(|d| d.dropped).count();
        summary.row([
            f(run.eps0),
            run.seeds.len().to_string(),
            dropped.to_string(),
            run.section.points.len().to_string(),
            run.coverage.occupied.to_string(),
            run.coverage.allowed.to_string(),
            f(run.coverage.fraction()),
        ])?;
        for d in run.section.diagnostics.iter().filter(|d| d.dropped) {
            let reason = match d.status {
                TrajectoryStatus::Completed => "energy drift",
                TrajectoryStatus::StepUnderflow => "step underflow",
                TrajectoryStatus::MaxStepsExceeded => "step limit",
            };
            log::warn!("eps0 = {}: trajectory {} dropped ({reason}, drift {:.3e})", run.eps0, d.trajectory_id, d.max_energy_drift);
        }
    }
    summary.finish()?;
    written.push(summary_path);
    Ok(written)
}

pub fn write_bounds(dir: &Path, digest: &str, report: &BoundsReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, curve) in [("random", &report.random_curve), ("sequence", &report.sequence_curve)] {
        let path = dir.join(format!("oracle_tau_{name}.csv"));
        let mut out = CsvOut::create(&path, digest, &format!("table=tau oracle={name}"))?;
        out.row(["q", "tau", "stderr", "trusted"])?;
        for (i, &q) in curve.q_grid.iter().enumerate() {
            out.row([f(q), f(curve.tau[i]), f(curve.stderr[i]), b(curve.is_trusted(q))])?;
        }
        out.finish()?;
        written.push(path);
    }
    let path = dir.join("oracle_report.csv");
    let extra = format!("table=oracle_report random_D1={} sequence_D1={}", report.random_d1, report.sequence_d1);
    let mut out = CsvOut::create(&path, digest, &extra)?;
    out.row(["oracle", "j", "sigma_nu", "q", "summed_ipr", "closed_form_ipr", "rel_error"])?;
    for r in &report.closed_form {
        out.row([r.oracle.to_string(), f(r.j), f(r.sigma_nu), f(r.q), f(r.summed), f(r.predicted), f(r.rel_error)])?;
    }
    out.finish()?;
    written.push(path);
    Ok(written)
}

/// Energy of a point on the configured model, for seed checks.
pub fn point_energy(cfg: &ExperimentConfig, p: &PhaseSpacePoint<f64>) -> Result<f64> {
    Ok(classical_energy(p, &cfg.model(cfg.j_list[0], 1)?))
}
