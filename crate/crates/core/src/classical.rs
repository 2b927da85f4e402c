//! Classical limit of the Dicke model: equations of motion, adaptive
//! Dormand-Prince integration and Poincare sections.
//!
//! Trajectories are integrated in the Cartesian atomic chart
//! `Q = sqrt(2(1 + jz)) cos(phi)`, `P = -sqrt(2(1 + jz)) sin(phi)`, which is
//! canonical and regular at the south pole. The north pole `jz = 1` remains
//! singular and steps landing near it are rejected.

use crate::coherent::{allowed_jz_interval, classical_energy, solve_xplus, PhaseSpacePoint};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Real;

/// Phase-space state along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryState<T> {
    pub t: T,
    pub x: T,
    pub p: T,
    pub phi: T,
    pub jz: T,
    pub energy: T,
}

impl<T: Real> TrajectoryState<T> {
    pub fn point(&self) -> PhaseSpacePoint<T> {
        PhaseSpacePoint { x: self.x, p: self.p, phi: self.phi, jz: self.jz }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionPoint<T> {
    /// Wrapped to `(-pi, pi]`.
    pub phi: T,
    pub jz: T,
    pub crossing_time: T,
    pub trajectory_id: usize,
}

/// `(dx/dt, dp/dt, dphi/dt, djz/dt)` in the angle chart.
pub fn equations_of_motion<T: Real>(point: &PhaseSpacePoint<T>, params: &ModelParams<T>) -> Result<[T; 4]> {
    point.validate()?;
    let rho2 = T::one() - point.jz * point.jz;
    if rho2 <= T::lit(1e-20) {
        return Err(Error::Pole { jz: point.jz.as_f64() });
    }
    let rho = rho2.sqrt();
    let (s, c) = point.phi.sin_cos();
    let (w, w0, g) = (params.omega, params.omega0, params.coupling);
    Ok([
        w * point.p,
        -w * point.x - g * rho * c,
        w0 - g * point.x * point.jz * c / rho,
        g * rho * point.x * s,
    ])
}

type State<T> = [T; 4];

fn to_chart<T: Real>(pt: &PhaseSpacePoint<T>) -> State<T> {
    let r = (T::lit(2.0) * (T::one() + pt.jz)).max(T::zero()).sqrt();
    let (s, c) = pt.phi.sin_cos();
    [pt.x, pt.p, r * c, -r * s]
}

fn from_chart<T: Real>(y: &State<T>) -> PhaseSpacePoint<T> {
    let r2 = y[2] * y[2] + y[3] * y[3];
    let jz = (r2 * T::lit(0.5) - T::one()).min(T::one());
    PhaseSpacePoint { x: y[0], p: y[1], phi: (-y[3]).atan2(y[2]), jz }
}

fn chart_jz<T: Real>(y: &State<T>) -> T {
    (y[2] * y[2] + y[3] * y[3]) * T::lit(0.5) - T::one()
}

fn chart_rhs<T: Real>(y: &State<T>, params: &ModelParams<T>) -> State<T> {
    let quarter = T::lit(0.25);
    let (x, p, q, pp) = (y[0], y[1], y[2], y[3]);
    let s = (T::one() - (q * q + pp * pp) * quarter).max(T::lit(1e-300)).sqrt();
    let (w, w0, g) = (params.omega, params.omega0, params.coupling);
    [
        w * p,
        -(w * x + g * q * s),
        w0 * pp - g * x * q * pp * quarter / s,
        -(w0 * q + g * x * (s - q * q * quarter / s)),
    ]
}

/// Outcome of an integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    /// Step size fell below the minimum, typically near the north pole.
    StepUnderflow,
    MaxStepsExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Steps with `jz > 1 - pole_margin` are rejected.
    pub pole_margin: f64,
    /// Output spacing for sampled trajectories; `None` records every accepted step.
    pub sample_interval: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-12, h_min: 1e-12, h_max: 0.1, max_steps: 50_000_000, pole_margin: 1e-10, sample_interval: None }
    }
}

impl IntegratorSettings {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.rtol = tol;
        self.atol = tol;
        self
    }
}

/// One accepted step with its dense-output polynomial.
struct Step<T> {
    t0: T,
    h: T,
    rc: [State<T>; 5],
}

impl<T: Real> Step<T> {
    fn eval(&self, t: T) -> State<T> {
        let th = (t - self.t0) / self.h;
        let th1 = T::one() - th;
        let mut y = [T::zero(); 4];
        for (i, yi) in y.iter_mut().enumerate() {
            let rc = &self.rc;
            *yi = rc[0][i] + th * (rc[1][i] + th1 * (rc[2][i] + th * (rc[3][i] + th1 * rc[4][i])));
        }
        y
    }

    fn t1(&self) -> T {
        self.t0 + self.h
    }
}

fn axpy<T: Real>(y: &State<T>, h: T, terms: &[(f64, &State<T>)]) -> State<T> {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (c, k) in terms {
            acc = acc + T::lit(*c) * k[i];
        }
        *o = *o + h * acc;
    }
    out
}

/// Dormand-Prince 5(4) with dense output. `on_step` sees every accepted
/// step and may stop the integration by returning `false`.
fn dopri5<T: Real, F: FnMut(&Step<T>) -> bool>(
    y0: State<T>,
    t_end: T,
    settings: &IntegratorSettings,
    params: &ModelParams<T>,
    mut on_step: F,
) -> TrajectoryStatus {
    let f = |y: &State<T>| chart_rhs(y, params);
    let (rtol, atol) = (T::lit(settings.rtol), T::lit(settings.atol));
    let dir = if t_end >= T::zero() { T::one() } else { -T::one() };
    let jz_cap = T::one() - T::lit(settings.pole_margin);
    let h_max = T::lit(settings.h_max);
    let mut t = T::zero();
    let mut y = y0;
    let mut k1 = f(&y);
    let mut h = dir * T::lit(1e-3).min(t_end.abs().max(T::lit(1e-300)));
    let mut err_old = T::lit(1e-4);
    for _ in 0..settings.max_steps {
        if (t_end - t) * dir <= T::zero() {
            return TrajectoryStatus::Completed;
        }
        if (t + h - t_end) * dir > T::zero() {
            h = t_end - t;
        }
        let k2 = f(&axpy(&y, h, &[(0.2, &k1)]));
        let k3 = f(&axpy(&y, h, &[(3.0 / 40.0, &k1), (9.0 / 40.0, &k2)]));
        let k4 = f(&axpy(&y, h, &[(44.0 / 45.0, &k1), (-56.0 / 15.0, &k2), (32.0 / 9.0, &k3)]));
        let k5 = f(&axpy(
            &y,
            h,
            &[(19372.0 / 6561.0, &k1), (-25360.0 / 2187.0, &k2), (64448.0 / 6561.0, &k3), (-212.0 / 729.0, &k4)],
        ));
        let k6 = f(&axpy(
            &y,
            h,
            &[
                (9017.0 / 3168.0, &k1),
                (-355.0 / 33.0, &k2),
                (46732.0 / 5247.0, &k3),
                (49.0 / 176.0, &k4),
                (-5103.0 / 18656.0, &k5),
            ],
        ));
        let y1 = axpy(
            &y,
            h,
            &[(35.0 / 384.0, &k1), (500.0 / 1113.0, &k3), (125.0 / 192.0, &k4), (-2187.0 / 6784.0, &k5), (11.0 / 84.0, &k6)],
        );
        let k7 = f(&y1);
        let e = [
            (71.0 / 57600.0, &k1),
            (-71.0 / 16695.0, &k3),
            (71.0 / 1920.0, &k4),
            (-17253.0 / 339200.0, &k5),
            (22.0 / 525.0, &k6),
            (-1.0 / 40.0, &k7),
        ];
        let zero = [T::zero(); 4];
        let err_vec = axpy(&zero, h, &e);
        let mut err = T::zero();
        for i in 0..4 {
            let sc = atol + rtol * y[i].abs().max(y1[i].abs());
            err = err + (err_vec[i] / sc).powi(2);
        }
        err = (err / T::lit(4.0)).sqrt();

        let near_pole = !(chart_jz(&y1) <= jz_cap) || y1.iter().any(|v| !v.is_finite());
        if near_pole || err > T::one() {
            let fac = if near_pole { T::lit(0.25) } else { (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.2)) };
            h = h * fac;
            if h.abs() < T::lit(settings.h_min) {
                return TrajectoryStatus::StepUnderflow;
            }
            continue;
        }

        let mut rc = [[T::zero(); 4]; 5];
        let d = [
            (-12715105075.0 / 11282082432.0, &k1),
            (87487479700.0 / 32700410799.0, &k3),
            (-10690763975.0 / 1880347072.0, &k4),
            (701980252875.0 / 199316789632.0, &k5),
            (-1453857185.0 / 822651844.0, &k6),
            (69997945.0 / 29380423.0, &k7),
        ];
        let rc5 = axpy(&zero, h, &d);
        for i in 0..4 {
            let diff = y1[i] - y[i];
            let bspl = h * k1[i] - diff;
            rc[0][i] = y[i];
            rc[1][i] = diff;
            rc[2][i] = bspl;
            rc[3][i] = diff - h * k7[i] - bspl;
            rc[4][i] = rc5[i];
        }
        let step = Step { t0: t, h, rc };
        t = t + h;
        y = y1;
        k1 = k7;
        if !on_step(&step) {
            return TrajectoryStatus::Completed;
        }
        // PI step control
        let err_c = err.max(T::lit(1e-10));
        let fac = T::lit(0.9) * err_c.powf(T::lit(-0.17)) * err_old.powf(T::lit(0.04));
        err_old = err_c.max(T::lit(1e-4));
        h = h * fac.max(T::lit(0.2)).min(T::lit(10.0));
        if h.abs() > h_max {
            h = dir * h_max;
        }
    }
    TrajectoryStatus::MaxStepsExceeded
}

fn state_at<T: Real>(t: T, y: &State<T>, params: &ModelParams<T>) -> TrajectoryState<T> {
    let pt = from_chart(y);
    TrajectoryState { t, x: pt.x, p: pt.p, phi: pt.phi, jz: pt.jz, energy: classical_energy(&pt, params) }
}

/// Sampled trajectory and its integration diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub states: Vec<TrajectoryState<T>>,
    pub status: TrajectoryStatus,
    /// Largest `|h(t) - h(0)|` over accepted steps.
    pub max_energy_drift: T,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &TrajectoryState<T> {
        self.states.last().expect("trajectory holds its initial state")
    }
}

/// Integrates from `initial` over `[0, t_max]`; negative `t_max` integrates backwards.
pub fn integrate_trajectory<T: Real>(
    initial: &PhaseSpacePoint<T>,
    t_max: T,
    settings: &IntegratorSettings,
    params: &ModelParams<T>,
) -> Result<Trajectory<T>> {
    initial.validate()?;
    if !t_max.is_finite() {
        return Err(Error::InvalidParams(format!("t_max = {t_max}")));
    }
    let e0 = classical_energy(initial, params);
    if !e0.is_finite() {
        return Err(Error::InvalidPoint(format!("{initial:?}")));
    }
    let mut states = vec![TrajectoryState {
        t: T::zero(),
        x: initial.x,
        p: initial.p,
        phi: initial.phi,
        jz: initial.jz,
        energy: e0,
    }];
    let mut drift = T::zero();
    let interval = settings.sample_interval.map(T::lit);
    let dir = if t_max >= T::zero() { T::one() } else { -T::one() };
    let mut next_sample = interval.map(|dt| dir * dt);
    let status = dopri5(to_chart(initial), t_max, settings, params, |step| {
        let t1 = step.t1();
        let end = step.eval(t1);
        let s_end = state_at(t1, &end, params);
        drift = drift.max((s_end.energy - e0).abs());
        match (interval, next_sample.as_mut()) {
            (Some(dt), Some(ns)) => {
                while (t1 - *ns) * dir >= T::zero() {
                    let y = step.eval(*ns);
                    states.push(state_at(*ns, &y, params));
                    *ns = *ns + dir * dt;
                }
            }
            _ => states.push(s_end),
        }
        true
    });
    Ok(Trajectory { states, status, max_energy_drift: drift })
}

fn wrap_angle<T: Real>(phi: T) -> T {
    let two_pi = T::TAU();
    let mut a = phi % two_pi;
    if a <= -T::PI() {
        a = a + two_pi;
    } else if a > T::PI() {
        a = a - two_pi;
    }
    a
}

/// Crossings of `p = 0` with `dp/dt < 0`, the branch `x = x+` at `p = 0`.
pub fn section_crossings<T: Real>(
    seed: &PhaseSpacePoint<T>,
    t_max: T,
    settings: &IntegratorSettings,
    params: &ModelParams<T>,
    trajectory_id: usize,
) -> Result<(Vec<SectionPoint<T>>, TrajectoryStatus, T)> {
    seed.validate()?;
    let e0 = classical_energy(seed, params);
    let mut out = Vec::new();
    let mut drift = T::zero();
    let status = dopri5(to_chart(seed), t_max, settings, params, |step| {
        let t1 = step.t1();
        let p0 = step.rc[0][1];
        let y1 = step.eval(t1);
        drift = drift.max((classical_energy(&from_chart(&y1), params) - e0).abs());
        if p0 > T::zero() && y1[1] <= T::zero() {
            let (mut a, mut b) = (step.t0, t1);
            for _ in 0..80 {
                let mid = (a + b) * T::lit(0.5);
                if mid == a || mid == b {
                    break;
                }
                if step.eval(mid)[1] > T::zero() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let tc = (a + b) * T::lit(0.5);
            let pt = from_chart(&step.eval(tc));
            out.push(SectionPoint { phi: wrap_angle(pt.phi), jz: pt.jz, crossing_time: tc, trajectory_id });
        }
        true
    });
    Ok((out, status, drift))
}

/// Section data for a set of seeds with per-trajectory diagnostics.
#[derive(Clone, Debug)]
pub struct PoincareSection<T> {
    pub points: Vec<SectionPoint<T>>,
    pub diagnostics: Vec<TrajectoryDiagnostic<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrajectoryDiagnostic<T> {
    pub trajectory_id: usize,
    pub status: TrajectoryStatus,
    pub max_energy_drift: T,
    pub crossings: usize,
    /// Dropped trajectories contribute no points.
    pub dropped: bool,
}

pub const DEFAULT_ENERGY_DRIFT_TOL: f64 = 1e-8;

/// Poincare section at `p = 0` on the `x+` branch for seeds on the surface `eps0`.
///
/// Seeds off the surface by more than `1e-8` are rejected. A trajectory whose
/// energy drifts beyond `drift_tol` is rerun at tenfold tighter tolerances
/// down to `1e-14`; trajectories that still fail are dropped.
pub fn poincare_section<T: Real>(
    eps0: T,
    seeds: &[PhaseSpacePoint<T>],
    t_max: T,
    settings: &IntegratorSettings,
    drift_tol: T,
    params: &ModelParams<T>,
) -> Result<PoincareSection<T>> {
    use rayon::prelude::*;
    for s in seeds {
        let e = classical_energy(s, params);
        if (e - eps0).abs() > T::lit(1e-8) {
            return Err(Error::InvalidPoint(format!("seed {s:?} has energy {e}, expected {eps0}")));
        }
    }
    let runs: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            let mut run = section_crossings(s, t_max, settings, params, id)?;
            let mut tol = settings.rtol;
            while run.1 == TrajectoryStatus::Completed && !(run.2 <= drift_tol) && tol > 1e-14 {
                tol *= 0.1;
                log::debug!("trajectory {id}: energy drift {}, retrying at tol {tol:e}", run.2);
                run = section_crossings(s, t_max, &settings.with_tol(tol), params, id)?;
            }
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    for (id, (pts, status, drift)) in runs.into_iter().enumerate() {
        let dropped = status != TrajectoryStatus::Completed || !(drift <= drift_tol);
        if dropped {
            log::warn!("trajectory {id} dropped: status {status:?}, energy drift {drift}");
        }
        diagnostics.push(TrajectoryDiagnostic {
            trajectory_id: id,
            status,
            max_energy_drift: drift,
            crossings: pts.len(),
            dropped,
        });
        if !dropped {
            points.extend(pts);
        }
    }
    Ok(PoincareSection { points, diagnostics })
}

/// Occupancy of a `bins x bins` grid over `(phi, jz) in (-pi, pi] x [-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionCoverage {
    pub occupied: usize,
    /// Cells whose centre lies on the energy surface.
    pub allowed: usize,
}

impl SectionCoverage {
    pub fn fraction(&self) -> f64 {
        if self.allowed == 0 {
            0.0
        } else {
            self.occupied as f64 / self.allowed as f64
        }
    }
}

fn cell<T: Real>(phi: T, jz: T, bins: usize) -> (usize, usize) {
    let pi = std::f64::consts::PI;
    let a = ((phi.as_f64() + pi) / (2.0 * pi) * bins as f64).floor();
    let b = ((jz.as_f64() + 1.0) / 2.0 * bins as f64).floor();
    ((a.max(0.0) as usize).min(bins - 1), (b.max(0.0) as usize).min(bins - 1))
}

/// Counts occupied cells among the energetically allowed ones.
pub fn section_coverage<T: Real>(points: &[SectionPoint<T>], eps0: T, params: &ModelParams<T>, bins: usize) -> SectionCoverage {
    let mut allowed = vec![false; bins * bins];
    for a in 0..bins {
        let phi = -T::PI() + T::TAU() * (T::from_usize_lossy(a) + T::lit(0.5)) / T::from_usize_lossy(bins);
        for b in 0..bins {
            let jz = -T::one() + T::lit(2.0) * (T::from_usize_lossy(b) + T::lit(0.5)) / T::from_usize_lossy(bins);
            allowed[a * bins + b] = solve_xplus(eps0, phi, jz, params).is_some();
        }
    }
    let mut occ = vec![false; bins * bins];
    for p in points {
        let (a, b) = cell(p.phi, p.jz, bins);
        occ[a * bins + b] = true;
    }
    SectionCoverage {
        occupied: occ.iter().zip(&allowed).filter(|(o, a)| **o && **a).count(),
        allowed: allowed.iter().filter(|a| **a).count(),
    }
}

/// Seeds on the `x+` branch at `p = 0`, spread over a `(phi, jz)` grid of the surface.
pub fn surface_seeds<T: Real>(eps0: T, params: &ModelParams<T>, n_phi: usize, n_jz: usize) -> Vec<PhaseSpacePoint<T>> {
    let mut seeds = Vec::new();
    for a in 0..n_phi {
        let phi = -T::PI() + T::TAU() * (T::from_usize_lossy(a) + T::lit(0.5)) / T::from_usize_lossy(n_phi);
        let Some((lo, hi)) = allowed_jz_interval(eps0, phi, params) else { continue };
        for b in 0..n_jz {
            let jz = lo + (hi - lo) * (T::from_usize_lossy(b) + T::lit(0.5)) / T::from_usize_lossy(n_jz);
            if let Some(x) = solve_xplus(eps0, phi, jz, params) {
                seeds.push(PhaseSpacePoint { x, p: T::zero(), phi, jz });
            }
        }
    }
    seeds
}
