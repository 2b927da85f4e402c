//! Acceptance criteria 1-10. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero when any criterion fails.
//!
//! Spectra are cached under `target/acceptance-cache`, so reruns only redo
//! the analysis.

use std::path::PathBuf;
use std::time::Instant;

use dicke_mf::classical::{
    equations_of_motion, integrate_trajectory, poincare_section, section_coverage, IntegratorSettings,
    TrajectoryStatus, DEFAULT_ENERGY_DRIFT_TOL,
};
use dicke_mf::coherent::{classical_energy, PhaseSpacePoint};
use dicke_mf::model::hamiltonian::max_off_parity_element;
use dicke_mf::model::spectrum::{
    compute_spectrum, ground_energy_intensive, orthonormality_error, reconstruction_residual, max_abs,
};
use dicke_mf::model::{build_hamiltonian, BasisKind, ModelParams, Parity};
use dicke_mf::multifractal::FitModel;
use dicke_mf::pipeline::{
    run_bounds_check, table_points, ExperimentConfig, Pipeline, PointSpec, StateBundle, SurfaceScan,
    SEPARATION_FLOOR,
};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-cache")
}

fn base_config() -> ExperimentConfig {
    ExperimentConfig { cache_dir: Some(cache_dir()), ..Default::default() }
}

fn low_energy_points() -> Vec<PointSpec> {
    table_points().into_iter().filter(|p| p.eps0 == -1.8).collect()
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn linear_d1(b: &StateBundle) -> f64 {
    b.fit(FitModel::Linear, (1.0, 2.0)).map_or(f64::NAN, |f| f.d1)
}

fn c1_oracle_slopes() -> Outcome {
    let r = run_bounds_check(&base_config()).unwrap();
    let ok = (r.random_d1 - 1.0).abs() <= 0.03 && (r.sequence_d1 - 1.0 / 3.0).abs() <= 0.05;
    outcome(ok, format!("random D1 = {:.4} (1 +- 0.03), sequence D1 = {:.4} (1/3 +- 0.05)", r.random_d1, r.sequence_d1))
}

fn c2_closed_form() -> Outcome {
    let r = run_bounds_check(&base_config()).unwrap();
    let worst = r.max_closed_form_error();
    let qs: Vec<f64> = {
        let mut q: Vec<f64> = r.closed_form.iter().map(|c| c.q).collect();
        q.sort_by(f64::total_cmp);
        q.dedup();
        q
    };
    let covered = [0.5, 1.0, 2.0, 4.0].iter().all(|q| r.closed_form.iter().any(|c| c.q == *q && c.oracle == "random"))
        && [0.5, 1.0, 2.0, 4.0].iter().all(|q| r.closed_form.iter().any(|c| c.q == *q && c.oracle == "sequence"));
    outcome(
        covered && worst <= 0.01,
        format!("{} comparisons with sigma*nu >= 50, q in {qs:?}: max rel error {worst:.3e} (<= 1e-2)", r.closed_form.len()),
    )
}

fn c3_states(states: &[StateBundle]) -> Outcome {
    let d_reg = linear_d1(&states[0]);
    let d_erg = linear_d1(&states[1]);
    let ok_reg = in_range(d_reg, 0.25, 0.45);
    let ok_erg = in_range(d_erg, 0.80, 1.10);
    outcome(
        ok_reg && ok_erg,
        format!(
            "jz=-0.492: D1 = {d_reg:.4} in [0.25, 0.45] {}; jz=-0.290: D1 = {d_erg:.4} in [0.80, 1.10] {}",
            if ok_reg { "ok" } else { "NO" },
            if ok_erg { "ok" } else { "NO" }
        ),
    )
}

fn c4_surfaces(scans: &[SurfaceScan]) -> Outcome {
    let by = |e: f64| scans.iter().find(|s| s.eps0 == e).unwrap();
    let hi = by(-0.5);
    let retained: Vec<f64> = hi.retained().map(|r| r.d1).collect();
    let hi_min = retained.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_all = hi.rows.iter().map(|r| r.d1).fold(f64::INFINITY, f64::min);
    let ok_hi = !retained.is_empty() && hi_min >= 0.85;

    let low = by(-1.8);
    let low_min = low.retained().map(|r| r.d1).fold(f64::INFINITY, f64::min);
    let low_all = low.rows.iter().map(|r| r.d1).fold(f64::INFINITY, f64::min);
    let ok_low = low_min >= 0.25;

    let mid = by(-1.1);
    let rows: Vec<(f64, f64)> = mid.retained().map(|r| (r.jz, r.d1)).collect();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..rows.len() {
        let (jz, d) = rows[i];
        if !in_range(jz, 0.0, 0.2) {
            continue;
        }
        let left = i == 0 || rows[i - 1].1 >= d;
        let right = i + 1 == rows.len() || rows[i + 1].1 >= d;
        if left && right && best.is_none_or(|b| d < b.1) {
            best = Some((jz, d));
        }
    }
    let ok_mid = best.is_some_and(|b| b.1 <= 0.3);
    outcome(
        ok_hi && ok_low && ok_mid,
        format!(
            "eps0=-0.5: min D1 over {} retained = {hi_min:.4} (>= 0.85) [all {} rows: {hi_all:.4}]; \
             eps0=-1.8: min D1 = {low_min:.4} (>= 0.25) [all rows: {low_all:.4}]; \
             eps0=-1.1: local min in jz [0, 0.2] = {} (<= 0.3)",
            retained.len(),
            hi.rows.len(),
            best.map_or("none".into(), |(jz, d)| format!("{d:.4} at jz = {jz:.4}")),
        ),
    )
}

fn c5_normalization(states: &[StateBundle], scans: &[SurfaceScan]) -> Outcome {
    let ipr1 = states
        .iter()
        .map(|b| b.max_ipr1_error)
        .chain(scans.iter().flat_map(|s| s.rows.iter().map(|r| r.max_ipr1_error)))
        .fold(0.0, f64::max);
    let mut worst_ratio: f64 = 0.0;
    let mut bad = 0;
    let taus = states.iter().filter_map(|b| b.tau_at_one()).chain(scans.iter().flat_map(|s| s.rows.iter().filter_map(|r| r.tau1)));
    let mut n = 0;
    for (t, se) in taus {
        n += 1;
        // tau(1) vanishes to round-off; its standard error may too
        let ok = t.abs() <= 2.0 * se || t.abs() <= 1e-12;
        if !ok {
            bad += 1;
        }
        if se > 0.0 {
            worst_ratio = worst_ratio.max(t.abs() / se);
        }
    }
    outcome(
        ipr1 <= 1e-8 && bad == 0,
        format!("max |IPR_1 - 1| = {ipr1:.2e} (<= 1e-8); tau(1) within 2 stderr for {}/{n} states (max |tau(1)|/stderr {worst_ratio:.2})", n - bad),
    )
}

fn c6_structure() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let params = ModelParams::<f64>::new(1.0, 1.0, 2.0, 5.0, 30).unwrap().with_basis(BasisKind::Fock);
    let full = build_hamiltonian(&params, Parity::Both).unwrap();
    let asym = (0..full.nrows())
        .flat_map(|a| (0..a).map(move |b| (a, b)))
        .filter(|&(a, b)| full[(a, b)].to_bits() != full[(b, a)].to_bits())
        .count();
    let off = max_off_parity_element(&params, &full);
    ok &= asym == 0 && off == 0.0;
    notes.push(format!("asymmetric pairs {asym}, max off-parity |H| = {off:e}"));

    for basis in [BasisKind::Fock, BasisKind::Displaced] {
        for parity in Parity::blocks() {
            let p = ModelParams::<f64>::new(1.0, 1.0, 2.0, 5.0, 30).unwrap().with_basis(basis);
            let h = dicke_mf::model::block_hamiltonian(&p, parity).unwrap();
            let asym = (0..h.nrows()).flat_map(|a| (0..a).map(move |b| (a, b))).filter(|&(a, b)| h[(a, b)] != h[(b, a)]).count();
            ok &= asym == 0;
        }
    }

    let free = ModelParams::<f64>::new(1.3, 0.7, 0.0, 3.5, 12).unwrap().with_basis(BasisKind::Fock);
    let mut expected: Vec<f64> = Vec::new();
    for n in 0..=12 {
        for k in 0..=7 {
            expected.push(1.3 * n as f64 + 0.7 * (k as f64 - 3.5));
        }
    }
    expected.sort_by(f64::total_cmp);
    let mut got: Vec<f64> = Parity::blocks()
        .iter()
        .flat_map(|&par| compute_spectrum(&free, par, None).unwrap().eigenvalues)
        .collect();
    got.sort_by(f64::total_cmp);
    let dev = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ok &= got.len() == expected.len() && dev <= 1e-12;
    notes.push(format!("Omega=0 max deviation {dev:.1e}"));

    let p = ModelParams::<f64>::new(1.0, 1.0, 2.0, 20.0, 120).unwrap();
    let spec = compute_spectrum(&p, Parity::Positive, None).unwrap();
    let orth = orthonormality_error(&spec.eigenvectors);
    let h = dicke_mf::model::block_hamiltonian(&p, Parity::Positive).unwrap();
    let res = reconstruction_residual(&h, &spec.eigenvalues, &spec.eigenvectors) / max_abs(&h);
    ok &= orth <= 1e-10 && res <= 1e-9;
    notes.push(format!("j=20 n_max=120 block: orthonormality {orth:.1e} (<= 1e-10), relative residual {res:.1e}"));
    outcome(ok, notes.join("; "))
}

fn c7_classical(pipe: &Pipeline) -> Outcome {
    let [pos, neg] = pipe.spectra(40.0, 120).unwrap();
    let gs = ground_energy_intensive(&[&pos, &neg]).unwrap();
    drop((pos, neg));
    let ok_gs = (gs + 2.125).abs() <= 0.05;

    let params = pipe.config.model(40.0, 1).unwrap();
    let seed = pipe.config.point(&PointSpec { eps0: -1.8, jz: -0.492, phi: 0.0 }).unwrap();
    let tr = integrate_trajectory(&seed, 1000.0, &IntegratorSettings::default(), &params).unwrap();
    let chaotic = pipe.config.point(&PointSpec { eps0: -0.5, jz: -0.257, phi: 0.0 }).unwrap();
    let tr2 = integrate_trajectory(&chaotic, 1000.0, &IntegratorSettings::default(), &params).unwrap();
    let drift = tr.max_energy_drift.max(tr2.max_energy_drift);
    let ok_drift = tr.status == TrajectoryStatus::Completed && tr2.status == TrajectoryStatus::Completed && drift <= 1e-8;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let pt = PhaseSpacePoint {
            x: rng.random_range(-3.0..3.0),
            p: rng.random_range(-3.0..3.0),
            phi: rng.random_range(-3.2..3.2),
            jz: rng.random_range(-0.99..0.99),
        };
        let d = equations_of_motion(&pt, &params).unwrap();
        let h = 1e-5;
        let fd = |f: &dyn Fn(f64) -> PhaseSpacePoint<f64>| {
            (classical_energy(&f(h), &params) - classical_energy(&f(-h), &params)) / (2.0 * h)
        };
        let expect = [
            fd(&|e| PhaseSpacePoint { p: pt.p + e, ..pt }),
            -fd(&|e| PhaseSpacePoint { x: pt.x + e, ..pt }),
            fd(&|e| PhaseSpacePoint { jz: pt.jz + e, ..pt }),
            -fd(&|e| PhaseSpacePoint { phi: pt.phi + e, ..pt }),
        ];
        let scale = expect.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, b) in d.iter().zip(&expect) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let ok_fd = worst <= 1e-6;
    outcome(
        ok_gs && ok_drift && ok_fd,
        format!(
            "eps_GS(j=40) = {gs:.5} (|+2.125| <= 0.05); max energy drift over t=1000 = {drift:.2e} (<= 1e-8); \
             vector field vs finite differences at 1e4 states: {worst:.2e} (<= 1e-6)"
        ),
    )
}

fn c8_poincare(pipe: &Pipeline) -> Outcome {
    let params = pipe.config.model(40.0, 1).unwrap();
    let settings = IntegratorSettings::default();
    let t_max = 3000.0;
    let coverage = |spec: PointSpec| {
        let seed = pipe.config.point(&spec).unwrap();
        let sec = poincare_section(spec.eps0, &[seed], t_max, &settings, DEFAULT_ENERGY_DRIFT_TOL, &params).unwrap();
        let c = section_coverage(&sec.points, spec.eps0, &params, 50);
        (c, sec.points.len())
    };
    let (reg, n_reg) = coverage(PointSpec { eps0: -1.8, jz: -0.492, phi: 0.0 });
    let (off, n_off) = coverage(PointSpec { eps0: -1.8, jz: -0.4, phi: 0.0 });
    let (cha, n_cha) = coverage(PointSpec { eps0: -0.5, jz: -0.257, phi: 0.0 });
    let ok = reg.fraction() <= 0.05 && cha.fraction() >= 0.25;
    outcome(
        ok,
        format!(
            "t_max = {t_max}: regular seed eps0=-1.8 jz=-0.492 {}/{} cells = {:.4} (<= 0.05); \
             chaotic seed eps0=-0.5 jz=-0.257 {}/{} = {:.4} (>= 0.25); crossings {n_reg}/{n_cha}; \
             [info: torus seed eps0=-1.8 jz=-0.4 {}/{} = {:.4}, {n_off} crossings]",
            reg.occupied,
            reg.allowed,
            reg.fraction(),
            cha.occupied,
            cha.allowed,
            cha.fraction(),
            off.occupied,
            off.allowed,
            off.fraction()
        ),
    )
}

fn c9_cutoff() -> Outcome {
    let cfg = ExperimentConfig { n_max: Some(120), n_max_alt: Some(90), points: low_energy_points(), ..base_config() };
    let pipe = Pipeline::new(cfg).unwrap();
    let sweeps = pipe.run_convergence_sweep(&pipe.config.points.clone()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for s in &sweeps {
        let worst = s
            .rows
            .iter()
            .filter(|r| r.q >= 1.0 - 1e-9)
            .map(|r| if r.tau_hi.abs() > SEPARATION_FLOOR { r.abs_diff / r.tau_hi.abs() } else { r.abs_diff })
            .fold(0.0, f64::max);
        let at_one = s.rows.iter().find(|r| (r.q - 1.0).abs() < 1e-9).map_or(0.0, |r| r.abs_diff);
        ok &= worst <= 0.01 && at_one <= SEPARATION_FLOOR;
        notes.push(format!(
            "jz={}: max |dtau|/|tau| over q >= 1 = {worst:.2e}, q* = {}",
            s.spec.jz,
            s.separation_q.map_or("none".into(), |q| format!("{q:.2}"))
        ));
    }
    outcome(ok, format!("n_max 90 vs 120 (<= 1e-2): {}", notes.join("; ")))
}

fn c10_widths(states: &[StateBundle]) -> Outcome {
    let exps: Vec<f64> = states.iter().map(|b| b.width_exponent.unwrap_or(f64::NAN)).collect();
    let ok = exps.iter().all(|a| (a + 0.5).abs() <= 0.05);
    let text: Vec<String> = states.iter().zip(&exps).map(|(b, a)| format!("jz={}: {a:.4}", b.spec.jz)).collect();
    outcome(ok, format!("std(eps) ~ j^a over j = 10..40, a = -0.5 +- 0.05: {}", text.join(", ")))
}

fn main() {
    let _ = env_logger_init();
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {n:>2} [{name}]: {} ({:.0} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        results.push((n, name, o));
    };

    record(1, "oracle slopes", &mut c1_oracle_slopes);
    record(2, "closed-form agreement", &mut c2_closed_form);
    record(6, "structural invariants", &mut c6_structure);

    let pipe = Pipeline::new(ExperimentConfig { points: low_energy_points(), ..base_config() }).unwrap();
    let states = pipe.run_state_analysis(&pipe.config.points.clone()).unwrap();
    record(3, "reduced-scale Fig. 1 states", &mut || c3_states(&states));
    record(10, "width scaling", &mut || c10_widths(&states));
    record(7, "classical limit", &mut || c7_classical(&pipe));
    record(8, "Poincare discrimination", &mut || c8_poincare(&pipe));
    record(9, "cutoff robustness", &mut c9_cutoff);

    let scan_pipe = Pipeline::new(base_config()).unwrap();
    let scans: Vec<SurfaceScan> = [-1.8, -1.1, -0.5].iter().map(|&e| scan_pipe.run_surface_scan(e).unwrap()).collect();
    record(4, "reduced-scale Fig. 6 trends", &mut || c4_surfaces(&scans));
    record(5, "normalization invariants", &mut || c5_normalization(&states, &scans));

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0} s{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn env_logger_init() -> Result<(), log::SetLoggerError> {
    struct Stderr;
    impl log::Log for Stderr {
        fn enabled(&self, m: &log::Metadata) -> bool {
            m.level() <= log::Level::Warn
        }
        fn log(&self, r: &log::Record) {
            if self.enabled(r.metadata()) {
                eprintln!("[{}] {}", r.level(), r.args());
            }
        }
        fn flush(&self) {}
    }
    static LOGGER: Stderr = Stderr;
    log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Warn))
}
