use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "j_list": [3, 4, 5, 6],
  "n_max": 60,
  "n_max_alt": 54,
  "j_exclude_below": 0,
  "q_grid": [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0],
  "points": [{"eps0": -1.5, "jz": -0.3}],
  "surfaces": [-1.5],
  "jz_grid_points": 5,
  "poincare": {"surfaces": [-1.8], "seed_phi": 1, "seed_jz": 2, "t_max": 100}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicke-mf"))
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMALL).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn config_errors_exit_2() {
    let dir = setup();
    for (name, body) in [
        ("desc.json", r#"{"j_list": [10, 5]}"#),
        ("low.json", r#"{"surfaces": [-3.0]}"#),
        ("key.json", r#"{"nmax": 10}"#),
        ("syntax.json", "{"),
    ] {
        std::fs::write(dir.path().join(name), body).unwrap();
        let out = run(dir.path(), &["--config", name, "spectrum"]);
        assert_eq!(out.status.code(), Some(2), "{name}");
    }
    let out = run(dir.path(), &["--config", "missing.json", "spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["--config", "c.json", "state-analyze", "--point", "-1.5,3.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_state_exits_3() {
    let dir = setup();
    // a cutoff far too small leaves no certified weight
    std::fs::write(dir.path().join("tiny.json"), SMALL.replace("\"n_max\": 60", "\"n_max\": 12").replace("54", "10")).unwrap();
    let out2 = run(dir.path(), &["--config", "tiny.json", "state-analyze"]);
    assert_eq!(out2.status.code(), Some(3), "{}", String::from_utf8_lossy(&out2.stderr));
}

#[test]
fn cache_is_reused_and_corruption_exits_4() {
    let dir = setup();
    let args = ["--config", "c.json", "--cache", "cache", "--out", "o", "spectrum"];
    let first = run(dir.path(), &args);
    assert!(first.status.success());
    assert!(String::from_utf8_lossy(&first.stderr).contains("cache hits 0, misses 8"));
    let csv1 = read(dir.path(), "o/spectrum.csv");
    let second = run(dir.path(), &args);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hits 8, misses 0"));
    assert_eq!(csv1, read(dir.path(), "o/spectrum.csv"));

    for entry in std::fs::read_dir(dir.path().join("cache")).unwrap() {
        let path = entry.unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
    }
    let third = run(dir.path(), &args);
    assert_eq!(third.status.code(), Some(4));
}

#[test]
fn outputs_are_deterministic_and_carry_the_digest() {
    let a = setup();
    let b = setup();
    for dir in [a.path(), b.path()] {
        for cmd in ["state-analyze", "bounds-check", "poincare", "convergence-sweep", "surface-scan"] {
            let out = run(dir, &["--config", "c.json", "--out", "o", "--seed", "7", "--threads", "1", cmd]);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path().join("o")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    let first = read(a.path(), &format!("o/{}", names[0].to_str().unwrap()));
    let digest = first.lines().next().unwrap().split_whitespace().nth(1).unwrap().to_string();
    assert!(digest.starts_with("config_digest=") && digest.len() == 14 + 64);
    for n in &names {
        let n = format!("o/{}", n.to_str().unwrap());
        let (x, y) = (read(a.path(), &n), read(b.path(), &n));
        assert_eq!(x, y, "{n} differs between runs");
        assert!(x.starts_with(&format!("# {digest}")), "{n}");
    }

    let tau = read(a.path(), "o/tau_eps-1.5_jz-0.3_phi0.csv");
    assert_eq!(tau.lines().nth(1).unwrap(), "q,tau,stderr,trusted");
    assert!(read(a.path(), "o/fit_report.csv").lines().nth(1).unwrap().ends_with("q_lo,q_hi,model,D0,D1,D2,rms,classification"));
    assert_eq!(read(a.path(), "o/section_eps-1.8.csv").lines().nth(1).unwrap(), "trajectory_id,t,phi,jz");
    assert_eq!(read(a.path(), "o/expansion_eps-1.5_jz-0.3_phi0.csv").lines().nth(1).unwrap(), "k,E_k,eps_k,ck_sq");

    // a different seed changes the digest of seeded outputs
    let out = run(a.path(), &["--config", "c.json", "--out", "p", "--seed", "8", "bounds-check"]);
    assert!(out.status.success());
    assert_ne!(read(a.path(), "o/oracle_report.csv"), read(a.path(), "p/oracle_report.csv"));
}
