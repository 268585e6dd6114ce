use lbcert_core::certificate::{Certificate, CertificateKind};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_lbcert");

const MAXWELL: &str = r#"
seed = 11
regime = "cutoff"
tau = 0.5

[kernel]
preset = "maxwell_molecules"

[bounds]
from = "bkw"
s0 = 0.72

[constants]
cst_spread = 50.0
cst_cl = 1.0
cst_up = 5000.0

[verify]
source = "bkw"
times = [0.5, 2.0]
grid_m = 16
v_max = 8.0
"#;

const NONCUTOFF: &str = r#"
regime = "noncutoff"
tau = 0.5

[kernel]
preset = "inverse_power"
gamma = 0.5
nu = 1.0

[bounds]
rho_min = 1.0
E = 4.0
Eprime = 3.0
H = 4.3
W = 2.0

[schedule]
kappa = KAPPA

[constants]
cst_spread = 50.0
cst_cl = 1.0
cst_up = 1.0
"#;

const CALIBRATE: &str = r#"
seed = 5
regime = "cutoff"

[kernel]
preset = "hard_spheres"

[calibrate]
id = "small"
spreading_samples = 10000
upheaval_outer = 5000
upheaval_inner = 16
points = [
  { r = 1.0, R = 1.0, xi = 0.25, v = [0.0, 0.0, 0.0] },
  { r = 1.0, R = 1.0, xi = 0.25, v = [0.0, 0.0, 0.5] },
  { r = 0.5, R = 1.0, xi = 0.4, v = [0.0, 0.3, 0.0] },
]
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn certify_cutoff_writes_a_parseable_certificate() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "run.toml", MAXWELL);
    let o = run(&["certify"], &cfg, &d.path().join("out"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("out/certificate.json")).unwrap();
    let c = Certificate::from_json(&text).unwrap();
    assert_eq!(c.kind, CertificateKind::Maxwellian);
    assert_eq!(c.format_version, 1);
    assert_eq!(c.tau, 0.5);
    assert_eq!(c.to_json(), text);
    let trace = std::fs::read_to_string(d.path().join("out/trace.csv")).unwrap();
    assert!(trace.starts_with("n,log_a_n,delta_n\n"));
    assert_eq!(trace.lines().count(), 50);
}

#[test]
fn certify_noncutoff_and_kappa_threshold() {
    let d = TempDir::new().unwrap();
    let ok = write_config(d.path(), "ok.toml", &NONCUTOFF.replace("KAPPA", "4.5"));
    let o = run(&["certify"], &ok, &d.path().join("ok"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = Certificate::from_json(&std::fs::read_to_string(d.path().join("ok/certificate.json")).unwrap()).unwrap();
    assert_eq!(c.kind, CertificateKind::StretchedExp);
    assert!((c.k.unwrap() - 4.339850002884624).abs() < 1e-12);
    let trace = std::fs::read_to_string(d.path().join("ok/trace.csv")).unwrap();
    assert!(trace.starts_with("n,log_a_n,delta_n,eps_n,Delta_n,damping\n"));

    let bad = write_config(d.path(), "bad.toml", &NONCUTOFF.replace("KAPPA", "3.5"));
    let o = run(&["certify"], &bad, &d.path().join("bad"));
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("threshold") && msg.contains("K must exceed"), "{msg}");
    assert!(!d.path().join("bad/certificate.json").exists());
}

#[test]
fn certify_is_byte_identical() {
    let d = TempDir::new().unwrap();
    for (name, body) in [("m.toml", MAXWELL.to_string()), ("n.toml", NONCUTOFF.replace("KAPPA", "4.5"))] {
        let cfg = write_config(d.path(), name, &body);
        let a = d.path().join(format!("{name}.a"));
        let b = d.path().join(format!("{name}.b"));
        assert_eq!(code(&run(&["certify"], &cfg, &a)), 0);
        assert_eq!(code(&run(&["certify"], &cfg, &b)), 0);
        for f in ["certificate.json", "trace.csv"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{name}/{f}");
        }
    }
}

#[test]
fn calibrate_then_certify_with_the_result() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "cal.toml", CALIBRATE);
    let out = d.path().join("cal");
    let o = run(&["calibrate"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("calibration.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["id"], "small");
    assert_eq!(v["spreading"]["ratios"].as_array().unwrap().len(), 3);
    let spread = v["constants"]["cst_spread"].as_f64().unwrap();
    assert!(spread > 0.0);
    assert!(v["constants"]["cst_up"].as_f64().unwrap() > 0.0);
    assert!(v["constants"]["cst_cl"].as_f64().unwrap() > 0.0);

    // same seed, same constants; another seed, other samples
    let again = d.path().join("again");
    assert_eq!(code(&run(&["calibrate"], &cfg, &again)), 0);
    assert_eq!(std::fs::read(out.join("calibration.json")).unwrap(), std::fs::read(again.join("calibration.json")).unwrap());
    let other = d.path().join("other");
    assert_eq!(code(&run(&["calibrate", "--seed", "6"], &cfg, &other)), 0);
    let w: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(other.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(w["seed"], 6);
    assert_ne!(w["constants"]["cst_spread"], v["constants"]["cst_spread"]);

    let run_cfg = MAXWELL
        .replace("[constants]\ncst_spread = 50.0\ncst_cl = 1.0\ncst_up = 5000.0\n", "")
        .replace("tau = 0.5\n", "tau = 0.5\ncalibration = \"cal/calibration.json\"\n")
        .replace("preset = \"maxwell_molecules\"", "preset = \"hard_spheres\"")
        .replace("from = \"bkw\"\ns0 = 0.72", "rho_min = 1.0\nE = 4.0\nH = 4.3");
    let rc = write_config(d.path(), "use.toml", &run_cfg);
    let o = run(&["certify"], &rc, &d.path().join("use"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = Certificate::from_json(&std::fs::read_to_string(d.path().join("use/certificate.json")).unwrap()).unwrap();
    assert_eq!(c.provenance.calibration_ids, vec!["small".to_string()]);
    assert_eq!(c.provenance.cst_spread, spread);
}

#[test]
fn calibrate_empty_plan_is_infeasible() {
    let d = TempDir::new().unwrap();
    let body = CALIBRATE.replace(
        "points = [\n  { r = 1.0, R = 1.0, xi = 0.25, v = [0.0, 0.0, 0.0] },\n  { r = 1.0, R = 1.0, xi = 0.25, v = [0.0, 0.0, 0.5] },\n  { r = 0.5, R = 1.0, xi = 0.4, v = [0.0, 0.3, 0.0] },\n]",
        "points = []",
    );
    assert!(body.contains("points = []"));
    let cfg = write_config(d.path(), "empty.toml", &body);
    let o = run(&["calibrate"], &cfg, &d.path().join("out"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn calibrate_needs_a_seed() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "c.toml", &CALIBRATE.replace("seed = 5\n", ""));
    let o = run(&["calibrate"], &cfg, &d.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn verify_bkw_end_to_end() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "run.toml", MAXWELL);
    let out = d.path().join("out");
    assert_eq!(code(&run(&["certify"], &cfg, &out)), 0);
    let o = run(&["verify"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("domination.json")).unwrap()).unwrap();
    assert_eq!(r["pass"], true);
    assert_eq!(r["format_version"], 1);
    assert!(r["min_margin"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["points"], 2 * 16 * 16 * 16);
}

#[test]
fn verify_inflated_tight_certificate_fails() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "run.toml", MAXWELL);
    let out = d.path().join("out");
    assert_eq!(code(&run(&["certify"], &cfg, &out)), 0);
    // a certificate close to the solution: ρ′ = e^{−4}, θ′ = 1/2
    let mut c = Certificate::from_json(&std::fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    c.ln_rho_prime = Some(-4.0);
    c.rho_prime = Some((-4.0f64).exp());
    c.theta_prime = Some(0.5);
    std::fs::write(d.path().join("tight.json"), c.to_json()).unwrap();
    let base = MAXWELL.replace("[verify]\n", "[verify]\ncertificate = \"tight.json\"\n");
    let tight = write_config(d.path(), "tight.toml", &base);
    let o = run(&["verify"], &tight, &d.path().join("t"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let inflated = write_config(d.path(), "inflated.toml", &base.replace("v_max = 8.0\n", "v_max = 8.0\ninflate = 1e6\n"));
    let o = run(&["verify"], &inflated, &d.path().join("i"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("i/domination.json")).unwrap()).unwrap();
    assert_eq!(r["pass"], false);
}

#[test]
fn verify_missing_certificate_is_an_error() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "run.toml", &MAXWELL.replace("[verify]\n", "[verify]\ncertificate = \"nope.json\"\n"));
    let o = run(&["verify"], &cfg, &d.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn verify_against_the_solver() {
    let d = TempDir::new().unwrap();
    let body = MAXWELL.replace(
        "[verify]\nsource = \"bkw\"\ntimes = [0.5, 2.0]\ngrid_m = 16\n",
        "[verify]\nsource = \"solver\"\ntimes = [0.5, 1.0]\ngrid_m = 8\n",
    ) + "\n[verify.solver]\ndt = 0.1\nsamples_per_node = 64\nm = 24\nv_max = 6.0\n";
    let cfg = write_config(d.path(), "run.toml", &body);
    let out = d.path().join("out");
    assert_eq!(code(&run(&["certify"], &cfg, &out)), 0);
    let o = run(&["verify"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read(out.join("domination.json")).unwrap();
    assert_eq!(code(&run(&["verify"], &cfg, &out)), 0);
    assert_eq!(first, std::fs::read(out.join("domination.json")).unwrap());
}

#[test]
fn config_errors_name_the_field() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "bad.toml", &MAXWELL.replace("tau = 0.5", "tau = \"soon\""));
    let o = run(&["certify"], &cfg, &d.path().join("out"));
    assert_eq!(code(&o), 1);
    let msg = stderr(&o);
    assert!(msg.contains("tau") && msg.contains("line"), "{msg}");
    let typo = write_config(d.path(), "typo.toml", &MAXWELL.replace("[cascade]", "").replace("tau = 0.5", "tau = 0.5\ntua = 1"));
    assert_eq!(code(&run(&["certify"], &typo, &d.path().join("out"))), 1);
    let o = Command::new(BIN).args(["certify", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn infeasible_bounds_exit_two() {
    let d = TempDir::new().unwrap();
    // S(0) below N/(N+2)
    let cfg = write_config(d.path(), "s.toml", &MAXWELL.replace("s0 = 0.72", "s0 = 0.5"));
    assert_eq!(code(&run(&["certify"], &cfg, &d.path().join("out"))), 2);
    // BKW bounds need a Maxwell-molecule kernel
    let hs = write_config(d.path(), "hs.toml", &MAXWELL.replace("maxwell_molecules", "hard_spheres"));
    assert_eq!(code(&run(&["certify"], &hs, &d.path().join("out"))), 2);
}

#[test]
fn inspect_prints_the_certificate() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "run.toml", MAXWELL);
    let out = d.path().join("out");
    assert_eq!(code(&run(&["certify"], &cfg, &out)), 0);
    let a = Command::new(BIN).arg("inspect").arg(out.join("certificate.json")).output().unwrap();
    assert_eq!(code(&a), 0);
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.starts_with("maxwellian: ln rho' = "));
    assert!(text.contains("format_version 1"));
    let b = run(&["inspect"], &cfg, &out);
    assert_eq!(code(&b), 0);
    assert_eq!(a.stdout, Command::new(BIN).arg("inspect").arg(out.join("certificate.json")).output().unwrap().stdout);
    let missing = Command::new(BIN).args(["inspect", "/nonexistent.json"]).output().unwrap();
    assert_eq!(code(&missing), 1);
}
