use crate::config::{Loaded, Source};
use lbcert_core::cascade::{certify_cutoff, CutoffConfig};
use lbcert_core::certificate::{Certificate, CertificateKind, KernelSummary, FORMAT_VERSION};
use lbcert_core::estimates::calibrate_loss_cst;
use lbcert_core::geometry::{calibrate_spreading_cst, default_plan, SpreadingCalibration};
use lbcert_core::grid::GridDistribution;
use lbcert_core::kernel::CollisionKernel;
use lbcert_core::noncutoff::{certify_noncutoff, NoncutoffConfig};
use lbcert_core::upheaval::{calibrate_upheaval_cst, default_upheaval_fixtures, Constants, Regime, UpheavalCalibration};
use lbcert_core::verifier::{check_domination, solve_homogeneous, BkwState, SolverConfig, VelocityGrid};
use lbcert_core::Error;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Why a command stopped; each maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, I/O or internal error (exit 1).
    Error(String),
    /// The configuration cannot be certified (exit 2).
    Infeasible(String),
    /// A domination check failed (exit 3).
    Verification(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Error(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Verification(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Error(m) | Failure::Infeasible(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_infeasible() {
            Failure::Infeasible(e.to_string())
        } else {
            Failure::Error(e.to_string())
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

pub struct Ctx<'a> {
    pub loaded: &'a Loaded,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Ctx<'_> {
    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn write(&self, name: &str, body: &str) -> std::result::Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Failure::Error(format!("cannot create {}: {e}", self.out.display())))?;
        let p = self.out.join(name);
        std::fs::write(&p, body).map_err(|e| Failure::Error(format!("cannot write {}: {e}", p.display())))?;
        Ok(p)
    }

    fn seed(&self, what: &str) -> std::result::Result<u64, Failure> {
        self.seed
            .or(self.loaded.cfg.seed)
            .ok_or_else(|| Failure::Error(format!("{what} needs a seed (config `seed` or --seed)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCalibration {
    pub cst_cl: f64,
    pub fixtures: Vec<String>,
    pub probes: Vec<Vec<f64>>,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub format_version: u32,
    pub id: String,
    pub seed: u64,
    pub kernel: KernelSummary,
    /// Constants to certify with: the calibrated ones plus the configured rest.
    pub constants: Constants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spreading: Option<SpreadingCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upheaval: Option<UpheavalCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossCalibration>,
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Error(format!("cannot read {}: {e}", path.display())))
}

/// Configured constants, replaced by a calibration file when one is named.
fn constants(ctx: &Ctx) -> std::result::Result<(Constants, Vec<String>), Failure> {
    let cfg = &ctx.loaded.cfg;
    if let Some(p) = &cfg.calibration {
        let path = ctx.loaded.resolve(p);
        let cal: CalibrationFile = serde_json::from_str(&read(&path)?)
            .map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
        if cal.format_version != FORMAT_VERSION {
            return Err(Failure::Error(format!("{}: unsupported format_version {}", path.display(), cal.format_version)));
        }
        return Ok((cal.constants, vec![cal.id]));
    }
    let c = cfg
        .constants
        .ok_or_else(|| Failure::Error("no constants: give a [constants] block or a calibration file".into()))?;
    Ok((c, Vec::new()))
}

pub fn certify(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.loaded.cfg;
    let k = ctx.loaded.kernel()?;
    let b = ctx.loaded.bounds(&k)?;
    let (consts, ids) = constants(ctx)?;
    consts.validate()?;
    let (cert, csv) = match cfg.regime {
        Regime::Cutoff => {
            let c = CutoffConfig { cascade: cfg.cascade, constants: consts, delta_rule: cfg.delta_rule, calibration_ids: ids };
            let run = certify_cutoff(&k, &b, cfg.tau, &c)?;
            (run.certificate, run.trace.to_csv())
        }
        Regime::Noncutoff => {
            let c = NoncutoffConfig {
                schedule: cfg.schedule,
                xi: cfg.cascade.xi,
                xi_exponent_mode: cfg.cascade.xi_exponent_mode,
                constants: consts,
                calibration_ids: ids,
            };
            let run = certify_noncutoff(&k, &b, cfg.tau, &c)?;
            (run.certificate, run.trace.to_csv())
        }
    };
    let p = ctx.write(&cfg.outputs.certificate, &cert.to_json())?;
    ctx.write(&cfg.outputs.trace, &csv)?;
    ctx.say(&format!("certificate written to {}", p.display()));
    ctx.say(&summary(&cert));
    Ok(())
}

fn summary(c: &Certificate) -> String {
    let shape = match c.kind {
        CertificateKind::Maxwellian => format!(
            "maxwellian: ln rho' = {:e}, theta' = {:e}",
            c.ln_rho_prime.unwrap_or(f64::NAN),
            c.theta_prime.unwrap_or(f64::NAN)
        ),
        CertificateKind::StretchedExp => format!(
            "stretched exponential: ln C1 = {:e}, C2 = {:e}, K = {}",
            c.ln_c1.unwrap_or(f64::NAN),
            c.c2.unwrap_or(f64::NAN),
            c.k.unwrap_or(f64::NAN)
        ),
    };
    format!("{shape}; valid for t >= {} (N = {})", c.tau, c.dimension)
}

/// Maxwellian, indicator and mixture fixtures for the loss constant.
fn loss_fixtures(n: usize) -> (Vec<String>, Vec<GridDistribution>) {
    let (m, v) = (24, 6.0);
    let gauss = |x: &[f64], c: f64, t: f64| {
        let r2: f64 = x.iter().enumerate().map(|(i, y)| if i == 0 { (y - c).powi(2) } else { y * y }).sum();
        (2.0 * PI * t).powf(-(n as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
    };
    let names = vec!["maxwellian(T=1)".into(), "indicator(|v|<=1.5)".into(), "mixture(T=0.5 at 0 and 1.5 e1)".into()];
    let grids = vec![
        GridDistribution::from_fn(n, m, v, |x| gauss(x, 0.0, 1.0)),
        GridDistribution::from_fn(n, m, v, |x| if x.iter().map(|y| y * y).sum::<f64>() <= 2.25 { 1.0 } else { 0.0 }),
        GridDistribution::from_fn(n, m, v, |x| 0.5 * gauss(x, 0.0, 0.5) + 0.5 * gauss(x, 1.5, 0.5)),
    ];
    (names, grids)
}

pub fn calibrate(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.loaded.cfg;
    let plan = &cfg.calibrate;
    let seed = ctx.seed("calibrate")?;
    let k: CollisionKernel = ctx.loaded.kernel()?;
    let mut consts = cfg.constants.unwrap_or_else(Constants::unit);
    let points = plan.points.clone().unwrap_or_else(|| default_plan(k.dimension));
    let spreading = calibrate_spreading_cst(&k, &points, plan.spreading_samples, seed, cfg.cascade.xi_exponent_mode)?;
    consts.cst_spread = spreading.cst_spread;
    let cutoff = k.is_cutoff();
    let upheaval = if cutoff && plan.upheaval_outer > 0 {
        let u = calibrate_upheaval_cst(&k, &default_upheaval_fixtures(), &cfg.delta_rule, plan.upheaval_outer, plan.upheaval_inner, seed)?;
        consts.cst_up = u.cst_up;
        Some(u)
    } else {
        None
    };
    let loss = if cutoff && plan.loss {
        let (names, grids) = loss_fixtures(k.dimension);
        let probes: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&r| {
                let mut v = vec![0.0; k.dimension];
                v[0] = r;
                v
            })
            .collect();
        let (cst, ratios) = calibrate_loss_cst(&k, &grids, &probes)?;
        consts.cst_cl = cst;
        Some(LossCalibration { cst_cl: cst, fixtures: names, probes, ratios })
    } else {
        None
    };
    let file = CalibrationFile {
        format_version: FORMAT_VERSION,
        id: plan.id.clone(),
        seed,
        kernel: KernelSummary::from(&k),
        constants: consts,
        spreading: Some(spreading),
        upheaval,
        loss,
    };
    let body = serde_json::to_string_pretty(&file).expect("calibration serializes") + "\n";
    let p = ctx.write(&cfg.outputs.calibration, &body)?;
    ctx.say(&format!(
        "calibration '{}' written to {}: cst_spread = {:e}, cst_up = {:e}, cst_CL = {:e}",
        file.id,
        p.display(),
        consts.cst_spread,
        consts.cst_up,
        consts.cst_cl
    ));
    Ok(())
}

pub fn verify(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.loaded.cfg;
    let v = cfg.verify.as_ref().ok_or_else(|| Failure::Error("missing [verify] block".into()))?;
    let path = match &v.certificate {
        Some(p) => ctx.loaded.resolve(p),
        None => ctx.out.join(&cfg.outputs.certificate),
    };
    let mut cert = Certificate::from_json(&read(&path)?).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    if let Some(f) = v.inflate {
        cert = cert.inflated(f);
    }
    let k = ctx.loaded.kernel()?;
    let st = BkwState::for_kernel(&k, v.s0)?;
    let grid = VelocityGrid { dimension: cert.dimension, m: v.grid_m, v_max: v.v_max };
    let report = match v.source {
        Source::Bkw => check_domination(&cert, &st, &v.times, &grid, v.tolerance)?,
        Source::Solver => {
            let s = v.solver.as_ref().ok_or_else(|| Failure::Error("source = \"solver\" needs a [verify.solver] block".into()))?;
            let t_end = v.times.iter().cloned().fold(0.0, f64::max);
            let f0 = GridDistribution::from_fn(k.dimension, s.m, s.v_max, |x| st.eval(0.0, x));
            let sc = SolverConfig { dt: s.dt, t_end, samples_per_node: s.samples_per_node, seed: ctx.seed("the solver")? };
            let sol = solve_homogeneous(&k, &f0, &sc)?;
            ctx.say(&format!("solver: mass drift {:e}, clamped mass {:e}", sol.total_drift(), sol.total_clamped()));
            check_domination(&cert, &sol, &v.times, &grid, v.tolerance)?
        }
    };
    let p = ctx.write(&cfg.outputs.domination, &report.to_json())?;
    ctx.say(&format!(
        "domination report written to {}: min margin {:e} at t = {}, min log ratio {:e}",
        p.display(),
        report.min_margin,
        report.argmin_t,
        report.min_log_ratio
    ));
    if report.pass {
        ctx.say("PASS");
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "domination fails: margin {:e} below -{:e} at t = {}, v = {:?}",
            report.min_margin, report.tolerance, report.argmin_t, report.argmin_v
        )))
    }
}

pub fn inspect(path: &Path) -> Outcome {
    let cert = Certificate::from_json(&read(path)?).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    let p = &cert.provenance;
    println!("{}", summary(&cert));
    println!("format_version {}", cert.format_version);
    println!(
        "kernel: N = {}, gamma = {}, nu = {}, profile {}",
        p.kernel.dimension, p.kernel.gamma, p.kernel.nu, p.kernel.profile
    );
    println!(
        "bounds: rho_min = {}, E = {}, Eprime = {}, H = {}, W = {:?}",
        p.bounds.rho_min, p.bounds.e, p.bounds.eprime, p.bounds.h, p.bounds.w
    );
    println!(
        "constants: cst_spread = {:e}, cst_CL = {:e}, cst_up = {:e}, cst_eps = {:e}",
        p.cst_spread, p.cst_cl, p.cst_up, p.cst_eps
    );
    println!("ln alpha = {:e}, c_delta = {:e}, ln C_e = {:e}, shrink = {}", p.ln_alpha, p.c_delta, p.ln_ce, p.domination_shrink);
    println!("delta0 rule: {}; xi = {}, n_max = {}", p.delta0_rule, p.xi, p.n_max);
    if !p.branch_flags.is_empty() {
        println!("flags: {}", p.branch_flags.join(", "));
    }
    if !p.calibration_ids.is_empty() {
        println!("calibrations: {}", p.calibration_ids.join(", "));
    }
    for n in &p.notes {
        println!("note: {n}");
    }
    Ok(())
}
