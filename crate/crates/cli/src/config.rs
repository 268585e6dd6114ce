//! The TOML run configuration.

use lbcert_core::cascade::CascadeConfig;
use lbcert_core::estimates::AprioriBounds;
use lbcert_core::geometry::SamplePoint;
use lbcert_core::kernel::{CollisionKernel, KernelSpec};
use lbcert_core::noncutoff::ScheduleConfig;
use lbcert_core::upheaval::{Constants, DeltaRule, Regime};
use lbcert_core::verifier::{bkw_bounds, BkwState};
use lbcert_core::{Error, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub regime: Regime,
    #[serde(default = "d_tau")]
    pub tau: f64,
    pub kernel: KernelBlock,
    #[serde(default)]
    pub bounds: Option<BoundsBlock>,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    /// Inline constants; overridden field by field by a calibration file.
    #[serde(default)]
    pub constants: Option<Constants>,
    /// Path of a calibration file written by `calibrate`.
    #[serde(default)]
    pub calibration: Option<String>,
    #[serde(default)]
    pub calibrate: CalibrateBlock,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
    #[serde(default)]
    pub outputs: Outputs,
}

fn d_tau() -> f64 {
    0.5
}

/// Either a named preset or a full kernel description.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KernelBlock {
    Preset(Preset),
    Spec(KernelSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    /// `hard_spheres`, `maxwell_molecules` or `inverse_power`.
    pub preset: String,
    #[serde(default = "d_dim")]
    pub dimension: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub b0: Option<f64>,
}

fn d_dim() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    /// `"bkw"` derives every bound from the BKW solution.
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub s0: Option<f64>,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default)]
    pub rho_min: Option<f64>,
    #[serde(rename = "E", default)]
    pub e: Option<f64>,
    #[serde(rename = "Eprime", default)]
    pub eprime: Option<f64>,
    #[serde(rename = "H", default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub lp_value: Option<f64>,
    #[serde(default)]
    pub p_exponent: Option<f64>,
    #[serde(rename = "W", default)]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBlock {
    #[serde(default = "d_id")]
    pub id: String,
    /// Explicit spreading plan; the 64-point default plan when absent.
    #[serde(default)]
    pub points: Option<Vec<SamplePoint>>,
    #[serde(default = "d_spread_samples")]
    pub spreading_samples: usize,
    /// Outer samples of the upheaval calibration; 0 skips it.
    #[serde(default = "d_outer")]
    pub upheaval_outer: usize,
    #[serde(default = "d_inner")]
    pub upheaval_inner: usize,
    #[serde(default = "d_true")]
    pub loss: bool,
}

impl Default for CalibrateBlock {
    fn default() -> Self {
        CalibrateBlock {
            id: d_id(),
            points: None,
            spreading_samples: d_spread_samples(),
            upheaval_outer: d_outer(),
            upheaval_inner: d_inner(),
            loss: true,
        }
    }
}

fn d_id() -> String {
    "default".into()
}
fn d_spread_samples() -> usize {
    20_000
}
fn d_outer() -> usize {
    20_000
}
fn d_inner() -> usize {
    50
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Bkw,
    Solver,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Certificate to check; the certify output in `--out` when absent.
    #[serde(default)]
    pub certificate: Option<String>,
    pub source: Source,
    #[serde(default = "d_s0")]
    pub s0: f64,
    pub times: Vec<f64>,
    #[serde(default = "d_m")]
    pub grid_m: usize,
    #[serde(default = "d_vmax")]
    pub v_max: f64,
    #[serde(default)]
    pub tolerance: f64,
    /// Multiply the certificate by this factor before checking.
    #[serde(default)]
    pub inflate: Option<f64>,
    #[serde(default)]
    pub solver: Option<SolverBlock>,
}

fn d_s0() -> f64 {
    0.72
}
fn d_m() -> usize {
    32
}
fn d_vmax() -> f64 {
    8.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    #[serde(default = "d_samples")]
    pub samples_per_node: usize,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_vmax")]
    pub v_max: f64,
}

fn d_samples() -> usize {
    256
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "d_cert")]
    pub certificate: String,
    #[serde(default = "d_trace")]
    pub trace: String,
    #[serde(default = "d_cal")]
    pub calibration: String,
    #[serde(default = "d_dom")]
    pub domination: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { certificate: d_cert(), trace: d_trace(), calibration: d_cal(), domination: d_dom() }
    }
}

fn d_cert() -> String {
    "certificate.json".into()
}
fn d_trace() -> String {
    "trace.csv".into()
}
fn d_cal() -> String {
    "calibration.json".into()
}
fn d_dom() -> String {
    "domination.json".into()
}

/// A parsed configuration and the directory relative paths resolve against.
pub struct Loaded {
    pub cfg: RunConfig,
    pub base: PathBuf,
}

pub fn load(path: &Path) -> std::result::Result<Loaded, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg = parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { cfg, base })
}

pub fn parse(text: &str) -> std::result::Result<RunConfig, toml::de::Error> {
    toml::from_str(text)
}

impl Loaded {
    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = PathBuf::from(p);
        if path.is_relative() {
            self.base.join(path)
        } else {
            path
        }
    }

    pub fn kernel(&self) -> Result<CollisionKernel> {
        match &self.cfg.kernel {
            KernelBlock::Spec(s) => CollisionKernel::from_spec(s, Some(&self.base)),
            KernelBlock::Preset(p) => match p.preset.as_str() {
                "hard_spheres" => Ok(CollisionKernel::hard_spheres(p.dimension)),
                "maxwell_molecules" => Ok(CollisionKernel::maxwell_molecules(p.dimension)),
                "inverse_power" => {
                    let (g, nu) = p.gamma.zip(p.nu).ok_or_else(|| Error::InvalidKernel("inverse_power needs gamma and nu".into()))?;
                    CollisionKernel::inverse_power(p.dimension, g, nu, p.b0.unwrap_or(1.0))
                }
                other => Err(Error::InvalidKernel(format!("unknown preset '{other}'"))),
            },
        }
    }

    pub fn bounds(&self, k: &CollisionKernel) -> Result<AprioriBounds> {
        let b = self.cfg.bounds.as_ref().ok_or_else(|| Error::InvalidBounds("missing [bounds] block".into()))?;
        let explicit = [b.rho_min, b.e, b.eprime, b.h, b.lp_value, b.p_exponent, b.w];
        match b.from.as_deref() {
            Some("bkw") => {
                if explicit.iter().any(Option::is_some) {
                    return Err(Error::InvalidBounds("from = \"bkw\" excludes explicit values".into()));
                }
                let st = BkwState::for_kernel(k, b.s0.unwrap_or(d_s0()))?;
                bkw_bounds(&st, b.t_start)
            }
            Some(other) => Err(Error::InvalidBounds(format!("unknown bounds source '{other}'"))),
            None => {
                let (rho, e) = b.rho_min.zip(b.e).ok_or_else(|| Error::InvalidBounds("need rho_min and E".into()))?;
                let mut out = AprioriBounds::new(rho, e);
                out.eprime = b.eprime.unwrap_or(0.0);
                out.h = b.h.unwrap_or(0.0);
                out.lp_value = b.lp_value;
                out.p_exponent = b.p_exponent;
                out.w = b.w;
                out.validate()?;
                Ok(out)
            }
        }
    }
}
