use thiserror::Error;

/// Failures raised by the certificate engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("angular kernel is not integrable: nu = {nu} must be negative for this quantity")]
    NonIntegrableAngular { nu: f64 },
    #[error("quadrature did not reach tolerance: estimate {estimate:e}, error estimate {error:e}")]
    QuadratureFailure { estimate: f64, error: f64 },
    #[error(
        "angular profile infimum on [pi/4, 3pi/4] is not positive (certified bound {bound:e})"
    )]
    NonPositiveInfimum { bound: f64 },
    #[error("splitting parameter eps = {eps} outside (0, pi/4)")]
    InvalidEps { eps: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("an L^p bound with p > {threshold} is required for this kernel")]
    MissingLpBound { threshold: f64 },
    #[error("a W^(2,inf) bound is required for non-cutoff kernels")]
    MissingWBound,
    #[error("invalid a priori bounds: {0}")]
    InvalidBounds(String),
    #[error("Monte Carlo standard error {rel_se:.3e} exceeds 5% of the estimate")]
    InsufficientSamples { rel_se: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("empty integration domain")]
    EmptyIntegrationDomain,
    #[error("degenerate calibration sample: {0}")]
    DegenerateSample(String),
    #[error("no admissible splitting parameter satisfies C_f m_bR(eps) <= eta/4")]
    NoAdmissibleEps,
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error("degenerate envelope: {0}")]
    DegenerateEnvelope(String),
    #[error("cascade fails a_n >= alpha^(2^n) at n = {n}")]
    NonContraction { n: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("kappa = {kappa} does not exceed the threshold 2 + 2nu/(2-nu) = {threshold} (K must exceed 2 log(2 + 2nu/(2-nu))/log 2)")]
    InvalidKappa { kappa: f64, threshold: f64 },
    #[error("BKW shape parameter S = {s} below N/(N+2) = {min}")]
    InvalidS { s: f64, min: f64 },
    #[error("unstable step {step}: relative mass drift {drift:e} exceeds 1e-3")]
    UnstableStep { step: usize, drift: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl Error {
    /// True when the error means the requested configuration cannot be certified,
    /// as opposed to a numerical or internal failure.
    pub fn is_infeasible(&self) -> bool {
        !matches!(
            self,
            Error::QuadratureFailure { .. }
                | Error::InsufficientSamples { .. }
                | Error::UnstableStep { .. }
                | Error::NonContraction { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
