use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure surfaces of the
/// individual pipelines so that callers (and the CLI) can report them
/// without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("evaluation point coincides with a primary (r{primary} = {distance:.3e})")]
    Singularity { primary: u8, distance: f64 },

    #[error("collision guard crossed at t = {t:.6} (distance {distance:.3e} to P{primary})")]
    Collision { t: f64, primary: u8, distance: f64 },

    #[error("integration step failure: {0}")]
    StepFailure(String),

    #[error("energy drift {drift:.3e} exceeded budget {budget:.3e} at t = {t:.6}")]
    EnergyDriftExceeded { t: f64, drift: f64, budget: f64 },

    #[error("polar angle undefined at r = 0")]
    UndefinedAngle,

    #[error("no admissible osculating ellipse for (r0, rdot0, e0) = ({r0}, {rdot0}, {e0})")]
    NoAdmissibleEllipse { r0: f64, rdot0: f64, e0: f64 },

    #[error("both ellipse roots admissible (p = {p_low:.6e}, {p_high:.6e}); a selector is required")]
    AmbiguousEllipse { p_low: f64, p_high: f64 },

    #[error("section rate not positive for any admissible ellipse at r0 = {r0}")]
    NonPositiveSectionRate { r0: f64 },

    #[error("osculating conic is not an ellipse (e = {e:.6})")]
    HyperbolicOsculation { e: f64 },

    #[error("state not on the energy surface with positive section rate (v_tan^2 = {vt2:.3e})")]
    NotOnEnergySurface { vt2: f64 },

    #[error("linearization at L1 is not of saddle-center type: {0}")]
    SpectrumMismatch(String),

    #[error("differential correction did not converge after {iterations} iterations (|dvx| = {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("correction system near-singular (denominator {denominator:.3e})")]
    SingularCorrection { denominator: f64 },

    #[error("requested energy {requested:.12} outside the validated band ({low:.12}, {high:.12})")]
    OutOfRange { requested: f64, low: f64, high: f64 },

    #[error("manifold branch leaves toward the wrong region for both displacement signs")]
    WrongBranch,

    #[error("orbit is not hyperbolic (|lambda| = {lambda:.6})")]
    NonHyperbolic { lambda: f64 },

    #[error("cut index {index} not reached: {reason}")]
    CutNotReached { index: usize, reason: String },

    #[error("manifold cut at theta0 = {theta0:.6}, index {index} is not a closed curve: {reason}")]
    CutNotClosed {
        theta0: f64,
        index: usize,
        reason: String,
    },

    #[error("state is not on the block boundary (x = {x:.12}, planes a = {a:.12}, b = {b:.12})")]
    NotOnBoundary { x: f64, a: f64, b: f64 },

    #[error("block [{a:.6}, {b:.6}] is not isolating at H = {h:.9}: {reason}")]
    NotIsolating { a: f64, b: f64, h: f64, reason: String },

    #[error("no admissible radius: energy never enters the band for the given (rdot0, e0)")]
    EmptyRange,

    #[error("bracket endpoints do not classify differently")]
    BracketInvalid,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
