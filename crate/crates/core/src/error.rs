use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid exponent p = {0}; expected 1 <= p <= infinity")]
    InvalidExponent(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("potential has {0} negative eigenvalues; exactly one is required")]
    BoundStateCount(usize),
    #[error("could not tune the well depth: {0}")]
    DepthTuning(String),
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("energy {energy} lies within {distance:e} of the continuous spectrum")]
    EnergyInSpectrum { energy: f64, distance: f64 },
    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("branch solve diverged at |a| = {amplitude:e}: {reason}")]
    BranchDiverged { amplitude: f64, reason: String },
    #[error("need at least {needed} samples spanning one decade, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),
    #[error("ground state lies (numerically) in the modulation subspace: det = {0:e}")]
    GroundStateInSubspace(f64),
    #[error("modulation pairing degenerate: {0:e} < 1/4")]
    DegeneratePairing(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("evolution blew up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },
    #[error("no clean fitting window: {0}")]
    WindowNotFound(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("Fourier transform of {0} does not have a finite L1 norm")]
    InfiniteFourierNorm(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
