use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("grid mismatch between fields")]
    GridMismatch,
    #[error("metric is not positive definite at node ({i}, {j}) = ({x:.6}, {y:.6})")]
    DegenerateMetric { i: usize, j: usize, x: f64, y: f64 },
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdent { offset: usize, name: String },
    #[error("seed system singular at degree {degree} (pivot {pivot:.3e})")]
    SingularSeed { degree: usize, pivot: f64 },
    #[error("unstable Taylor extraction (condition estimate {0:.3e})")]
    UnstableTaylor(f64),
    #[error("unsupported topology: {0}")]
    Topology(String),
    #[error("zero curves cross at {angle:.4} rad, below the transversality minimum {min:.4}")]
    Transversality { angle: f64, min: f64 },
    #[error("degenerate sector cone")]
    DegenerateCone,
    #[error("k-bar falls to {min:.4} at ({x:.4}, {y:.4}); epsilon too large")]
    KBar { min: f64, x: f64, y: f64 },
    #[error("smoothing parameter mu = {0} must be at least 1")]
    Mu(f64),
    #[error("unsupported extension domain: {0}")]
    Domain(String),
    #[error("field does not vanish fast enough at r = 0 (inner ring carries {0:.1}% of the norm)")]
    InsufficientVanishing(f64),
    #[error("norm ratio undefined for the zero field")]
    ZeroField,
    #[error("linear solver failed, relative residual {0:.3e}")]
    LinearSolver(f64),
    #[error("CFL violated: dy = {dy:.3e} exceeds {limit:.3e}")]
    Cfl { dy: f64, limit: f64 },
    #[error("marching unstable at layer {0}")]
    Unstable(usize),
    #[error("Levi condition fails: C / |K_theta| is unbounded")]
    Levi,
    #[error("Cauchy jet blows up at order {0}")]
    JetBlowUp(usize),
    #[error("gradient bound |grad z| < 1 violated at {count} nodes (max {max:.4})")]
    Gradient { count: usize, max: f64 },
    #[error("metric is not flat: loop defect {0:.3e}")]
    NotFlat(f64),
    #[error("iteration inconsistency: {0}")]
    Consistency(String),
    #[error("division guard tripped: |S' a22| = {0:.3e}")]
    Guard(f64),
    #[error("patch failure on interface {curve}: jump {jump:.3e} exceeds {tol:.3e}")]
    Patch { curve: String, jump: f64, tol: f64 },
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Syntax { .. } | Error::UnknownIdent { .. } => 2,
            Error::Topology(_) | Error::Transversality { .. } | Error::DegenerateCone => 3,
            Error::Patch { .. } => 5,
            _ => 4,
        }
    }

    pub fn at_stage(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}
