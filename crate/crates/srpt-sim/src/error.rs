use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("covariance lost positive semidefiniteness: min eigenvalue {0}")]
    CovarianceNotPsd(f64),
    #[error("singular innovation covariance")]
    SingularInnovation,
    #[error("log too short: {got} samples, need at least {need}")]
    LogTooShort { got: usize, need: usize },
    #[error("vehicle left the track corridor at t={t:.3} s (|dY|={dy:.2} m)")]
    Diverged { t: f64, dy: f64 },
    #[error("task `{task}` failed at t={t:.3} s: {source}")]
    TaskFailed {
        task: &'static str,
        t: f64,
        #[source]
        source: Box<SimError>,
    },
    #[error("mixed seeds in mode comparison")]
    MixedSeeds,
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
