use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("z = {z:.6e} m outside the axial domain [{lo:.6e}, {hi:.6e}] m")]
    Domain { z: f64, lo: f64, hi: f64 },

    #[error("series truncation bound {bound:.3e} exceeds tolerance {tolerance:.3e} for derivative order {order}")]
    Truncation { order: usize, bound: f64, tolerance: f64 },

    #[error("basis table ingestion failed at row {row}, column '{column}': {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{rows} constraint rows exceed the {electrodes} available electrodes")]
    InfeasibleSpec { rows: usize, electrodes: usize },

    #[error("constraint matrix is rank deficient (sigma_min/sigma_max = {ratio:.3e}); dependent row combination {combination:?}")]
    RankDeficient { ratio: f64, combination: Vec<f64> },

    #[error("well characterization failed: {message}")]
    Characterization { message: String, scan: Vec<(f64, f64)> },

    #[error("particles closer than {min_separation:.3e} m at t = {t:.6e} s")]
    Collision { t: f64, min_separation: f64 },

    #[error("particle left its trapping region: {0}")]
    Untrapped(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("analysis pipeline failed at stage '{stage}': {message}")]
    Pipeline { stage: String, message: String },

    #[error("sweep waypoint {index} failed: {source}")]
    Waypoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that are physical outcomes of a single trajectory
    /// (escape or collision) rather than bugs or bad input.
    pub fn is_trajectory_failure(&self) -> bool {
        matches!(self, Error::Collision { .. } | Error::Untrapped(_))
    }
}
