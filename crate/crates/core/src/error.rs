use thiserror::Error;

/// Errors raised by the library. Runner-level failures carry the step index.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {x} outside the link domain [-1, 1]")]
    Domain { x: f64 },

    #[error("dimension {d} invalid: {reason}")]
    Dimension { d: usize, reason: &'static str },

    #[error("{name} = {value} outside {range}")]
    Range {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("vector norm {norm} is not 1 within tolerance")]
    Norm { norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schedule kind `{0}` has no closed-form rate; {1}")]
    UnsupportedSchedule(&'static str, &'static str),

    #[error("step {t} is past the end of the epoch plan ({horizon} steps)")]
    HorizonExceeded { t: u64, horizon: u64 },

    #[error("link derivative vanishes at m = {m}")]
    ZeroDerivative { m: f64 },

    #[error("integrand diverges: f'({m}) = 0 inside the integration range")]
    Divergence { m: f64 },

    #[error("link `{link}` does not satisfy the {regime} assumption")]
    RegimeMismatch { link: String, regime: &'static str },

    #[error("missing instrumentation: {0}")]
    MissingInstrumentation(&'static str),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("step {t}: {source}")]
    AtStep {
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_step(self, t: u64) -> Self {
        Error::AtStep {
            t,
            source: Box::new(self),
        }
    }
}
