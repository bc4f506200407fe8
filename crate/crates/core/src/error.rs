use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("point {point:?} is outside the domain of chart `{chart}`")]
    Domain { chart: String, point: Vec<f64> },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("finite-difference stencil left the domain of `{chart}` at {point:?} (step {step})")]
    Differentiation {
        chart: String,
        point: Vec<f64>,
        step: f64,
    },

    #[error("curve left the chart domain at u = {u} (point {point:?})")]
    ChartExit { u: f64, point: Vec<f64> },

    #[error("integrator failure at u = {u}: {reason}")]
    Integrator { u: f64, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("u = {u} is outside the evaluated range [{lo}, {hi}]")]
    Range { u: f64, lo: f64, hi: f64 },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
