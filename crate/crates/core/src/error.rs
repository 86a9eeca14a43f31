use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coefficient `{name}` is not finite at t={t}: {detail}")]
    Coefficient {
        name: &'static str,
        t: f64,
        detail: String,
    },

    #[error("policy specification: {0}")]
    PolicySpec(String),

    #[error("entropy evaluation: {0}")]
    Entropy(String),

    #[error("invalid Lévy measure specification: {0}")]
    LevySpec(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state diverged at step {step} (t={t}, |x|={norm:e})")]
    Divergence { step: usize, t: f64, norm: f64 },

    #[error("log-density undefined on interval {interval}: density vanishes at action {action}")]
    LogDensity { interval: usize, action: f64 },

    #[error("TD(0) diverged at episode {episode}: |theta|={norm:e}")]
    LearningDivergence { episode: usize, norm: f64 },

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    /// Errors that stem from numerics rather than from the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Coefficient { .. }
                | Error::Entropy(_)
                | Error::Numerical(_)
                | Error::Divergence { .. }
                | Error::LogDensity { .. }
                | Error::LearningDivergence { .. }
        )
    }
}

/// Rejects non-finite vectors, tagging the error with the coefficient name.
pub(crate) fn check_finite(name: &'static str, t: f64, values: &[f64]) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Coefficient {
            name,
            t,
            detail: format!("component {i} = {v}"),
        });
    }
    Ok(())
}
