use std::io;

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("pair token `{0}` does not match the session's outstanding pair")]
    StaleToken(String),

    #[error("demographics for session `{0}` are already set")]
    DemographicsSet(String),

    #[error("{0}")]
    Invalid(String),

    #[error("store is inconsistent: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Core(#[from] streetpulse::Error),
}

pub type Result<T, E = SurveyError> = std::result::Result<T, E>;
