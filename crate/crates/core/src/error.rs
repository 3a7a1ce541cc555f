use cia_grid::GridError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CiaError {
    #[error(transparent)]
    Grid(#[from] GridError),

    #[error("baseline power flow did not converge: {0}")]
    BaselineDiverged(String),

    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid search range: {0}")]
    InvalidRange(String),

    #[error("report decision is {0}, only rejected reports can be explained")]
    NotRejected(String),
}
