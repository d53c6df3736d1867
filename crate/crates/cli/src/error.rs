use thiserror::Error;
use wsod_core::clustering::ClusterError;
use wsod_core::evaluation::EvalError;
use wsod_core::loss::LossError;
use wsod_core::loss_check::FixtureError;
use wsod_core::mining::MiningError;
use wsod_core::refinement::RefinementError;
use wsod_core::sim_detector::OracleError;
use wsod_core::{GeometryError, VocError};

/// Bad input supplied by the user, as opposed to a failure of the tool itself.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DataError(String);

impl DataError {
    pub fn new(message: impl Into<String>) -> Self {
        Self(message.into())
    }
}

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_DATA: u8 = 2;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    let data = err.chain().any(|e| {
        e.is::<DataError>()
            || e.is::<VocError>()
            || e.is::<GeometryError>()
            || e.is::<EvalError>()
            || e.is::<MiningError>()
            || e.is::<RefinementError>()
            || e.is::<ClusterError>()
            || e.is::<OracleError>()
            || e.is::<LossError>()
            || e.is::<FixtureError>()
    });
    if data {
        EXIT_DATA
    } else {
        EXIT_INTERNAL
    }
}
