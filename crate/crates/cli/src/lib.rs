//! Driver for data generation, calibration and benchmark runs.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{RunConfig, UsageError};
pub use report::{Report, ReportRow};

use bbpim_core::Error;

/// Process exit code for an error: 1 for problems with inputs or
/// configuration, 2 for internal failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Parse { .. }
                | Error::Literal { .. }
                | Error::UnknownAttribute(_)
                | Error::UnknownTemplate(_)
                | Error::Workload(_)
                | Error::Io { .. }
                | Error::Manifest(_)
                | Error::Format(_)
                | Error::Overflow(_)
                | Error::CapacityExceeded { .. }
                | Error::UnfittedModels
                | Error::MissingModelEntry(_)
                | Error::RankDeficient(_)
                | Error::Unsupported(_)
                | Error::ImmediateWidth { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}
