//! Bulk-bitwise processing-in-memory simulator with an OLAP query engine.
//!
//! A relation is laid out record-per-row across memristive crossbars. Filters
//! run as bulk bitwise microprograms inside the crossbars, and GROUP BY is
//! split between in-memory aggregation of the largest subgroups and a host
//! scan of the rest, guided by latency models fitted from calibration runs.

pub mod calibrate;
pub mod device;
pub mod engine;
pub mod error;
pub mod fabric;
pub mod layout;
pub mod ledger;
pub mod microcode;
pub mod planner;
pub mod query;
pub mod relation;
pub mod workload;

pub use device::{AggEngine, DeviceGeometry, PimDevice};
pub use engine::{ExecMode, PlanPolicy, QueryRun, Session};
pub use error::{Error, Result};
pub use layout::LayoutMode;
pub use ledger::{CostParams, CostReport};
pub use planner::ModelTables;
pub use query::Query;
pub use relation::Relation;
pub use workload::WorkloadConfig;
