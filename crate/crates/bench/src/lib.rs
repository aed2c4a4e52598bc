//! Shared inputs for the benchmarks in `benches/`.

use bbpim_core::workload::{instantiate_all, TemplateInstance};
use bbpim_core::{Relation, WorkloadConfig};

/// A small generated relation with its tuned query suite.
pub fn suite(scale_factor: f64) -> (Relation, Vec<TemplateInstance>) {
    let cfg = WorkloadConfig { scale_factor, tune_records: 1 << 14, ..WorkloadConfig::default() };
    let rel = bbpim_core::workload::generate(&cfg).expect("workload config is valid");
    let instances = instantiate_all(&rel, &cfg).expect("templates instantiate");
    (rel, instances)
}
