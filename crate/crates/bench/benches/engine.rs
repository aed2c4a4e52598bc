use std::hint::black_box;

use bbpim_bench::suite;
use bbpim_core::planner::{plan_groupby, HostFit, PimFit};
use bbpim_core::{CostParams, DeviceGeometry, ExecMode, LayoutMode, Session};
use criterion::{criterion_group, criterion_main, Criterion};

fn queries(c: &mut Criterion) {
    let (rel, instances) = suite(0.001);
    let mut group = c.benchmark_group("query");
    group.sample_size(10);
    for layout in [LayoutMode::OneXb, LayoutMode::TwoXb] {
        let base = Session::new(&rel, layout, DeviceGeometry::default(), CostParams::default()).unwrap();
        for id in ["Q1.1", "Q3.2"] {
            let q = &instances.iter().find(|i| i.query.id == id).unwrap().query;
            for mode in [ExecMode::HostOnly, ExecMode::PimOnly] {
                let name = format!("{}/{}/{}", layout.name(), id, mode.name());
                group.bench_function(name, |b| b.iter(|| base.clone().run_query(q, mode, None).unwrap()));
            }
            let name = format!("{}/{}/filter", layout.name(), id);
            let mut s = base.clone();
            group.bench_function(name, |b| b.iter(|| s.run_filter(q).unwrap()));
        }
    }
    group.finish();
}

fn planner(c: &mut Criterion) {
    let host = HostFit { a: 6e5, b: 4e4, r2: 1.0 };
    let pim = PimFit { slope: 110.0, intercept: 3.3e4, r2: 1.0 };
    let r: Vec<f64> = (0..=800).map(|k| 0.01 * (1.0 - k as f64 / 800.0).powi(2)).collect();
    c.bench_function("plan_800_subgroups", |b| b.iter(|| plan_groupby(&host, &pim, 4.0, 3, 1, black_box(&r)).unwrap()));
}

criterion_group!(benches, queries, planner);
criterion_main!(benches);
