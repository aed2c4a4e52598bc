use std::hint::black_box;

use bbpim_core::fabric::{AggOp, AggSpec, Crossbar, LogicOp};
use criterion::{criterion_group, criterion_main, Criterion};

fn filled() -> Crossbar {
    let mut xb = Crossbar::default();
    for r in 0..xb.rows() {
        xb.write_value(r, 0, 32, (r as u64).wrapping_mul(0x9e37_79b9)).unwrap();
        xb.write_value(r, 32, 1, (r % 3 == 0) as u64).unwrap();
    }
    xb
}

fn bulk_logic(c: &mut Criterion) {
    let mut xb = filled();
    c.bench_function("nor_two_columns", |b| b.iter(|| xb.bulk_logic(LogicOp::Nor, black_box(&[0, 1]), 100).unwrap()));
    c.bench_function("xor_four_columns", |b| b.iter(|| xb.bulk_logic(LogicOp::Xor, black_box(&[0, 1, 2, 3]), 101).unwrap()));
}

fn aggregate(c: &mut Criterion) {
    let mut xb = filled();
    let spec = AggSpec::new(AggOp::Sum, 0, 32, 400, 32);
    c.bench_function("alu_sum_32bit", |b| b.iter(|| xb.aggregate(black_box(&spec)).unwrap()));
}

criterion_group!(benches, bulk_logic, aggregate);
criterion_main!(benches);
