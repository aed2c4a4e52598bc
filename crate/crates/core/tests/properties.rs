use bbpim_core::calibrate::synthetic_relation;
use bbpim_core::device::{Payload, PimRequest};
use bbpim_core::fabric::{AggOp, Crossbar, LogicOp};
use bbpim_core::ledger::LineClass;
use bbpim_core::microcode::{CmpOp, MicroProgram, Predicate, Step};
use bbpim_core::{AggEngine, CostParams, DeviceGeometry, ExecMode, LayoutMode, PimDevice, PlanPolicy, Query, Relation, Session};
use proptest::prelude::*;

const ROWS: usize = 128;
const COLS: usize = 24;

fn small() -> DeviceGeometry {
    DeviceGeometry { chips: 2, page_bytes: 64 * 512 / 8 * 4, rows: 64, cols: 512, line_bits: 64, capacity_bytes: 1 << 24 }
}

fn op_strategy() -> impl Strategy<Value = (LogicOp, Vec<usize>, usize)> {
    let ops = prop_oneof![
        Just(LogicOp::Nor),
        Just(LogicOp::Not),
        Just(LogicOp::Or),
        Just(LogicOp::And),
        Just(LogicOp::AndNot),
        Just(LogicOp::Xor),
        Just(LogicOp::Set0),
        Just(LogicOp::Set1),
    ];
    (ops, prop::collection::vec(0..COLS, 1..4), 0..COLS).prop_map(|(op, mut ins, out)| {
        match op {
            LogicOp::Not => ins.truncate(1),
            LogicOp::AndNot => ins.resize(2, (out + 1) % COLS),
            LogicOp::Or | LogicOp::And | LogicOp::Xor if ins.len() < 2 => ins.push((out + 2) % COLS),
            LogicOp::Set0 | LogicOp::Set1 => ins.clear(),
            _ => {}
        }
        // Native ops may not overwrite an input.
        if op.is_native() {
            ins.retain(|&c| c != out);
            if ins.is_empty() && !matches!(op, LogicOp::Set0 | LogicOp::Set1) {
                ins.push((out + 1) % COLS);
            }
        }
        (op, ins, out)
    })
}

fn reference(op: LogicOp, ins: &[bool]) -> bool {
    match op {
        LogicOp::Nor => !ins.iter().any(|&b| b),
        LogicOp::Not => !ins[0],
        LogicOp::Or => ins.iter().any(|&b| b),
        LogicOp::And => ins.iter().all(|&b| b),
        LogicOp::AndNot => ins[0] && !ins[1],
        LogicOp::Xor => ins.iter().filter(|&&b| b).count() % 2 == 1,
        LogicOp::Set0 => false,
        LogicOp::Set1 => true,
    }
}

fn relation_with(records: usize, seed: u64) -> Relation {
    synthetic_relation(records, seed)
}

fn grouped_query(rel: &Relation, bound: u32, g2_max: u64, agg: AggOp) -> Query {
    let c = &rel.catalog;
    Query {
        id: "p".into(),
        predicate: Predicate::And(vec![
            Predicate::Cmp { attr: c.index_of("u").unwrap(), op: CmpOp::Lt, value: bound as u64 },
            Predicate::Cmp { attr: c.index_of("g2").unwrap(), op: CmpOp::Le, value: g2_max },
        ]),
        agg,
        agg_attr: c.index_of("v16").unwrap(),
        group_by: vec![c.index_of("g1").unwrap()],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bulk_logic_matches_a_bit_model(
        seed in prop::collection::vec(any::<bool>(), ROWS * COLS),
        ops in prop::collection::vec(op_strategy(), 1..24),
    ) {
        let mut xb = Crossbar::new(ROWS, COLS);
        let mut model = vec![vec![false; COLS]; ROWS];
        for (r, row) in model.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = seed[r * COLS + c];
            }
            xb.write_row_bits(r, 0, row).unwrap();
        }
        for (op, ins, out) in &ops {
            xb.bulk_logic(*op, ins, *out).unwrap();
            for row in model.iter_mut() {
                let bits: Vec<bool> = ins.iter().map(|&c| row[c]).collect();
                row[*out] = reference(*op, &bits);
            }
        }
        for (r, row) in model.iter().enumerate() {
            for (c, &b) in row.iter().enumerate() {
                prop_assert_eq!(xb.get(r, c), b, "row {} col {}", r, c);
            }
        }
    }

    #[test]
    fn line_reads_leave_cells_and_wear_alone(rows in prop::collection::vec(0usize..64, 1..20), granule in 0usize..32) {
        let mut dev = PimDevice::new(small(), CostParams::default()).unwrap();
        let page = dev.allocate_pages(1).unwrap()[0];
        for x in 0..4 {
            let xb = dev.crossbar_mut(page, x).unwrap();
            for r in 0..64 {
                xb.write_value(r, granule * 16, 16, (r * 31 + x * 7) as u64).unwrap();
            }
            xb.reset_wear();
        }
        let before: Vec<Crossbar> = dev.crossbars(page).unwrap().to_vec();
        let lines = dev.host_read_lines(page, &rows, granule, LineClass::Data).unwrap();
        for (line, &r) in lines.iter().zip(&rows) {
            for (x, &g) in line.iter().enumerate() {
                prop_assert_eq!(g as usize, (r * 31 + x * 7) & 0xffff);
            }
        }
        for (a, b) in before.iter().zip(dev.crossbars(page).unwrap()) {
            prop_assert_eq!(a.write_counts(), b.write_counts());
            for c in 0..512 {
                prop_assert_eq!(a.column_words(c).unwrap(), b.column_words(c).unwrap());
            }
        }
    }

    #[test]
    fn ledger_energy_is_the_sum_of_its_events(ops in prop::collection::vec(1u64..6, 1..12)) {
        let mut dev = PimDevice::new(small(), CostParams::default()).unwrap();
        let page = dev.allocate_pages(1).unwrap()[0];
        for (i, cycles) in ops.iter().enumerate() {
            let prog = MicroProgram { steps: vec![Step { op: LogicOp::Not, inputs: vec![i % 8], out: 8 + i % 8 }], cycles: *cycles };
            dev.submit(PimRequest { page, payload: Payload::LogicSeq(prog) }).unwrap();
            dev.host_read_line(page, i, 0, LineClass::Data).unwrap();
        }
        let l = dev.ledger();
        let sum: f64 = l.events().iter().map(|e| e.energy(l.params())).sum();
        prop_assert!((sum - l.energy()).abs() <= 1e-12 * sum.abs());
        let logic_bits: u64 = ops.iter().sum::<u64>() * 64 * 4;
        let logic: f64 = l.events().iter().filter(|e| e.kind == bbpim_core::ledger::EventKind::LogicCycle).map(|e| e.scope).sum();
        prop_assert_eq!(logic, logic_bits as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn filter_bits_match_the_predicate(seed in 0u64..1000, bound in any::<u32>(), g2_max in 0u64..16, two in any::<bool>()) {
        let rel = relation_with(600, seed);
        let layout = if two { LayoutMode::TwoXb } else { LayoutMode::OneXb };
        let q = grouped_query(&rel, bound, g2_max, AggOp::Sum);
        let mut s = Session::new(&rel, layout, small(), CostParams::default()).unwrap();
        s.run_filter(&q).unwrap();
        let bits = s.filter_bits(&q).unwrap();
        for (j, &b) in bits.iter().enumerate() {
            let want = (rel.columns[0][j] < bound) && (rel.columns[2][j] as u64) <= g2_max;
            prop_assert_eq!(b, want, "record {}", j);
        }
    }

    #[test]
    fn aggregates_ignore_record_order(seed in 0u64..1000, bound in any::<u32>(), agg in prop_oneof![Just(AggOp::Sum), Just(AggOp::Min), Just(AggOp::Max)]) {
        let rel = relation_with(500, seed);
        let mut shuffled = rel.clone();
        let n = rel.columns[0].len();
        let perm: Vec<usize> = (0..n).map(|j| (j * 173 + seed as usize) % n).collect();
        prop_assume!({ let mut p = perm.clone(); p.sort_unstable(); p.dedup(); p.len() == n });
        for (col, src) in shuffled.columns.iter_mut().zip(&rel.columns) {
            *col = perm.iter().map(|&j| src[j]).collect();
        }
        let q = grouped_query(&rel, bound, 15, agg);
        let mut a = Session::new(&rel, LayoutMode::OneXb, small(), CostParams::default()).unwrap();
        let mut b = Session::new(&shuffled, LayoutMode::OneXb, small(), CostParams::default()).unwrap();
        for policy in [PlanPolicy::HostOnly, PlanPolicy::AllPim, PlanPolicy::Fixed(3)] {
            let ra = a.run_with(&q, &policy, AggEngine::Alu, None).unwrap();
            let rb = b.run_with(&q, &policy, AggEngine::Alu, None).unwrap();
            prop_assert_eq!(ra.groups, rb.groups);
        }
    }

    #[test]
    fn conditional_update_is_idempotent(seed in 0u64..1000, value in 0u64..16, key in 0u64..16) {
        let rel = relation_with(300, seed);
        let c = &rel.catalog;
        let (g1, g3) = (c.index_of("g1").unwrap(), c.index_of("g3").unwrap());
        let mut s = Session::new(&rel, LayoutMode::TwoXb, small(), CostParams::default()).unwrap();
        s.update_where(&Predicate::eq(g1, key), g3, value).unwrap();
        let once = s.column_values(g3).unwrap();
        let snapshot = s.device.clone();
        s.update_where(&Predicate::eq(g1, key), g3, value).unwrap();
        prop_assert_eq!(s.column_values(g3).unwrap(), once.clone());
        // The second pass rewrites nothing that the first had not already set.
        for (page, xbars) in (0..snapshot.page_count()).map(|p| (p, snapshot.crossbars(p).unwrap())) {
            for (x, xb) in xbars.iter().enumerate() {
                for col in 0..512 {
                    let after = s.device.crossbars(page).unwrap()[x].column_words(col).unwrap();
                    // Scratch columns may flip; data columns may not.
                    if col < 16 * 8 {
                        prop_assert_eq!(xb.column_words(col).unwrap(), after);
                    }
                }
            }
        }
        for (j, &v) in once.iter().enumerate() {
            let want = if rel.columns[g1][j] as u64 == key { value as u32 } else { rel.columns[g3][j] };
            prop_assert_eq!(v, want);
        }
    }
}

#[test]
fn repeated_runs_are_identical() {
    let rel = relation_with(2000, 3);
    let q = grouped_query(&rel, u32::MAX / 3, 11, AggOp::Max);
    let base = Session::new(&rel, LayoutMode::OneXb, small(), CostParams::default()).unwrap();
    for mode in [ExecMode::PimOnly, ExecMode::HostOnly] {
        let a = base.clone().run_query(&q, mode, None).unwrap();
        let b = base.clone().run_query(&q, mode, None).unwrap();
        assert_eq!(a, b);
    }
}
