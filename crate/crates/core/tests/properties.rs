//! Property tests for the invariants that must hold on arbitrary valid
//! inputs: repair postconditions and idempotence, ports_within
//! monotonicity, and Gini bounds.

use proptest::prelude::*;

use tiacs_core::network::NodeId;
use tiacs_core::stations::{
    build_snapshot, ChargingStation, PortType, ProximityTable, StationId,
};
use tiacs_core::trajectory::{repair_stays, Stay, StayKind, Trajectory, WEEK_MINUTES};

/// Strictly increasing slots in 1..=1008 with the first stay at slot 1.
fn slots_strategy() -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::btree_set(2u32..=1008, 1..25)
        .prop_map(|set| std::iter::once(1).chain(set).collect())
}

fn travel_strategy(len: usize) -> impl Strategy<Value = Vec<i64>> {
    proptest::collection::vec(6i64..180, len)
}

/// Assemble a pre-repair trajectory from slots and travel times using the
/// slot-departure convention: a stay ends when the next stay's slot
/// starts, and starts at its own slot start plus inbound travel.
fn assemble(slots: &[u32], travel: &[i64]) -> Trajectory {
    let n = slots.len();
    let mut stays = Vec::with_capacity(n);
    for k in 0..n {
        let start = if k == 0 {
            0
        } else {
            10 * (slots[k] as i64 - 1) + travel[k - 1]
        };
        let end = if k + 1 < n {
            10 * (slots[k + 1] as i64 - 1)
        } else {
            WEEK_MINUTES
        };
        stays.push(Stay {
            start_min: start,
            end_min: end,
            kind: if k % 3 == 0 { StayKind::Home } else { StayKind::Other },
            node: NodeId(k as u64),
            lon: 0.0,
            lat: 0.0,
        });
    }
    Trajectory {
        person_id: "prop".into(),
        home: (0.0, 0.0),
        stays,
        travel_min: travel.to_vec(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn repair_satisfies_postconditions_and_is_idempotent(
        slots in slots_strategy(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let travel: Vec<i64> = (0..slots.len().saturating_sub(1))
            .map(|_| rng.gen_range(6..180))
            .collect();
        let t = assemble(&slots, &travel);

        let (fixed, report) = repair_stays(&t).unwrap();
        fixed.validate_repaired().unwrap();
        prop_assert_eq!(fixed.stays.len(), t.stays.len());
        for (a, b) in fixed.stays.iter().zip(&t.stays) {
            prop_assert_eq!(a.kind, b.kind);
            prop_assert_eq!(a.node, b.node);
        }
        prop_assert_eq!(
            report.deficient,
            report.resolved_by_donation + report.resolved_by_shortening
        );

        let (twice, second_report) = repair_stays(&fixed).unwrap();
        prop_assert_eq!(&twice, &fixed);
        prop_assert_eq!(second_report.deficient, 0);
    }
}

fn random_table_and_inventory(
    seed: u64,
) -> (ProximityTable, Vec<ChargingStation>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n_stations = rng.gen_range(1..25usize);
    let inventory: Vec<ChargingStation> = (0..n_stations)
        .map(|i| ChargingStation {
            id: StationId(format!("s{i:03}")),
            lon: 0.0,
            lat: 0.0,
            open_date: chrono::NaiveDate::from_ymd_opt(
                rng.gen_range(2012..2025),
                rng.gen_range(1..13),
                rng.gen_range(1..28),
            )
            .unwrap(),
            l2_ports: rng.gen_range(0..5),
            dcfc_ports: rng.gen_range(0..3),
            node: NodeId(0),
            snap_m: 0.0,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut text = String::from("stay_node,station_id,distance_m\n");
    for node in 0..5u64 {
        for s in &inventory {
            if rng.gen_bool(0.6) {
                let d: f64 = rng.gen_range(0.0..3000.0);
                text.push_str(&format!("{node},{},{d}\n", s.id));
            }
        }
    }
    std::fs::write(&path, text).unwrap();
    let table = ProximityTable::read_csv(&path, &inventory, 3000.0).unwrap();
    (table, inventory)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ports_within_is_monotone_in_distance_and_cutoff(
        seed in any::<u64>(),
        node in 0u64..6,
        d1 in 0.0f64..3000.0,
        d2 in 0.0f64..3000.0,
        y1 in 2012i32..2026,
        y2 in 2012i32..2026,
    ) {
        let (table, inventory) = random_table_and_inventory(seed);
        let (d_lo, d_hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (y_lo, y_hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let snap_lo = build_snapshot(&inventory, chrono::NaiveDate::from_ymd_opt(y_lo, 6, 30).unwrap());
        let snap_hi = build_snapshot(&inventory, chrono::NaiveDate::from_ymd_opt(y_hi, 6, 30).unwrap());
        for pt in PortType::ALL {
            let node = NodeId(node);
            let a = table.ports_within(&snap_lo, node, d_lo, pt).unwrap();
            let b = table.ports_within(&snap_lo, node, d_hi, pt).unwrap();
            let c = table.ports_within(&snap_hi, node, d_hi, pt).unwrap();
            prop_assert!(a <= b, "distance monotonicity: {a} > {b}");
            prop_assert!(b <= c, "cutoff monotonicity: {b} > {c}");
        }
    }

    #[test]
    fn gini_bounds_and_scale_invariance(
        values in proptest::collection::vec(0.0f64..1e6, 1..200),
        scale in 0.001f64..1e3,
    ) {
        let g = tiacs_core::stats::gini(&values).unwrap();
        prop_assert!((0.0..1.0).contains(&g), "gini {g} out of range");
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let gs = tiacs_core::stats::gini(&scaled).unwrap();
        prop_assert!((g - gs).abs() < 1e-9, "{g} vs {gs}");
    }
}
