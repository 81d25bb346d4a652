use std::fs;

use proptest::prelude::*;
use savflow::harness::Snapshot;
use savflow::integrator::StepRecord;
use savflow::io::{
    read_records_csv, read_snapshot, write_pgm, write_raw_snapshot, write_records_csv,
    write_snapshot, SNAPSHOT_HEADER_LEN,
};
use savflow::{Field, Grid};

fn record(step: usize, x: f64) -> StepRecord {
    StepRecord {
        step,
        t_np1: x * step as f64,
        dt_np1: x,
        gamma_np1: 1.0 + x,
        xi: 1.0 - x * x,
        r: 6.0 + x.sin(),
        energy: 1.0 / 3.0 + x,
        modified_energy: 40.0 + x.cos(),
        discrete_energy_h: 40.1 + x.exp(),
        newton_residual: 1e-17 * x,
        mass: -x * 1e-3,
        h2_seminorm: x.sqrt(),
    }
}

#[test]
fn snapshot_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::new(12, 8, 3.0, 5.0).unwrap();
    let field = Field::from_fn(grid.clone(), |x, y| {
        (x * 1.7).sin() * (y / 3.0).cos() + 1e-300
    });
    let path = tmp.path().join("a.raw");
    write_raw_snapshot(&path, &field, 0.1 + 0.2, 42).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), SNAPSHOT_HEADER_LEN + 8 * 96);
    assert_eq!(bytes[SNAPSHOT_HEADER_LEN - 1], b'\n');

    let (back, meta) = read_snapshot(&path, Some(&grid)).unwrap();
    assert_eq!(back.values(), field.values());
    assert_eq!((meta.nx, meta.ny, meta.step), (12, 8, 42));
    assert_eq!(meta.time, 0.1 + 0.2);

    let other = Grid::new(8, 12, 3.0, 5.0).unwrap();
    assert!(read_snapshot(&path, Some(&other)).is_err());
}

#[test]
fn truncated_snapshot_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::square_2pi(4).unwrap();
    let path = tmp.path().join("t.raw");
    write_raw_snapshot(&path, &Field::constant(grid, 0.5), 1.0, 1).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_snapshot(&path, None).is_err());
}

#[test]
fn snapshot_with_sidecar_keeps_domain() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::new(6, 6, 1.5, 2.5).unwrap();
    let snap = Snapshot {
        requested_time: 2.0,
        time: 1.999,
        step: 7,
        field: Field::from_fn(grid, |x, y| x + y),
    };
    let raw = write_snapshot(tmp.path(), "s", &snap).unwrap();
    let (back, _) = read_snapshot(&raw, None).unwrap();
    assert_eq!(back.grid().lx(), 1.5);
    assert_eq!(back.grid().ly(), 2.5);
    assert_eq!(back.values(), snap.field.values());
    assert!(tmp.path().join("s.pgm").exists());
}

#[test]
fn constant_field_pgm_is_black() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::square_2pi(6).unwrap();
    let path = tmp.path().join("c.pgm");
    let (lo, hi) = write_pgm(&path, &Field::constant(grid, 0.3)).unwrap();
    assert_eq!((lo, hi), (0.3, 0.3));
    let bytes = fs::read(&path).unwrap();
    let header = b"P5\n6 6\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 0));
    assert_eq!(bytes.len(), header.len() + 36);
}

#[test]
fn pgm_spans_full_range() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::square_2pi(8).unwrap();
    let path = tmp.path().join("r.pgm");
    let field = Field::from_fn(grid, |x, _| x);
    write_pgm(&path, &field).unwrap();
    let bytes = fs::read(&path).unwrap();
    let pixels = &bytes[bytes.len() - 64..];
    assert_eq!(*pixels.iter().min().unwrap(), 0);
    assert_eq!(*pixels.iter().max().unwrap(), 255);
}

#[test]
fn non_finite_records_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad = record(1, 0.1);
    bad.energy = f64::NAN;
    assert!(write_records_csv(&tmp.path().join("x.csv"), &[bad]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip(xs in proptest::collection::vec(1e-9f64..10.0, 1..20)) {
        let tmp = tempfile::tempdir().unwrap();
        let records: Vec<StepRecord> =
            xs.iter().enumerate().map(|(i, &x)| record(i + 1, x)).collect();
        let path = tmp.path().join("r.csv");
        write_records_csv(&path, &records).unwrap();
        let back = read_records_csv(&path).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(a.step, b.step);
            for (u, v) in [
                (a.t_np1, b.t_np1), (a.dt_np1, b.dt_np1), (a.gamma_np1, b.gamma_np1),
                (a.xi, b.xi), (a.r, b.r), (a.energy, b.energy),
                (a.modified_energy, b.modified_energy),
                (a.discrete_energy_h, b.discrete_energy_h),
                (a.newton_residual, b.newton_residual), (a.mass, b.mass),
                (a.h2_seminorm, b.h2_seminorm),
            ] {
                prop_assert!((u - v).abs() <= 1e-15 * v.abs());
            }
        }
    }

    #[test]
    fn snapshot_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 24), t in 0.0f64..1e3) {
        let tmp = tempfile::tempdir().unwrap();
        let grid = Grid::new(4, 6, 1.0, 1.0).unwrap();
        let field = Field::new(grid.clone(), values).unwrap();
        let path = tmp.path().join("p.raw");
        write_raw_snapshot(&path, &field, t, 3).unwrap();
        let (back, meta) = read_snapshot(&path, Some(&grid)).unwrap();
        prop_assert_eq!(back.values(), field.values());
        prop_assert_eq!(meta.time, t);
    }
}
