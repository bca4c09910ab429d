use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mcpl_core::medium::AirMedium;
use mcpl_core::nonlinear::{CarrierChannel, CarrierSet, ObsPoint, VolumeTruncation};
use mcpl_core::signal::{synthesize, FactorMode};
use mcpl_core::szc::{acc_solve, TransferMatrix, DEFAULT_REGULARIZATION};
use mcpl_core::ultrasound::{king_pressure, rim_pressure, FieldPoint, KingOptions, PistonSource};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn ultrasound(c: &mut Criterion) {
    let s = PistonSource::default();
    let m = AirMedium::paper_default();
    let p = FieldPoint::new(0.3, 1.2);
    c.bench_function("rim_pressure 80 kHz", |b| b.iter(|| rim_pressure(&s, &m, black_box(80e3), p).unwrap()));
    c.bench_function("king_pressure 80 kHz", |b| {
        b.iter(|| king_pressure(&s, &m, black_box(80e3), p, KingOptions::default()).unwrap())
    });
    let ch = CarrierChannel::new(40e3, 1e3).unwrap();
    c.bench_function("volume truncation 40 kHz", |b| {
        b.iter(|| VolumeTruncation::auto(&s, &m, black_box(&ch)).unwrap())
    });
}

fn zone_control(c: &mut Criterion) {
    let carriers = [40e3, 80e3, 120e3, 160e3];
    let matrix = |rows: usize, seed: f64| TransferMatrix {
        points: (0..rows).map(|i| ObsPoint::new(0.0, 1.0 + i as f64)).collect(),
        carriers: carriers.to_vec(),
        matrix: DMatrix::from_fn(rows, 4, |i, j| {
            let t = seed + i as f64 * 0.37 + j as f64 * 1.3;
            Complex64::new(t.sin(), (1.7 * t).cos())
        }),
    };
    let (hb, hd) = (matrix(100, 0.1), matrix(1350, 2.0));
    c.bench_function("acc_solve 4 carriers", |b| {
        b.iter(|| acc_solve(black_box(&hb), black_box(&hd), DEFAULT_REGULARIZATION).unwrap())
    });
}

fn drive_signal(c: &mut Criterion) {
    let set = CarrierSet::new(&[40e3, 80e3, 120e3, 160e3], 1e3).unwrap();
    let w = [Complex64::new(1.0, 0.0), Complex64::new(-0.5, 0.2), Complex64::new(0.1, 0.9), Complex64::new(0.3, -0.3)];
    c.bench_function("synthesize 4 carriers 10 ms", |b| {
        b.iter(|| synthesize(&set, black_box(&w), 400e3, 0.01, FactorMode::Canonical).unwrap())
    });
}

criterion_group!(benches, ultrasound, zone_control, drive_signal);
criterion_main!(benches);
