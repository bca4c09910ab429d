use mcpl_core::medium::AirMedium;
use mcpl_core::nonlinear::{
    audio_transfer_on_grid, transfer_on_points, CarrierChannel, ObsPoint, QuadSpec, VirtualSourceGrid,
    VolumeTruncation,
};
use mcpl_core::ultrasound::{king_pressure, rim_pressure, FieldPoint, KingOptions, PistonSource};
use num_complex::Complex64;
use proptest::prelude::*;

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn king_matches_rim(f in 30e3f64..170e3, rho in 0.0f64..1.2, z in 0.02f64..8.0) {
        let s = PistonSource::default();
        let m = AirMedium::paper_default();
        let p = FieldPoint::new(rho, z);
        let king = king_pressure(&s, &m, f, p, KingOptions::default()).unwrap();
        let rim = rim_pressure(&s, &m, f, p).unwrap();
        prop_assert!(rel(king, rim) < 1e-4, "f {f} rho {rho} z {z}: {king} vs {rim}");
    }
}

struct Setup {
    source: PistonSource,
    medium: AirMedium,
    channel: CarrierChannel,
}

fn setup(fc: f64, fa: f64) -> Setup {
    Setup {
        source: PistonSource::default(),
        medium: AirMedium::paper_default(),
        channel: CarrierChannel::new(fc, fa).unwrap(),
    }
}

fn transfer(s: &Setup, trunc: VolumeTruncation, quad: &QuadSpec, points: &[ObsPoint]) -> Vec<Complex64> {
    let vs = VirtualSourceGrid::build(&s.source, &s.medium, &s.channel, trunc, quad).unwrap();
    assert!(vs.warnings().is_empty(), "{:?}", vs.warnings());
    transfer_on_points(&vs, &s.medium, points, quad).unwrap()
}

fn probes() -> Vec<ObsPoint> {
    vec![
        ObsPoint::new(0.0, 0.3),
        ObsPoint::new(0.0, 1.0),
        ObsPoint::new(0.0, 4.0),
        ObsPoint::new(0.15, 0.6),
        ObsPoint::new(-0.6, 2.5),
    ]
}

#[test]
fn halving_every_spacing_changes_little() {
    let s = setup(40e3, 1e3);
    let trunc = VolumeTruncation::auto(&s.source, &s.medium, &s.channel).unwrap();
    let q = QuadSpec::default();
    let a = transfer(&s, trunc, &q, &probes());
    let b = transfer(&s, trunc, &q.refined(), &probes());
    for (x, y) in a.iter().zip(&b) {
        assert!(rel(*x, *y) < QuadSpec::SELF_CONVERGENCE_TOL, "{x} vs {y}");
    }
}

#[test]
fn truncated_volume_is_large_enough() {
    let s = setup(40e3, 1e3);
    let t = VolumeTruncation::auto(&s.source, &s.medium, &s.channel).unwrap();
    let wide = VolumeTruncation::new(1.5 * t.z_max, 1.5 * t.rho_max).unwrap();
    let q = QuadSpec::default();
    let a = transfer(&s, t, &q, &probes());
    let b = transfer(&s, wide, &q, &probes());
    for (x, y) in a.iter().zip(&b) {
        assert!(rel(*x, *y) < 1e-2, "{x} vs {y}");
    }
}

#[test]
fn spectral_and_direct_routes_agree() {
    let s = setup(40e3, 2e3);
    let t = VolumeTruncation::auto(&s.source, &s.medium, &s.channel).unwrap();
    let q = QuadSpec::default();
    let vs = VirtualSourceGrid::build(&s.source, &s.medium, &s.channel, t, &q).unwrap();
    let pts = [ObsPoint::new(0.0, 0.8), ObsPoint::new(0.4, 1.7), ObsPoint::new(0.9, 5.0)];
    let spectral = transfer_on_points(&vs, &s.medium, &pts, &q).unwrap();
    for (p, h) in pts.iter().zip(&spectral) {
        let direct = audio_transfer_on_grid(&vs, &s.medium, *p).unwrap();
        assert!(rel(*h, direct) < 1e-3, "{p:?}: {h} vs {direct}");
    }
}

#[test]
fn higher_carriers_deliver_less_far_away() {
    let far = [ObsPoint::new(0.0, 4.0)];
    let q = QuadSpec::default();
    let level = |fc| {
        let s = setup(fc, 1e3);
        let t = VolumeTruncation::auto(&s.source, &s.medium, &s.channel).unwrap();
        transfer(&s, t, &q, &far)[0].norm()
    };
    let (h40, h120) = (level(40e3), level(120e3));
    assert!(h120 < h40, "|H| at 4 m: {h120} (120 kHz) vs {h40} (40 kHz)");
}

#[test]
fn lossless_audio_stays_finite_and_agrees_with_direct() {
    let mut s = setup(40e3, 1e3);
    s.medium.lossless_audio = true;
    let t = VolumeTruncation::auto(&s.source, &s.medium, &s.channel).unwrap();
    let q = QuadSpec::default();
    let vs = VirtualSourceGrid::build(&s.source, &s.medium, &s.channel, t, &q).unwrap();
    let pts = [ObsPoint::new(0.0, 0.8), ObsPoint::new(0.4, 1.7), ObsPoint::new(0.9, 5.0)];
    let spectral = transfer_on_points(&vs, &s.medium, &pts, &q).unwrap();
    for (p, h) in pts.iter().zip(&spectral) {
        assert!(h.re.is_finite() && h.im.is_finite(), "{p:?}: {h}");
        let direct = audio_transfer_on_grid(&vs, &s.medium, *p).unwrap();
        assert!(rel(*h, direct) < 1e-3, "{p:?}: {h} vs {direct}");
    }
}
