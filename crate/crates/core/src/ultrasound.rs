//! Linear ultrasound radiated by a baffled circular piston.
//!
//! Three evaluation routes share the same physical model, the Rayleigh
//! integral `p = -(i ω ρ0 v0 / 2π) ∬ exp(i k d)/d dS` with complex `k`:
//!
//! * [`rayleigh_pressure`] integrates over the disc directly with a polar
//!   tensor Gauss–Legendre rule and refines until two levels agree;
//! * [`king_pressure`] uses the axisymmetric spectral (King) representation
//!   `p = ω ρ0 v0 a ∫ J1(μa) J0(μρ) exp(i k_z z)/k_z dμ`;
//! * [`rim_pressure`] integrates the radial direction in closed form about
//!   the foot of the field point, leaving a smooth integral along the rim.
//!   It is exact, cheap, and the default for dense grid sampling.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{AirMedium, ComplexWavenumber};
use crate::quad::{rule, uniform_breaks};
use crate::special::{j0, j1};

/// Baffled circular emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PistonSource {
    /// m
    pub radius: f64,
    /// m/s
    pub surface_velocity: f64,
}

impl Default for PistonSource {
    fn default() -> Self {
        Self {
            radius: 0.1,
            surface_velocity: 1.0,
        }
    }
}

impl PistonSource {
    pub fn new(radius: f64, surface_velocity: f64) -> Result<Self> {
        let s = Self {
            radius,
            surface_velocity,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidParameter(format!("piston radius must be positive, got {}", self.radius)));
        }
        if !(self.surface_velocity.is_finite() && self.surface_velocity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "surface velocity must be positive, got {}",
                self.surface_velocity
            )));
        }
        Ok(())
    }

    /// a²k/2 for the real part of `k`.
    pub fn rayleigh_distance(&self, k: ComplexWavenumber) -> f64 {
        0.5 * self.radius * self.radius * k.real
    }
}

/// A point in front of the baffle in cylindrical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub rho: f64,
    pub z: f64,
}

impl FieldPoint {
    pub fn new(rho: f64, z: f64) -> Self {
        Self { rho: rho.abs(), z }
    }

    fn check(&self) -> Result<()> {
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(Error::Domain(format!("field point must lie in front of the baffle, z = {}", self.z)));
        }
        if !self.rho.is_finite() {
            return Err(Error::Domain("field point radius is not finite".into()));
        }
        Ok(())
    }
}

/// Which route evaluates the ultrasound field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Rayleigh,
    King,
    #[default]
    Rim,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rayleigh" => Ok(Self::Rayleigh),
            "king" => Ok(Self::King),
            "rim" => Ok(Self::Rim),
            other => Err(Error::Config(format!("unknown backend `{other}` (rayleigh|king|rim)"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rayleigh => "rayleigh",
            Self::King => "king",
            Self::Rim => "rim",
        })
    }
}

fn prefactor(source: &PistonSource, medium: &AirMedium, frequency: f64) -> f64 {
    2.0 * PI * frequency * medium.density * source.surface_velocity
}

/// Exact on-axis field, `-(ω ρ0 v0 / k) (exp(i k √(z²+a²)) - exp(i k z))`.
///
/// Holds for complex `k` as well; with `k` real the magnitude reduces to
/// `2 ρ0 c0 v0 |sin(k(√(z²+a²) - z)/2)|`.
pub fn on_axis_pressure(source: &PistonSource, medium: &AirMedium, frequency: f64, z: f64) -> Result<Complex64> {
    FieldPoint::new(0.0, z).check()?;
    let k = medium.complex_wavenumber(frequency)?;
    let edge = (z * z + source.radius * source.radius).sqrt();
    let scale = -prefactor(source, medium, frequency) / k.value();
    Ok(scale * (k.propagator(edge) - k.propagator(z)))
}

/// Tolerances for [`rayleigh_pressure`].
#[derive(Debug, Clone, Copy)]
pub struct RayleighOptions {
    /// Stop once two successive refinements differ by less than this, relatively.
    pub rel_tol: f64,
    pub max_levels: u32,
}

impl Default for RayleighOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_levels: 5,
        }
    }
}

/// Direct polar quadrature of the Rayleigh integral over the disc.
pub fn rayleigh_pressure(
    source: &PistonSource,
    medium: &AirMedium,
    frequency: f64,
    point: FieldPoint,
    options: RayleighOptions,
) -> Result<Complex64> {
    point.check()?;
    let k = medium.complex_wavenumber(frequency)?;
    let a = source.radius;
    let (rho, z) = (point.rho, point.z);
    let d_near = (z * z + (a - rho).max(0.0).powi(2)).sqrt();
    let d_far = (z * z + (a + rho).powi(2)).sqrt();
    // Phase budget of ~6 rad per 16-point panel at the coarsest level.
    let radial0 = ((k.real * a / 6.0).ceil() as usize).max(2);
    let angular0 = ((k.real * (d_far - d_near) / 6.0).ceil() as usize).max(2);
    // Sharpness of the 1/d peak when the point nearly touches the disc.
    let peak = (a / z.max(1e-9)).clamp(1.0, 64.0) as usize;

    let gl = rule(16);
    let disc_sum = |nr: usize, na: usize| -> Complex64 {
        let rb = uniform_breaks(0.0, a, nr);
        let ab = uniform_breaks(0.0, PI, na);
        let mut total = Complex64::new(0.0, 0.0);
        for rw in rb.windows(2) {
            for (s, ws) in gl.mapped(rw[0], rw[1]) {
                let base = z * z + rho * rho + s * s;
                let mut ring = Complex64::new(0.0, 0.0);
                for aw in ab.windows(2) {
                    for (psi, wp) in gl.mapped(aw[0], aw[1]) {
                        let d = (base - 2.0 * rho * s * psi.cos()).max(0.0).sqrt();
                        ring += k.propagator(d) * (wp / d);
                    }
                }
                total += ring * (2.0 * s * ws);
            }
        }
        total
    };

    let mut nr = radial0 * peak.min(8);
    let mut na = angular0 * peak.min(8);
    let mut previous = disc_sum(nr, na);
    let mut diff = f64::INFINITY;
    for _ in 0..options.max_levels {
        nr *= 2;
        na *= 2;
        let current = disc_sum(nr, na);
        diff = (current - previous).norm();
        previous = current;
        if diff <= options.rel_tol * current.norm() {
            return Ok(rayleigh_scale(source, medium, frequency) * current);
        }
    }
    let scale = rayleigh_scale(source, medium, frequency);
    Err(Error::NotConverged {
        what: "Rayleigh disc quadrature".into(),
        estimate: (scale * previous).norm(),
        error_bound: scale.norm() * diff,
    })
}

fn rayleigh_scale(source: &PistonSource, medium: &AirMedium, frequency: f64) -> Complex64 {
    Complex64::new(0.0, -prefactor(source, medium, frequency) / (2.0 * PI))
}

/// Resolution controls for [`king_pressure`].
#[derive(Debug, Clone, Copy)]
pub struct KingOptions {
    pub rel_tol: f64,
    /// Evanescent components are dropped once `exp(-|k_z| z)` falls below this.
    pub evanescent_floor: f64,
    /// Phase allowed across one 16-point panel, rad.
    pub panel_phase: f64,
}

impl Default for KingOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            evanescent_floor: 1e-12,
            panel_phase: 6.0,
        }
    }
}

#[inline]
fn kz_of(k2: Complex64, mu: f64) -> Complex64 {
    let mut kz = (k2 - mu * mu).sqrt();
    if kz.im < 0.0 {
        kz = -kz;
    }
    kz
}

fn king_integral(a: f64, rho: f64, z: f64, k: ComplexWavenumber, options: &KingOptions, refine: usize) -> Complex64 {
    let kr = k.real;
    let kc = k.value();
    let k2 = kc * kc;
    let gl = rule(16);
    let integrand = |mu: f64, jac: f64| -> Complex64 {
        let kz = kz_of(k2, mu);
        let e = (Complex64::i() * kz * z).exp();
        e * (j1(mu * a) * j0(mu * rho) * jac) / kz
    };
    let mut total = Complex64::new(0.0, 0.0);

    // Propagating band, μ = k sinθ. The 1/k_z branch point sits at θ = π/2.
    let phase = FRAC_PI_2 * kr * (a + rho + z);
    let n = ((phase / options.panel_phase).ceil() as usize + 2) * refine;
    let mut breaks = uniform_breaks(0.0, FRAC_PI_2, n);
    grade_towards_end(&mut breaks, 30);
    for w in breaks.windows(2) {
        for (th, wt) in gl.mapped(w[0], w[1]) {
            let mu = kr * th.sin();
            total += integrand(mu, kr * th.cos() * wt);
        }
    }

    // Evanescent band, cut where exp(-|k_z| z) reaches the floor.
    let decay = -options.evanescent_floor.ln();
    let mu_max = (kr * kr + (decay / z).powi(2)).sqrt();
    let mu_split = (1.5 * kr).min(mu_max);
    let t_split = (mu_split / kr).acosh();
    let nt = ((kr * (a + rho) * (mu_split - kr) / kr / options.panel_phase).ceil() as usize + 2) * refine;
    let mut tb = uniform_breaks(0.0, t_split, nt);
    grade_towards_start(&mut tb, 30);
    for w in tb.windows(2) {
        for (t, wt) in gl.mapped(w[0], w[1]) {
            let mu = kr * t.cosh();
            total += integrand(mu, kr * t.sinh() * wt);
        }
    }
    if mu_max > mu_split {
        let span = mu_max - mu_split;
        let nm = (((a + rho) * span / options.panel_phase).ceil() as usize + (decay as usize / 4) + 2) * refine;
        for w in uniform_breaks(mu_split, mu_max, nm).windows(2) {
            for (mu, wt) in gl.mapped(w[0], w[1]) {
                total += integrand(mu, wt);
            }
        }
    }
    total * a
}

/// Replace the last panel with a geometric sequence into the end point.
fn grade_towards_end(breaks: &mut Vec<f64>, levels: usize) {
    if breaks.len() < 2 {
        return;
    }
    let end = breaks.pop().unwrap();
    let start = *breaks.last().unwrap();
    let width = end - start;
    for j in 1..=levels {
        breaks.push(end - width * 0.5f64.powi(j as i32));
    }
    breaks.push(end);
}

fn grade_towards_start(breaks: &mut Vec<f64>, levels: usize) {
    if breaks.len() < 2 {
        return;
    }
    let start = breaks[0];
    let width = breaks[1] - start;
    let mut inner: Vec<f64> = (1..=levels).rev().map(|j| start + width * 0.5f64.powi(j as i32)).collect();
    let rest = breaks.split_off(1);
    breaks.append(&mut inner);
    breaks.extend(rest);
}

/// Axisymmetric spectral (King) evaluation; refines until two levels agree.
pub fn king_pressure(
    source: &PistonSource,
    medium: &AirMedium,
    frequency: f64,
    point: FieldPoint,
    options: KingOptions,
) -> Result<Complex64> {
    point.check()?;
    let k = medium.complex_wavenumber(frequency)?;
    let scale = prefactor(source, medium, frequency);
    let coarse = king_integral(source.radius, point.rho, point.z, k, &options, 1);
    let fine = king_integral(source.radius, point.rho, point.z, k, &options, 2);
    let diff = (fine - coarse).norm();
    if diff > options.rel_tol * fine.norm().max(1e-300) {
        return Err(Error::NotConverged {
            what: "King spectral integral".into(),
            estimate: scale * fine.norm(),
            error_bound: scale * diff,
        });
    }
    Ok(fine * scale)
}

/// `∬ exp(i k d)/d dS` over the disc, reduced to a contour integral along the rim.
///
/// With the field point's foot at radius `ρ` and the rim point at angle `ψ`,
/// `ik ∬ = 2∫₀^π K(ψ) exp(i k d(ψ)) dψ - 2π exp(i k z) H(a-ρ)` where
/// `K = 1/2 + sgn(a-ρ)·P/2` and `P` is the Poisson kernel of `min(ρ,a)/max(ρ,a)`.
pub fn rim_integral(a: f64, rho: f64, z: f64, k: ComplexWavenumber) -> Complex64 {
    rim_integrals(a, rho, z, [k])[0]
}

/// [`rim_integral`] for several wavenumbers sharing one geometry and panel layout.
/// Panels are sized for the largest real wavenumber.
pub fn rim_integrals<const N: usize>(a: f64, rho: f64, z: f64, ks: [ComplexWavenumber; N]) -> [Complex64; N] {
    let inside = if rho < a {
        1.0
    } else if rho == a {
        0.5
    } else {
        0.0
    };
    let ikv = ks.map(|k| Complex64::i() * k.value());
    let direct = ks.map(|k| k.propagator(z) * (2.0 * PI * inside));
    let mut out = [Complex64::new(0.0, 0.0); N];
    if rho <= 1e-12 * a {
        let edge = (z * z + a * a).sqrt();
        for n in 0..N {
            out[n] = (ks[n].propagator(edge) * (2.0 * PI) - direct[n]) / ikv[n];
        }
        return out;
    }
    let k_top = ks.iter().map(|k| k.real).fold(0.0, f64::max);
    let base = z * z + a * a + rho * rho;
    let two_ar = 2.0 * a * rho;
    let d_of = |psi: f64| (base - two_ar * psi.cos()).max(0.0).sqrt();
    let d0 = d_of(0.0);
    let dpi = d_of(PI);

    let r = rho.min(a) / rho.max(a);
    let sign = if rho < a {
        1.0
    } else if rho > a {
        -1.0
    } else {
        0.0
    };

    // Panels of equal phase advance; d(ψ) is monotone on [0, π].
    let phase = k_top * (dpi - d0);
    let steps = ((phase / 10.0).ceil() as usize).max(1);
    let mut breaks: Vec<f64> = (0..=steps)
        .map(|j| {
            if j == 0 {
                0.0
            } else if j == steps {
                PI
            } else {
                let d = d0 + (dpi - d0) * j as f64 / steps as f64;
                ((base - d * d) / two_ar).clamp(-1.0, 1.0).acos()
            }
        })
        .collect();
    // Resolve the Poisson peak of width ~(1 - r) at ψ = 0.
    if sign != 0.0 && r > 0.5 {
        let width = (1.0 - r).max(1e-14);
        let first = breaks[1];
        let mut extra = Vec::new();
        let mut w = 0.25 * width;
        while w < first {
            extra.push(w);
            w *= 2.0;
        }
        breaks.splice(1..1, extra);
    }

    let gl = rule(16);
    let one_minus = 1.0 - r * r;
    let one_plus = 1.0 + r * r;
    let mut acc = [Complex64::new(0.0, 0.0); N];
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        for (psi, wt) in gl.mapped(w[0], w[1]) {
            let poisson = one_minus / (one_plus - 2.0 * r * psi.cos());
            let kern = (0.5 + 0.5 * sign * poisson) * wt;
            let d = d_of(psi);
            for n in 0..N {
                acc[n] += ks[n].propagator(d) * kern;
            }
        }
    }
    for n in 0..N {
        out[n] = (acc[n] * 2.0 - direct[n]) / ikv[n];
    }
    out
}

/// Rayleigh integral evaluated through [`rim_integral`].
pub fn rim_pressure(source: &PistonSource, medium: &AirMedium, frequency: f64, point: FieldPoint) -> Result<Complex64> {
    point.check()?;
    let k = medium.complex_wavenumber(frequency)?;
    Ok(rim_pressure_with(source, medium, frequency, k, point))
}

#[inline]
fn rim_pressure_with(
    source: &PistonSource,
    medium: &AirMedium,
    frequency: f64,
    k: ComplexWavenumber,
    point: FieldPoint,
) -> Complex64 {
    rayleigh_scale(source, medium, frequency) * rim_integral(source.radius, point.rho, point.z, k)
}

/// Tensor grid of radial and axial nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylGrid {
    pub radial: Vec<f64>,
    pub axial: Vec<f64>,
}

impl CylGrid {
    pub fn new(radial: Vec<f64>, axial: Vec<f64>) -> Result<Self> {
        let g = Self { radial, axial };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial.is_empty() || self.axial.is_empty() {
            return Err(Error::InvalidParameter("grid must have at least one node per axis".into()));
        }
        if !self.radial.windows(2).all(|w| w[1] > w[0]) || !self.axial.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("grid nodes must be strictly increasing".into()));
        }
        if self.radial[0] < 0.0 || !self.radial.iter().all(|r| r.is_finite()) {
            return Err(Error::InvalidParameter("radial nodes must be finite and non-negative".into()));
        }
        if self.axial[0] <= 0.0 || !self.axial.iter().all(|z| z.is_finite()) {
            return Err(Error::InvalidParameter("axial nodes must be finite and in front of the baffle".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.radial.len() * self.axial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sampled ultrasound pressure; storage is axial-major (`iz * n_rho + ir`).
#[derive(Debug, Clone, PartialEq)]
pub struct UltraFieldGrid {
    pub grid: CylGrid,
    pub frequency: f64,
    pub pressures: Vec<Complex64>,
}

impl UltraFieldGrid {
    #[inline]
    pub fn at(&self, iz: usize, ir: usize) -> Complex64 {
        self.pressures[iz * self.grid.radial.len() + ir]
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.pressures.len() != self.grid.len() {
            return Err(Error::Contract(format!(
                "field has {} values for a {}-node grid",
                self.pressures.len(),
                self.grid.len()
            )));
        }
        if !self.pressures.iter().all(|p| p.re.is_finite() && p.im.is_finite()) {
            return Err(Error::Contract("field contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Sample the field of `source` at every grid node.
pub fn sample_field(
    source: &PistonSource,
    medium: &AirMedium,
    frequency: f64,
    grid: &CylGrid,
    backend: Backend,
) -> Result<UltraFieldGrid> {
    grid.validate()?;
    source.validate()?;
    let k = medium.complex_wavenumber(frequency)?;
    let n_rho = grid.radial.len();
    let rows: Result<Vec<Vec<Complex64>>> = grid
        .axial
        .par_iter()
        .map(|&z| {
            let mut row = Vec::with_capacity(n_rho);
            for &rho in &grid.radial {
                let pt = FieldPoint::new(rho, z);
                let p = match backend {
                    Backend::Rim => rim_pressure_with(source, medium, frequency, k, pt),
                    Backend::King => king_pressure(source, medium, frequency, pt, KingOptions::default())?,
                    Backend::Rayleigh => {
                        rayleigh_pressure(source, medium, frequency, pt, RayleighOptions::default())?
                    }
                };
                row.push(p);
            }
            Ok(row)
        })
        .collect();
    let pressures = rows?.into_iter().flatten().collect();
    let field = UltraFieldGrid {
        grid: grid.clone(),
        frequency,
        pressures,
    };
    field.validate()?;
    Ok(field)
}

/// Sample two sideband fields on one grid. With the rim backend both share
/// geometry and panel layout per node.
pub fn sample_sideband_pair(
    source: &PistonSource,
    medium: &AirMedium,
    frequencies: [f64; 2],
    grid: &CylGrid,
    backend: Backend,
) -> Result<[UltraFieldGrid; 2]> {
    if backend != Backend::Rim {
        return Ok([
            sample_field(source, medium, frequencies[0], grid, backend)?,
            sample_field(source, medium, frequencies[1], grid, backend)?,
        ]);
    }
    grid.validate()?;
    source.validate()?;
    let ks = [medium.complex_wavenumber(frequencies[0])?, medium.complex_wavenumber(frequencies[1])?];
    let scales = frequencies.map(|f| rayleigh_scale(source, medium, f));
    let rows: Vec<Vec<[Complex64; 2]>> = grid
        .axial
        .par_iter()
        .map(|&z| {
            grid.radial
                .iter()
                .map(|&rho| {
                    let [i1, i2] = rim_integrals(source.radius, rho, z, ks);
                    [scales[0] * i1, scales[1] * i2]
                })
                .collect()
        })
        .collect();
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for [p1, p2] in rows.into_iter().flatten() {
        lower.push(p1);
        upper.push(p2);
    }
    let make = |frequency, pressures| UltraFieldGrid {
        grid: grid.clone(),
        frequency,
        pressures,
    };
    let out = [make(frequencies[0], lower), make(frequencies[1], upper)];
    out[0].validate()?;
    out[1].validate()?;
    Ok(out)
}
