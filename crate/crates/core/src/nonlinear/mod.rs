//! Quasilinear self-demodulation of the sideband pairs.
//!
//! Each carrier `n` radiates two ultrasonic tones at `f_c ± f_a/2`. Their
//! product forms a virtual audio source density
//! `q = -(i β ω_a / (ρ0² c0⁴)) conj(p1) p2`, and the audio transfer function
//! is the free-space Green's function integrated against `q`:
//! `H = -i ρ0 ω_a ∭ q exp(i k_a R)/(4πR) dV`.
//!
//! `q` is axisymmetric about the piston axis, so the volume is sampled on a
//! cylindrical panel grid ([`VirtualSourceGrid`]). Two routes evaluate `H`:
//! [`direct`] sums ring Green's functions point by point, and [`spectral`]
//! batches many observation points through a Hankel transform of `q`.

pub mod direct;
pub mod spectral;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::AirMedium;
use crate::quad::Composite;
use crate::ultrasound::{on_axis_pressure, sample_sideband_pair, Backend, CylGrid, PistonSource};

pub use direct::audio_transfer_on_grid;
pub use spectral::transfer_on_points;

/// Minimum separation between carriers, and lower bound of every sideband.
pub const ULTRASONIC_LIMIT: f64 = 20e3;

/// One modulated carrier. The sideband weights default to 1; the field
/// solvers always work with unit drive and apply `w = conj(w1)·w2` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierChannel {
    pub center_frequency: f64,
    pub audio_frequency: f64,
    pub lower_weight: Complex64,
    pub upper_weight: Complex64,
}

impl CarrierChannel {
    pub fn new(center_frequency: f64, audio_frequency: f64) -> Result<Self> {
        let c = Self {
            center_frequency,
            audio_frequency,
            lower_weight: Complex64::new(1.0, 0.0),
            upper_weight: Complex64::new(1.0, 0.0),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_weights(mut self, lower: Complex64, upper: Complex64) -> Self {
        self.lower_weight = lower;
        self.upper_weight = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.audio_frequency.is_finite() && self.audio_frequency > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "audio frequency must be positive, got {}",
                self.audio_frequency
            )));
        }
        if !(self.lower_frequency() > ULTRASONIC_LIMIT) {
            return Err(Error::InvalidParameter(format!(
                "lower sideband {} Hz of the {} Hz carrier is not ultrasonic",
                self.lower_frequency(),
                self.center_frequency
            )));
        }
        Ok(())
    }

    pub fn lower_frequency(&self) -> f64 {
        self.center_frequency - 0.5 * self.audio_frequency
    }

    pub fn upper_frequency(&self) -> f64 {
        self.center_frequency + 0.5 * self.audio_frequency
    }

    pub fn lower_omega(&self) -> f64 {
        2.0 * PI * self.lower_frequency()
    }

    pub fn upper_omega(&self) -> f64 {
        2.0 * PI * self.upper_frequency()
    }

    /// `w = conj(w1)·w2`.
    pub fn audio_weight(&self) -> Complex64 {
        self.lower_weight.conj() * self.upper_weight
    }
}

/// Carriers sharing one audio tone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSet {
    pub channels: Vec<CarrierChannel>,
}

impl CarrierSet {
    pub fn new(center_frequencies: &[f64], audio_frequency: f64) -> Result<Self> {
        let channels = center_frequencies
            .iter()
            .map(|&fc| CarrierChannel::new(fc, audio_frequency))
            .collect::<Result<Vec<_>>>()?;
        let set = Self { channels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidParameter("carrier set is empty".into()));
        }
        let fa = self.channels[0].audio_frequency;
        for (i, c) in self.channels.iter().enumerate() {
            c.validate()?;
            if c.audio_frequency != fa {
                return Err(Error::InvalidParameter("carriers must share one audio frequency".into()));
            }
            for d in &self.channels[..i] {
                let gap = (c.center_frequency - d.center_frequency).abs();
                if !(gap > ULTRASONIC_LIMIT) {
                    return Err(Error::InvalidParameter(format!(
                        "carriers {} Hz and {} Hz are {gap} Hz apart; more than {ULTRASONIC_LIMIT} Hz is required",
                        d.center_frequency, c.center_frequency
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn audio_frequency(&self) -> f64 {
        self.channels[0].audio_frequency
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.center_frequency).collect()
    }

    pub fn index_of(&self, center_frequency: f64) -> Option<usize> {
        self.channels
            .iter()
            .position(|c| (c.center_frequency - center_frequency).abs() < 1e-6)
    }
}

/// `q = -(i β ω_a / (ρ0² c0⁴)) conj(p_lower) p_upper`.
pub fn virtual_source_density(
    ultra_lower: Complex64,
    ultra_upper: Complex64,
    medium: &AirMedium,
    audio_frequency: f64,
) -> Complex64 {
    let c2 = medium.sound_speed * medium.sound_speed;
    let scale = medium.nonlinearity * 2.0 * PI * audio_frequency / (medium.density * medium.density * c2 * c2);
    Complex64::new(0.0, -scale) * ultra_lower.conj() * ultra_upper
}

/// Extent of the virtual-source volume that is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeTruncation {
    pub z_max: f64,
    pub rho_max: f64,
}

impl VolumeTruncation {
    /// Sideband product drop, in amplitude dB, that defines the axial bound.
    pub const DROP_DB: f64 = 60.0;

    pub fn new(z_max: f64, rho_max: f64) -> Result<Self> {
        let t = Self { z_max, rho_max };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_max.is_finite() && self.z_max > 0.0 && self.rho_max.is_finite() && self.rho_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation bounds must be positive, got z_max = {}, rho_max = {}",
                self.z_max, self.rho_max
            )));
        }
        Ok(())
    }

    /// Axial bound where `|p1 p2|` on axis has fallen [`Self::DROP_DB`] below
    /// its maximum past the last axial maximum; radial bound
    /// `3a + z_max·θ1` with `θ1` the first-null half-angle of the lower sideband.
    pub fn auto(source: &PistonSource, medium: &AirMedium, channel: &CarrierChannel) -> Result<Self> {
        let f1 = channel.lower_frequency();
        let f2 = channel.upper_frequency();
        let threshold = 10f64.powf(-Self::DROP_DB / 20.0);
        // Log-spaced scan from well inside the near field out to 2 km.
        let n = 40_000;
        let (z_lo, z_hi) = (source.radius * 1e-3, 2.0e3);
        let ratio = (z_hi / z_lo).powf(1.0 / (n - 1) as f64);
        let mut zs = Vec::with_capacity(n);
        let mut amp = Vec::with_capacity(n);
        let mut z = z_lo;
        for _ in 0..n {
            let p = on_axis_pressure(source, medium, f1, z)?.norm() * on_axis_pressure(source, medium, f2, z)?.norm();
            zs.push(z);
            amp.push(p);
            z *= ratio;
        }
        let peak = amp.iter().cloned().fold(0.0, f64::max);
        let last = amp
            .iter()
            .rposition(|&p| p >= peak * threshold)
            .ok_or_else(|| Error::Domain("sideband product vanishes on axis".into()))?;
        if last + 1 >= n {
            return Err(Error::Domain(format!(
                "sideband product stays within {} dB of its peak beyond {z_hi} m; enable absorption",
                Self::DROP_DB
            )));
        }
        // Interpolate the crossing in log amplitude.
        let (a0, a1) = (amp[last].ln(), amp[last + 1].ln());
        let t = ((peak * threshold).ln() - a0) / (a1 - a0);
        let z_max = zs[last] + t.clamp(0.0, 1.0) * (zs[last + 1] - zs[last]);

        let k1 = medium.complex_wavenumber(f1)?.real;
        let s = (3.8317059702075125 / (k1 * source.radius)).min(1.0);
        let rho_max = 3.0 * source.radius + z_max * s.asin();
        Self::new(z_max, rho_max)
    }
}

/// Resolution of the virtual-source grid and the spectral transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSpec {
    /// Gauss–Legendre points per panel, both axes.
    pub order: usize,
    /// Radial panel width near the beam, in upper-sideband wavelengths.
    pub rho_core_wavelengths: f64,
    /// Radius, in piston radii, covered by the fine radial panels.
    pub rho_core_extent: f64,
    /// Largest radial panel width, m.
    pub rho_outer_width: f64,
    /// Axial panel width at the baffle, in upper-sideband interference periods.
    pub z_near_periods: f64,
    /// Largest axial panel width, m.
    pub z_max_width: f64,
    /// Largest axial panel width as a fraction of the audio wavelength.
    pub z_audio_fraction: f64,
    /// Radial wavenumber cut-off of the spectral route, rad/m.
    pub mu_max: f64,
    /// Phase advance allowed across one 16-point spectral panel, rad.
    pub mu_panel_phase: f64,
    /// Ultrasound evaluation route for the grid.
    pub backend: Backend,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            order: 8,
            rho_core_wavelengths: 1.0,
            rho_core_extent: 2.0,
            rho_outer_width: 0.02,
            z_near_periods: 1.0,
            z_max_width: 0.03,
            z_audio_fraction: 0.25,
            mu_max: 1500.0,
            mu_panel_phase: 10.0,
            backend: Backend::Rim,
        }
    }
}

impl QuadSpec {
    /// Relative change allowed when every spacing is halved.
    pub const SELF_CONVERGENCE_TOL: f64 = 5e-3;

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.rho_core_wavelengths,
            self.rho_core_extent,
            self.rho_outer_width,
            self.z_near_periods,
            self.z_max_width,
            self.z_audio_fraction,
            self.mu_max,
            self.mu_panel_phase,
        ];
        if self.order < 2 || self.order > 32 || pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid quadrature settings {self:?}")));
        }
        Ok(())
    }

    /// Every spacing halved; the spectral cut-off is raised by half.
    pub fn refined(&self) -> Self {
        Self {
            rho_core_wavelengths: 0.5 * self.rho_core_wavelengths,
            rho_outer_width: 0.5 * self.rho_outer_width,
            z_near_periods: 0.5 * self.z_near_periods,
            z_max_width: 0.5 * self.z_max_width,
            z_audio_fraction: 0.5 * self.z_audio_fraction,
            mu_max: 1.5 * self.mu_max,
            mu_panel_phase: 0.5 * self.mu_panel_phase,
            ..*self
        }
    }

    fn rho_breaks(&self, source: &PistonSource, wavelength: f64, rho_max: f64) -> Vec<f64> {
        let core_w = self.rho_core_wavelengths * wavelength;
        let core = (self.rho_core_extent * source.radius).min(rho_max);
        let n_core = ((core / core_w).ceil() as usize).max(1);
        let mut breaks: Vec<f64> = (0..=n_core).map(|i| core * i as f64 / n_core as f64).collect();
        let mut w = core_w.min(self.rho_outer_width);
        let mut r = core;
        while r < rho_max * (1.0 - 1e-12) {
            w = (w * 1.25).min(self.rho_outer_width);
            let next = (r + w).min(rho_max);
            // Merge a sliver into the previous panel.
            if rho_max - next < 0.25 * w {
                r = rho_max;
            } else {
                r = next;
            }
            breaks.push(r);
        }
        breaks
    }

    /// Dyadic axial panels: widths are `h_max / 2^j` and every break is a
    /// multiple of its panel width, so only a handful of widths occur.
    fn z_breaks(&self, source: &PistonSource, wavelength: f64, audio_wavelength: f64, z_max: f64) -> Vec<f64> {
        let h_max = self.z_max_width.min(self.z_audio_fraction * audio_wavelength);
        let a = source.radius;
        let desired = |z: f64| {
            // Local period of the on-axis interference term.
            let slope = 1.0 - z / (z * z + a * a).sqrt();
            (self.z_near_periods * wavelength / slope.max(1e-12)).min(h_max)
        };
        let n_end = (z_max / h_max).ceil().max(1.0);
        let z_end = n_end * h_max;
        let mut breaks = vec![0.0];
        let mut z = 0.0f64;
        while z < z_end - 1e-12 * h_max {
            let target = desired(z);
            let mut j = 0i32;
            while h_max * 0.5f64.powi(j) > target && j < 40 {
                j += 1;
            }
            // Coarsen only at breaks aligned to the coarser width.
            let mut h = h_max * 0.5f64.powi(j);
            while j > 0 {
                let coarser = 2.0 * h;
                let m = z / coarser;
                if (m - m.round()).abs() < 1e-9 && desired(z) >= coarser {
                    h = coarser;
                    j -= 1;
                } else {
                    break;
                }
            }
            z = ((z + h) / h).round() * h;
            breaks.push(z.min(z_end));
        }
        breaks
    }
}

/// Virtual-source density sampled on Gauss–Legendre panels in `(ρ_v, z_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSourceGrid {
    pub channel: CarrierChannel,
    pub truncation: VolumeTruncation,
    pub rho: Composite,
    pub z: Composite,
    /// Axial-major, `iz * rho.len() + ir`.
    pub density: Vec<Complex64>,
    /// `max |q|` on the outer boundary relative to `max |q|` overall.
    pub boundary_ratio: f64,
}

impl VirtualSourceGrid {
    /// Boundary ratio above which the truncation is reported as too tight.
    pub const BOUNDARY_WARN: f64 = 2e-3;

    pub fn build(
        source: &PistonSource,
        medium: &AirMedium,
        channel: &CarrierChannel,
        truncation: VolumeTruncation,
        quad: &QuadSpec,
    ) -> Result<Self> {
        source.validate()?;
        channel.validate()?;
        truncation.validate()?;
        quad.validate()?;
        let lambda = medium.sound_speed / channel.upper_frequency();
        let lambda_a = medium.sound_speed / channel.audio_frequency;
        let rho = Composite::from_breaks(quad.rho_breaks(source, lambda, truncation.rho_max), quad.order);
        let z = Composite::from_breaks(quad.z_breaks(source, lambda, lambda_a, truncation.z_max), quad.order);
        let grid = CylGrid::new(rho.nodes.clone(), z.nodes.clone())?;
        let [lower, upper] = sample_sideband_pair(
            source,
            medium,
            [channel.lower_frequency(), channel.upper_frequency()],
            &grid,
            quad.backend,
        )?;
        let density: Vec<Complex64> = lower
            .pressures
            .iter()
            .zip(&upper.pressures)
            .map(|(&p1, &p2)| virtual_source_density(p1, p2, medium, channel.audio_frequency))
            .collect();
        let n_rho = rho.len();
        let peak = density.iter().map(|q| q.norm()).fold(0.0, f64::max);
        let last_row = density[density.len() - n_rho..].iter().map(|q| q.norm()).fold(0.0, f64::max);
        let last_col = density.chunks(n_rho).map(|row| row[n_rho - 1].norm()).fold(0.0, f64::max);
        let boundary_ratio = if peak > 0.0 { last_row.max(last_col) / peak } else { 0.0 };
        Ok(Self {
            channel: *channel,
            truncation,
            rho,
            z,
            density,
            boundary_ratio,
        })
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.boundary_ratio > Self::BOUNDARY_WARN {
            w.push(format!(
                "virtual-source truncation for the {} Hz carrier leaves {:.2e} of the peak density on the boundary",
                self.channel.center_frequency, self.boundary_ratio
            ));
        }
        w
    }

    #[inline]
    pub fn at(&self, iz: usize, ir: usize) -> Complex64 {
        self.density[iz * self.rho.len() + ir]
    }
}

/// Observation point in the `Oxz` plane; the field depends on `|x|` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsPoint {
    pub x: f64,
    pub z: f64,
}

impl ObsPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    /// Distance from the axis for a point `(x, y, z)`.
    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        Self { x: x.hypot(y), z }
    }

    pub fn rho(&self) -> f64 {
        self.x.abs()
    }
}

/// How a transfer grid was produced; enough to recompute it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferProvenance {
    pub quad: QuadSpec,
    pub truncations: Vec<VolumeTruncation>,
    pub source: PistonSource,
    pub medium: AirMedium,
    pub warnings: Vec<String>,
}

/// Transfer functions `H_n(r_m)` for every carrier at every observation point.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTransferGrid {
    pub points: Vec<ObsPoint>,
    pub audio_frequency: f64,
    pub carriers: Vec<f64>,
    /// Point-major, `m * carriers.len() + n`.
    pub values: Vec<Complex64>,
    pub provenance: TransferProvenance,
}

impl AudioTransferGrid {
    /// Build each carrier's virtual-source grid with the automatic truncation
    /// and evaluate the spectral route at `points`.
    pub fn compute(
        source: &PistonSource,
        medium: &AirMedium,
        carriers: &CarrierSet,
        points: &[ObsPoint],
        quad: &QuadSpec,
    ) -> Result<Self> {
        carriers.validate()?;
        let mut columns = Vec::with_capacity(carriers.len());
        let mut truncations = Vec::new();
        let mut warnings = Vec::new();
        for ch in &carriers.channels {
            let trunc = VolumeTruncation::auto(source, medium, ch)?;
            let vs = VirtualSourceGrid::build(source, medium, ch, trunc, quad)?;
            warnings.extend(vs.warnings());
            columns.push(transfer_on_points(&vs, medium, points, quad)?);
            truncations.push(trunc);
        }
        let provenance = TransferProvenance {
            quad: *quad,
            truncations,
            source: *source,
            medium: *medium,
            warnings,
        };
        Self::from_columns(points.to_vec(), carriers, columns, provenance)
    }

    pub fn from_columns(
        points: Vec<ObsPoint>,
        carriers: &CarrierSet,
        columns: Vec<Vec<Complex64>>,
        provenance: TransferProvenance,
    ) -> Result<Self> {
        let n = carriers.len();
        if columns.len() != n || columns.iter().any(|c| c.len() != points.len()) {
            return Err(Error::Contract("transfer columns do not match carriers and points".into()));
        }
        let mut values = vec![Complex64::new(0.0, 0.0); points.len() * n];
        for (j, col) in columns.iter().enumerate() {
            for (m, v) in col.iter().enumerate() {
                values[m * n + j] = *v;
            }
        }
        let g = Self {
            points,
            audio_frequency: carriers.audio_frequency(),
            carriers: carriers.center_frequencies(),
            values,
            provenance,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.points.len() * self.carriers.len() {
            return Err(Error::Contract("transfer grid dimensions are inconsistent".into()));
        }
        if !self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Contract("transfer grid contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn n_carriers(&self) -> usize {
        self.carriers.len()
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        let n = self.carriers.len();
        &self.values[m * n..(m + 1) * n]
    }

    /// Index of an exactly matching observation point.
    pub fn find(&self, point: ObsPoint) -> Option<usize> {
        self.points
            .iter()
            .position(|p| p.x.abs() == point.x.abs() && p.z == point.z)
    }
}

/// `p_a = Σ w_n H_n`.
pub fn audio_pressure(carriers: &CarrierSet, weights: &[Complex64], transfer_row: &[Complex64]) -> Result<Complex64> {
    if weights.len() != carriers.len() || transfer_row.len() != carriers.len() {
        return Err(Error::Contract(format!(
            "{} carriers, {} weights, {} transfer values",
            carriers.len(),
            weights.len(),
            transfer_row.len()
        )));
    }
    Ok(weights.iter().zip(transfer_row).map(|(w, h)| w * h).sum())
}

/// Reference pressure for SPL, Pa.
pub const P_REF: f64 = 20e-6;

/// Sound pressure level re 20 µPa; `-∞` for silence.
pub fn spl(pressure: Complex64) -> f64 {
    let m = pressure.norm();
    if m == 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * (m / P_REF).log10()
    }
}
