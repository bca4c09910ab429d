//! Point-by-point evaluation of the transfer volume integral.
//!
//! The azimuthal integral of the Green's function over each source ring is
//! split into its `1/R` part, which has the closed form `K(m)/(π s)`, and the
//! smooth remainder `(exp(ikR) - 1)/R`, integrated adaptively.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{ObsPoint, QuadSpec, VirtualSourceGrid, VolumeTruncation};
use crate::error::{Error, Result};
use crate::medium::{AirMedium, ComplexWavenumber};
use crate::nonlinear::CarrierChannel;
use crate::quad::Adaptive;
use crate::special::ellip_k;
use crate::ultrasound::PistonSource;

/// `∫₀^{2π} exp(i k R)/(4π R) dφ` from the ring `(ρ_v, z_v)` to the point `(ρ, z)`.
pub fn ring_green(k: ComplexWavenumber, rho: f64, z: f64, rho_v: f64, z_v: f64) -> Complex64 {
    let dz = z - z_v;
    let base = rho * rho + rho_v * rho_v + dz * dz;
    let cross = 2.0 * rho * rho_v;
    if cross <= 1e-14 * base {
        let r = base.sqrt();
        return k.propagator(r) / (2.0 * r);
    }
    let s2 = (rho + rho_v).powi(2) + dz * dz;
    let m = 2.0 * cross / s2;
    let singular = ellip_k(m.min(1.0)) / (PI * s2.sqrt());
    let ik = Complex64::i() * k.value();
    let remainder = |phi: f64| {
        let r = (base - cross * phi.cos()).max(0.0).sqrt();
        if r * k.real < 1e-4 {
            // Series of (exp(ikr) - 1)/r.
            ik + ik * ik * (0.5 * r)
        } else {
            (k.propagator(r) - 1.0) / r
        }
    };
    let smooth = Adaptive {
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        max_depth: 16,
    }
    .integrate(&remainder, 0.0, PI)
    .value;
    singular + smooth / (2.0 * PI)
}

/// Transfer function at `point` by direct summation over the grid.
pub fn audio_transfer_on_grid(vs: &VirtualSourceGrid, medium: &AirMedium, point: ObsPoint) -> Result<Complex64> {
    if !(point.z.is_finite() && point.z > 0.0 && point.x.is_finite()) {
        return Err(Error::Domain(format!("observation point ({}, {}) is not in front of the baffle", point.x, point.z)));
    }
    let fa = vs.channel.audio_frequency;
    let k = medium.audio_wavenumber(fa)?;
    let rho = point.rho();
    let n_rho = vs.rho.len();
    // Rows are summed in a fixed order so results do not depend on threading.
    let rows: Vec<Complex64> = vs
        .z
        .nodes
        .par_iter()
        .zip(vs.z.weights.par_iter())
        .enumerate()
        .map(|(iz, (&zv, &wz))| {
            let row = &vs.density[iz * n_rho..(iz + 1) * n_rho];
            let mut acc = Complex64::new(0.0, 0.0);
            for ((&rv, &wr), &q) in vs.rho.nodes.iter().zip(&vs.rho.weights).zip(row) {
                acc += q * ring_green(k, rho, point.z, rv, zv) * (wr * rv);
            }
            acc * wz
        })
        .collect();
    let total: Complex64 = rows.iter().sum();
    if !(total.re.is_finite() && total.im.is_finite()) {
        return Err(Error::NotConverged {
            what: "direct transfer sum (observation point on a source node)".into(),
            estimate: f64::NAN,
            error_bound: f64::INFINITY,
        });
    }
    Ok(total * Complex64::new(0.0, -medium.density * 2.0 * PI * fa))
}

/// A pointwise transfer value with any truncation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTransfer {
    pub value: Complex64,
    pub warnings: Vec<String>,
}

/// `H_n` at one observation point for unit sideband drive.
pub fn audio_transfer(
    source: &PistonSource,
    medium: &AirMedium,
    channel: &CarrierChannel,
    point: ObsPoint,
    truncation: VolumeTruncation,
    quad: &QuadSpec,
) -> Result<PointTransfer> {
    let vs = VirtualSourceGrid::build(source, medium, channel, truncation, quad)?;
    let value = audio_transfer_on_grid(&vs, medium, point)?;
    Ok(PointTransfer {
        value,
        warnings: vs.warnings(),
    })
}
