//! Batched transfer evaluation through a Hankel transform of the source.
//!
//! With the Sommerfeld form of the ring-averaged Green's function,
//! `H(ρ, z) = (ρ0 ω_a / 2) ∫ (μ/k_z) J0(μρ) F(μ, z) dμ`, where
//! `F(μ, z) = ∫ Q(μ, z_v) exp(i k_z |z - z_v|) dz_v` and
//! `Q(μ, z_v) = ∫ ρ_v J0(μ ρ_v) q(ρ_v, z_v) dρ_v`.
//!
//! `Q` is formed panel by panel with the exact integral of `ρ J0(μρ)` against
//! the Lagrange interpolant of `q`, so oscillation in `μ` never aliases
//! against the source sampling. `F` is accumulated by a forward and a
//! backward sweep over the axial panels with panel moments of the
//! exponential kernel; it is smooth in `z`, and is interpolated from panel
//! nodes to the observation heights.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{ObsPoint, QuadSpec, VirtualSourceGrid};
use crate::error::{Error, Result};
use crate::medium::{AirMedium, ComplexWavenumber};
use crate::quad::{lagrange_weights, rule, uniform_breaks, GaussLegendre};
use crate::special::j0;

/// One node of the radial-wavenumber rule; `weight` includes `μ/k_z`.
#[derive(Debug, Clone, Copy)]
pub struct MuNode {
    pub mu: f64,
    pub weight: Complex64,
    pub kz: Complex64,
}

/// `gap = Re k - μ`, supplied by the caller in a cancellation-free form.
#[inline]
fn kz_of(k: Complex64, mu: f64, gap: f64) -> Complex64 {
    let mut kz = (Complex64::new(gap, k.im) * (k + mu)).sqrt();
    if kz.im < 0.0 {
        kz = -kz;
    }
    kz
}

fn graded_end(breaks: &mut Vec<f64>, levels: i32) {
    let end = breaks.pop().unwrap();
    let width = end - *breaks.last().unwrap();
    for j in 1..=levels {
        breaks.push(end - width * 0.5f64.powi(j));
    }
    breaks.push(end);
}

fn graded_start(breaks: &mut Vec<f64>, levels: i32) {
    let start = breaks[0];
    let width = breaks[1] - start;
    let rest = breaks.split_off(1);
    breaks.extend((1..=levels).rev().map(|j| start + width * 0.5f64.powi(j)));
    breaks.extend(rest);
}

/// Radial-wavenumber rule on `[0, μ_max]` for a wavenumber `k`.
///
/// `rho_span` bounds `ρ + ρ_v` and `z_span` bounds `|z - z_v|`; together they
/// set the oscillation rate of the integrand in `μ`.
pub fn mu_rule(k: ComplexWavenumber, rho_span: f64, z_span: f64, mu_max: f64, panel_phase: f64) -> Vec<MuNode> {
    let kr = k.real;
    let kc = k.value();
    let gl = rule(16);
    let mut out = Vec::new();
    let mut push = |mu: f64, gap: f64, dmu: f64| {
        let kz = kz_of(kc, mu, gap);
        out.push(MuNode {
            mu,
            weight: kz.inv() * (mu * dmu),
            kz,
        });
    };
    // Propagating band, μ = k sinθ.
    let n = (FRAC_PI_2 * kr * (rho_span + z_span) / panel_phase).ceil() as usize + 2;
    let mut b = uniform_breaks(0.0, FRAC_PI_2, n);
    graded_end(&mut b, 20);
    for w in b.windows(2) {
        for (th, wt) in gl.mapped(w[0], w[1]) {
            push(kr * th.sin(), 2.0 * kr * (FRAC_PI_4 - 0.5 * th).sin().powi(2), kr * th.cos() * wt);
        }
    }
    // Evanescent band near the branch point, μ = k cosh t.
    let mu_split = (1.5 * kr).min(mu_max);
    let t_split = (mu_split / kr).acosh();
    let n = (t_split * kr * (mu_split / kr).sinh().max(1.0) * rho_span / panel_phase).ceil() as usize + 2;
    let mut b = uniform_breaks(0.0, t_split, n);
    graded_start(&mut b, 20);
    for w in b.windows(2) {
        for (t, wt) in gl.mapped(w[0], w[1]) {
            push(kr * t.cosh(), -2.0 * kr * (0.5 * t).sinh().powi(2), kr * t.sinh() * wt);
        }
    }
    if mu_max > mu_split {
        let n = ((mu_max - mu_split) * rho_span / panel_phase).ceil() as usize + 1;
        for w in uniform_breaks(mu_split, mu_max, n).windows(2) {
            for (mu, wt) in gl.mapped(w[0], w[1]) {
                push(mu, kr - mu, wt);
            }
        }
    }
    out
}

const LEVELS: usize = 24;

/// 16-point sub-rule on a distance interval from an anchor, with Lagrange
/// values of the panel basis at each sub-node.
struct SubPanel {
    delta: Vec<f64>,
    weight: Vec<f64>,
    /// `16 × order`, row per sub-node.
    ell: Vec<f64>,
}

/// One side of an anchor `u_P` in the unit panel, `[u_P - len, u_P]` or `[u_P, u_P + len]`.
struct Side {
    len: f64,
    /// `nested[j-1]` covers distances `[len 2^-j, len 2^{1-j}]`.
    nested: Vec<SubPanel>,
    /// `inner[L]` covers distances `[0, len 2^-L]`.
    inner: Vec<SubPanel>,
}

impl Side {
    fn new(anchor: f64, dir: f64, len: f64, local: &[f64], gl: &GaussLegendre) -> Self {
        let sub = |d0: f64, d1: f64| {
            let n = local.len();
            let mut delta = Vec::with_capacity(16);
            let mut weight = Vec::with_capacity(16);
            let mut ell = Vec::with_capacity(16 * n);
            for (d, w) in gl.mapped(d0, d1) {
                delta.push(d);
                weight.push(w);
                ell.extend(lagrange_weights(local, anchor + dir * d));
            }
            SubPanel { delta, weight, ell }
        };
        let nested = (1..=LEVELS)
            .map(|j| sub(len * 0.5f64.powi(j as i32), len * 0.5f64.powi(j as i32 - 1)))
            .collect();
        let inner = (0..=LEVELS).map(|l| sub(0.0, len * 0.5f64.powi(l as i32))).collect();
        Self { len, nested, inner }
    }

    /// Accumulate `∫ ℓ_l(u) exp(i s |u - u_P|) du` over this side into `out`.
    fn integrate(&self, s: Complex64, out: &mut [Complex64]) {
        let n = out.len();
        let level = ((s.norm() * self.len / 4.0).log2().ceil().max(0.0) as usize).min(LEVELS);
        let is = Complex64::i() * s;
        let mut add = |p: &SubPanel| {
            for (i, (&d, &w)) in p.delta.iter().zip(&p.weight).enumerate() {
                let e = (is * d).exp() * w;
                for (o, &l) in out.iter_mut().zip(&p.ell[i * n..(i + 1) * n]) {
                    *o += e * l;
                }
            }
        };
        for p in &self.nested[..level] {
            add(p);
        }
        add(&self.inner[level]);
    }
}

/// Kernel moments of the unit panel, scaled by the panel width.
struct PanelMoments {
    /// `near[l*n + l'] = h ∫ ℓ_l'(u) exp(i s |u - u_l|) du`.
    near: Vec<Complex64>,
    /// `h ∫ ℓ_l'(u) exp(i s (1 - u)) du`, carries sources to the top break.
    plus: Vec<Complex64>,
    /// `h ∫ ℓ_l'(u) exp(i s u) du`, carries sources to the bottom break.
    minus: Vec<Complex64>,
    /// `exp(i s u_l)`, `exp(i s (1 - u_l))`, `exp(i s)`.
    e_in: Vec<Complex64>,
    e_out: Vec<Complex64>,
    e_full: Complex64,
}

struct LocalRules {
    local: Vec<f64>,
    node_sides: Vec<(Side, Side)>,
    top: Side,
    bottom: Side,
}

impl LocalRules {
    fn new(order: usize) -> Self {
        let gl = rule(16);
        let local: Vec<f64> = rule(order).nodes.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let node_sides = local
            .iter()
            .map(|&u| (Side::new(u, -1.0, u, &local, gl), Side::new(u, 1.0, 1.0 - u, &local, gl)))
            .collect();
        let top = Side::new(1.0, -1.0, 1.0, &local, gl);
        let bottom = Side::new(0.0, 1.0, 1.0, &local, gl);
        Self {
            local,
            node_sides,
            top,
            bottom,
        }
    }

    fn moments(&self, kz: Complex64, h: f64) -> PanelMoments {
        let n = self.local.len();
        let s = kz * h;
        let mut near = vec![Complex64::new(0.0, 0.0); n * n];
        for (l, (left, right)) in self.node_sides.iter().enumerate() {
            let row = &mut near[l * n..(l + 1) * n];
            left.integrate(s, row);
            right.integrate(s, row);
        }
        let mut plus = vec![Complex64::new(0.0, 0.0); n];
        self.top.integrate(s, &mut plus);
        let mut minus = vec![Complex64::new(0.0, 0.0); n];
        self.bottom.integrate(s, &mut minus);
        for v in near.iter_mut().chain(plus.iter_mut()).chain(minus.iter_mut()) {
            *v *= h;
        }
        let is = Complex64::i() * s;
        PanelMoments {
            near,
            plus,
            minus,
            e_in: self.local.iter().map(|&u| (is * u).exp()).collect(),
            e_out: self.local.iter().map(|&u| (is * (1.0 - u)).exp()).collect(),
            e_full: is.exp(),
        }
    }
}

enum ZLookup {
    Inside { panel: usize, lagrange: Vec<f64> },
    Beyond { distance: f64 },
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

fn index_of(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|&v| v < x)
}

/// Transfer function at every point, unit sideband drive.
pub fn transfer_on_points(
    vs: &VirtualSourceGrid,
    medium: &AirMedium,
    points: &[ObsPoint],
    quad: &QuadSpec,
) -> Result<Vec<Complex64>> {
    quad.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(p) = points.iter().find(|p| !(p.z.is_finite() && p.z > 0.0 && p.x.is_finite())) {
        return Err(Error::Domain(format!("observation point ({}, {}) is not in front of the baffle", p.x, p.z)));
    }
    let fa = vs.channel.audio_frequency;
    let k = medium.audio_wavenumber(fa)?;
    let order = vs.z.order;
    if vs.rho.order != order {
        return Err(Error::Contract("radial and axial panel orders differ".into()));
    }

    let rho_obs = sorted_unique(points.iter().map(|p| p.rho()));
    let z_obs = sorted_unique(points.iter().map(|p| p.z));
    let point_idx: Vec<(usize, usize)> = points
        .iter()
        .map(|p| (index_of(&rho_obs, p.rho()), index_of(&z_obs, p.z)))
        .collect();

    let z_breaks = &vs.z.breaks;
    let z_end = *z_breaks.last().unwrap();
    let rho_end = *vs.rho.breaks.last().unwrap();
    let n_zp = vs.z.panels();
    let n_z = vs.z.len();
    let n_r = vs.rho.len();

    let local: Vec<f64> = rule(order).nodes.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let lookups: Vec<ZLookup> = z_obs
        .iter()
        .map(|&z| {
            if z >= z_end {
                ZLookup::Beyond { distance: z - z_end }
            } else {
                let p = z_breaks.partition_point(|&b| b <= z).saturating_sub(1).min(n_zp - 1);
                let u = (z - z_breaks[p]) / (z_breaks[p + 1] - z_breaks[p]);
                ZLookup::Inside {
                    panel: p,
                    lagrange: lagrange_weights(&local, u),
                }
            }
        })
        .collect();

    // Width classes of the axial panels.
    let mut widths: Vec<f64> = Vec::new();
    let panel_class: Vec<usize> = z_breaks
        .windows(2)
        .map(|w| {
            let h = w[1] - w[0];
            match widths.iter().position(|&c| (c - h).abs() <= 1e-9 * c) {
                Some(i) => i,
                None => {
                    widths.push(h);
                    widths.len() - 1
                }
            }
        })
        .collect();

    let mu_max = quad.mu_max.max(2.0 * k.real);
    let rho_span = rho_obs.last().unwrap() + rho_end;
    let z_span = z_end.max(*z_obs.last().unwrap());
    let nodes = mu_rule(k, rho_span, z_span, mu_max, quad.mu_panel_phase);

    let mut s_re = Array2::<f64>::zeros((n_z, n_r));
    let mut s_im = Array2::<f64>::zeros((n_z, n_r));
    for iz in 0..n_z {
        for ir in 0..n_r {
            let q = vs.at(iz, ir);
            s_re[[iz, ir]] = q.re;
            s_im[[iz, ir]] = q.im;
        }
    }
    let rules = LocalRules::new(order);
    let rho_local_gl = rule(16);

    const BLOCK: usize = 96;
    let partials: Vec<Vec<Complex64>> = nodes
        .par_chunks(BLOCK)
        .map(|block| {
            let b = block.len();
            let mu_top = block.iter().map(|n| n.mu).fold(0.0, f64::max);
            // Radial transform matrix for this block.
            let mut c = Array2::<f64>::zeros((b, n_r));
            for (p, w) in vs.rho.breaks.windows(2).enumerate() {
                let subs = ((mu_top * (w[1] - w[0]) / 8.0).ceil() as usize).max(1);
                for sw in uniform_breaks(w[0], w[1], subs).windows(2) {
                    for (r, wr) in rho_local_gl.mapped(sw[0], sw[1]) {
                        let ell = lagrange_weights(&local, (r - w[0]) / (w[1] - w[0]));
                        for (j, node) in block.iter().enumerate() {
                            let v = wr * r * j0(node.mu * r);
                            for (l, &e) in ell.iter().enumerate() {
                                c[[j, p * order + l]] += v * e;
                            }
                        }
                    }
                }
            }
            let q_re = c.dot(&s_re.t());
            let q_im = c.dot(&s_im.t());

            let mut h = vec![Complex64::new(0.0, 0.0); points.len()];
            let mut f_nodes = vec![Complex64::new(0.0, 0.0); n_z];
            let mut g_plus = vec![Complex64::new(0.0, 0.0); n_zp + 1];
            let mut g_minus = vec![Complex64::new(0.0, 0.0); n_zp + 1];
            let mut f_obs = vec![Complex64::new(0.0, 0.0); z_obs.len()];
            let mut j_obs = vec![0.0; rho_obs.len()];
            for (j, node) in block.iter().enumerate() {
                let moments: Vec<PanelMoments> = widths.iter().map(|&hw| rules.moments(node.kz, hw)).collect();
                let qv = |i: usize| Complex64::new(q_re[[j, i]], q_im[[j, i]]);
                g_plus[0] = Complex64::new(0.0, 0.0);
                for p in 0..n_zp {
                    let m = &moments[panel_class[p]];
                    let mut acc = g_plus[p] * m.e_full;
                    for l in 0..order {
                        acc += m.plus[l] * qv(p * order + l);
                    }
                    g_plus[p + 1] = acc;
                }
                g_minus[n_zp] = Complex64::new(0.0, 0.0);
                for p in (0..n_zp).rev() {
                    let m = &moments[panel_class[p]];
                    let mut acc = g_minus[p + 1] * m.e_full;
                    for l in 0..order {
                        acc += m.minus[l] * qv(p * order + l);
                    }
                    g_minus[p] = acc;
                }
                for p in 0..n_zp {
                    let m = &moments[panel_class[p]];
                    for l in 0..order {
                        let mut acc = g_plus[p] * m.e_in[l] + g_minus[p + 1] * m.e_out[l];
                        for lp in 0..order {
                            acc += m.near[l * order + lp] * qv(p * order + lp);
                        }
                        f_nodes[p * order + l] = acc;
                    }
                }
                for (fo, lk) in f_obs.iter_mut().zip(&lookups) {
                    *fo = match lk {
                        ZLookup::Beyond { distance } => g_plus[n_zp] * (Complex64::i() * node.kz * *distance).exp(),
                        ZLookup::Inside { panel, lagrange } => lagrange
                            .iter()
                            .enumerate()
                            .map(|(l, &w)| f_nodes[panel * order + l] * w)
                            .sum(),
                    };
                }
                for (jo, &r) in j_obs.iter_mut().zip(&rho_obs) {
                    *jo = j0(node.mu * r);
                }
                for (hm, &(ir, iz)) in h.iter_mut().zip(&point_idx) {
                    *hm += node.weight * f_obs[iz] * j_obs[ir];
                }
            }
            h
        })
        .collect();

    let scale = 0.5 * medium.density * 2.0 * std::f64::consts::PI * fa;
    let mut total = vec![Complex64::new(0.0, 0.0); points.len()];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    for t in &mut total {
        *t *= scale;
    }
    Ok(total)
}
