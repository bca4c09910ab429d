//! Bright/dark zone control by acoustic contrast maximization.
//!
//! With `A = H_bᴴ H_b` and `B = H_dᴴ H_d`, the weights maximizing
//! `wᴴ A w / wᴴ B w` are the top generalized eigenvector of `(A, B)`. The
//! pair is solved by Cholesky reduction of `B + δI` followed by a Hermitian
//! eigendecomposition.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::{AudioTransferGrid, ObsPoint};

/// Carrier whose weight is normalized to `1 + 0i`.
pub const REFERENCE_CARRIER: f64 = 40e3;

/// Rectangular grid of control points in the `Oxz` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub nx: usize,
    pub nz: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

impl ZoneSpec {
    /// `-0.2 ≤ x ≤ 0.2`, `0.1 ≤ z ≤ 1` m, 10 × 10 points.
    pub fn paper_bright() -> Self {
        Self {
            x_range: (-0.2, 0.2),
            z_range: (0.1, 1.0),
            nx: 10,
            nz: 10,
        }
    }

    /// `-1 ≤ x ≤ 1`, `1.5 ≤ z ≤ 6` m, 30 × 45 points.
    pub fn paper_dark() -> Self {
        Self {
            x_range: (-1.0, 1.0),
            z_range: (1.5, 6.0),
            nx: 30,
            nz: 45,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
        if !ok(self.x_range) || !ok(self.z_range) {
            return Err(Error::InvalidParameter(format!("zone ranges must satisfy min < max: {self:?}")));
        }
        if self.nx == 0 || self.nz == 0 {
            return Err(Error::InvalidParameter("zone needs at least one point per axis".into()));
        }
        if self.z_range.0 <= 0.0 {
            return Err(Error::InvalidParameter("zone must lie in front of the baffle".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform tensor grid, `x` varying fastest. A single point per axis
    /// sits at the middle of the range.
    pub fn points(&self) -> Vec<ObsPoint> {
        let xs = linspace(self.x_range.0, self.x_range.1, self.nx);
        let zs = linspace(self.z_range.0, self.z_range.1, self.nz);
        zs.iter()
            .flat_map(|&z| xs.iter().map(move |&x| ObsPoint::new(x, z)))
            .collect()
    }
}

/// Anything that can hand out transfer rows for control points.
pub trait TransferProvider {
    fn carriers(&self) -> &[f64];
    fn transfer_row(&self, point: ObsPoint) -> Option<Vec<Complex64>>;
}

/// Rows are looked up by `(|x|, z)`; the field is axisymmetric.
pub struct IndexedTransfer<'a> {
    grid: &'a AudioTransferGrid,
    index: HashMap<(u64, u64), usize>,
}

impl<'a> IndexedTransfer<'a> {
    pub fn new(grid: &'a AudioTransferGrid) -> Self {
        let index = grid
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.rho().to_bits(), p.z.to_bits()), i))
            .collect();
        Self { grid, index }
    }
}

impl TransferProvider for IndexedTransfer<'_> {
    fn carriers(&self) -> &[f64] {
        &self.grid.carriers
    }

    fn transfer_row(&self, point: ObsPoint) -> Option<Vec<Complex64>> {
        self.index
            .get(&(point.rho().to_bits(), point.z.to_bits()))
            .map(|&i| self.grid.row(i).to_vec())
    }
}

impl TransferProvider for AudioTransferGrid {
    fn carriers(&self) -> &[f64] {
        &self.carriers
    }

    fn transfer_row(&self, point: ObsPoint) -> Option<Vec<Complex64>> {
        self.find(point).map(|i| self.row(i).to_vec())
    }
}

/// `H(m, n) = H_n(r_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub points: Vec<ObsPoint>,
    pub carriers: Vec<f64>,
    pub matrix: DMatrix<Complex64>,
}

impl TransferMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Columns restricted to the listed carriers, in that order.
    pub fn select_carriers(&self, carriers: &[f64]) -> Result<Self> {
        let idx = carriers
            .iter()
            .map(|f| {
                self.carriers
                    .iter()
                    .position(|c| (c - f).abs() < 1e-6)
                    .ok_or_else(|| Error::Contract(format!("carrier {f} Hz not in transfer matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        let matrix = DMatrix::from_fn(self.rows(), idx.len(), |m, j| self.matrix[(m, idx[j])]);
        Ok(Self {
            points: self.points.clone(),
            carriers: carriers.to_vec(),
            matrix,
        })
    }

    /// Mean of `|H w|²` over the control points.
    pub fn mean_square(&self, weights: &[Complex64]) -> f64 {
        let w = DVector::from_column_slice(weights);
        (&self.matrix * w).norm_squared() / self.rows() as f64
    }
}

pub fn build_transfer_matrix(zone: &ZoneSpec, provider: &dyn TransferProvider) -> Result<TransferMatrix> {
    zone.validate()?;
    let points = zone.points();
    let n = provider.carriers().len();
    let mut data = Vec::with_capacity(points.len() * n);
    let mut missing: Vec<ObsPoint> = Vec::new();
    for p in &points {
        match provider.transfer_row(*p) {
            Some(row) if row.len() == n => data.extend(row),
            _ => {
                missing.push(*p);
                data.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), n));
            }
        }
    }
    if let Some(first) = missing.first() {
        return Err(Error::MissingPoints {
            count: missing.len(),
            x: first.x,
            z: first.z,
        });
    }
    if data.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Contract("transfer matrix contains non-finite entries".into()));
    }
    if points.len() < n {
        log::warn!("zone has {} control points for {} carriers", points.len(), n);
    }
    Ok(TransferMatrix {
        matrix: DMatrix::from_row_slice(points.len(), n, &data),
        points,
        carriers: provider.carriers().to_vec(),
    })
}

/// Optimal weights and the contrast they reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccSolution {
    pub carriers: Vec<f64>,
    pub weights: Vec<Complex64>,
    /// `wᴴ A w / wᴴ B w` without regularization.
    pub contrast: f64,
    pub contrast_db: f64,
    /// Top eigenvalue of the regularized pair.
    pub eigenvalue: f64,
    pub regularization: f64,
}

fn quad_form(m: &DMatrix<Complex64>, w: &DVector<Complex64>) -> f64 {
    w.dotc(&(m * w)).re
}

/// Rayleigh quotient `wᴴ H_bᴴ H_b w / wᴴ H_dᴴ H_d w` (sums, not means).
pub fn rayleigh_quotient(bright: &TransferMatrix, dark: &TransferMatrix, weights: &[Complex64]) -> f64 {
    let w = DVector::from_column_slice(weights);
    (&bright.matrix * &w).norm_squared() / (&dark.matrix * &w).norm_squared()
}

/// Default Tikhonov factor; `δ = factor · trace(B) / M_d`.
pub const DEFAULT_REGULARIZATION: f64 = 1e-8;

pub fn acc_solve(bright: &TransferMatrix, dark: &TransferMatrix, regularization: f64) -> Result<AccSolution> {
    let n = bright.cols();
    if n == 0 {
        return Err(Error::Contract("no carriers".into()));
    }
    if dark.cols() != n || bright.carriers != dark.carriers {
        return Err(Error::Contract("bright and dark matrices have different carriers".into()));
    }
    if !(regularization.is_finite() && regularization >= 0.0) {
        return Err(Error::InvalidParameter(format!("regularization must be >= 0, got {regularization}")));
    }
    let a = bright.matrix.adjoint() * &bright.matrix;
    let b = dark.matrix.adjoint() * &dark.matrix;
    let (lambda, w) = generalized_top_eigen(&a, &b, regularization, dark.rows(), &bright.carriers)?;
    let weights: Vec<Complex64> = w.iter().cloned().collect();
    let contrast = quad_form(&a, &w) / quad_form(&b, &w);
    Ok(AccSolution {
        carriers: bright.carriers.clone(),
        weights,
        contrast,
        contrast_db: 10.0 * contrast.log10(),
        eigenvalue: lambda,
        regularization: regularization * b.trace().re / dark.rows() as f64,
    })
}

/// Top eigenpair of `A w = λ (B + δI) w` with `δ = reg·trace(B)/m_d`, normalized
/// to the reference carrier.
pub fn generalized_top_eigen(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    regularization: f64,
    m_d: usize,
    carriers: &[f64],
) -> Result<(f64, DVector<Complex64>)> {
    let n = a.nrows();
    let delta = regularization * b.trace().re / m_d.max(1) as f64;
    let mut breg = b.clone();
    for i in 0..n {
        breg[(i, i)] += Complex64::new(delta, 0.0);
    }
    let chol = breg.clone().cholesky().ok_or(Error::SingularDarkMatrix)?;
    let l = chol.l();
    // Reject numerically singular B when no regularization is asked for.
    let diag_min = (0..n).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
    let diag_max = (0..n).map(|i| l[(i, i)].re).fold(0.0, f64::max);
    if delta == 0.0 && !(diag_min > 1e-7 * diag_max) {
        return Err(Error::SingularDarkMatrix);
    }
    // C = L⁻¹ A L⁻ᴴ
    let linv_a = l.solve_lower_triangular(a).ok_or(Error::SingularDarkMatrix)?;
    let c_t = l.solve_lower_triangular(&linv_a.adjoint()).ok_or(Error::SingularDarkMatrix)?;
    let mut c = c_t.adjoint();
    // Symmetrize against rounding.
    c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(c);
    let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let reference = carriers.iter().position(|f| (f - REFERENCE_CARRIER).abs() < 1e-6);
    let tie = 1e-10 * top.abs().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, DVector<Complex64>)> = None;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if top - ev > tie {
            continue;
        }
        let y = eig.eigenvectors.column(i).into_owned();
        let w = l.adjoint().solve_upper_triangular(&y).ok_or(Error::SingularDarkMatrix)?;
        let w = w.unscale(w.norm());
        let score = reference.map(|r| w[r].norm()).unwrap_or(0.0);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, w));
        }
    }
    let (_, mut w) = best.ok_or(Error::SingularDarkMatrix)?;
    normalize(&mut w, reference);
    Ok((top, w))
}

/// Divide by the reference entry when it is nonzero; otherwise unit norm with
/// the first nonzero entry real and positive.
fn normalize(w: &mut DVector<Complex64>, reference: Option<usize>) {
    if let Some(r) = reference {
        let pivot = w[r];
        if pivot.norm() > 1e-14 * w.norm() {
            for v in w.iter_mut() {
                *v /= pivot;
            }
            w[r] = Complex64::new(1.0, 0.0);
            return;
        }
    }
    if let Some(p) = w.iter().find(|v| v.norm() > 1e-14).cloned() {
        let phase = p.conj() / p.norm();
        for v in w.iter_mut() {
            *v *= phase;
        }
    }
}

/// `‖A w - λ (B + δI) w‖ / (‖w‖ ‖A‖)` for a solution.
pub fn eigen_residual(bright: &TransferMatrix, dark: &TransferMatrix, sol: &AccSolution) -> f64 {
    let a = bright.matrix.adjoint() * &bright.matrix;
    let mut b = dark.matrix.adjoint() * &dark.matrix;
    for i in 0..b.nrows() {
        b[(i, i)] += Complex64::new(sol.regularization, 0.0);
    }
    let w = DVector::from_column_slice(&sol.weights);
    let r = &a * &w - (&b * &w) * Complex64::new(sol.eigenvalue, 0.0);
    r.norm() / (w.norm() * a.norm())
}

/// Mean-square bright over mean-square dark pressure, dB.
pub fn acoustic_contrast(bright: &TransferMatrix, dark: &TransferMatrix, weights: &[Complex64]) -> Result<f64> {
    if bright.cols() != weights.len() || dark.cols() != weights.len() {
        return Err(Error::Contract(format!(
            "{} weights for matrices with {} and {} columns",
            weights.len(),
            bright.cols(),
            dark.cols()
        )));
    }
    let eb = bright.mean_square(weights);
    let ed = dark.mean_square(weights);
    if ed == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (eb / ed).log10())
}

/// Farthest on-axis position within 10 dB of the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDistance {
    pub distance: f64,
    /// The profile never fell 10 dB below its maximum.
    pub unbounded: bool,
}

pub const EFFECTIVE_DROP_DB: f64 = 10.0;

pub fn effective_propagation_distance(profile: &[(f64, f64)]) -> Result<EffectiveDistance> {
    if profile.is_empty() {
        return Err(Error::Contract("empty axial profile".into()));
    }
    if !profile.windows(2).all(|w| w[1].0 > w[0].0) {
        return Err(Error::Contract("axial profile positions must be strictly increasing".into()));
    }
    let peak = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let threshold = peak - EFFECTIVE_DROP_DB;
    let last = profile.iter().rposition(|p| p.1 >= threshold).unwrap_or(0);
    if last + 1 == profile.len() {
        return Ok(EffectiveDistance {
            distance: profile[last].0,
            unbounded: true,
        });
    }
    let (z0, s0) = profile[last];
    let (z1, s1) = profile[last + 1];
    let distance = if s1.is_finite() {
        z0 + (z1 - z0) * (s0 - threshold) / (s0 - s1)
    } else {
        z0
    };
    Ok(EffectiveDistance {
        distance,
        unbounded: false,
    })
}
