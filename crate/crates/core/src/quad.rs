//! Gauss–Legendre rules, composite panel layouts and a small adaptive
//! integrator for complex-valued integrands.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Shared, lazily built rule of order `n`.
pub fn rule(n: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
    let map = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().expect("quadrature rule cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Box::leak(Box::new(GaussLegendre::new(n))))
}

/// A composite quadrature: nodes, weights and the panel layout that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Panel boundaries, `breaks.len() == panels + 1`.
    pub breaks: Vec<f64>,
    pub order: usize,
}

impl Composite {
    /// Gauss–Legendre of order `order` on each interval between consecutive breakpoints.
    pub fn from_breaks(breaks: Vec<f64>, order: usize) -> Self {
        let gl = rule(order);
        let mut nodes = Vec::with_capacity((breaks.len().saturating_sub(1)) * order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for w in breaks.windows(2) {
            for (x, wt) in gl.mapped(w[0], w[1]) {
                nodes.push(x);
                weights.push(wt);
            }
        }
        Self {
            nodes,
            weights,
            breaks,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn panels(&self) -> usize {
        self.breaks.len().saturating_sub(1)
    }
}

/// Breakpoints on `[a, b]` whose local spacing follows `width(x)`, clamped to
/// at least `min_width`. The final panel is merged when it would be a sliver.
pub fn graded_breaks(a: f64, b: f64, min_width: f64, width: impl Fn(f64) -> f64) -> Vec<f64> {
    assert!(b > a && min_width > 0.0);
    let mut breaks = vec![a];
    let mut x = a;
    while x < b {
        let h = width(x).max(min_width);
        let next = x + h;
        if next >= b - 0.25 * h {
            breaks.push(b);
            break;
        }
        breaks.push(next);
        x = next;
    }
    breaks
}

/// Uniformly spaced breakpoints with `n` panels.
pub fn uniform_breaks(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n)
        .map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 })
        .collect()
}

/// Adaptive bisection with a 16/32-point Gauss–Legendre pair.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for Adaptive {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_depth: 24,
        }
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
    pub converged: bool,
}

impl Adaptive {
    pub fn integrate<F: Fn(f64) -> Complex64>(&self, f: &F, a: f64, b: f64) -> Estimate {
        let coarse = gl_sum(f, a, b, rule(16));
        let total_scale = coarse.norm();
        let mut out = Estimate {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            converged: true,
        };
        self.recurse(f, a, b, coarse, total_scale, 0, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> Complex64>(
        &self,
        f: &F,
        a: f64,
        b: f64,
        whole: Complex64,
        scale: f64,
        depth: u32,
        out: &mut Estimate,
    ) {
        let m = 0.5 * (a + b);
        let left = gl_sum(f, a, m, rule(16));
        let right = gl_sum(f, m, b, rule(16));
        let refined = left + right;
        let err = (refined - whole).norm();
        let tol = (self.rel_tol * scale.max(refined.norm())).max(self.abs_tol);
        if err <= tol || depth >= self.max_depth {
            if err > tol {
                out.converged = false;
            }
            out.value += refined;
            out.error += err;
            return;
        }
        self.recurse(f, a, m, left, scale, depth + 1, out);
        self.recurse(f, m, b, right, scale, depth + 1, out);
    }
}

fn gl_sum<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, gl: &GaussLegendre) -> Complex64 {
    gl.mapped(a, b).map(|(x, w)| f(x) * w).sum()
}

/// Fixed composite Gauss–Legendre sum of a complex integrand.
pub fn composite_sum<F: Fn(f64) -> Complex64>(f: F, rule: &Composite) -> Complex64 {
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| f(x) * w)
        .sum()
}

/// Lagrange basis values of the nodes `xs` evaluated at `x`.
pub fn lagrange_weights(xs: &[f64], x: f64) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(j, &xj)| {
            xs.iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &xm)| (x - xm) / (xj - xm))
                .product()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 8, 16, 33] {
            let gl = GaussLegendre::new(n);
            for deg in 0..(2 * n) {
                let approx: f64 = gl
                    .nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted_and_weights_positive() {
        let gl = GaussLegendre::new(24);
        assert!(gl.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(gl.weights.iter().all(|&w| w > 0.0));
        assert!((gl.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_oscillatory_integrand() {
        let f = |x: f64| Complex64::new(0.0, 40.0 * x).exp();
        let est = Adaptive::default().integrate(&f, 0.0, 3.0);
        let exact = (Complex64::new(0.0, 120.0).exp() - 1.0) / Complex64::new(0.0, 40.0);
        assert!(est.converged);
        assert!((est.value - exact).norm() < 1e-10);
    }

    #[test]
    fn graded_breaks_cover_interval() {
        let b = graded_breaks(0.0, 1.0, 1e-3, |x| 0.01 + 0.1 * x);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lagrange_reproduces_cubic() {
        let xs = [0.1, 0.4, 0.6, 0.9];
        let p = |x: f64| 1.0 - 2.0 * x + 3.0 * x * x * x;
        let w = lagrange_weights(&xs, 0.33);
        let v: f64 = xs.iter().zip(&w).map(|(x, w)| p(*x) * w).sum();
        assert!((v - p(0.33)).abs() < 1e-14);
    }
}
