//! The tangency variety `M(f) = {x : grad f(x) = lambda x}`, its sphere
//! slices, and slice component counts.
//!
//! Complex inputs use interleaved real coordinates `(re z1, im z1, ...)`; the
//! multiplier is appended as `(re lambda, im lambda)`. The gradient is the
//! conjugated one and inner products are Hermitian.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::to_complex;
use crate::expr::{DerivativeTable, Mode};
use crate::solve::{
    dedup_roots, min_norm_solve, newton_solve, MultistartOptions, NewtonOptions, Region, Root, SystemFamily,
};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TangencyError {
    #[error("the tangency defect is undefined at the origin")]
    Origin,
}

/// A gradient this small relative to its rounding magnitude counts as zero.
const CRITICAL_REL: f64 = 1e-10;

/// Gradient (conjugated in complex mode) at real coordinates `x`, as complex
/// numbers, plus its rounding magnitude and the exp-underflow flag.
pub(crate) fn gradient_at(table: &DerivativeTable, x: &[f64]) -> (Vec<Complex64>, f64, bool) {
    let n = table.arity();
    let mut mag = vec![0.0; n];
    match table.mode() {
        Mode::Real => {
            let mut g = vec![0.0; n];
            let under = table.real_gradient(x, &mut g, &mut mag);
            (g.into_iter().map(|v| Complex64::new(v, 0.0)).collect(), norm(&mag), under)
        }
        Mode::Complex => {
            let mut g = vec![Complex64::new(0.0, 0.0); n];
            let under = table.complex_gradient(&to_complex(x), &mut g, &mut mag);
            (g, norm(&mag), under)
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn cnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

fn as_complex(table: &DerivativeTable, x: &[f64]) -> Vec<Complex64> {
    match table.mode() {
        Mode::Real => x.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        Mode::Complex => to_complex(x),
    }
}

/// `sum a_i conj(b_i)`.
fn hermitian(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Normalised tangency defect `|w| / |grad f|` with
/// `w = grad f - (<grad f, x> / <x, x>) x`. Zero at critical points.
pub fn tangency_residual(table: &DerivativeTable, x: &[f64]) -> Result<f64, TangencyError> {
    let z = as_complex(table, x);
    let zz = hermitian(&z, &z).re;
    if zz == 0.0 {
        return Err(TangencyError::Origin);
    }
    let (g, mag, _) = gradient_at(table, x);
    let gn = cnorm(&g);
    if gn <= CRITICAL_REL * mag || gn == 0.0 {
        return Ok(0.0);
    }
    let c = hermitian(&g, &z) / zz;
    let w: Vec<Complex64> = g.iter().zip(&z).map(|(gi, zi)| gi - c * zi).collect();
    Ok((cnorm(&w) / gn).min(1.0))
}

/// Random real affine slice `<u, x> = s R` making the complex system square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub u: Vec<f64>,
    pub s: f64,
}

impl SliceSpec {
    /// Slice `index` derived from the master seed; `dim` is the real dimension.
    pub fn derive(seed: u64, index: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)));
        let u = Region::Sphere { radius: 1.0, dim }.sample(&mut rng);
        let s = rng.random_range(-0.3..0.3);
        SliceSpec { u, s }
    }
}

/// The Lagrange system `(grad f - lambda x, |x|^2 - R^2)` as a family in `R`,
/// plus the affine slice row in complex mode.
#[derive(Debug, Clone)]
pub struct LagrangeFamily<'a> {
    table: &'a DerivativeTable,
    slice: Option<SliceSpec>,
}

impl<'a> LagrangeFamily<'a> {
    pub fn real(table: &'a DerivativeTable) -> Self {
        assert_eq!(table.mode(), Mode::Real);
        LagrangeFamily { table, slice: None }
    }

    pub fn complex(table: &'a DerivativeTable, slice: SliceSpec) -> Self {
        assert_eq!(table.mode(), Mode::Complex);
        LagrangeFamily {
            table,
            slice: Some(slice),
        }
    }

    /// Real coordinates of `x` (without the multiplier).
    pub fn x_dim(&self) -> usize {
        match self.table.mode() {
            Mode::Real => self.table.arity(),
            Mode::Complex => 2 * self.table.arity(),
        }
    }

    fn unknowns(&self) -> usize {
        match self.table.mode() {
            Mode::Real => self.table.arity() + 1,
            Mode::Complex => 2 * self.table.arity() + 2,
        }
    }

    fn rows(&self) -> usize {
        self.x_dim() + 1 + usize::from(self.slice.is_some())
    }

    fn eval_rows(&self, p: &[f64], r: f64, out: &mut [f64]) {
        let xd = self.x_dim();
        let x = &p[..xd];
        let (g, _, _) = gradient_at(self.table, x);
        match self.table.mode() {
            Mode::Real => {
                let lam = p[xd];
                for i in 0..xd {
                    out[i] = g[i].re - lam * x[i];
                }
            }
            Mode::Complex => {
                let lam = Complex64::new(p[xd], p[xd + 1]);
                let z = to_complex(x);
                for j in 0..z.len() {
                    let v = g[j] - lam * z[j];
                    out[2 * j] = v.re;
                    out[2 * j + 1] = v.im;
                }
            }
        }
        out[xd] = x.iter().map(|v| v * v).sum::<f64>() - r * r;
        if let Some(sl) = &self.slice {
            out[xd + 1] = sl.u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - sl.s * r;
        }
    }

    fn eval_jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let xd = self.x_dim();
        let x = &p[..xd];
        jac.fill(0.0);
        let h = &self.table.hessian;
        match self.table.mode() {
            Mode::Real => {
                let lam = p[xd];
                for i in 0..xd {
                    for j in 0..xd {
                        jac[(i, j)] = h[i][j].value(x);
                    }
                    jac[(i, i)] -= lam;
                    jac[(i, xd)] = -x[i];
                }
            }
            Mode::Complex => {
                let lam = Complex64::new(p[xd], p[xd + 1]);
                let z = to_complex(x);
                let n = z.len();
                // F_j = conj(h_j(z)) - lambda z_j with h_j holomorphic
                for j in 0..n {
                    for k in 0..n {
                        let hv = h[j][k].value(&z);
                        let (a, b) = (hv.re, hv.im);
                        jac[(2 * j, 2 * k)] = a;
                        jac[(2 * j, 2 * k + 1)] = -b;
                        jac[(2 * j + 1, 2 * k)] = -b;
                        jac[(2 * j + 1, 2 * k + 1)] = -a;
                    }
                    jac[(2 * j, 2 * j)] -= lam.re;
                    jac[(2 * j, 2 * j + 1)] += lam.im;
                    jac[(2 * j + 1, 2 * j)] -= lam.im;
                    jac[(2 * j + 1, 2 * j + 1)] -= lam.re;
                    jac[(2 * j, xd)] = -z[j].re;
                    jac[(2 * j, xd + 1)] = z[j].im;
                    jac[(2 * j + 1, xd)] = -z[j].im;
                    jac[(2 * j + 1, xd + 1)] = -z[j].re;
                }
            }
        }
        for j in 0..xd {
            jac[(xd, j)] = 2.0 * x[j];
        }
        if let Some(sl) = &self.slice {
            for j in 0..xd {
                jac[(xd + 1, j)] = sl.u[j];
            }
        }
    }

    fn eval_scale(&self, p: &[f64], r: f64, out: &mut [f64]) {
        let xd = self.x_dim();
        let x = &p[..xd];
        let n = self.table.arity();
        let mut g = vec![0.0; n];
        let mut mag = vec![0.0; n];
        let lam = match self.table.mode() {
            Mode::Real => {
                self.table.real_gradient(x, &mut g, &mut mag);
                p[xd].abs()
            }
            Mode::Complex => {
                let mut gc = vec![Complex64::new(0.0, 0.0); n];
                self.table.complex_gradient(&to_complex(x), &mut gc, &mut mag);
                Complex64::new(p[xd], p[xd + 1]).norm()
            }
        };
        let per = xd / n;
        for j in 0..n {
            let zj = norm(&x[per * j..per * (j + 1)]);
            for row in per * j..per * (j + 1) {
                out[row] = mag[j] + lam * zj;
            }
        }
        out[xd] = x.iter().map(|v| v * v).sum::<f64>() + r * r;
        if self.slice.is_some() {
            out[xd + 1] = norm(x) + r;
        }
    }

    /// Starting point on the sphere: `x` with the least-squares multiplier.
    pub fn start_from(&self, x: &[f64]) -> Vec<f64> {
        let z = as_complex(self.table, x);
        let (g, _, _) = gradient_at(self.table, x);
        let zz = hermitian(&z, &z).re;
        let lam = if zz > 0.0 {
            hermitian(&g, &z) / zz
        } else {
            Complex64::new(0.0, 0.0)
        };
        let mut p = x.to_vec();
        p.push(lam.re);
        if self.table.mode() == Mode::Complex {
            p.push(lam.im);
        }
        if p.iter().all(|v| v.is_finite()) {
            p
        } else {
            let mut p = x.to_vec();
            p.resize(self.unknowns(), 0.0);
            p
        }
    }
}

impl SystemFamily for LagrangeFamily<'_> {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.rows(), self.unknowns());
        self.unknowns()
    }

    fn residual(&self, p: &[f64], r: f64, out: &mut [f64]) {
        self.eval_rows(p, r, out)
    }

    fn jacobian(&self, p: &[f64], _r: f64, jac: &mut DMatrix<f64>) {
        self.eval_jacobian(p, jac)
    }

    fn param_derivative(&self, _p: &[f64], r: f64, out: &mut [f64]) {
        out.fill(0.0);
        let xd = self.x_dim();
        out[xd] = -2.0 * r;
        if let Some(sl) = &self.slice {
            out[xd + 1] = -sl.s;
        }
    }

    fn residual_scale(&self, p: &[f64], r: f64, out: &mut [f64]) {
        self.eval_scale(p, r, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub tol_residual: f64,
    pub tol_tau: f64,
    /// Affine slices per sphere in complex mode.
    pub k_slices: usize,
    /// Random sphere points used for the degenerate-slice test.
    pub degeneracy_samples: usize,
    /// Interior samples per candidate edge in component counting.
    pub edge_samples: usize,
}

impl Default for TangencyConfig {
    fn default() -> Self {
        TangencyConfig {
            n_starts: 200,
            seed: 42,
            tol_residual: 1e-9,
            tol_tau: 1e-7,
            k_slices: 8,
            degeneracy_samples: 64,
            edge_samples: 16,
        }
    }
}

impl TangencyConfig {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol_residual: self.tol_residual,
            ..NewtonOptions::default()
        }
    }
}

/// One point of `M(f)` on the sphere of radius `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyPoint {
    /// Real coordinates (interleaved in complex mode).
    pub x: Vec<f64>,
    pub lambda: Value,
    pub radius: f64,
    pub f_value: Value,
    pub residual: f64,
    pub tau: f64,
    /// Affine slice index in complex mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
}

impl TangencyPoint {
    /// Validates a solver root of the Lagrange system at radius `r`.
    pub fn from_root(
        table: &DerivativeTable,
        root: &Root,
        r: f64,
        slice: Option<usize>,
        config: &TangencyConfig,
    ) -> Option<Self> {
        if !root.converged || !root.point.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mode = table.mode();
        let xd = match mode {
            Mode::Real => table.arity(),
            Mode::Complex => 2 * table.arity(),
        };
        let x = root.point[..xd].to_vec();
        let radius = norm(&x);
        if (radius - r).abs() > 1e-9 * r {
            return None;
        }
        let (_, _, underflow) = gradient_at(table, &x);
        if underflow {
            return None;
        }
        let tau = tangency_residual(table, &x).ok()?;
        if tau > config.tol_tau {
            return None;
        }
        let (f_value, lambda) = match mode {
            Mode::Real => (Value::Real(table.function.value(&x[..])), Value::Real(root.point[xd])),
            Mode::Complex => (
                Value::from_complex(table.function.value(&to_complex(&x)), Mode::Complex),
                Value::Complex {
                    re: root.point[xd],
                    im: root.point[xd + 1],
                },
            ),
        };
        if !f_value.is_finite() {
            return None;
        }
        Some(TangencyPoint {
            x,
            lambda,
            radius: r,
            f_value,
            residual: root.residual_norm,
            tau,
            slice,
        })
    }

    /// Unknown vector `(x, lambda)` of the Lagrange system.
    pub fn unknowns(&self) -> Vec<f64> {
        let mut p = self.x.clone();
        match self.lambda {
            Value::Real(l) => p.push(l),
            Value::Complex { re, im } => {
                p.push(re);
                p.push(im);
            }
        }
        p
    }
}

/// Range of `f` on a sphere where `M(f)` fills the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateSlice {
    pub radius: f64,
    /// Fraction of random sphere points that were tangent.
    pub tangent_fraction: f64,
    /// Range of `f` (real part in complex mode) over the samples.
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceResult {
    pub radius: f64,
    pub points: Vec<TangencyPoint>,
    pub degenerate: Option<DegenerateSlice>,
}

/// Tests whether `M(f)` fills the sphere (at least 90% tangent samples).
/// Only meaningful for two or more variables.
pub fn degenerate_slice(table: &DerivativeTable, r: f64, config: &TangencyConfig) -> Option<DegenerateSlice> {
    if table.arity() < 2 {
        return None;
    }
    let dim = match table.mode() {
        Mode::Real => table.arity(),
        Mode::Complex => 2 * table.arity(),
    };
    let samples = Region::Sphere { radius: r, dim }.samples(config.degeneracy_samples, config.seed ^ 0xD1CE);
    let mut tangent = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &samples {
        if tangency_residual(table, s).map(|t| t <= config.tol_tau).unwrap_or(false) {
            tangent += 1;
        }
        let v = match table.mode() {
            Mode::Real => table.function.value(&s[..]),
            Mode::Complex => table.function.value(&to_complex(s)).re,
        };
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let fraction = tangent as f64 / samples.len() as f64;
    (fraction >= 0.9).then_some(DegenerateSlice {
        radius: r,
        tangent_fraction: fraction,
        f_min: lo,
        f_max: hi,
    })
}

/// Solves one (sliced) Lagrange system from `n_starts` sphere starts.
pub(crate) fn solve_slice(
    table: &DerivativeTable,
    family: &LagrangeFamily<'_>,
    slice: Option<usize>,
    r: f64,
    n_starts: usize,
    seed: u64,
    config: &TangencyConfig,
) -> Vec<TangencyPoint> {
    let xd = family.x_dim();
    let starts: Vec<Vec<f64>> = Region::Sphere { radius: r, dim: xd }
        .samples(n_starts.max(1), seed)
        .iter()
        .map(|x| family.start_from(x))
        .collect();
    let sys = family.at(r);
    let newton = config.newton();
    let roots: Vec<Root> = starts
        .par_iter()
        .map(|s| newton_solve(&sys, s, &newton))
        .filter(|r| r.converged)
        .collect();
    let roots = dedup_roots(roots, MultistartOptions::default().dedup_rel, Some(xd));
    roots
        .iter()
        .filter_map(|root| TangencyPoint::from_root(table, root, r, slice, config))
        .collect()
}

fn sort_points(points: &mut [TangencyPoint]) {
    points.sort_by(|a, b| {
        for (x, y) in a.x.iter().zip(&b.x) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        a.slice.cmp(&b.slice)
    });
}

/// Drops points within `rel * (1 + |x|)` of an earlier point (same slice).
pub(crate) fn dedup_points(mut points: Vec<TangencyPoint>, rel: f64) -> Vec<TangencyPoint> {
    sort_points(&mut points);
    let mut kept: Vec<TangencyPoint> = Vec::new();
    for p in points {
        let tol = rel * (1.0 + norm(&p.x));
        let dup = kept.iter().any(|q| {
            q.slice == p.slice && norm(&p.x.iter().zip(&q.x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= tol
        });
        if !dup {
            kept.push(p);
        }
    }
    kept
}

/// Samples `M(f) ∩ S_R` by multistart Newton on the Lagrange system.
pub fn sphere_slice(table: &DerivativeTable, r: f64, config: &TangencyConfig) -> SliceResult {
    assert!(r > 0.0, "sphere radius must be positive");
    if let Some(d) = degenerate_slice(table, r, config) {
        return SliceResult {
            radius: r,
            points: Vec::new(),
            degenerate: Some(d),
        };
    }
    let points = sample_slice(table, r, config.n_starts, config.seed, config);
    SliceResult {
        radius: r,
        points,
        degenerate: None,
    }
}

pub(crate) fn sample_slice(
    table: &DerivativeTable,
    r: f64,
    n_starts: usize,
    seed: u64,
    config: &TangencyConfig,
) -> Vec<TangencyPoint> {
    let points = match table.mode() {
        Mode::Real => solve_slice(table, &LagrangeFamily::real(table), None, r, n_starts, seed, config),
        Mode::Complex => {
            let xd = 2 * table.arity();
            (0..config.k_slices)
                .flat_map(|k| {
                    let fam = LagrangeFamily::complex(table, SliceSpec::derive(config.seed, k, xd));
                    solve_slice(table, &fam, Some(k), r, n_starts, seed.wrapping_add(k as u64 * 7919), config)
                })
                .collect()
        }
    };
    dedup_points(points, MultistartOptions::default().dedup_rel)
}

/// Projects `p0 = (x, lambda)` onto `{grad f = lambda x, |x| = R}` with
/// minimal-norm Gauss-Newton steps (the system may be underdetermined).
fn project_unsliced(family: &LagrangeFamily<'_>, p0: &[f64], r: f64, tol: f64) -> Option<Vec<f64>> {
    let rows = family.rows();
    let cols = family.unknowns();
    let mut p = p0.to_vec();
    let mut f = vec![0.0; rows];
    let mut s = vec![0.0; rows];
    let mut ft = vec![0.0; rows];
    let mut jac = DMatrix::zeros(rows, cols);
    let weighted = |f: &[f64], s: &[f64]| f.iter().zip(s).map(|(a, b)| (a / (1.0 + b)).powi(2)).sum::<f64>().sqrt();
    for _ in 0..40 {
        family.eval_rows(&p, r, &mut f);
        family.eval_scale(&p, r, &mut s);
        let res = weighted(&f, &s);
        if !res.is_finite() {
            return None;
        }
        family.eval_jacobian(&p, &mut jac);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let step = min_norm_solve(&jac, &neg)?;
        if res <= tol && norm(&step) <= 1e-6 * (1.0 + norm(&p)) {
            return Some(p);
        }
        let mut t = 1.0;
        let mut moved = false;
        let mut trial = p.clone();
        for _ in 0..20 {
            for i in 0..cols {
                trial[i] = p[i] + t * step[i];
            }
            family.eval_rows(&trial, r, &mut ft);
            let rt = weighted(&ft, &s);
            if rt.is_finite() && rt < res {
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return (res <= tol).then_some(p);
        }
        p = trial;
    }
    None
}

/// Number of connected components of the slice represented by `points`.
///
/// Real slices are generically finite, so each point is its own component.
/// In complex mode the slice is a curve; two points are joined when the
/// great-circle arc between them projects back onto the slice at every
/// sampled interior point, with small displacement.
pub fn slice_components(table: &DerivativeTable, points: &[TangencyPoint], r: f64, config: &TangencyConfig) -> usize {
    if points.len() <= 1 || table.mode() == Mode::Real {
        return points.len();
    }
    let family = LagrangeFamily { table, slice: None };
    let n = points.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let edges: Vec<(usize, usize)> = pairs
        .par_iter()
        .copied()
        .filter(|&(i, j)| arc_on_slice(&family, &points[i].x, &points[j].x, r, config))
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

fn arc_on_slice(family: &LagrangeFamily<'_>, a: &[f64], b: &[f64], r: f64, config: &TangencyConfig) -> bool {
    let gap = norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    if gap == 0.0 {
        return true;
    }
    let k = config.edge_samples;
    for s in 1..=k {
        let t = s as f64 / (k + 1) as f64;
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        let mn = norm(&mid);
        if mn < 1e-9 * r {
            return false;
        }
        let on_sphere: Vec<f64> = mid.iter().map(|v| v * r / mn).collect();
        let start = family.start_from(&on_sphere);
        let Some(p) = project_unsliced(family, &start, r, config.tol_residual) else {
            return false;
        };
        let x = &p[..family.x_dim()];
        let moved = norm(&x.iter().zip(&on_sphere).map(|(u, v)| u - v).collect::<Vec<_>>());
        if moved > 0.25 * gap {
            return false;
        }
        if tangency_residual(family.table, x).map(|tau| tau > config.tol_tau).unwrap_or(true) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::solve::newton_solve;

    fn table(text: &str, vars: &[&str]) -> DerivativeTable {
        DerivativeTable::new(&Expression::parse(text, vars, Mode::Real).unwrap())
    }

    #[test]
    fn tau_examples() {
        let g = table("x^2*y^2 + 2*x*y", &["x", "y"]);
        assert_eq!(tangency_residual(&g, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(tangency_residual(&g, &[1.0, 0.0]).unwrap(), 1.0);
        // on the critical curve xy = -1
        assert_eq!(tangency_residual(&g, &[2.0, -0.5]).unwrap(), 0.0);
        assert_eq!(tangency_residual(&g, &[0.0, 0.0]), Err(TangencyError::Origin));
        let q = table("x^2 + y^2", &["x", "y"]);
        assert!(tangency_residual(&q, &[0.3, -2.0]).unwrap() < 1e-15);
    }

    #[test]
    fn lagrange_roots_at_radius_ten() {
        let g = table("x^2*y^2 + 2*x*y", &["x", "y"]);
        let fam = LagrangeFamily::real(&g);
        let opts = NewtonOptions::default();
        let root = newton_solve(&fam.at(10.0), &[9.9, -0.1, 0.0], &opts);
        assert!(root.converged);
        // x^2 + 1/x^2 = 100
        let x = ((100.0 + (100.0f64 * 100.0 - 4.0).sqrt()) / 2.0).sqrt();
        assert!((root.point[0] - x).abs() < 1e-9 && (root.point[1] + 1.0 / x).abs() < 1e-9);
        assert!(root.point[2].abs() < 1e-9);

        let root = newton_solve(&fam.at(10.0), &[7.0, 7.0, 100.0], &opts);
        let a = 10.0 / 2f64.sqrt();
        assert!((root.point[0] - a).abs() < 1e-9 && (root.point[1] - a).abs() < 1e-9);
        assert!((root.point[2] - 2.0 * (a * a + 1.0)).abs() < 1e-7);
    }

    #[test]
    fn quartic_slice_has_eight_points() {
        let g = table("x^2*y^2 + 2*x*y", &["x", "y"]);
        let cfg = TangencyConfig::default();
        let s = sphere_slice(&g, 10.0, &cfg);
        assert!(s.degenerate.is_none());
        assert_eq!(s.points.len(), 8, "{:#?}", s.points);
        let on_hyperbola = s.points.iter().filter(|p| (p.f_value.re() + 1.0).abs() < 1e-9).count();
        assert_eq!(on_hyperbola, 4);
        for p in &s.points {
            assert!((norm(&p.x) - 10.0).abs() <= 1e-9 * 10.0);
            assert!(p.tau <= cfg.tol_tau && p.residual <= cfg.tol_residual);
        }
        assert_eq!(slice_components(&g, &s.points, 10.0, &cfg), 8);
    }

    #[test]
    fn x_plus_x2y_slice_contains_asymptotic_point() {
        let f = table("x + x^2*y", &["x", "y"]);
        let s = sphere_slice(&f, 10.0, &TangencyConfig::default());
        let near = s
            .points
            .iter()
            .find(|p| (p.x[0] + 0.05).abs() < 1e-3 && (p.x[1] - 9.99988).abs() < 1e-3)
            .expect("point near (-0.05, 10)");
        assert!((near.f_value.re() + 0.025).abs() < 1e-3);
        for p in &s.points {
            let (x, y) = (p.x[0], p.x[1]);
            assert!((y + 2.0 * x * y * y - x * x * x).abs() < 1e-6 * (1.0 + 100.0));
        }
    }

    #[test]
    fn radial_function_is_degenerate() {
        let q = table("x^2 + y^2", &["x", "y"]);
        let s = sphere_slice(&q, 3.0, &TangencyConfig::default());
        let d = s.degenerate.expect("degenerate");
        assert!((d.f_min - 9.0).abs() < 1e-9 && (d.f_max - 9.0).abs() < 1e-9);
    }

    #[test]
    fn one_variable_slice_is_two_points() {
        let f = table("x*exp(x)", &["x"]);
        let s = sphere_slice(&f, 5.0, &TangencyConfig::default());
        let xs: Vec<f64> = s.points.iter().map(|p| p.x[0]).collect();
        assert_eq!(xs, vec![-5.0, 5.0]);
    }

    #[test]
    fn complex_slice_points_satisfy_hermitian_tangency() {
        let e = Expression::parse("z + z^2*w", &["z", "w"], Mode::Complex).unwrap();
        let t = DerivativeTable::new(&e);
        let cfg = TangencyConfig {
            n_starts: 60,
            ..TangencyConfig::default()
        };
        let s = sphere_slice(&t, 4.0, &cfg);
        assert!(!s.points.is_empty());
        for p in &s.points {
            let z = to_complex(&p.x);
            let lam = p.lambda.to_complex();
            let g = [
                (Complex64::new(1.0, 0.0) + 2.0 * z[0] * z[1]).conj(),
                (z[0] * z[0]).conj(),
            ];
            for j in 0..2 {
                assert!((g[j] - lam * z[j]).norm() < 1e-6 * (1.0 + lam.norm() * 4.0));
            }
        }
        let c = slice_components(&t, &s.points, 4.0, &cfg);
        assert!(c >= 1 && c <= s.points.len());
    }

    #[test]
    fn complex_jacobian_matches_differences() {
        let e = Expression::parse("z^3*w + 2*z*w^2 - w", &["z", "w"], Mode::Complex).unwrap();
        let t = DerivativeTable::new(&e);
        let fam = LagrangeFamily::complex(&t, SliceSpec::derive(1, 0, 4));
        let p = [0.3, -0.7, 1.1, 0.4, 0.5, -0.2];
        let m = fam.dim();
        let mut jac = DMatrix::zeros(m, m);
        fam.jacobian(&p, 2.0, &mut jac);
        let h = 1e-6;
        for k in 0..m {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let (mut fh, mut fl) = (vec![0.0; m], vec![0.0; m]);
            fam.residual(&hi, 2.0, &mut fh);
            fam.residual(&lo, 2.0, &mut fl);
            for i in 0..m {
                let fd = (fh[i] - fl[i]) / (2.0 * h);
                assert!((fd - jac[(i, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "({i},{k}) {fd} vs {}", jac[(i, k)]);
            }
        }
    }
}
