//! Square nonlinear systems: damped Newton, seeded multistart with
//! deduplication, and natural-parameter predictor/corrector continuation.
//!
//! Residual norms are weighted: component `i` is divided by `1 + s_i(x)`,
//! where `s_i` is the rounding magnitude reported by
//! [`SquareSystem::residual_scale`]. Systems that do not override it get plain
//! absolute residuals. The weighting keeps a single `tol_residual` meaningful
//! for tangency systems whose terms grow like `R^deg` on large spheres.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub trait SquareSystem: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>);
    fn residual_scale(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// A square system depending on one scalar parameter.
pub trait SystemFamily: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64], param: f64, out: &mut [f64]);
    fn jacobian(&self, x: &[f64], param: f64, jac: &mut DMatrix<f64>);

    /// dF/dparam; central differences unless overridden.
    fn param_derivative(&self, x: &[f64], param: f64, out: &mut [f64]) {
        let h = 1e-7 * (1.0 + param.abs());
        let mut hi = vec![0.0; out.len()];
        let mut lo = vec![0.0; out.len()];
        self.residual(x, param + h, &mut hi);
        self.residual(x, param - h, &mut lo);
        for i in 0..out.len() {
            out[i] = (hi[i] - lo[i]) / (2.0 * h);
        }
    }

    fn residual_scale(&self, _x: &[f64], _param: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn at(&self, param: f64) -> AtParam<'_, Self>
    where
        Self: Sized,
    {
        AtParam { family: self, param }
    }
}

/// A family frozen at one parameter value.
pub struct AtParam<'a, F: ?Sized> {
    family: &'a F,
    param: f64,
}

impl<F: SystemFamily + ?Sized> SquareSystem for AtParam<'_, F> {
    fn dim(&self) -> usize {
        self.family.dim()
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        self.family.residual(x, self.param, out)
    }
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        self.family.jacobian(x, self.param, jac)
    }
    fn residual_scale(&self, x: &[f64], out: &mut [f64]) {
        self.family.residual_scale(x, self.param, out)
    }
}

/// Closure-backed system, handy for small hand-written problems.
pub struct ClosureSystem<R, J> {
    dim: usize,
    residual: R,
    jacobian: J,
}

impl<R, J> ClosureSystem<R, J>
where
    R: Fn(&[f64], &mut [f64]) + Sync,
    J: Fn(&[f64], &mut DMatrix<f64>) + Sync,
{
    pub fn new(dim: usize, residual: R, jacobian: J) -> Self {
        ClosureSystem {
            dim,
            residual,
            jacobian,
        }
    }
}

impl<R, J> SquareSystem for ClosureSystem<R, J>
where
    R: Fn(&[f64], &mut [f64]) + Sync,
    J: Fn(&[f64], &mut DMatrix<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        (self.residual)(x, out)
    }
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        (self.jacobian)(x, jac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub point: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The Jacobian was singular at some iterate and had to be shifted.
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol_residual: f64,
    pub max_iter: usize,
    /// A root is accepted only if the minimal-norm Newton step at it is below
    /// `tol_step * (1 + |x|)`; this rejects "roots" at infinity where the
    /// residual merely decays.
    pub tol_step: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    pub regularization: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol_residual: 1e-9,
            max_iter: 60,
            tol_step: 1e-6,
            armijo: 1e-4,
            max_halvings: 30,
            regularization: 1e-10,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn weighted_norm(f: &[f64], scale: &[f64]) -> f64 {
    f.iter()
        .zip(scale)
        .map(|(a, s)| {
            let r = a / (1.0 + s);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Solves `jac * d = rhs`. Falls back to a diagonal shift, then to the
/// pseudo-inverse. The flag reports whether a fallback was needed.
pub(crate) fn solve_linear(jac: &DMatrix<f64>, rhs: &[f64], shift: f64) -> Option<(Vec<f64>, bool)> {
    let b = DVector::from_column_slice(rhs);
    if let Some(d) = jac.clone().lu().solve(&b) {
        if d.iter().all(|v| v.is_finite()) {
            return Some((d.as_slice().to_vec(), false));
        }
    }
    let n = jac.nrows();
    let shifted = jac + DMatrix::<f64>::identity(n, n) * shift;
    if let Some(d) = shifted.lu().solve(&b) {
        if d.iter().all(|v| v.is_finite()) {
            return Some((d.as_slice().to_vec(), true));
        }
    }
    min_norm_solve(jac, rhs).map(|d| (d, true))
}

/// Minimal-norm least-squares solution with relative rank truncation.
pub(crate) fn min_norm_solve(jac: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    if !jac.iter().all(|v| v.is_finite()) || !rhs.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Some(vec![0.0; jac.ncols()]);
    }
    let b = DVector::from_column_slice(rhs);
    let d = svd.solve(&b, smax * 1e-12).ok()?;
    Some(d.as_slice().to_vec())
}

/// Damped Newton with Armijo backtracking. Never panics on singular
/// Jacobians; non-convergence is reported in the returned [`Root`], which
/// then carries the best iterate seen.
pub fn newton_solve<S: SquareSystem + ?Sized>(sys: &S, start: &[f64], opts: &NewtonOptions) -> Root {
    let m = sys.dim();
    let mut x = start.to_vec();
    let mut f = vec![0.0; m];
    let mut scale = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, m);
    let mut trial = vec![0.0; m];
    let mut f_trial = vec![0.0; m];
    let mut regularized = false;

    sys.residual(&x, &mut f);
    sys.residual_scale(&x, &mut scale);
    let mut res = weighted_norm(&f, &scale);
    let mut best = (res, x.clone());

    let finish = |point: Vec<f64>, residual_norm: f64, converged, iterations, regularized| Root {
        point,
        residual_norm,
        converged,
        iterations,
        regularized,
    };

    if !res.is_finite() {
        return finish(x, f64::INFINITY, false, 0, false);
    }

    for iter in 0..=opts.max_iter {
        sys.jacobian(&x, &mut jac);
        if res <= opts.tol_residual {
            let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
            if let Some(step) = min_norm_solve(&jac, &neg_f) {
                if norm(&step) <= opts.tol_step * (1.0 + norm(&x)) {
                    // one polishing step, kept only if it does not hurt
                    for i in 0..m {
                        trial[i] = x[i] + step[i];
                    }
                    sys.residual(&trial, &mut f_trial);
                    let mut s_trial = vec![0.0; m];
                    sys.residual_scale(&trial, &mut s_trial);
                    let r_trial = weighted_norm(&f_trial, &s_trial);
                    if r_trial.is_finite() && r_trial <= res {
                        return finish(trial, r_trial, true, iter + 1, regularized);
                    }
                    return finish(x, res, true, iter, regularized);
                }
            }
        }
        if iter == opts.max_iter {
            break;
        }
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let Some((step, reg)) = solve_linear(&jac, &neg_f, opts.regularization) else {
            break;
        };
        regularized |= reg;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            for i in 0..m {
                trial[i] = x[i] + t * step[i];
            }
            sys.residual(&trial, &mut f_trial);
            let r = weighted_norm(&f_trial, &scale);
            if r.is_finite() && r * r <= (1.0 - 2.0 * opts.armijo * t) * res * res {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut f, &mut f_trial);
        sys.residual_scale(&x, &mut scale);
        res = weighted_norm(&f, &scale);
        if res < best.0 {
            best = (res, x.clone());
        }
    }
    finish(best.1, best.0, false, opts.max_iter, regularized)
}

/// Where multistart draws its starting points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Uniform on the sphere of the given radius centred at the origin.
    Sphere { radius: f64, dim: usize },
}

impl Region {
    pub fn cube(half_width: f64, dim: usize) -> Self {
        Region::Box {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lower, .. } => lower.len(),
            Region::Sphere { dim, .. } => *dim,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            Region::Box { lower, upper } => {
                lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(u > l))
            }
            Region::Sphere { radius, dim } => !(*radius > 0.0) || *dim == 0,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Region::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| rng.random_range(*l..*u))
                .collect(),
            Region::Sphere { radius, dim } => loop {
                let v: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|c| c * radius / n).collect();
                }
            },
        }
    }

    /// `n` reproducible samples for `seed`.
    pub fn samples(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultistartOptions {
    pub newton: NewtonOptions,
    /// Roots closer than `dedup_rel * (1 + |p|)` are merged.
    pub dedup_rel: f64,
    /// Compare only the leading coordinates when deduplicating.
    pub dedup_dims: Option<usize>,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        MultistartOptions {
            newton: NewtonOptions::default(),
            dedup_rel: 1e-5,
            dedup_dims: None,
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Sorts lexicographically and drops near-duplicates. Output depends only on
/// the multiset of inputs.
pub fn dedup_roots(mut roots: Vec<Root>, dedup_rel: f64, dims: Option<usize>) -> Vec<Root> {
    roots.sort_by(|a, b| lex_cmp(&a.point, &b.point));
    let mut kept: Vec<Root> = Vec::new();
    for r in roots {
        let k = dims.unwrap_or(r.point.len()).min(r.point.len());
        let p = &r.point[..k];
        let tol = dedup_rel * (1.0 + norm(p));
        let dup = kept.iter().any(|q| {
            let d: f64 = p
                .iter()
                .zip(&q.point[..k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d <= tol
        });
        if !dup {
            kept.push(r);
        }
    }
    kept
}

/// Solves from every start (in parallel), keeps converged roots, dedups and sorts.
pub fn solve_from_starts<S: SquareSystem + ?Sized>(
    sys: &S,
    starts: &[Vec<f64>],
    opts: &MultistartOptions,
) -> Vec<Root> {
    let roots: Vec<Root> = starts
        .par_iter()
        .map(|s| newton_solve(sys, s, &opts.newton))
        .filter(|r| r.converged)
        .collect();
    dedup_roots(roots, opts.dedup_rel, opts.dedup_dims)
}

/// Seeded multistart Newton. An empty result is a valid outcome.
pub fn multistart_solve<S: SquareSystem + ?Sized>(
    sys: &S,
    region: &Region,
    n_starts: usize,
    seed: u64,
    opts: &MultistartOptions,
) -> Vec<Root> {
    assert!(n_starts >= 1, "multistart needs at least one start");
    assert!(!region.is_degenerate(), "degenerate multistart region");
    let starts = region.samples(n_starts, seed);
    solve_from_starts(sys, &starts, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSettings {
    /// First step is this fraction of |start parameter|.
    pub initial_step_frac: f64,
    pub max_corrector_iters: usize,
    pub growth: f64,
    pub accepts_before_growth: usize,
    pub max_halvings: usize,
    /// Reject a corrector result that moved further than this fraction of the
    /// predictor step (branch-jump guard).
    pub max_correction_ratio: f64,
    pub newton: NewtonOptions,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            initial_step_frac: 0.1,
            max_corrector_iters: 8,
            growth: 1.5,
            accepts_before_growth: 3,
            max_halvings: 14,
            max_correction_ratio: 0.5,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub param: f64,
    pub root: Root,
    /// Length of the predictor step that led here (0 for the start point).
    pub predicted_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathOutcome {
    Reached,
    Lost { param: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub points: Vec<PathPoint>,
    pub outcome: PathOutcome,
}

impl PathTrace {
    pub fn last(&self) -> &PathPoint {
        self.points.last().expect("trace always holds the start point")
    }

    pub fn reached(&self) -> bool {
        self.outcome == PathOutcome::Reached
    }
}

fn tangent<F: SystemFamily + ?Sized>(family: &F, x: &[f64], p: f64, shift: f64) -> Option<Vec<f64>> {
    let m = family.dim();
    let mut jac = DMatrix::zeros(m, m);
    let mut dp = vec![0.0; m];
    family.jacobian(x, p, &mut jac);
    family.param_derivative(x, p, &mut dp);
    let rhs: Vec<f64> = dp.iter().map(|v| -v).collect();
    solve_linear(&jac, &rhs, shift).map(|(t, _)| t)
}

/// Tracks a root of `family` from parameter `from` to `to`.
///
/// Predictor: tangent `-J^-1 dF/dp` (secant when the tangent solve fails).
/// Corrector: [`newton_solve`] with at most `max_corrector_iters` iterations.
/// Steps halve on failure and grow after a run of accepts; path loss is
/// reported after `max_halvings` consecutive failures.
pub fn continue_path<F: SystemFamily + ?Sized>(
    family: &F,
    start: &Root,
    from: f64,
    to: f64,
    settings: &ContinuationSettings,
) -> PathTrace {
    let mut points = vec![PathPoint {
        param: from,
        root: start.clone(),
        predicted_len: 0.0,
    }];
    if from == to {
        return PathTrace {
            points,
            outcome: PathOutcome::Reached,
        };
    }
    let dir = (to - from).signum();
    let span = (to - from).abs();
    let mut h = (settings.initial_step_frac * from.abs()).min(span);
    if h <= 0.0 {
        h = settings.initial_step_frac * span;
    }
    let min_h = h * 0.5f64.powi(settings.max_halvings as i32);
    let mut accepts = 0;
    let mut corrector = settings.newton;
    corrector.max_iter = settings.max_corrector_iters;

    loop {
        let cur = points.last().unwrap();
        let p = cur.param;
        let x = cur.root.point.clone();
        if p == to {
            return PathTrace {
                points,
                outcome: PathOutcome::Reached,
            };
        }
        let remaining = (to - p).abs();
        let last_step = h >= remaining;
        let step = if last_step { remaining } else { h };
        let next_p = if last_step { to } else { p + dir * step };

        let t = tangent(family, &x, p, settings.newton.regularization).or_else(|| {
            let n = points.len();
            (n >= 2).then(|| {
                let a = &points[n - 2];
                let dpar = p - a.param;
                x.iter()
                    .zip(&a.root.point)
                    .map(|(xi, ai)| (xi - ai) / dpar)
                    .collect()
            })
        });
        let pred: Vec<f64> = match &t {
            Some(t) => x.iter().zip(t).map(|(xi, ti)| xi + (next_p - p) * ti).collect(),
            None => x.clone(),
        };
        let pred_len = norm(&pred.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let root = newton_solve(&family.at_dyn(next_p), &pred, &corrector);
        let correction = norm(&root.point.iter().zip(&pred).map(|(a, b)| a - b).collect::<Vec<_>>());
        let ok = root.converged
            && correction
                <= settings.max_correction_ratio * pred_len + 1e-9 * (1.0 + norm(&x));
        if ok {
            points.push(PathPoint {
                param: next_p,
                root,
                predicted_len: pred_len,
            });
            accepts += 1;
            if accepts >= settings.accepts_before_growth {
                h *= settings.growth;
                accepts = 0;
            }
        } else {
            accepts = 0;
            h *= 0.5;
            if h < min_h {
                let reason = if root.converged {
                    "corrector jumped away from the predicted point".to_string()
                } else {
                    "corrector failed to converge".to_string()
                };
                return PathTrace {
                    points,
                    outcome: PathOutcome::Lost {
                        param: next_p,
                        reason,
                    },
                };
            }
        }
    }
}

trait AtDyn {
    fn at_dyn(&self, param: f64) -> AtParam<'_, Self>;
}

impl<F: SystemFamily + ?Sized> AtDyn for F {
    fn at_dyn(&self, param: f64) -> AtParam<'_, Self> {
        AtParam {
            family: self,
            param,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{DerivativeTable, Expression, Mode};

    fn sqrt4() -> impl SquareSystem {
        ClosureSystem::new(
            1,
            |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] - 4.0,
            |x: &[f64], j: &mut DMatrix<f64>| j[(0, 0)] = 2.0 * x[0],
        )
    }

    struct Circle;
    impl SystemFamily for Circle {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64], r: f64, out: &mut [f64]) {
            out[0] = x[0] * x[0] - r * r;
        }
        fn jacobian(&self, x: &[f64], _r: f64, j: &mut DMatrix<f64>) {
            j[(0, 0)] = 2.0 * x[0];
        }
        fn param_derivative(&self, _x: &[f64], r: f64, out: &mut [f64]) {
            out[0] = -2.0 * r;
        }
    }

    /// x^2 = R^2 - 1: the real root disappears below R = 1.
    struct Shrinking;
    impl SystemFamily for Shrinking {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64], r: f64, out: &mut [f64]) {
            out[0] = x[0] * x[0] - (r * r - 1.0);
        }
        fn jacobian(&self, x: &[f64], _r: f64, j: &mut DMatrix<f64>) {
            j[(0, 0)] = 2.0 * x[0];
        }
    }

    #[test]
    fn newton_square_root() {
        let root = newton_solve(&sqrt4(), &[3.0], &NewtonOptions::default());
        assert!(root.converged);
        assert!((root.point[0] - 2.0).abs() < 1e-12);
        assert!(root.residual_norm < 1e-10);
    }

    #[test]
    fn newton_linear_system() {
        let sys = ClosureSystem::new(
            2,
            |x: &[f64], out: &mut [f64]| {
                out[0] = x[0] - x[1];
                out[1] = x[0] + x[1] - 2.0;
            },
            |_x: &[f64], j: &mut DMatrix<f64>| {
                j.copy_from_slice(&[1.0, 1.0, -1.0, 1.0]);
            },
        );
        let root = newton_solve(&sys, &[5.0, -5.0], &NewtonOptions::default());
        assert!(root.converged);
        assert!((root.point[0] - 1.0).abs() < 1e-12 && (root.point[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_critical_point_of_x_exp_x() {
        let f = Expression::parse("x*exp(x)", &["x"], Mode::Real).unwrap();
        let t = DerivativeTable::new(&f);
        let sys = ClosureSystem::new(
            1,
            |x: &[f64], out: &mut [f64]| out[0] = t.partials[0].value(x),
            |x: &[f64], j: &mut DMatrix<f64>| j[(0, 0)] = t.hessian[0][0].value(x),
        );
        let root = newton_solve(&sys, &[0.0], &NewtonOptions::default());
        assert!(root.converged);
        assert!((root.point[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn newton_rejects_decaying_residual_at_infinity() {
        // d/dx (x e^x) -> 0 as x -> -inf without a root there
        let f = Expression::parse("x*exp(x)", &["x"], Mode::Real).unwrap();
        let t = DerivativeTable::new(&f);
        let sys = ClosureSystem::new(
            1,
            |x: &[f64], out: &mut [f64]| out[0] = t.partials[0].value(x),
            |x: &[f64], j: &mut DMatrix<f64>| j[(0, 0)] = t.hessian[0][0].value(x),
        );
        let root = newton_solve(&sys, &[-30.0], &NewtonOptions::default());
        assert!(!root.converged || (root.point[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn singular_jacobian_does_not_panic() {
        let sys = ClosureSystem::new(
            1,
            |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] + 1.0,
            |x: &[f64], j: &mut DMatrix<f64>| j[(0, 0)] = 2.0 * x[0],
        );
        let root = newton_solve(&sys, &[0.0], &NewtonOptions::default());
        assert!(!root.converged);
        assert!(root.regularized);
    }

    #[test]
    fn multistart_finds_both_square_roots() {
        let roots = multistart_solve(
            &sqrt4(),
            &Region::Box {
                lower: vec![-3.5],
                upper: vec![3.5],
            },
            40,
            7,
            &MultistartOptions::default(),
        );
        let xs: Vec<f64> = roots.iter().map(|r| r.point[0]).collect();
        assert_eq!(xs.len(), 2);
        assert!((xs[0] + 2.0).abs() < 1e-12 && (xs[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_samples_lie_on_sphere() {
        let region = Region::Sphere { radius: 3.0, dim: 4 };
        for s in region.samples(20, 1) {
            assert!((norm(&s) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuation_follows_x_equals_r() {
        let start = newton_solve(&Circle.at(1.0), &[1.0], &NewtonOptions::default());
        let trace = continue_path(&Circle, &start, 1.0, 10.0, &ContinuationSettings::default());
        assert!(trace.reached());
        assert!((trace.last().root.point[0] - 10.0).abs() < 1e-8);
        assert_eq!(trace.last().param, 10.0);
        for w in trace.points.windows(2) {
            let dx = (w[1].root.point[0] - w[0].root.point[0]).abs();
            assert!(dx <= 1.5 * w[1].predicted_len + 1e-9);
            assert!(w[1].root.residual_norm <= 1e-9);
        }
    }

    #[test]
    fn continuation_reports_loss_at_fold() {
        let start = newton_solve(&Shrinking.at(2.0), &[1.7], &NewtonOptions::default());
        assert!((start.point[0] - 3f64.sqrt()).abs() < 1e-12);
        let trace = continue_path(&Shrinking, &start, 2.0, 0.5, &ContinuationSettings::default());
        let PathOutcome::Lost { .. } = trace.outcome else {
            panic!("expected path loss, got {:?}", trace.outcome);
        };
        let last = trace.last();
        assert!(last.param >= 1.0 && last.param < 1.05, "lost at {}", last.param);
        // every accepted point sits on the closed-form branch sqrt(R^2 - 1)
        for p in &trace.points {
            let exact = (p.param * p.param - 1.0).sqrt();
            assert!((p.root.point[0] - exact).abs() < 1e-6);
        }
    }
}
