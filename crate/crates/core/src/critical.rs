//! Critical values and the component count of the critical set.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DerivativeTable, Mode};
use crate::solve::{min_norm_solve, multistart_solve, MultistartOptions, NewtonOptions, Region, SquareSystem};
use crate::value::{cluster_witnesses, Provenance, Value, ValueCluster, ValueTolerance, Witness};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CriticalError {
    #[error("grid component counting supports at most 3 real dimensions, got {0}")]
    UnsupportedDimension(usize),
    #[error("grid resolution must be at least 8 cells per axis, got {0}")]
    GridTooCoarse(usize),
}

pub(crate) fn to_complex(p: &[f64]) -> Vec<Complex64> {
    p.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// `grad f = 0` as a real square system. Complex inputs use interleaved
/// real/imaginary coordinates and the holomorphic partials.
pub struct GradientSystem<'a> {
    table: &'a DerivativeTable,
}

impl<'a> GradientSystem<'a> {
    pub fn new(table: &'a DerivativeTable) -> Self {
        GradientSystem { table }
    }

    /// Real unknown count.
    pub fn real_dim(table: &DerivativeTable) -> usize {
        match table.mode() {
            Mode::Real => table.arity(),
            Mode::Complex => 2 * table.arity(),
        }
    }

    pub fn value_at(&self, p: &[f64]) -> Value {
        match self.table.mode() {
            Mode::Real => Value::Real(self.table.function.value(p)),
            Mode::Complex => Value::from_complex(self.table.function.value(&to_complex(p)), Mode::Complex),
        }
    }
}

impl SquareSystem for GradientSystem<'_> {
    fn dim(&self) -> usize {
        GradientSystem::real_dim(self.table)
    }

    fn residual(&self, p: &[f64], out: &mut [f64]) {
        match self.table.mode() {
            Mode::Real => {
                for (o, d) in out.iter_mut().zip(&self.table.partials) {
                    *o = d.value(p);
                }
            }
            Mode::Complex => {
                let z = to_complex(p);
                for (i, d) in self.table.partials.iter().enumerate() {
                    let g = d.value(&z);
                    out[2 * i] = g.re;
                    out[2 * i + 1] = g.im;
                }
            }
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        match self.table.mode() {
            Mode::Real => {
                for (i, row) in self.table.hessian.iter().enumerate() {
                    for (j, h) in row.iter().enumerate() {
                        jac[(i, j)] = h.value(p);
                    }
                }
            }
            Mode::Complex => {
                let z = to_complex(p);
                for (i, row) in self.table.hessian.iter().enumerate() {
                    for (j, h) in row.iter().enumerate() {
                        let v = h.value(&z);
                        jac[(2 * i, 2 * j)] = v.re;
                        jac[(2 * i, 2 * j + 1)] = -v.im;
                        jac[(2 * i + 1, 2 * j)] = v.im;
                        jac[(2 * i + 1, 2 * j + 1)] = v.re;
                    }
                }
            }
        }
    }

    fn residual_scale(&self, p: &[f64], out: &mut [f64]) {
        match self.table.mode() {
            Mode::Real => {
                for (o, d) in out.iter_mut().zip(&self.table.partials) {
                    *o = d.evaluate_tracked(p).magnitude;
                }
            }
            Mode::Complex => {
                let z = to_complex(p);
                for (i, d) in self.table.partials.iter().enumerate() {
                    let m = d.evaluate_tracked(&z).magnitude;
                    out[2 * i] = m;
                    out[2 * i + 1] = m;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConfig {
    /// Search box `[-L, L]` per real coordinate.
    pub half_width: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub newton: NewtonOptions,
    pub tol_value: ValueTolerance,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        CriticalConfig {
            half_width: 20.0,
            n_starts: 200,
            seed: 42,
            newton: NewtonOptions::default(),
            tol_value: ValueTolerance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaResult {
    pub clusters: Vec<ValueCluster>,
    pub starts: usize,
    /// Distinct converged roots inside the box.
    pub roots: usize,
    /// Converged roots discarded for lying outside the box.
    pub outside_box: usize,
}

/// Critical values found by multistart Newton on `grad f = 0` inside the box.
/// Completeness is relative to the box.
pub fn sigma_values(table: &DerivativeTable, config: &CriticalConfig) -> SigmaResult {
    let sys = GradientSystem::new(table);
    let dim = sys.dim();
    let opts = MultistartOptions {
        newton: config.newton,
        ..MultistartOptions::default()
    };
    let roots = multistart_solve(
        &sys,
        &Region::cube(config.half_width, dim),
        config.n_starts,
        config.seed,
        &opts,
    );
    let limit = config.half_width * (1.0 + 1e-9);
    let (inside, outside): (Vec<_>, Vec<_>) = roots
        .into_iter()
        .partition(|r| r.point.iter().all(|c| c.abs() <= limit));
    let witnesses: Vec<Witness> = inside
        .iter()
        .map(|r| Witness {
            value: sys.value_at(&r.point),
            point: r.point.clone(),
            branch: None,
        })
        .collect();
    SigmaResult {
        clusters: cluster_witnesses(witnesses, Provenance::Critical, &config.tol_value),
        starts: config.n_starts,
        roots: inside.len(),
        outside_box: outside.len(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Gauss-Newton step restricted to the dominant singular directions of `jac`,
/// cut at the first drop by more than a factor 10 between consecutive
/// singular values. Near a non-isolated zero set this moves normally to it
/// instead of sliding along it.
fn dominant_step(jac: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    if !jac.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = jac.clone().svd(true, true);
    let (u, vt) = (svd.u.as_ref()?, svd.v_t.as_ref()?);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut step = vec![0.0; jac.ncols()];
    let mut prev = f64::INFINITY;
    for &k in &order {
        let s = sv[k];
        if s <= 0.0 || (prev.is_finite() && s < 0.1 * prev) {
            break;
        }
        let coef: f64 = (0..rhs.len()).map(|i| u[(i, k)] * rhs[i]).sum::<f64>() / s;
        for (j, st) in step.iter_mut().enumerate() {
            *st += coef * vt[(k, j)];
        }
        prev = s;
    }
    Some(step)
}

/// Projects `x0` onto the zero set of `sys`, moving roughly normally to it
/// even where the zero set is a curve or surface.
pub(crate) fn project_zero<S: SquareSystem + ?Sized>(sys: &S, x0: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let m = sys.dim();
    let mut x = x0.to_vec();
    let mut f = vec![0.0; m];
    let mut s = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, m);
    let mut trial = vec![0.0; m];
    let mut ft = vec![0.0; m];
    let weighted = |f: &[f64], s: &[f64]| {
        f.iter()
            .zip(s)
            .map(|(a, b)| (a / (1.0 + b)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    for _ in 0..max_iter {
        sys.residual(&x, &mut f);
        sys.residual_scale(&x, &mut s);
        let r = weighted(&f, &s);
        if !r.is_finite() {
            return None;
        }
        sys.jacobian(&x, &mut jac);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let dominant = dominant_step(&jac, &neg)?;
        if r <= tol && norm(&dominant) <= 1e-6 * (1.0 + norm(&x)) {
            return Some(x);
        }
        let mut moved = false;
        for step in [dominant, min_norm_solve(&jac, &neg)?] {
            let mut t = 1.0;
            for _ in 0..20 {
                for i in 0..m {
                    trial[i] = x[i] + t * step[i];
                }
                sys.residual(&trial, &mut ft);
                let rt = weighted(&ft, &s);
                if rt.is_finite() && rt < (1.0 - 1e-4 * t) * r {
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            return (r <= tol).then_some(x);
        }
        std::mem::swap(&mut x, &mut trial);
    }
    None
}

/// Number of connected components of `{grad f = 0}` inside `[-L, L]^d`
/// (d = real dimension, at most 3), estimated on a `grid^d` cell complex.
///
/// A cell is a candidate when `|grad f|` at its centre is within a
/// Hessian-based Lipschitz bound of zero; candidates are projected onto the
/// critical set and the cell holding the projection is marked. Marked cells
/// are joined through shared vertices, so nearby pieces over-connect rather
/// than split.
pub fn gradient_zero_components(
    table: &DerivativeTable,
    half_width: f64,
    grid: usize,
    tol: f64,
) -> Result<usize, CriticalError> {
    let sys = GradientSystem::new(table);
    let d = sys.dim();
    if d == 0 || d > 3 {
        return Err(CriticalError::UnsupportedDimension(d));
    }
    if grid < 8 {
        return Err(CriticalError::GridTooCoarse(grid));
    }
    let h = 2.0 * half_width / grid as f64;
    let half_diag = 0.5 * h * (d as f64).sqrt();
    let total = grid.pow(d as u32);
    let coords = |mut idx: usize| {
        let mut c = [0usize; 3];
        for k in 0..d {
            c[k] = idx % grid;
            idx /= grid;
        }
        c
    };
    let cell_of = |p: &[f64]| -> Option<usize> {
        let mut idx = 0;
        let mut mul = 1;
        for &pk in p.iter().take(d) {
            let k = ((pk + half_width) / h).floor();
            if !(k >= 0.0 && k < grid as f64) {
                return None;
            }
            idx += k as usize * mul;
            mul *= grid;
        }
        Some(idx)
    };

    let marked_cells: Vec<usize> = (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let c = coords(idx);
            let center: Vec<f64> = (0..d).map(|k| -half_width + (c[k] as f64 + 0.5) * h).collect();
            let mut f = vec![0.0; d];
            let mut s = vec![0.0; d];
            let mut jac = DMatrix::zeros(d, d);
            sys.residual(&center, &mut f);
            sys.residual_scale(&center, &mut s);
            sys.jacobian(&center, &mut jac);
            let bound = 2.0 * jac.norm() * half_diag + tol * (1.0 + norm(&s));
            if !(norm(&f) <= bound) {
                return None;
            }
            let p = project_zero(&sys, &center, tol, 40)?;
            let dist = norm(&p.iter().zip(&center).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dist > 2.0 * half_diag {
                return None;
            }
            cell_of(&p)
        })
        .collect();

    let mut marked = vec![false; total];
    for c in marked_cells {
        marked[c] = true;
    }
    Ok(count_components(&marked, grid, d))
}

/// Components of marked cells under vertex (Moore) adjacency.
pub(crate) fn count_components(marked: &[bool], grid: usize, d: usize) -> usize {
    let mut label = vec![usize::MAX; marked.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..marked.len() {
        if !marked[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = count;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let mut c = [0i64; 3];
            let mut rest = idx;
            for ck in c.iter_mut().take(d) {
                *ck = (rest % grid) as i64;
                rest /= grid;
            }
            let offsets = 3usize.pow(d as u32);
            for o in 0..offsets {
                let mut o2 = o;
                let mut nidx = 0usize;
                let mut mul = 1usize;
                let mut ok = true;
                for ck in c.iter().take(d) {
                    let delta = (o2 % 3) as i64 - 1;
                    o2 /= 3;
                    let nk = ck + delta;
                    if nk < 0 || nk >= grid as i64 {
                        ok = false;
                        break;
                    }
                    nidx += nk as usize * mul;
                    mul *= grid;
                }
                if ok && marked[nidx] && label[nidx] == usize::MAX {
                    label[nidx] = count;
                    stack.push(nidx);
                }
            }
        }
        count += 1;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    fn table(text: &str, vars: &[&str]) -> DerivativeTable {
        DerivativeTable::new(&Expression::parse(text, vars, Mode::Real).unwrap())
    }

    fn values(r: &SigmaResult) -> Vec<f64> {
        r.clusters.iter().map(|c| c.value.re()).collect()
    }

    #[test]
    fn sigma_of_x_exp_x() {
        let t = table("x*exp(x)", &["x"]);
        let r = sigma_values(&t, &CriticalConfig::default());
        let v = values(&r);
        assert_eq!(v.len(), 1);
        assert!((v[0] + (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn sigma_of_quartic_includes_critical_curve() {
        let t = table("x^2*y^2 + 2*x*y", &["x", "y"]);
        let r = sigma_values(&t, &CriticalConfig::default());
        let v = values(&r);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!((v[0] + 1.0).abs() < 1e-9 && v[1].abs() < 1e-9);
        let sys = GradientSystem::new(&t);
        let mut g = [0.0; 2];
        for c in &r.clusters {
            for m in &c.members {
                sys.residual(&m.point, &mut g);
                assert!(norm(&g) <= 1e-9, "{:?} {:?}", m.point, g);
            }
        }
    }

    #[test]
    fn sigma_of_x_plus_x2y_is_empty() {
        let t = table("x + x^2*y", &["x", "y"]);
        let r = sigma_values(&t, &CriticalConfig::default());
        assert!(r.clusters.is_empty());
    }

    #[test]
    fn sigma_in_complex_mode() {
        // f = z^3 - 3z: critical points z = +-1, values -+2
        let e = Expression::parse("z^3 - 3*z", &["z"], Mode::Complex).unwrap();
        let t = DerivativeTable::new(&e);
        let r = sigma_values(&t, &CriticalConfig::default());
        let v: Vec<Complex64> = r.clusters.iter().map(|c| c.value.to_complex()).collect();
        assert_eq!(v.len(), 2);
        assert!((v[0] - Complex64::new(-2.0, 0.0)).norm() < 1e-9);
        assert!((v[1] - Complex64::new(2.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn component_counts() {
        assert_eq!(gradient_zero_components(&table("x^2 + y^2", &["x", "y"]), 10.0, 128, 1e-9), Ok(1));
        assert_eq!(
            gradient_zero_components(&table("x^2*y^2 + 2*x*y", &["x", "y"]), 10.0, 512, 1e-9),
            Ok(3)
        );
        assert_eq!(gradient_zero_components(&table("x + x^2*y", &["x", "y"]), 20.0, 512, 1e-9), Ok(0));
        assert_eq!(gradient_zero_components(&table("x*exp(x)", &["x"]), 20.0, 512, 1e-9), Ok(1));
        assert_eq!(
            gradient_zero_components(&table("x^2 + y^2 + z^2 + w^2", &["x", "y", "z", "w"]), 1.0, 64, 1e-9),
            Err(CriticalError::UnsupportedDimension(4))
        );
    }

    #[test]
    fn component_count_in_three_dimensions() {
        // critical set of (x^2 + y^2 - 1)^2 + z^2: the unit circle plus the origin
        let t = table("(x^2 + y^2 - 1)^2 + z^2", &["x", "y", "z"]);
        assert_eq!(gradient_zero_components(&t, 2.0, 64, 1e-9), Ok(2));
    }
}
