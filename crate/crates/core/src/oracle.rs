//! Slow, independent brute-force cross-checks. Nothing here calls into the
//! solver, critical, tangency or fibration code; only expression evaluation
//! and symbolic derivatives are shared.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Expression, Mode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle does not support {0} variables here")]
    UnsupportedDimension(usize),
    #[error("grid scans need at least 64 cells per axis, got {0}")]
    Resolution(usize),
    #[error("oracles work on real functions only")]
    ComplexMode,
}

/// Scalar samples at the nodes of a regular grid, first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Cells per axis; there are `resolution + 1` nodes per axis.
    pub resolution: usize,
    pub field: Vec<f64>,
}

impl GridScan {
    /// Samples `field` on the grid; non-finite samples are stored as `+inf`
    /// so that they never register as minima.
    pub fn new<F>(lower: Vec<f64>, upper: Vec<f64>, resolution: usize, field: F) -> Result<Self, OracleError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if resolution < 64 {
            return Err(OracleError::Resolution(resolution));
        }
        let d = lower.len();
        let nodes = (resolution + 1).pow(d as u32);
        let scan = GridScan {
            lower,
            upper,
            resolution,
            field: Vec::new(),
        };
        let field = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let v = field(&scan.node(i));
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(GridScan { field, ..scan })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn index(&self, i: usize) -> Vec<usize> {
        let p = self.resolution + 1;
        let mut rest = i;
        (0..self.dim())
            .map(|_| {
                let k = rest % p;
                rest /= p;
                k
            })
            .collect()
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        self.index(i)
            .iter()
            .enumerate()
            .map(|(k, &ik)| self.lower[k] + (self.upper[k] - self.lower[k]) * ik as f64 / self.resolution as f64)
            .collect()
    }

    /// Nodes whose sample does not exceed any axis neighbour.
    pub fn local_minima(&self) -> Vec<usize> {
        let p = self.resolution + 1;
        (0..self.field.len())
            .filter(|&i| {
                let v = self.field[i];
                if !v.is_finite() {
                    return false;
                }
                let idx = self.index(i);
                let mut stride = 1;
                for &ik in &idx {
                    if ik > 0 && self.field[i - stride] < v {
                        return false;
                    }
                    if ik + 1 < p && self.field[i + stride] < v {
                        return false;
                    }
                    stride *= p;
                }
                true
            })
            .collect()
    }
}

fn real_only(f: &Expression) -> Result<(), OracleError> {
    if f.mode() == Mode::Complex {
        Err(OracleError::ComplexMode)
    } else {
        Ok(())
    }
}

/// Gap clustering of sorted values; returns cluster means.
fn gap_cluster(mut values: Vec<f64>, tol_abs: f64, tol_rel: f64) -> Vec<f64> {
    values.retain(|v| v.is_finite());
    values.sort_by(f64::total_cmp);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some(c) if v - c[c.len() - 1] <= tol_abs.max(tol_rel * v.abs()) => c.push(v),
            _ => out.push(vec![v]),
        }
    }
    out.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Levenberg-Marquardt on `grad f = 0`; copes with non-isolated zeros.
fn refine_critical(grad: &[Expression], hess: &[Vec<Expression>], start: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = start.len();
    let mut x = start.to_vec();
    let eval_g = |x: &[f64]| -> Option<Vec<f64>> { grad.iter().map(|g| g.eval(x).ok()).collect() };
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let mut g = eval_g(&x)?;
    let mut mu = 1e-3;
    for _ in 0..200 {
        if sq(&g).sqrt() <= tol {
            return Some(x);
        }
        let h: Vec<Vec<f64>> = hess
            .iter()
            .map(|row| row.iter().map(|e| e.eval(&x).ok()).collect::<Option<Vec<f64>>>())
            .collect::<Option<_>>()?;
        // normal equations (H^T H + mu I) dx = -H^T g
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| h[k][i] * h[k][j]).sum();
            }
            rhs[i] = -(0..n).map(|k| h[k][i] * g[k]).sum::<f64>();
        }
        let scale = (0..n).map(|i| a[i][i]).fold(0.0, f64::max).max(1e-300);
        let mut improved = false;
        for _ in 0..30 {
            let mut am = a.clone();
            for (i, row) in am.iter_mut().enumerate() {
                row[i] += mu * scale;
            }
            let Some(dx) = gauss(am, rhs.clone()) else {
                mu *= 10.0;
                continue;
            };
            let y: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            if let Some(gy) = eval_g(&y) {
                if sq(&gy) < sq(&g) {
                    x = y;
                    g = gy;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (sq(&g).sqrt() <= tol).then_some(x)
}

/// Critical values on the box `[-half_width, half_width]^n` (`n <= 3`):
/// local minima of `|grad f|^2` on the grid are refined and kept when the
/// gradient drops below `tol` inside the box.
pub fn oracle_critical_values(f: &Expression, half_width: f64, resolution: usize, tol: f64) -> Result<Vec<f64>, OracleError> {
    real_only(f)?;
    let n = f.arity();
    if n == 0 || n > 3 {
        return Err(OracleError::UnsupportedDimension(n));
    }
    let grad: Vec<Expression> = (0..n).map(|i| f.derivative(i)).collect();
    let hess: Vec<Vec<Expression>> = grad.iter().map(|g| (0..n).map(|j| g.derivative(j)).collect()).collect();
    let scan = GridScan::new(vec![-half_width; n], vec![half_width; n], resolution, |x| {
        grad.iter().map(|g| g.eval(x).map(|v| v * v).unwrap_or(f64::INFINITY)).sum()
    })?;
    let minima = scan.local_minima();
    let values: Vec<f64> = minima
        .par_iter()
        .filter_map(|&i| {
            let p = refine_critical(&grad, &hess, &scan.node(i), tol)?;
            if p.iter().any(|c| c.abs() > half_width) {
                return None;
            }
            f.eval(&p).ok()
        })
        .collect();
    Ok(gap_cluster(values, 1e-5, 1e-6))
}

/// Values of `f` at points of the annulus `r_a <= |x| <= r_b` in the plane
/// where the normalised tangency defect is at most `tol_tau`. Each of
/// `resolution` circles is scanned at `8 * resolution` angles; sign changes
/// of `x g_y - y g_x` are bisected, and grid points that already meet the
/// tolerance are kept as they are, which covers radial functions. Bisection
/// ends where the gradient collapses count as tangent.
pub fn oracle_tangency_values(
    f: &Expression,
    r_a: f64,
    r_b: f64,
    resolution: usize,
    tol_tau: f64,
    tol_value: f64,
) -> Result<Vec<f64>, OracleError> {
    real_only(f)?;
    if f.arity() != 2 {
        return Err(OracleError::UnsupportedDimension(f.arity()));
    }
    if resolution < 64 {
        return Err(OracleError::Resolution(resolution));
    }
    let (gx, gy) = (f.derivative(0), f.derivative(1));
    let at = |r: f64, th: f64| [r * th.cos(), r * th.sin()];
    // (cross product, defect, gradient norm)
    let cross = |p: &[f64; 2]| -> Option<(f64, f64, f64)> {
        let a = gx.eval(p).ok()?;
        let b = gy.eval(p).ok()?;
        let gn = a.hypot(b);
        let r = p[0].hypot(p[1]);
        let s = p[0] * b - p[1] * a;
        let tau = if gn == 0.0 { 0.0 } else { s.abs() / (gn * r) };
        Some((s, tau, gn))
    };
    let angles = 8 * resolution;
    let values: Vec<f64> = (0..=resolution)
        .into_par_iter()
        .flat_map_iter(|k| {
            let r = r_a + (r_b - r_a) * k as f64 / resolution as f64;
            let mut found = Vec::new();
            let th = |j: usize| std::f64::consts::TAU * j as f64 / angles as f64;
            let mut prev = cross(&at(r, th(0)));
            for j in 0..angles {
                let p = at(r, th(j));
                if let Some((_, tau, _)) = prev {
                    if tau <= tol_tau {
                        found.extend(f.eval(&p).ok());
                    }
                }
                let next = cross(&at(r, th(j + 1)));
                if let (Some((s0, t0, g0)), Some((s1, _, g1))) = (prev, next) {
                    if t0 > tol_tau && s0 * s1 < 0.0 {
                        let (mut lo, mut hi, mut slo) = (th(j), th(j + 1), s0);
                        for _ in 0..80 {
                            let mid = 0.5 * (lo + hi);
                            let Some((sm, _, _)) = cross(&at(r, mid)) else { break };
                            if sm * slo > 0.0 {
                                lo = mid;
                                slo = sm;
                            } else {
                                hi = mid;
                            }
                        }
                        let q = at(r, 0.5 * (lo + hi));
                        // a gradient collapsing between the bracket ends is a critical point
                        let collapsed = 1e-8 * g0.max(g1);
                        if matches!(cross(&q), Some((_, t, gq)) if t <= tol_tau || gq <= collapsed) {
                            found.extend(f.eval(&q).ok());
                        }
                    }
                }
                prev = next;
            }
            found
        })
        .collect();
    Ok(gap_cluster(values, tol_value, 1e-6))
}

/// Level-set components of `f = c` on `[-half_width, half_width]^2` by
/// tracing contour segments cell by cell; saddle cells are split with the
/// bilinear asymptotic decider.
pub fn oracle_fiber_components(f: &Expression, c: f64, half_width: f64, resolution: usize) -> Result<usize, OracleError> {
    real_only(f)?;
    if f.arity() != 2 {
        return Err(OracleError::UnsupportedDimension(f.arity()));
    }
    let scan = GridScan::new(vec![-half_width; 2], vec![half_width; 2], resolution, |x| {
        f.eval(x).map(|v| v - c).unwrap_or(f64::NAN)
    })?;
    let p = resolution + 1;
    let v = |i: usize, j: usize| scan.field[j * p + i];
    let pos = |x: f64| x > 0.0;
    // an edge is keyed by its lower-left node and orientation
    let key = |i: usize, j: usize, vertical: bool| ((j * p + i) as u64) << 1 | vertical as u64;
    let mut adj: HashMap<u64, Vec<u64>> = HashMap::new();
    let link = |adj: &mut HashMap<u64, Vec<u64>>, a: u64, b: u64| {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    };
    for i in 0..resolution {
        for j in 0..resolution {
            let (v00, v10, v11, v01) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            let (s00, s10, s11, s01) = (pos(v00), pos(v10), pos(v11), pos(v01));
            let south = (s00 != s10).then(|| key(i, j, false));
            let east = (s10 != s11).then(|| key(i + 1, j, true));
            let north = (s01 != s11).then(|| key(i, j + 1, false));
            let west = (s00 != s01).then(|| key(i, j, true));
            let cut: Vec<u64> = [south, east, north, west].into_iter().flatten().collect();
            match cut.len() {
                2 => link(&mut adj, cut[0], cut[1]),
                4 => {
                    let den = v00 + v11 - v10 - v01;
                    let saddle = if den != 0.0 { (v00 * v11 - v10 * v01) / den } else { 0.0 };
                    let (s, e, n, w) = (cut[0], cut[1], cut[2], cut[3]);
                    if pos(saddle) == s00 {
                        // the 00-11 diagonal is joined; cut off corners 10 and 01
                        link(&mut adj, s, e);
                        link(&mut adj, n, w);
                    } else {
                        link(&mut adj, s, w);
                        link(&mut adj, e, n);
                    }
                }
                _ => {
                    for k in cut {
                        adj.entry(k).or_default();
                    }
                }
            }
        }
    }
    let mut seen: HashMap<u64, ()> = HashMap::with_capacity(adj.len());
    let mut count = 0;
    let mut keys: Vec<u64> = adj.keys().copied().collect();
    keys.sort_unstable();
    for start in keys {
        if seen.contains_key(&start) {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen.insert(start, ());
        while let Some(e) = stack.pop() {
            for &nb in &adj[&e] {
                if seen.insert(nb, ()).is_none() {
                    stack.push(nb);
                }
            }
        }
    }
    Ok(count)
}

/// `f` along a parametrised curve, for closed-form restrictions of fixtures.
pub fn along_curve<C>(f: &Expression, curve: C, params: &[f64]) -> Vec<f64>
where
    C: Fn(f64) -> Vec<f64>,
{
    params.iter().map(|&t| f.eval(&curve(t)).unwrap_or(f64::NAN)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(text: &str, vars: &[&str]) -> Expression {
        Expression::parse(text, vars, Mode::Real).unwrap()
    }

    const XY: [&str; 2] = ["x", "y"];

    #[test]
    fn critical_value_examples() {
        let v = oracle_critical_values(&real("x*exp(x)", &["x"]), 5.0, 4096, 1e-10).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] + 0.3678794).abs() < 1e-5);
        let v = oracle_critical_values(&real("x^2 + y^2", &XY), 5.0, 128, 1e-10).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0].abs() < 1e-12);
        let v = oracle_critical_values(&real("x + x^2*y", &XY), 5.0, 128, 1e-10).unwrap();
        assert!(v.is_empty(), "{v:?}");
        assert_eq!(
            oracle_critical_values(&real("x+y+z+w", &["x", "y", "z", "w"]), 1.0, 64, 1e-10),
            Err(OracleError::UnsupportedDimension(4))
        );
    }

    #[test]
    fn tangency_value_examples() {
        let g = oracle_tangency_values(&real("x^2*y^2 + 2*x*y", &XY), 50.0, 100.0, 64, 1e-7, 1e-5).unwrap();
        assert!(g.iter().any(|v| (v + 1.0).abs() < 1e-4), "{g:?}");
        assert!(g.iter().all(|v| (v + 1.0).abs() < 1e-4 || *v >= 50f64.powi(4) / 4.0 - 2.0 * 50.0 * 50.0));
        let b = oracle_tangency_values(&real("x + x^2*y", &XY), 50.0, 100.0, 64, 1e-7, 1e-5).unwrap();
        assert!(b.iter().any(|v| v.abs() < 2.0 / 50.0), "{b:?}");
        let q = oracle_tangency_values(&real("x^2 + y^2", &XY), 2.0, 3.0, 64, 1e-7, 1e-5).unwrap();
        assert!(!q.is_empty() && q.iter().all(|v| (4.0 - 1e-9..=9.0 + 1e-9).contains(v)));
    }

    #[test]
    fn fiber_component_examples() {
        assert_eq!(oracle_fiber_components(&real("x^2 + y^2", &XY), 1.0, 3.0, 256).unwrap(), 1);
        assert_eq!(oracle_fiber_components(&real("x*y", &XY), 1.0, 5.0, 256).unwrap(), 2);
        assert_eq!(oracle_fiber_components(&real("x + x^2*y", &XY), 0.0, 20.0, 1024).unwrap(), 3);
        assert_eq!(oracle_fiber_components(&real("x + x^2*y", &XY), 0.5, 20.0, 1024).unwrap(), 2);
    }

    #[test]
    fn curve_restriction_of_the_quartic() {
        let g = real("x^2*y^2 + 2*x*y", &XY);
        let ts: Vec<f64> = (1..50).map(|k| k as f64).collect();
        let vals = along_curve(&g, |t| vec![t, -1.0 / t], &ts);
        assert!(vals.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn grid_minima() {
        let s = GridScan::new(vec![-1.0], vec![1.0], 64, |x| (x[0] - 0.25).powi(2)).unwrap();
        let m = s.local_minima();
        assert_eq!(m.len(), 1);
        assert!((s.node(m[0])[0] - 0.25).abs() < 1e-12);
        assert_eq!(GridScan::new(vec![0.0], vec![1.0], 10, |_| 0.0), Err(OracleError::Resolution(10)));
    }
}
