//! Transport of fibers along a trivialization vector field, interval
//! verification, and fiber component counts on a grid.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DerivativeTable, Mode};
use crate::solve::Region;
use crate::tangency::norm;
use crate::value::{Value, ValueCluster, ValueTolerance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("gradient is tangent to the sphere through the point: the outer field is singular")]
    Singular,
    #[error("gradient vanishes at the point")]
    Critical,
    #[error("function or gradient is not finite at the point")]
    NonFinite,
    #[error("inner radius {inner} must be below outer radius {outer}")]
    Zones { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FibrationError {
    #[error("fiber transport needs a real function")]
    ComplexMode,
    #[error("fiber components need 2 or 3 variables, got {0}")]
    UnsupportedDimension(usize),
    #[error("grid needs at least 2 cells per axis, got {0}")]
    GridTooCoarse(usize),
}

/// Radii of the inner (gradient) and outer (sphere-tangent) zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zones {
    pub inner: f64,
    pub outer: f64,
}

impl Zones {
    /// Outer radius `1.25 * (max |p| + 1)`, inner radius `0.8` of that.
    pub fn around(samples: &[Vec<f64>]) -> Self {
        let m = samples.iter().map(|p| norm(p)).fold(0.0, f64::max);
        let outer = 1.25 * (m + 1.0);
        Zones {
            inner: 0.8 * outer,
            outer,
        }
    }

    /// Only the gradient field: used for functions of one variable, where the
    /// sphere-tangent field does not exist.
    pub fn inner_only() -> Self {
        Zones {
            inner: f64::INFINITY,
            outer: f64::INFINITY,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Field `v` with `<v, grad g> = 1`: `grad g / |grad g|^2` inside `zones.inner`,
/// the minimal-norm solution of `<v, grad g> = 1, <v, x> = 0` outside
/// `zones.outer`, and a smoothstep blend between.
pub fn trivialization_field(
    table: &DerivativeTable,
    x: &[f64],
    zones: Zones,
    tol_field: f64,
) -> Result<Vec<f64>, FieldError> {
    if !(zones.inner < zones.outer || zones.inner == f64::INFINITY) {
        return Err(FieldError::Zones {
            inner: zones.inner,
            outer: zones.outer,
        });
    }
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut mag = vec![0.0; n];
    table.real_gradient(x, &mut g, &mut mag);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite);
    }
    let r = norm(x);
    let s = if n < 2 || zones.outer == f64::INFINITY {
        0.0
    } else {
        smoothstep((r - zones.inner) / (zones.outer - zones.inner))
    };

    let inner = if s < 1.0 {
        let gg = dot(&g, &g);
        if gg.sqrt() <= tol_field {
            return Err(FieldError::Critical);
        }
        Some(g.iter().map(|v| v / gg).collect::<Vec<_>>())
    } else {
        None
    };
    let outer = if s > 0.0 {
        let c = dot(&g, x) / (r * r);
        let w: Vec<f64> = g.iter().zip(x).map(|(gi, xi)| gi - c * xi).collect();
        let ww = dot(&w, &w);
        if ww.sqrt() <= tol_field {
            return Err(FieldError::Singular);
        }
        Some(w.into_iter().map(|v| v / ww).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(match (inner, outer) {
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (Some(a), Some(b)) => a.iter().zip(&b).map(|(p, q)| (1.0 - s) * p + s * q).collect(),
        (None, None) => unreachable!("blend weight selects at least one zone"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSettings {
    /// Mixed absolute/relative local error tolerance.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings {
            tol: 1e-8,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub ode: OdeSettings,
    /// Allowed `|g(x(t)) - (c0 + t)|` at an accepted step.
    pub tol_transport: f64,
    pub tol_field: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            ode: OdeSettings::default(),
            tol_transport: 1e-6,
            tol_field: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportVerdict {
    Success,
    FieldSingular,
    IntegrationFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub g_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_id: usize,
    pub points: Vec<TrajectoryPoint>,
    pub max_level_error: f64,
    pub verdict: TransportVerdict,
}

impl Trajectory {
    pub fn end(&self) -> Vec<f64> {
        let p = self.points.last().expect("a trajectory holds its start");
        p.x.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub c0: f64,
    pub c1: f64,
    pub trajectories: Vec<Trajectory>,
    pub max_level_error: f64,
    pub singular_encounters: usize,
    pub verdict: TransportVerdict,
}

impl TransportResult {
    pub fn endpoints(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().map(Trajectory::end).collect()
    }
}

/// Writes `sample_id,t,<variables>,g_value` rows for every trajectory of
/// every result under a single header.
pub fn write_trajectories_csv<W: Write>(results: &[TransportResult], variables: &[String], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend(variables.iter().cloned());
    header.push("g_value".to_string());
    w.write_record(&header)?;
    for tr in results.iter().flat_map(|r| &r.trajectories) {
        for p in &tr.points {
            let mut row = vec![tr.sample_id.to_string(), format!("{:.16e}", p.t)];
            row.extend(p.x.iter().map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", p.g_value));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

enum StepFailure {
    Field(FieldError),
}

struct Stepper<'a> {
    table: &'a DerivativeTable,
    zones: Zones,
    tol_field: f64,
}

impl Stepper<'_> {
    fn field(&self, x: &[f64]) -> Result<Vec<f64>, StepFailure> {
        trivialization_field(self.table, x, self.zones, self.tol_field).map_err(StepFailure::Field)
    }

    /// One Dormand-Prince step from `(x, k1)`; returns the new point, its
    /// field value and the local error vector.
    fn step(&self, x: &[f64], k1: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), StepFailure> {
        let n = x.len();
        let mut ks: Vec<Vec<f64>> = vec![k1.to_vec()];
        let mut y = vec![0.0; n];
        for row in A.iter() {
            for i in 0..n {
                y[i] = x[i] + h * ks.iter().zip(row).map(|(k, a)| a * k[i]).sum::<f64>();
            }
            ks.push(self.field(&y)?);
        }
        // the last stage is evaluated at the fifth-order solution
        let err = (0..n)
            .map(|i| h * ks.iter().zip(&E).map(|(k, e)| e * k[i]).sum::<f64>())
            .collect();
        let k7 = ks.pop().unwrap();
        Ok((y, k7, err))
    }
}

fn trace_one(
    stepper: &Stepper,
    sample_id: usize,
    start: &[f64],
    c0: f64,
    span: f64,
    config: &TransportConfig,
) -> (Trajectory, bool) {
    let table = stepper.table;
    let dim = start.len();
    let level = |x: &[f64]| table.function.eval(x).unwrap_or(f64::NAN);
    let point = |t: f64, x: &[f64], g: f64| TrajectoryPoint {
        t,
        x: x.to_vec(),
        g_value: g,
    };
    let g0 = level(start);
    let mut tr = Trajectory {
        sample_id,
        points: vec![point(0.0, start, g0)],
        max_level_error: (g0 - c0).abs(),
        verdict: TransportVerdict::Success,
    };
    let finish = |mut tr: Trajectory, verdict, singular| {
        tr.verdict = verdict;
        (tr, singular)
    };
    if span == 0.0 {
        return finish(tr, TransportVerdict::Success, false);
    }
    let mut x = start.to_vec();
    let mut k1 = match stepper.field(&x) {
        Ok(k) => k,
        Err(StepFailure::Field(FieldError::NonFinite)) => return finish(tr, TransportVerdict::IntegrationFailure, false),
        Err(_) => return finish(tr, TransportVerdict::FieldSingular, true),
    };
    let dir = span.signum();
    let mut t = 0.0;
    let mut h = span / 16.0;
    let h_min = 1e-12 * span.abs().max(1.0);
    let tol = config.ode.tol;
    for _ in 0..config.ode.max_steps {
        if (span - t) * dir <= h_min {
            return finish(tr, TransportVerdict::Success, false);
        }
        if (t + h - span) * dir > 0.0 {
            h = span - t;
        }
        let (y, k7, err) = match stepper.step(&x, &k1, h) {
            Ok(s) => s,
            Err(StepFailure::Field(FieldError::NonFinite)) => {
                h *= 0.5;
                if h.abs() < h_min {
                    return finish(tr, TransportVerdict::IntegrationFailure, false);
                }
                continue;
            }
            Err(StepFailure::Field(_)) => return finish(tr, TransportVerdict::FieldSingular, true),
        };
        let e = (err
            .iter()
            .zip(&x)
            .zip(&y)
            .map(|((ei, xi), yi)| {
                let sc = tol + tol * xi.abs().max(yi.abs());
                (ei / sc).powi(2)
            })
            .sum::<f64>()
            / dim as f64)
            .sqrt();
        let t_new = t + h;
        let g = level(&y);
        let level_err = (g - (c0 + t_new)).abs();
        let level_ok = level_err <= 0.5 * config.tol_transport;
        if e <= 1.0 && e.is_finite() && level_ok {
            x = y;
            k1 = k7;
            t = t_new;
            tr.max_level_error = tr.max_level_error.max(level_err);
            tr.points.push(point(t, &x, g));
            let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            let fac = if e.is_finite() && e > 1.0 { (0.9 * e.powf(-0.2)).clamp(0.1, 0.5) } else { 0.5 };
            h *= fac;
        }
        if h.abs() < h_min {
            return finish(tr, TransportVerdict::IntegrationFailure, false);
        }
    }
    let verdict = if (span - t) * dir <= h_min {
        TransportVerdict::Success
    } else {
        TransportVerdict::IntegrationFailure
    };
    finish(tr, verdict, false)
}

/// Integrates `dx/dt = v(x)` from `t = 0` to `c1 - c0` for every sample.
/// Never fails: problems are reported in the verdict.
pub fn transport_fiber(
    table: &DerivativeTable,
    c0: f64,
    c1: f64,
    samples: &[Vec<f64>],
    zones: Zones,
    config: &TransportConfig,
) -> TransportResult {
    let zones = if table.arity() < 2 { Zones::inner_only() } else { zones };
    let stepper = Stepper {
        table,
        zones,
        tol_field: config.tol_field,
    };
    let runs: Vec<(Trajectory, bool)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, p)| trace_one(&stepper, i, p, c0, c1 - c0, config))
        .collect();
    let singular_encounters = runs.iter().filter(|(_, s)| *s).count();
    let trajectories: Vec<Trajectory> = runs.into_iter().map(|(t, _)| t).collect();
    let max_level_error = trajectories.iter().map(|t| t.max_level_error).fold(0.0, f64::max);
    let verdict = if singular_encounters > 0 {
        TransportVerdict::FieldSingular
    } else if trajectories.iter().any(|t| t.verdict != TransportVerdict::Success)
        || !(max_level_error <= config.tol_transport)
    {
        TransportVerdict::IntegrationFailure
    } else {
        TransportVerdict::Success
    };
    TransportResult {
        c0,
        c1,
        trajectories,
        max_level_error,
        singular_encounters,
        verdict,
    }
}

/// Up to `count` points of `g = c` inside the ball of the given radius,
/// found by projecting random ball points along the gradient.
pub fn sample_level_set(table: &DerivativeTable, c: f64, count: usize, radius: f64, seed: u64, tol: f64) -> Vec<Vec<f64>> {
    let n = table.arity();
    let region = Region::cube(radius, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut grad = vec![0.0; n];
    let mut mag = vec![0.0; n];
    for _ in 0..200 * count.max(1) {
        if out.len() >= count {
            break;
        }
        let mut x = region.sample(&mut rng);
        if norm(&x) > radius {
            continue;
        }
        let mut ok = false;
        for _ in 0..60 {
            let Ok(v) = table.function.eval(&x) else { break };
            let r = v - c;
            if r.abs() <= tol {
                ok = true;
                break;
            }
            table.real_gradient(&x, &mut grad, &mut mag);
            let gg = dot(&grad, &grad);
            if !(gg > 0.0 && gg.is_finite()) {
                break;
            }
            let step = (r / gg).clamp(-1e3, 1e3);
            let len = step.abs() * gg.sqrt();
            let damp = if len > 1.0 { 1.0 / len } else { 1.0 };
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= damp * step * gi;
            }
        }
        if ok && norm(&x) <= radius && out.iter().all(|p| norm(&p.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) > 1e-6) {
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub samples: usize,
    pub sample_radius: f64,
    pub seed: u64,
    pub transport: TransportConfig,
    pub tol_value: ValueTolerance,
    /// Box half-width and grid for the component-count check in the plane.
    pub fiber_box: f64,
    pub fiber_grid: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 20,
            sample_radius: 5.0,
            seed: 42,
            transport: TransportConfig::default(),
            tol_value: ValueTolerance::default(),
            fiber_box: 20.0,
            fiber_grid: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Success,
    Refused,
    FieldSingular,
    IntegrationFailure,
    /// Fiber component counts differ across the interval.
    Falsified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberCounts {
    pub levels: [f64; 3],
    pub counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub interval: [f64; 2],
    pub verdict: Verdict,
    pub notes: Vec<String>,
    /// Candidates found inside the interval.
    pub inside: Vec<Value>,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<Zones>,
    pub max_level_error: f64,
    pub transports: Vec<TransportResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_counts: Option<FiberCounts>,
}

fn meets(c: &ValueCluster, a: f64, b: f64, tol: &ValueTolerance) -> bool {
    let v = c.value.to_complex();
    let t = tol.at(c.value.abs()) + c.spread;
    v.im.abs() <= t && v.re >= a - t && v.re <= b + t
}

/// Transport evidence that `[a, b]` contains no atypical value.
///
/// Refuses when a candidate that is a critical value lies in the interval.
/// Candidates seen only at infinity do not block the run, since they may be
/// typical; they are listed in the notes. In the plane the fiber components
/// at both ends and the midpoint are compared as well, and a change
/// falsifies typicality.
pub fn verify_interval(
    table: &DerivativeTable,
    a: f64,
    b: f64,
    candidates: &[ValueCluster],
    config: &VerifyConfig,
) -> Result<VerifyReport, FibrationError> {
    if table.mode() == Mode::Complex {
        return Err(FibrationError::ComplexMode);
    }
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let inside: Vec<&ValueCluster> = candidates.iter().filter(|c| meets(c, a, b, &config.tol_value)).collect();
    let mut report = VerifyReport {
        interval: [a, b],
        verdict: Verdict::Success,
        notes: Vec::new(),
        inside: inside.iter().map(|c| c.value).collect(),
        samples: 0,
        zones: None,
        max_level_error: 0.0,
        transports: Vec::new(),
        fiber_counts: None,
    };
    if let Some(c) = inside.iter().find(|c| c.provenance.has_critical()) {
        report.verdict = Verdict::Refused;
        report.notes.push(format!("interval not candidate-free: critical value {} lies in it", c.value));
        return Ok(report);
    }
    for c in &inside {
        report.notes.push(format!(
            "asymptotic candidate {} lies in the interval; it may still be a typical value",
            c.value
        ));
    }

    let mid = 0.5 * (a + b);
    let tol_sample = 1e-3 * config.transport.tol_transport;
    let samples = sample_level_set(table, mid, config.samples, config.sample_radius, config.seed, tol_sample);
    report.samples = samples.len();
    if samples.is_empty() {
        report.verdict = Verdict::IntegrationFailure;
        report.notes.push(format!(
            "no points of the level {mid} found within radius {}",
            config.sample_radius
        ));
        return Ok(report);
    }
    let zones = Zones::around(&samples);
    report.zones = Some(zones);
    for end in [a, b] {
        report.transports.push(transport_fiber(table, mid, end, &samples, zones, &config.transport));
    }
    report.max_level_error = report.transports.iter().map(|t| t.max_level_error).fold(0.0, f64::max);
    let worst = report.transports.iter().map(|t| t.verdict).fold(TransportVerdict::Success, |acc, v| match (acc, v) {
        (TransportVerdict::FieldSingular, _) | (_, TransportVerdict::FieldSingular) => TransportVerdict::FieldSingular,
        (TransportVerdict::IntegrationFailure, _) | (_, TransportVerdict::IntegrationFailure) => {
            TransportVerdict::IntegrationFailure
        }
        _ => TransportVerdict::Success,
    });
    report.verdict = match worst {
        TransportVerdict::Success => Verdict::Success,
        TransportVerdict::FieldSingular => Verdict::FieldSingular,
        TransportVerdict::IntegrationFailure => Verdict::IntegrationFailure,
    };

    if table.arity() == 2 {
        let levels = [a, mid, b];
        let mut counts = [0; 3];
        for (k, &c) in levels.iter().enumerate() {
            counts[k] = fiber_components(table, c, config.fiber_box, config.fiber_grid)?;
        }
        if counts.iter().any(|&k| k != counts[0]) {
            report.verdict = Verdict::Falsified;
            report.notes.push(format!(
                "fiber component counts {counts:?} at levels {levels:?} differ (box {}, grid {}): the interval holds an atypical value, up to grid resolution",
                config.fiber_box, config.fiber_grid
            ));
        }
        report.fiber_counts = Some(FiberCounts { levels, counts });
    }
    if report.verdict == Verdict::Success {
        report.notes.push(format!(
            "all {} sampled fibers were transported to both ends; this is evidence of triviality over the interval, not a proof",
            report.samples
        ));
    }
    Ok(report)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let p = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = p;
            i = p;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[a.max(b) as usize] = a.min(b);
        }
    }
}

fn sample_grid(table: &DerivativeTable, c: f64, half_width: f64, grid: usize) -> Vec<bool> {
    let d = table.arity();
    let p = grid + 1;
    let h = 2.0 * half_width / grid as f64;
    (0..p.pow(d as u32))
        .into_par_iter()
        .map(|mut idx| {
            let mut x = [0.0; 3];
            for xk in x.iter_mut().take(d) {
                *xk = -half_width + (idx % p) as f64 * h;
                idx /= p;
            }
            table.function.eval(&x[..d]).map(|v| v > c).unwrap_or(false)
        })
        .collect()
}

/// Connected components of the level set `g = c` extracted on a grid of
/// `grid` cells per axis over `[-L, L]^n`, for `n = 2` (marching squares,
/// saddle cells resolved by the centre value) or `n = 3` (marching cubes,
/// positive corners joined along cube edges).
pub fn fiber_components(table: &DerivativeTable, c: f64, half_width: f64, grid: usize) -> Result<usize, FibrationError> {
    if table.mode() == Mode::Complex {
        return Err(FibrationError::ComplexMode);
    }
    if grid < 2 {
        return Err(FibrationError::GridTooCoarse(grid));
    }
    match table.arity() {
        2 => Ok(squares(table, c, half_width, grid)),
        3 => Ok(cubes(table, c, half_width, grid)),
        d => Err(FibrationError::UnsupportedDimension(d)),
    }
}

fn squares(table: &DerivativeTable, c: f64, half_width: f64, grid: usize) -> usize {
    let p = grid + 1;
    let above = sample_grid(table, c, half_width, grid);
    let s = |i: usize, j: usize| above[j * p + i];
    // edge ids: horizontal (i,j)-(i+1,j) then vertical (i,j)-(i,j+1)
    let hor = |i: usize, j: usize| (j * p + i) as u32;
    let ver = |i: usize, j: usize| (p * p + j * p + i) as u32;
    let mut uf = UnionFind::new(2 * p * p);
    let mut crossing = vec![false; 2 * p * p];
    let h = 2.0 * half_width / grid as f64;
    for j in 0..grid {
        for i in 0..grid {
            let (a, b, cc, d) = (s(i, j), s(i + 1, j), s(i + 1, j + 1), s(i, j + 1));
            let edges = [(hor(i, j), a != b), (ver(i + 1, j), b != cc), (hor(i, j + 1), d != cc), (ver(i, j), a != d)];
            let cut: Vec<u32> = edges.iter().filter(|e| e.1).map(|e| e.0).collect();
            for &e in &cut {
                crossing[e as usize] = true;
            }
            match cut.len() {
                2 => uf.union(cut[0], cut[1]),
                4 => {
                    let x = -half_width + (i as f64 + 0.5) * h;
                    let y = -half_width + (j as f64 + 0.5) * h;
                    let centre = table.function.eval(&[x, y]).map(|v| v > c).unwrap_or(false);
                    let [bottom, right, top, left] = [edges[0].0, edges[1].0, edges[2].0, edges[3].0];
                    if centre == a {
                        uf.union(bottom, right);
                        uf.union(top, left);
                    } else {
                        uf.union(bottom, left);
                        uf.union(right, top);
                    }
                }
                _ => {}
            }
        }
    }
    count_roots(&mut uf, &crossing)
}

fn count_roots(uf: &mut UnionFind, crossing: &[bool]) -> usize {
    let mut roots: Vec<u32> = (0..crossing.len() as u32)
        .filter(|&e| crossing[e as usize])
        .map(|e| uf.find(e))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

const CUBE_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

fn cubes(table: &DerivativeTable, c: f64, half_width: f64, grid: usize) -> usize {
    let p = grid + 1;
    let above = sample_grid(table, c, half_width, grid);
    let vid = |i: usize, j: usize, k: usize| (k * p + j) * p + i;
    let eid = |axis: usize, v: usize| (axis * p * p * p + v) as u32;
    let mut uf = UnionFind::new(3 * p * p * p);
    let mut crossing = vec![false; 3 * p * p * p];
    // cube edges as corner pairs with the axis they run along
    let mut cube_edges = Vec::new();
    for (a, ca) in CUBE_CORNERS.iter().enumerate() {
        for (axis, _) in ca.iter().enumerate().filter(|(_, &v)| v == 0) {
            let mut cb = *ca;
            cb[axis] = 1;
            let b = CUBE_CORNERS.iter().position(|q| *q == cb).unwrap();
            cube_edges.push((a, b, axis));
        }
    }
    for k in 0..grid {
        for j in 0..grid {
            for i in 0..grid {
                let corner = |q: usize| {
                    let o = CUBE_CORNERS[q];
                    vid(i + o[0], j + o[1], k + o[2])
                };
                let sign: Vec<bool> = (0..8).map(|q| above[corner(q)]).collect();
                if sign.iter().all(|&s| s == sign[0]) {
                    continue;
                }
                // positive corners grouped along cube edges
                let mut group = [usize::MAX; 8];
                let mut next = 0;
                for q in 0..8 {
                    if !sign[q] || group[q] != usize::MAX {
                        continue;
                    }
                    group[q] = next;
                    let mut stack = vec![q];
                    while let Some(u) = stack.pop() {
                        for &(a, b, _) in &cube_edges {
                            let v = if a == u { b } else if b == u { a } else { continue };
                            if sign[v] && group[v] == usize::MAX {
                                group[v] = next;
                                stack.push(v);
                            }
                        }
                    }
                    next += 1;
                }
                let mut first = vec![u32::MAX; next];
                for &(a, b, axis) in &cube_edges {
                    if sign[a] == sign[b] {
                        continue;
                    }
                    let e = eid(axis, corner(a));
                    crossing[e as usize] = true;
                    let g = if sign[a] { group[a] } else { group[b] };
                    if first[g] == u32::MAX {
                        first[g] = e;
                    } else {
                        uf.union(first[g], e);
                    }
                }
            }
        }
    }
    count_roots(&mut uf, &crossing)
}
