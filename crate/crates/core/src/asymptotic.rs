//! Branches of the tangency variety traced along a geometric radius ladder,
//! their limit classification, and the asymptotic value set.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DerivativeTable, Mode};
use crate::solve::{continue_path, ContinuationSettings, PathOutcome, Root};
use crate::tangency::{
    degenerate_slice, norm, sample_slice, DegenerateSlice, LagrangeFamily, SliceSpec, TangencyConfig,
    TangencyPoint,
};
use crate::value::{cluster_witnesses, Provenance, Value, ValueCluster, ValueTolerance, Witness};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LadderError {
    #[error("initial radius must be positive, got {0}")]
    Radius(f64),
    #[error("growth factor must lie in (1, 10], got {0}")]
    Growth(f64),
    #[error("a ladder needs at least 4 rungs, got {0}")]
    Rungs(usize),
}

/// Radii `r0 * rho^k` for `k = 0..=rungs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusLadder {
    pub r0: f64,
    pub rho: f64,
    pub rungs: usize,
}

impl Default for RadiusLadder {
    fn default() -> Self {
        RadiusLadder {
            r0: 5.0,
            rho: 2.0,
            rungs: 10,
        }
    }
}

impl RadiusLadder {
    pub fn new(r0: f64, rho: f64, rungs: usize) -> Result<Self, LadderError> {
        let l = RadiusLadder { r0, rho, rungs };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), LadderError> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(LadderError::Radius(self.r0));
        }
        if !(self.rho > 1.0 && self.rho <= 10.0) {
            return Err(LadderError::Growth(self.rho));
        }
        if self.rungs < 4 {
            return Err(LadderError::Rungs(self.rungs));
        }
        Ok(())
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..=self.rungs).map(|k| self.r0 * self.rho.powi(k as i32)).collect()
    }

    pub fn top(&self) -> f64 {
        self.r0 * self.rho.powi(self.rungs as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConfig {
    pub ladder: RadiusLadder,
    pub tangency: TangencyConfig,
    pub tol_value: ValueTolerance,
    pub divergence_threshold: f64,
    pub continuation: ContinuationSettings,
    /// Branches whose samples at a rung are within `merge_rel * R` merge.
    pub merge_rel: f64,
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        AsymptoticConfig {
            ladder: RadiusLadder::default(),
            tangency: TangencyConfig::default(),
            tol_value: ValueTolerance::default(),
            divergence_threshold: 1e8,
            continuation: ContinuationSettings::default(),
            merge_rel: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classification {
    Finite { limit: Value },
    Divergent,
    Undetermined,
}

/// Aitken estimates and successive difference ratios of a value sequence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Extrapolation {
    pub aitken: Vec<Value>,
    pub ratios: Vec<f64>,
}

/// `f` at one accepted continuation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub radius: f64,
    pub f_value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Rung of the first sample.
    pub born: usize,
    /// One sample per rung from `born` on, radii strictly increasing.
    pub samples: Vec<TangencyPoint>,
    /// Every accepted continuation point, including rung samples.
    #[serde(skip)]
    pub path: Vec<PathSample>,
    pub classification: Classification,
    pub extrapolation: Extrapolation,
    /// Why tracing stopped before the top rung.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<String>,
}

impl Branch {
    pub fn last_rung(&self) -> usize {
        self.born + self.samples.len() - 1
    }

    pub fn values(&self) -> Vec<Value> {
        self.samples.iter().map(|s| s.f_value).collect()
    }
}

fn make_value(z: Complex64, like: Value) -> Value {
    match like {
        Value::Real(_) => Value::Real(z.re),
        Value::Complex { .. } => Value::Complex { re: z.re, im: z.im },
    }
}

/// Aitken delta-squared estimates from consecutive triples.
pub fn aitken(values: &[Value]) -> Vec<Value> {
    values
        .windows(3)
        .map(|w| {
            let (a, b, c) = (w[0].to_complex(), w[1].to_complex(), w[2].to_complex());
            let (d1, d2) = (b - a, c - b);
            let den = d2 - d1;
            let scale = a.norm().max(b.norm()).max(c.norm());
            let est = if den.norm() <= 1e-14 * scale || den.norm() == 0.0 {
                c
            } else {
                c - d2 * d2 / den
            };
            let est = if est.re.is_finite() && est.im.is_finite() { est } else { c };
            make_value(est, w[2])
        })
        .collect()
}

/// Limit classification of an f-value sequence sampled on a geometric ladder.
pub fn classify_values(values: &[Value], tol: &ValueTolerance, divergence_threshold: f64) -> (Classification, Extrapolation) {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1].distance(w[0])).collect();
    let ratios: Vec<f64> = diffs
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else if w[1] > 0.0 { f64::INFINITY } else { 0.0 })
        .collect();
    let ext = Extrapolation {
        aitken: aitken(values),
        ratios,
    };
    if values.len() < 4 {
        return (Classification::Undetermined, ext);
    }
    let last = *values.last().unwrap();
    if !last.is_finite() || last.abs() > divergence_threshold {
        return (Classification::Divergent, ext);
    }
    let a = &ext.aitken;
    let tail = &a[a.len().saturating_sub(3)..];
    let c = *tail.last().unwrap();
    let agree = tail.len() == 3 && tail.iter().all(|v| v.distance(c) <= tol.at(c.abs()));
    let d_last = *diffs.last().unwrap();
    let d_prev = diffs[diffs.len() - 2];
    let decaying = d_last <= tol.at(c.abs()) || d_last < 0.95 * d_prev;
    if agree && decaying {
        return (Classification::Finite { limit: c }, ext);
    }
    let n = diffs.len();
    if n >= 4 && (n - 3..n).all(|i| diffs[i] > diffs[i - 1] && diffs[i] > tol.at(values[i].abs())) {
        return (Classification::Divergent, ext);
    }
    (Classification::Undetermined, ext)
}

pub fn classify_branch(branch: &Branch, tol: &ValueTolerance, divergence_threshold: f64) -> (Classification, Extrapolation) {
    classify_values(&branch.values(), tol, divergence_threshold)
}

/// Numerical form of the escaping-sequence criterion at the top sample: the
/// top value is within `tol` of the limit, allowing for the geometric tail
/// still ahead of it.
pub fn limit_witnessed(branch: &Branch, limit: Value, tol: &ValueTolerance) -> bool {
    let vals = branch.values();
    let Some(&top) = vals.last() else {
        return false;
    };
    let n = vals.len();
    let tail = if n >= 3 {
        let d1 = vals[n - 2].distance(vals[n - 3]);
        let d2 = top.distance(vals[n - 2]);
        let q = if d1 > 0.0 { d2 / d1 } else { 0.0 };
        if q < 1.0 { d2 * q / (1.0 - q) } else { f64::INFINITY }
    } else {
        f64::INFINITY
    };
    top.distance(limit) <= tol.at(limit.abs()) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub rung: usize,
    pub radius: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub radii: Vec<f64>,
    pub branches: Vec<Branch>,
    /// Branches holding a sample at each rung.
    pub live_counts: Vec<usize>,
    /// Highest rung holding samples; later rungs could not be evaluated.
    pub reach: usize,
    /// Rung from which the live count stays constant up to `reach`.
    pub stabilization: Option<Stabilization>,
    /// Non-empty when `M(f)` fills the spheres; branches are then not traced.
    pub degenerate: Vec<DegenerateSlice>,
}

impl TraceResult {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }

    /// Samples at the given rung.
    pub fn rung_points(&self, rung: usize) -> Vec<&TangencyPoint> {
        self.branches
            .iter()
            .filter(|b| b.born <= rung && b.last_rung() >= rung)
            .map(|b| &b.samples[rung - b.born])
            .collect()
    }
}

fn slice_family<'a>(table: &'a DerivativeTable, slice: Option<usize>, config: &AsymptoticConfig) -> LagrangeFamily<'a> {
    match (table.mode(), slice) {
        (Mode::Complex, Some(k)) => LagrangeFamily::complex(table, SliceSpec::derive(config.tangency.seed, k, 2 * table.arity())),
        _ => LagrangeFamily::real(table),
    }
}

enum Step {
    Reached(TangencyPoint, Vec<PathSample>),
    Lost(Vec<PathSample>, String),
}

fn extend(table: &DerivativeTable, from: &TangencyPoint, to: f64, config: &AsymptoticConfig) -> Step {
    let family = slice_family(table, from.slice, config);
    let start = Root {
        point: from.unknowns(),
        residual_norm: from.residual,
        converged: true,
        iterations: 0,
        regularized: false,
    };
    let mut settings = config.continuation;
    settings.newton.tol_residual = config.tangency.tol_residual;
    let trace = continue_path(&family, &start, from.radius, to, &settings);
    let mut path = Vec::new();
    let mut last = None;
    for pp in trace.points.iter().skip(1) {
        match TangencyPoint::from_root(table, &pp.root, pp.param, from.slice, &config.tangency) {
            Some(tp) => {
                path.push(PathSample {
                    radius: pp.param,
                    f_value: tp.f_value,
                });
                last = Some(tp);
            }
            None => {
                return Step::Lost(path, format!("left the valid region near R = {}", pp.param));
            }
        }
    }
    match (&trace.outcome, last) {
        (PathOutcome::Reached, Some(tp)) if tp.radius == to => Step::Reached(tp, path),
        (PathOutcome::Lost { param, reason }, _) => Step::Lost(path, format!("path lost near R = {param}: {reason}")),
        _ => Step::Lost(path, "continuation ended early".to_string()),
    }
}

fn close_enough(a: &TangencyPoint, b: &TangencyPoint, tol: f64) -> bool {
    a.slice == b.slice && norm(&a.x.iter().zip(&b.x).map(|(u, v)| u - v).collect::<Vec<_>>()) <= tol
}

/// Seeds branches on the first sphere, continues each from rung to rung, and
/// adds branches found by a smaller multistart at every later rung.
pub fn trace_branches(table: &DerivativeTable, config: &AsymptoticConfig) -> TraceResult {
    let radii = config.ladder.radii();
    let tcfg = &config.tangency;
    if degenerate_slice(table, radii[0], tcfg).is_some() {
        let degenerate = radii.iter().filter_map(|&r| degenerate_slice(table, r, tcfg)).collect();
        return TraceResult {
            live_counts: vec![0; radii.len()],
            reach: radii.len() - 1,
            radii,
            branches: Vec::new(),
            stabilization: None,
            degenerate,
        };
    }

    let new_branch = |id: usize, born: usize, p: TangencyPoint| Branch {
        id,
        born,
        path: vec![PathSample {
            radius: p.radius,
            f_value: p.f_value,
        }],
        samples: vec![p],
        classification: Classification::Undetermined,
        extrapolation: Extrapolation::default(),
        closed: None,
    };

    let mut branches: Vec<Branch> = sample_slice(table, radii[0], tcfg.n_starts, tcfg.seed, tcfg)
        .into_iter()
        .enumerate()
        .map(|(i, p)| new_branch(i, 0, p))
        .collect();

    for k in 1..radii.len() {
        let r = radii[k];
        branches
            .par_iter_mut()
            .filter(|b| b.closed.is_none() && b.last_rung() == k - 1)
            .for_each(|b| {
                let from = b.samples.last().unwrap().clone();
                match extend(table, &from, r, config) {
                    Step::Reached(tp, path) => {
                        b.path.extend(path);
                        b.samples.push(tp);
                    }
                    Step::Lost(path, why) => {
                        b.path.extend(path);
                        b.closed = Some(why);
                    }
                }
            });

        // continuation duplicates: keep the lower id
        let tol = config.merge_rel * r;
        let live: Vec<usize> = (0..branches.len())
            .filter(|&i| branches[i].closed.is_none() && branches[i].last_rung() == k)
            .collect();
        for (a, &i) in live.iter().enumerate() {
            if branches[i].closed.is_some() {
                continue;
            }
            for &j in &live[a + 1..] {
                if branches[j].closed.is_none()
                    && close_enough(branches[i].samples.last().unwrap(), branches[j].samples.last().unwrap(), tol)
                {
                    let (keep, drop) = (branches[i].id, j);
                    branches[drop].samples.pop();
                    branches[drop].closed = Some(format!("merged into branch {keep} at R = {r}"));
                }
            }
        }

        let fresh = sample_slice(table, r, (tcfg.n_starts / 4).max(1), tcfg.seed.wrapping_add(k as u64), tcfg);
        for p in fresh {
            let known = branches
                .iter()
                .filter(|b| b.closed.is_none() && b.last_rung() == k)
                .any(|b| close_enough(b.samples.last().unwrap(), &p, tol));
            if !known {
                let id = branches.len();
                branches.push(new_branch(id, k, p));
            }
        }
    }

    // merged branches may have lost their only sample
    branches.retain(|b| !b.samples.is_empty());
    for b in &mut branches {
        let (c, e) = classify_branch(b, &config.tol_value, config.divergence_threshold);
        b.classification = c;
        b.extrapolation = e;
    }

    let live_counts: Vec<usize> = (0..radii.len())
        .map(|k| branches.iter().filter(|b| b.born <= k && b.last_rung() >= k).count())
        .collect();
    // every sphere meets M(f), so empty rungs are beyond floating-point reach
    let reach = live_counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    let stabilization = (0..reach)
        .find(|&k| live_counts[k..=reach].iter().all(|&c| c == live_counts[reach]))
        .map(|k| Stabilization {
            rung: k,
            radius: radii[k],
            count: live_counts[reach],
        });
    TraceResult {
        radii,
        branches,
        live_counts,
        reach,
        stabilization,
        degenerate: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SInfinity {
    pub clusters: Vec<ValueCluster>,
    pub trace: TraceResult,
    /// Some branch keeps oscillating over the top rungs: the input is likely
    /// not definable and the value set is not finite.
    pub instability: bool,
    pub oscillating_branches: Vec<usize>,
    /// Branches first found in the top three rungs.
    pub late_births: usize,
}

const OSCILLATION_WITNESSES: usize = 8;

/// Sign changes among the significant successive differences of `vals`.
fn sign_changes(vals: &[Value], tol: &ValueTolerance) -> usize {
    let signs: Vec<f64> = vals
        .windows(2)
        .filter_map(|w| {
            let d = w[1].re() - w[0].re();
            (d.abs() > tol.at(w[1].abs())).then_some(d.signum())
        })
        .collect();
    signs.windows(2).filter(|s| s[0] != s[1]).count()
}

/// Values of `f` taken in every one of the last three rung intervals of the
/// path: the intersection of their ranges.
fn recurrent_interval(b: &Branch, radii: &[f64]) -> Option<(f64, f64)> {
    let top = b.last_rung();
    if top < 3 {
        return None;
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for j in top - 3..top {
        let (a, c) = (radii[j], radii[j + 1]);
        let vals: Vec<f64> = b
            .path
            .iter()
            .filter(|p| p.radius >= a && p.radius <= c)
            .map(|p| p.f_value.re())
            .collect();
        if vals.is_empty() {
            return None;
        }
        lo = lo.max(vals.iter().copied().fold(f64::INFINITY, f64::min));
        hi = hi.min(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    (lo <= hi).then_some((lo, hi))
}

/// Clustered finite limits of `f` along traced branches.
pub fn s_infinity(table: &DerivativeTable, config: &AsymptoticConfig) -> SInfinity {
    let trace = trace_branches(table, config);
    s_infinity_from(trace, config)
}

pub fn s_infinity_from(trace: TraceResult, config: &AsymptoticConfig) -> SInfinity {
    let tol = &config.tol_value;
    let mut witnesses = Vec::new();
    let mut oscillating = Vec::new();
    for b in &trace.branches {
        match b.classification {
            Classification::Finite { limit } => {
                let top = b.samples.last().unwrap();
                witnesses.push(Witness {
                    point: top.x.clone(),
                    value: limit,
                    branch: Some(b.id),
                });
            }
            _ => {
                if b.last_rung() < 3 {
                    continue;
                }
                let from = trace.radii[b.last_rung() - 3];
                let tail: Vec<Value> = b.path.iter().filter(|p| p.radius >= from).map(|p| p.f_value).collect();
                if sign_changes(&tail, tol) >= 3 {
                    oscillating.push(b.id);
                    if let Some((lo, hi)) = recurrent_interval(b, &trace.radii) {
                        let from = trace.radii[b.last_rung() - 1];
                        let mut inside: Vec<Value> = b
                            .path
                            .iter()
                            .filter(|p| p.radius >= from && (lo..=hi).contains(&p.f_value.re()))
                            .map(|p| p.f_value)
                            .collect();
                        inside.sort_by(|a, b| a.re().total_cmp(&b.re()));
                        // an evenly spread handful is enough to show the set is not finite
                        let step = inside.len().div_ceil(OSCILLATION_WITNESSES).max(1);
                        for v in inside.into_iter().step_by(step) {
                            witnesses.push(Witness {
                                point: Vec::new(),
                                value: v,
                                branch: Some(b.id),
                            });
                        }
                    }
                }
            }
        }
    }
    let top = trace.radii.len() - 1;
    let late_births = trace.branches.iter().filter(|b| b.born + 3 > top && b.born > 0).count();
    SInfinity {
        clusters: cluster_witnesses(witnesses, Provenance::Asymptotic, tol),
        instability: !oscillating.is_empty(),
        oscillating_branches: oscillating,
        late_births,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expression, ParseOptions};

    fn table(text: &str, vars: &[&str]) -> DerivativeTable {
        DerivativeTable::new(&Expression::parse(text, vars, Mode::Real).unwrap())
    }

    fn reals(v: &[f64]) -> Vec<Value> {
        v.iter().map(|&x| Value::Real(x)).collect()
    }

    #[test]
    fn ladder_validation() {
        assert_eq!(RadiusLadder::default().top(), 5120.0);
        assert_eq!(RadiusLadder::default().radii().len(), 11);
        assert!(RadiusLadder::new(5.0, 1.0, 10).is_err());
        assert!(RadiusLadder::new(5.0, 11.0, 10).is_err());
        assert!(RadiusLadder::new(5.0, 2.0, 3).is_err());
        assert!(RadiusLadder::new(-1.0, 2.0, 10).is_err());
    }

    #[test]
    fn classify_examples() {
        let tol = ValueTolerance::default();
        let (c, _) = classify_values(&reals(&[-1.0; 6]), &tol, 1e8);
        assert_eq!(c, Classification::Finite { limit: Value::Real(-1.0) });

        let radii: Vec<f64> = (0..6).map(|k| 10.0 * 2f64.powi(k)).collect();
        let f: Vec<f64> = radii.iter().map(|r| 2.0 + 5.0 * r.powf(-1.5)).collect();
        let (c, ext) = classify_values(&reals(&f), &tol, 1e8);
        let Classification::Finite { limit } = c else { panic!("{c:?}") };
        assert!((limit.re() - 2.0).abs() < 1e-8);
        assert!(ext.aitken.iter().all(|a| (a.re() - 2.0).abs() < 1e-8));

        let sq: Vec<f64> = radii.iter().map(|r| r * r).collect();
        assert_eq!(classify_values(&reals(&sq), &tol, 1e8).0, Classification::Divergent);
        assert_eq!(classify_values(&reals(&[1.0, 2.0, 3.0]), &tol, 1e8).0, Classification::Undetermined);
    }

    #[test]
    fn quartic_branches() {
        let g = table("x^2*y^2 + 2*x*y", &["x", "y"]);
        let s = s_infinity(&g, &AsymptoticConfig::default());
        let b = &s.trace.branches;
        assert_eq!(b.len(), 8, "{:?}", b.iter().map(|b| (&b.classification, &b.closed)).collect::<Vec<_>>());
        let finite = b.iter().filter(|b| matches!(b.classification, Classification::Finite { .. })).count();
        let divergent = b.iter().filter(|b| b.classification == Classification::Divergent).count();
        assert_eq!((finite, divergent), (4, 4));
        assert_eq!(s.clusters.len(), 1);
        assert!((s.clusters[0].value.re() + 1.0).abs() < 1e-9);
        assert!(!s.instability);
        // y = x branch at R = 10 has f = R^4/4 + R^2
        let at10: Vec<f64> = s.trace.rung_points(1).iter().map(|p| p.f_value.re()).collect();
        assert!(at10.iter().any(|v| (v - 2600.0).abs() < 1e-6));
        assert_eq!(s.trace.stabilization.map(|st| st.count), Some(8));
    }

    #[test]
    fn x_exp_x_rays() {
        let f = table("x*exp(x)", &["x"]);
        let s = s_infinity(&f, &AsymptoticConfig::default());
        assert_eq!(s.trace.branches.len(), 2);
        assert_eq!(s.clusters.len(), 1);
        assert!(s.clusters[0].value.abs() < 1e-4);
        let neg = s.trace.branches.iter().find(|b| b.samples[0].x[0] < 0.0).unwrap();
        assert!(matches!(neg.classification, Classification::Finite { .. }));
        let pos = s.trace.branches.iter().find(|b| b.samples[0].x[0] > 0.0).unwrap();
        assert_eq!(pos.classification, Classification::Divergent);
    }

    #[test]
    fn finite_limits_are_witnessed() {
        let f = table("x + x^2*y", &["x", "y"]);
        let cfg = AsymptoticConfig::default();
        let s = s_infinity(&f, &cfg);
        assert_eq!(s.clusters.len(), 1, "{:?}", s.clusters);
        assert!(s.clusters[0].value.abs() < 1e-4);
        for b in &s.trace.branches {
            if let Classification::Finite { limit } = b.classification {
                assert!(limit_witnessed(b, limit, &cfg.tol_value));
                assert!(b.samples.last().unwrap().radius >= cfg.ladder.radii()[b.last_rung()]);
            }
        }
    }

    #[test]
    fn oscillating_input_is_flagged() {
        let opts = ParseOptions::new(Mode::Real).allow_nondefinable(true);
        let e = Expression::parse_with("x*sin(x)", &["x"], &opts).unwrap();
        let s = s_infinity(&DerivativeTable::new(&e), &AsymptoticConfig::default());
        assert!(s.instability);
        assert!(s.clusters.len() >= 3, "{:?}", s.clusters);
    }
}
