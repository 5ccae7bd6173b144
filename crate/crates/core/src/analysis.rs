//! End-to-end analysis: critical values, asymptotic values, their bounds and
//! the JSON report.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::asymptotic::{s_infinity, AsymptoticConfig, Classification, RadiusLadder, SInfinity};
use crate::critical::{gradient_zero_components, sigma_values, CriticalConfig, GradientSystem};
use crate::expr::{DerivativeTable, ExprError, Expression, Mode, ParseOptions};
use crate::fibration::{verify_interval, FibrationError, VerifyConfig, VerifyReport};
use crate::solve::NewtonOptions;
use crate::tangency::{slice_components, TangencyConfig};
use crate::value::{merge_clusters, Value, ValueCluster, ValueTolerance};

pub const SCHEMA: u32 = 1;

/// Largest grid used for component counting in three real dimensions.
const GRID_CAP_3D: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub mode: Mode,
    pub seed: u64,
    pub starts: usize,
    pub ladder: RadiusLadder,
    pub tol_residual: f64,
    pub tol_tau: f64,
    pub tol_value: ValueTolerance,
    pub divergence_threshold: f64,
    /// Half-width of the critical-point search box.
    pub box_half_width: f64,
    /// Cells per axis for critical-set component counting.
    pub grid: usize,
    pub allow_nondefinable: bool,
    #[serde(default)]
    pub record_timings: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mode: Mode::Real,
            seed: 42,
            starts: 200,
            ladder: RadiusLadder::default(),
            tol_residual: 1e-9,
            tol_tau: 1e-7,
            tol_value: ValueTolerance::default(),
            divergence_threshold: 1e8,
            box_half_width: 20.0,
            grid: 512,
            allow_nondefinable: false,
            record_timings: false,
        }
    }
}

impl AnalysisConfig {
    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions::new(self.mode).allow_nondefinable(self.allow_nondefinable)
    }

    pub fn critical(&self) -> CriticalConfig {
        CriticalConfig {
            half_width: self.box_half_width,
            n_starts: self.starts,
            seed: self.seed,
            newton: NewtonOptions {
                tol_residual: self.tol_residual,
                ..NewtonOptions::default()
            },
            tol_value: self.tol_value,
        }
    }

    pub fn asymptotic(&self) -> AsymptoticConfig {
        AsymptoticConfig {
            ladder: self.ladder,
            tangency: TangencyConfig {
                n_starts: self.starts,
                seed: self.seed,
                tol_residual: self.tol_residual,
                tol_tau: self.tol_tau,
                ..TangencyConfig::default()
            },
            tol_value: self.tol_value,
            divergence_threshold: self.divergence_threshold,
            ..AsymptoticConfig::default()
        }
    }
}

/// A count, or `"unknown"` when it could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Count(usize),
    Unknown,
}

impl Bound {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Bound::Count(c) => n <= c,
            Bound::Unknown => true,
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::Count(c) => s.serialize_u64(*c as u64),
            Bound::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(c) => Ok(Bound::Count(c)),
            Raw::Word(w) if w == "unknown" => Ok(Bound::Unknown),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected a count or \"unknown\", got {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Components of the critical set inside the search box.
    pub sigma_upper: Bound,
    /// Components of the tangency slice at the top rung.
    pub s_upper: Bound,
    pub stabilization_radius: Option<f64>,
    /// Largest ladder radius at which tangency points were evaluated.
    pub top_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub expression: String,
    pub variables: Vec<String>,
    pub config: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub id: usize,
    pub born: usize,
    pub last_rung: usize,
    pub classification: Classification,
    pub last_radius: f64,
    pub last_value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// The tangency variety fills whole spheres; asymptotic values were not traced.
    pub degenerate_slice: bool,
    /// Some branch keeps oscillating: the asymptotic value set looks infinite.
    pub instability: bool,
    pub nondefinable_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub critical_roots: usize,
    pub critical_roots_outside_box: usize,
    pub live_counts: Vec<usize>,
    pub late_births: usize,
    pub oscillating_branches: Vec<usize>,
    /// `(radius, f_min, f_max)` of degenerate spheres.
    pub degenerate_ranges: Vec<(f64, f64, f64)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sigma_ms: f64,
    pub components_ms: f64,
    pub asymptotic_ms: f64,
    pub slice_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: u32,
    pub input: Input,
    pub sigma: Vec<ValueCluster>,
    pub s_infinity: Vec<ValueCluster>,
    pub candidates: Vec<ValueCluster>,
    pub bounds: Bounds,
    pub branches: Vec<BranchSummary>,
    pub flags: Flags,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl AnalysisReport {
    pub fn sigma_values(&self) -> Vec<Value> {
        self.sigma.iter().map(|c| c.value).collect()
    }

    pub fn s_infinity_values(&self) -> Vec<Value> {
        self.s_infinity.iter().map(|c| c.value).collect()
    }

    pub fn candidate_values(&self) -> Vec<Value> {
        self.candidates.iter().map(|c| c.value).collect()
    }
}

pub fn parse_input(text: &str, variables: &[&str], config: &AnalysisConfig) -> Result<Expression, ExprError> {
    Expression::parse_with(text, variables, &config.parse_options())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Critical-set components in the search box, when the real dimension allows.
pub fn sigma_bound(table: &DerivativeTable, config: &AnalysisConfig) -> Bound {
    let d = GradientSystem::real_dim(table);
    let grid = if d == 3 { config.grid.min(GRID_CAP_3D) } else { config.grid };
    match gradient_zero_components(table, config.box_half_width, grid, config.tol_residual) {
        Ok(c) => Bound::Count(c),
        Err(_) => Bound::Unknown,
    }
}

/// Slice components at the top rung, once branch counts have stabilized.
pub fn s_bound(table: &DerivativeTable, asym: &SInfinity, config: &AsymptoticConfig) -> Bound {
    let trace = &asym.trace;
    if trace.is_degenerate() || trace.stabilization.is_none() {
        return Bound::Unknown;
    }
    let top = trace.reach;
    let points: Vec<_> = trace.rung_points(top).into_iter().cloned().collect();
    Bound::Count(slice_components(table, &points, trace.radii[top], &config.tangency))
}

pub fn analyze(expr: &Expression, config: &AnalysisConfig) -> AnalysisReport {
    let start = Instant::now();
    let table = DerivativeTable::new(expr);

    let t = Instant::now();
    let sigma = sigma_values(&table, &config.critical());
    let sigma_ms = ms(t);

    let t = Instant::now();
    let sigma_upper = sigma_bound(&table, config);
    let components_ms = ms(t);

    let acfg = config.asymptotic();
    let t = Instant::now();
    let asym = s_infinity(&table, &acfg);
    let asymptotic_ms = ms(t);

    let t = Instant::now();
    let s_upper = s_bound(&table, &asym, &acfg);
    let slice_ms = ms(t);

    let candidates = merge_clusters(&sigma.clusters, &asym.clusters, &config.tol_value);
    let trace = &asym.trace;

    let mut notes = vec![
        "candidates contain every atypical value the search reached; some of them may be typical".to_string(),
    ];
    if sigma.outside_box > 0 {
        notes.push(format!(
            "{} critical points were found outside the search box and ignored",
            sigma.outside_box
        ));
    }
    if trace.is_degenerate() {
        notes.push("the tangency variety fills the spheres; asymptotic values were not traced".to_string());
    }
    if trace.reach + 1 < trace.radii.len() && !trace.is_degenerate() {
        notes.push(format!(
            "no tangency points could be evaluated beyond R = {}",
            trace.radii[trace.reach]
        ));
    }
    if trace.stabilization.is_none() && !trace.is_degenerate() {
        notes.push("branch counts did not stabilize over the radius ladder".to_string());
    }
    if expr.is_nondefinable() {
        notes.push("the input is not definable; finiteness of the value sets is not expected".to_string());
    }
    if asym.instability {
        notes.push(format!(
            "branches {:?} oscillate over the top rungs; the asymptotic value set is likely infinite",
            asym.oscillating_branches
        ));
    }

    let branches = trace
        .branches
        .iter()
        .map(|b| {
            let last = b.samples.last().expect("retained branches have samples");
            BranchSummary {
                id: b.id,
                born: b.born,
                last_rung: b.last_rung(),
                classification: b.classification,
                last_radius: last.radius,
                last_value: last.f_value,
                closed: b.closed.clone(),
            }
        })
        .collect();

    let timings = config.record_timings.then(|| Timings {
        sigma_ms,
        components_ms,
        asymptotic_ms,
        slice_ms,
        total_ms: ms(start),
    });

    AnalysisReport {
        schema: SCHEMA,
        input: Input {
            expression: expr.to_string(),
            variables: expr.variables().to_vec(),
            config: config.clone(),
        },
        sigma: sigma.clusters,
        s_infinity: asym.clusters.clone(),
        candidates,
        bounds: Bounds {
            sigma_upper,
            s_upper,
            stabilization_radius: trace.stabilization.as_ref().map(|s| s.radius),
            top_radius: trace.radii[trace.reach],
        },
        branches,
        flags: Flags {
            degenerate_slice: trace.is_degenerate(),
            instability: asym.instability,
            nondefinable_input: expr.is_nondefinable(),
        },
        diagnostics: Diagnostics {
            critical_roots: sigma.roots,
            critical_roots_outside_box: sigma.outside_box,
            live_counts: trace.live_counts.clone(),
            late_births: asym.late_births,
            oscillating_branches: asym.oscillating_branches.clone(),
            degenerate_ranges: trace.degenerate.iter().map(|d| (d.radius, d.f_min, d.f_max)).collect(),
            notes,
        },
        timings,
    }
}

/// Runs the analysis, then checks the interval against its candidates.
pub fn verify(
    expr: &Expression,
    a: f64,
    b: f64,
    config: &AnalysisConfig,
    verify_config: &VerifyConfig,
) -> Result<(AnalysisReport, VerifyReport), FibrationError> {
    let report = analyze(expr, config);
    let table = DerivativeTable::new(expr);
    let verdict = verify_interval(&table, a, b, &report.candidates, verify_config)?;
    Ok((report, verdict))
}

/// Writes one row per branch sample: `branch_id,rung,R,<coordinates>,lambda,f_value,tau`.
/// Complex coordinates and values get `_re`/`_im` column pairs.
pub fn write_branches_csv<W: Write>(expr: &Expression, config: &AnalysisConfig, out: W) -> csv::Result<usize> {
    let table = DerivativeTable::new(expr);
    let asym = s_infinity(&table, &config.asymptotic());
    let complex = expr.mode() == Mode::Complex;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["branch_id".to_string(), "rung".to_string(), "R".to_string()];
    let pair = |name: &str| vec![format!("{name}_re"), format!("{name}_im")];
    for v in expr.variables() {
        if complex {
            header.extend(pair(v));
        } else {
            header.push(v.clone());
        }
    }
    for name in ["lambda", "f_value"] {
        if complex {
            header.extend(pair(name));
        } else {
            header.push(name.to_string());
        }
    }
    header.push("tau".to_string());
    w.write_record(&header)?;
    let num = |v: f64| format!("{v:.16e}");
    let value = |v: Value| match v {
        Value::Real(x) if !complex => vec![num(x)],
        v => {
            let z = v.to_complex();
            vec![num(z.re), num(z.im)]
        }
    };
    let mut rows = 0;
    for b in &asym.trace.branches {
        for (k, s) in b.samples.iter().enumerate() {
            let mut row = vec![b.id.to_string(), (b.born + k).to_string(), num(s.radius)];
            row.extend(s.x.iter().map(|&c| num(c)));
            row.extend(value(s.lambda));
            row.extend(value(s.f_value));
            row.push(num(s.tau));
            w.write_record(&row)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Pretty JSON with every float written with 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Default)]
struct SciFormatter {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object_value(w)
    }
}
