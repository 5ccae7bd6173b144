//! Candidate values and their clustering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::expr::Mode;

/// A function value: real, or complex (serialized as `{"re": .., "im": ..}`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Complex { re: f64, im: f64 },
}

impl Value {
    pub fn from_complex(z: Complex64, mode: Mode) -> Self {
        match mode {
            Mode::Real => Value::Real(z.re),
            Mode::Complex => Value::Complex { re: z.re, im: z.im },
        }
    }

    pub fn to_complex(self) -> Complex64 {
        match self {
            Value::Real(v) => Complex64::new(v, 0.0),
            Value::Complex { re, im } => Complex64::new(re, im),
        }
    }

    pub fn re(self) -> f64 {
        self.to_complex().re
    }

    pub fn abs(self) -> f64 {
        self.to_complex().norm()
    }

    pub fn distance(self, other: Value) -> f64 {
        (self.to_complex() - other.to_complex()).norm()
    }

    pub fn is_finite(self) -> bool {
        let z = self.to_complex();
        z.re.is_finite() && z.im.is_finite()
    }

    fn order(self, other: Value) -> std::cmp::Ordering {
        let (a, b) = (self.to_complex(), other.to_complex());
        a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
    }
}

struct Num(f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Value::Real(v) => write!(f, "{}", Num(v)),
            Value::Complex { re, im } if im < 0.0 => write!(f, "{}-{}i", Num(re), Num(-im)),
            Value::Complex { re, im } => write!(f, "{}+{}i", Num(re), Num(im)),
        }
    }
}

/// `max(abs, rel * |v|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for ValueTolerance {
    fn default() -> Self {
        ValueTolerance { abs: 1e-5, rel: 1e-6 }
    }
}

impl ValueTolerance {
    pub fn at(&self, v: f64) -> f64 {
        self.abs.max(self.rel * v.abs())
    }

    pub fn close(&self, a: Value, b: Value) -> bool {
        a.distance(b) <= self.at(a.abs().max(b.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Critical,
    Asymptotic,
    /// Merged candidate seen by both searches.
    Both,
}

impl Provenance {
    fn join(self, other: Provenance) -> Provenance {
        if self == other {
            self
        } else {
            Provenance::Both
        }
    }

    pub fn has_critical(self) -> bool {
        matches!(self, Provenance::Critical | Provenance::Both)
    }
}

/// Evidence for a cluster: a point and the value there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub value: Value,
    /// Branch index for asymptotic witnesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCluster {
    pub value: Value,
    pub provenance: Provenance,
    pub members: Vec<Witness>,
    /// Largest distance from a member value to `value`.
    pub spread: f64,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

/// Single-linkage clustering of witness values; output sorted by (re, im).
/// Non-finite values are dropped.
pub fn cluster_witnesses(
    witnesses: Vec<Witness>,
    provenance: Provenance,
    tol: &ValueTolerance,
) -> Vec<ValueCluster> {
    let mut ws: Vec<Witness> = witnesses.into_iter().filter(|w| w.value.is_finite()).collect();
    ws.sort_by(|a, b| a.value.order(b.value));
    let n = ws.len();
    let mut dsu = Dsu((0..n).collect());
    for i in 0..n {
        for j in i + 1..n {
            if ws[j].value.re() - ws[i].value.re() > tol.at(ws[j].value.abs()) {
                break;
            }
            if tol.close(ws[i].value, ws[j].value) {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<Witness>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, w) in ws.into_iter().enumerate() {
        let r = dsu.find(i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(w);
    }
    let mut out: Vec<ValueCluster> = groups
        .into_iter()
        .map(|members| {
            let sum: Complex64 = members.iter().map(|m| m.value.to_complex()).sum();
            let mean = sum / members.len() as f64;
            let value = match members[0].value {
                Value::Real(_) => Value::Real(mean.re),
                Value::Complex { .. } => Value::Complex {
                    re: mean.re,
                    im: mean.im,
                },
            };
            let spread = members
                .iter()
                .map(|m| m.value.distance(value))
                .fold(0.0, f64::max);
            ValueCluster {
                value,
                provenance,
                members,
                spread,
            }
        })
        .collect();
    out.sort_by(|a, b| a.value.order(b.value));
    out
}

/// Clustered union of two cluster lists; members are concatenated and
/// provenance joined.
pub fn merge_clusters(a: &[ValueCluster], b: &[ValueCluster], tol: &ValueTolerance) -> Vec<ValueCluster> {
    let all: Vec<&ValueCluster> = a.iter().chain(b).collect();
    let n = all.len();
    let mut dsu = Dsu((0..n).collect());
    for i in 0..n {
        for j in i + 1..n {
            if tol.close(all[i].value, all[j].value) {
                dsu.union(i, j);
            }
        }
    }
    let mut out = Vec::new();
    for root in 0..n {
        if dsu.find(root) != root {
            continue;
        }
        let parts: Vec<&ValueCluster> = (0..n).filter(|&i| dsu.find(i) == root).map(|i| all[i]).collect();
        let members: Vec<Witness> = parts.iter().flat_map(|c| c.members.iter().cloned()).collect();
        let provenance = parts[1..].iter().fold(parts[0].provenance, |p, c| p.join(c.provenance));
        let mut merged = cluster_witnesses(members, provenance, &ValueTolerance { abs: f64::INFINITY, rel: 0.0 });
        let mut c = merged.pop().expect("merged clusters have members");
        c.provenance = provenance;
        out.push(c);
    }
    out.sort_by(|a, b| a.value.order(b.value));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: f64) -> Witness {
        Witness {
            point: vec![v],
            value: Value::Real(v),
            branch: None,
        }
    }

    #[test]
    fn clusters_are_sorted_and_separated() {
        let tol = ValueTolerance::default();
        let cs = cluster_witnesses(
            vec![w(0.0), w(-1.0), w(-1.0 + 1e-9), w(1e-12), w(3.0)],
            Provenance::Critical,
            &tol,
        );
        let vals: Vec<f64> = cs.iter().map(|c| c.value.re()).collect();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] + 1.0).abs() < 1e-8 && vals[1].abs() < 1e-8 && vals[2] == 3.0);
        assert_eq!(cs[0].members.len(), 2);
        assert!(cs.iter().all(|c| c.spread <= tol.at(c.value.abs())));
    }

    #[test]
    fn relative_tolerance_for_large_values() {
        let tol = ValueTolerance::default();
        let cs = cluster_witnesses(vec![w(1e8), w(1e8 + 50.0)], Provenance::Asymptotic, &tol);
        assert_eq!(cs.len(), 1);
    }

    #[test]
    fn merge_joins_provenance() {
        let tol = ValueTolerance::default();
        let a = cluster_witnesses(vec![w(-1.0), w(0.0)], Provenance::Critical, &tol);
        let b = cluster_witnesses(vec![w(-1.0 + 1e-8)], Provenance::Asymptotic, &tol);
        let m = merge_clusters(&a, &b, &tol);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].provenance, Provenance::Both);
        assert_eq!(m[1].provenance, Provenance::Critical);
    }

    #[test]
    fn complex_values_serialize_as_pairs() {
        let v = Value::Complex { re: 1.0, im: -2.0 };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"re":1.0,"im":-2.0}"#);
        assert_eq!(serde_json::from_str::<Value>(&s).unwrap(), v);
        assert_eq!(serde_json::from_str::<Value>("0.5").unwrap(), Value::Real(0.5));
        assert_eq!(Value::Real(1.5e-9).to_string(), "1.5e-9");
        assert_eq!(v.to_string(), "1-2i");
    }
}
