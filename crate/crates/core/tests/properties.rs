use bifset::analysis::{analyze, parse_input, to_json, AnalysisConfig};
use bifset::asymptotic::{aitken, classify_values, Classification, RadiusLadder};
use bifset::expr::{DerivativeTable, Expression, Mode, ParseOptions};
use bifset::fibration::{sample_level_set, transport_fiber, TransportConfig, TransportVerdict, Zones};
use bifset::tangency::tangency_residual;
use bifset::value::{Value, ValueTolerance};
use num_complex::Complex64;
use proptest::prelude::*;

/// `(coefficient, exponent of x, exponent of y)` terms.
fn polynomial() -> impl Strategy<Value = Vec<(f64, u32, u32)>> {
    prop::collection::vec((-3.0f64..3.0, 0u32..5, 0u32..5), 1..7)
}

fn poly_text(terms: &[(f64, u32, u32)]) -> String {
    terms
        .iter()
        .map(|(c, a, b)| format!("({c:?})*x^{a}*y^{b}"))
        .collect::<Vec<_>>()
        .join(" + ")
}

fn real(text: &str) -> Expression {
    Expression::parse(text, &["x", "y"], Mode::Real).unwrap()
}

/// Fourth-order central difference.
fn fd(e: &Expression, p: &[f64], i: usize) -> f64 {
    let h = 1e-3 * (1.0 + p[i].abs());
    let at = |s: f64| {
        let mut q = p.to_vec();
        q[i] += s * h;
        e.eval(&q).unwrap()
    };
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
}

fn expression_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-5.0f64..5.0).prop_map(|c| format!("({c:?})")),
        Just("x".to_string()),
        Just("y".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (inner.clone(), 0u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("exp({a})")),
            inner.prop_map(|a| format!("sin({a})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(terms in polynomial(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let e = real(&poly_text(&terms));
        let g = e.gradient().eval(&[x, y]).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let approx = fd(&e, &[x, y], i);
            prop_assert!((gi - approx).abs() <= 1e-6 * gi.abs().max(1.0), "d{i}: {gi} vs {approx}");
        }
    }

    #[test]
    fn printing_round_trips(text in expression_text()) {
        let opts = ParseOptions::new(Mode::Real).allow_nondefinable(true);
        let e = Expression::parse_with(&text, &["x", "y"], &opts).unwrap();
        let again = Expression::parse_with(&e.to_string(), &["x", "y"], &opts).unwrap();
        prop_assert_eq!(&again, &e);
        let p = [0.3, -0.7];
        let (a, b) = (e.eval(&p), again.eval(&p));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn complex_gradient_agrees_on_real_points(terms in polynomial(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let text = poly_text(&terms);
        let r = real(&text).gradient().eval(&[x, y]).unwrap();
        let c = Expression::parse(&text, &["x", "y"], Mode::Complex).unwrap();
        let z = [Complex64::new(x, 0.0), Complex64::new(y, 0.0)];
        let cg = c.gradient().eval_complex(&z).unwrap();
        for (a, b) in r.iter().zip(&cg) {
            prop_assert!((a - b.re).abs() <= 1e-12 * a.abs().max(1.0) && b.im == 0.0);
        }
    }

    #[test]
    fn tangency_defect_is_scale_invariant(
        terms in polynomial(),
        c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
        x in -4.0f64..4.0,
        y in -4.0f64..4.0,
    ) {
        prop_assume!(x.hypot(y) > 1e-3);
        let e = real(&poly_text(&terms));
        let a = tangency_residual(&DerivativeTable::new(&e), &[x, y]).unwrap();
        let b = tangency_residual(&DerivativeTable::new(&e.scaled(c)), &[x, y]).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn aitken_is_exact_on_power_laws(limit in -100.0f64..100.0, amp in -50.0f64..50.0, q in 0.05f64..0.9) {
        prop_assume!(amp.abs() > 1e-3);
        let values: Vec<Value> = (0..11).map(|k| Value::Real(limit + amp * q.powi(k))).collect();
        for est in aitken(&values) {
            prop_assert!((est.re() - limit).abs() <= 1e-8 * (1.0 + limit.abs() + amp.abs()), "{est} vs {limit}");
        }
        let (class, _) = classify_values(&values, &ValueTolerance::default(), 1e8);
        if let Classification::Finite { limit: l } = class {
            prop_assert!((l.re() - limit).abs() <= 1e-8 * (1.0 + limit.abs() + amp.abs()));
        } else {
            prop_assert!(false, "power law not classified finite");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transport_tracks_levels_and_returns(
        fixture in 0usize..3,
        c0 in 0.3f64..1.0,
        width in 0.1f64..1.0,
        seed in 0u64..1000,
    ) {
        let (text, lo, hi) = [
            ("x^2*y^2 + 2*x*y", 0.2, 3.0),
            ("x + y^3 + y", -3.0, 3.0),
            ("x^2 + y^2", 0.5, 4.0),
        ][fixture];
        let c0 = lo + c0 * (hi - lo) * 0.5;
        let c1 = (c0 + width).min(hi);
        let g = DerivativeTable::new(&real(text));
        let samples = sample_level_set(&g, c0, 10, 5.0, seed, 1e-10);
        prop_assume!(!samples.is_empty());
        let zones = Zones::around(&samples);
        let cfg = TransportConfig::default();
        let there = transport_fiber(&g, c0, c1, &samples, zones, &cfg);
        prop_assert_eq!(there.verdict, TransportVerdict::Success);
        for tr in &there.trajectories {
            for p in &tr.points {
                prop_assert!((p.g_value - c0 - p.t).abs() <= 1e-6);
            }
        }
        let back = transport_fiber(&g, c1, c0, &there.endpoints(), zones, &cfg);
        prop_assert_eq!(back.verdict, TransportVerdict::Success);
        for (s, e) in samples.iter().zip(back.endpoints()) {
            let d = s.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let n = s.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(d <= 1e-4 * (1.0 + n), "returned {d} away");
        }
    }
}

const FIXTURES: [(&str, &[&str], Mode); 5] = [
    ("x^2*y^2 + 2*x*y", &["x", "y"], Mode::Real),
    ("x*exp(x)", &["x"], Mode::Real),
    ("y*exp(2*x) + exp(x)", &["x", "y"], Mode::Real),
    ("x + x^2*y", &["x", "y"], Mode::Real),
    ("z + z^2*w", &["z", "w"], Mode::Complex),
];

fn report_json(text: &str, vars: &[&str], config: &AnalysisConfig, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let e = parse_input(text, vars, config).unwrap();
        to_json(&analyze(&e, config)).unwrap()
    })
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    for (text, vars, mode) in FIXTURES {
        let cfg = AnalysisConfig {
            mode,
            ..AnalysisConfig::default()
        };
        let one = report_json(text, vars, &cfg, 1);
        let four = report_json(text, vars, &cfg, 4);
        let again = report_json(text, vars, &cfg, 4);
        assert_eq!(one, four, "{text}");
        assert_eq!(four, again, "{text}");
    }
}

#[test]
fn extending_the_ladder_keeps_clusters() {
    for (text, vars, mode) in &FIXTURES[..4] {
        let base = AnalysisConfig {
            mode: *mode,
            ..AnalysisConfig::default()
        };
        let longer = AnalysisConfig {
            ladder: RadiusLadder::new(5.0, 2.0, 12).unwrap(),
            ..base.clone()
        };
        let e = parse_input(text, vars, &base).unwrap();
        let (a, b) = (analyze(&e, &base), analyze(&e, &longer));
        let tol = base.tol_value;
        for (x, y) in [(&a.sigma, &b.sigma), (&a.s_infinity, &b.s_infinity)] {
            assert_eq!(x.len(), y.len(), "{text}");
            for (u, v) in x.iter().zip(y) {
                assert!(u.value.distance(v.value) <= tol.at(u.value.abs()), "{text}: {} vs {}", u.value, v.value);
            }
        }
    }
}
