//! Symbolic expressions over a fixed list of variables.
//!
//! The accepted class is deliberately small: constants, variables, `+`, `-`,
//! `*`, non-negative integer powers and `exp` (real mode only). `sin`/`cos`
//! exist solely for non-definable negative controls and must be enabled
//! explicitly at parse time.
//!
//! Text grammar (whitespace is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;        (* divisor must be constant *)
//! unary   = "-" unary | power ;
//! power   = primary [ "^" exponent ] ;
//! exponent= integer | "(" integer ")" ;
//! primary = number | ident | func "(" expr ")" | "(" expr ")" ;
//! func    = "exp" | "sin" | "cos" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```

mod diff;
mod parse;
mod print;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::ParseOptions;

/// Scalar field the expression is interpreted over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("undeclared variable `{name}` at position {pos}")]
    UndeclaredVariable { name: String, pos: usize },
    #[error("`{func}` is not allowed in complex mode (complex inputs must be polynomial)")]
    ComplexExp { func: String },
    #[error("`{func}` is not definable in an o-minimal structure; pass --unsafe-nondefinable to allow it")]
    NonDefinable { func: String },
    #[error("point has {got} coordinates, expression has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("evaluation overflowed to a non-finite value")]
    NonFinite,
    #[error("real evaluation requested for a complex-mode expression")]
    ModeMismatch,
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Const(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, u32),
    Exp(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
}

/// Arithmetic needed to evaluate an expression tree.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_real(c: f64) -> Self;
    fn powu(self, k: u32) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Modulus.
    fn modulus(self) -> f64;
    /// Real part, used to detect `exp` underflow.
    fn real_part(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn from_real(c: f64) -> Self {
        c
    }
    fn powu(self, k: u32) -> Self {
        self.powi(k as i32)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn real_part(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn from_real(c: f64) -> Self {
        Complex64::new(c, 0.0)
    }
    fn powu(self, k: u32) -> Self {
        Complex64::powu(&self, k)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn sin(self) -> Self {
        Complex64::sin(self)
    }
    fn cos(self) -> Self {
        Complex64::cos(self)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn real_part(self) -> f64 {
        self.re
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// Below this argument `exp` loses relative precision (subnormal range).
const EXP_UNDERFLOW: f64 = -708.0;

/// Value of an expression together with a rounding-magnitude bound.
///
/// `magnitude` is the value obtained by evaluating every operation on absolute
/// values, so `f64::EPSILON * magnitude` bounds the floating error of `value`
/// up to a modest factor. `underflow` is set when an `exp` argument fell into
/// the subnormal range and the value carries no relative precision.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<T> {
    pub value: T,
    pub magnitude: f64,
    pub underflow: bool,
}

/// An immutable, shareable symbolic function of `variables`.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Arc<Node>,
    variables: Arc<[String]>,
    mode: Mode,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.variables == other.variables && self.root == other.root
    }
}

impl Expression {
    /// Parses `text` with the default (definable-only) options.
    pub fn parse(text: &str, variables: &[&str], mode: Mode) -> Result<Self, ExprError> {
        Self::parse_with(text, variables, &ParseOptions::new(mode))
    }

    pub fn parse_with(
        text: &str,
        variables: &[&str],
        options: &ParseOptions,
    ) -> Result<Self, ExprError> {
        let names: Vec<String> = variables.iter().map(|v| v.trim().to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(ExprError::DuplicateVariable(name.clone()));
            }
        }
        let root = parse::parse(text, &names, options)?;
        Ok(Self::from_parts(root, names.into(), options.mode))
    }

    pub(crate) fn from_parts(root: Node, variables: Arc<[String]>, mode: Mode) -> Self {
        Expression {
            root: Arc::new(root),
            variables,
            mode,
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn arity(&self) -> usize {
        self.variables.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// True when the tree contains `sin` or `cos`.
    pub fn is_nondefinable(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Sin(_) | Node::Cos(_) => true,
                Node::Const(_) | Node::Var(_) => false,
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => walk(a) || walk(b),
                Node::Neg(a) | Node::Pow(a, _) | Node::Exp(a) => walk(a),
            }
        }
        walk(&self.root)
    }

    /// Real-mode evaluation with dimension and overflow checks.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        if self.mode != Mode::Real {
            return Err(ExprError::ModeMismatch);
        }
        self.check_dim(point.len())?;
        let v = self.value(point);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    /// Complex evaluation; valid in both modes.
    pub fn eval_complex(&self, point: &[Complex64]) -> Result<Complex64, ExprError> {
        self.check_dim(point.len())?;
        let v = self.value(point);
        if Scalar::is_finite(v) {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), ExprError> {
        if got != self.arity() {
            return Err(ExprError::DimensionMismatch {
                expected: self.arity(),
                got,
            });
        }
        Ok(())
    }

    /// Unchecked evaluation for inner loops. Non-finite results propagate.
    pub fn value<T: Scalar>(&self, point: &[T]) -> T {
        eval_node(&self.root, point)
    }

    /// Evaluation with rounding magnitude and underflow tracking.
    pub fn evaluate_tracked<T: Scalar>(&self, point: &[T]) -> Evaluation<T> {
        let mut underflow = false;
        let (value, magnitude) = eval_tracked(&self.root, point, &mut underflow);
        Evaluation {
            value,
            magnitude,
            underflow,
        }
    }

    /// Partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expression {
        Self::from_parts(diff::derivative(&self.root, var), self.variables.clone(), self.mode)
    }

    /// Symbolic gradient. In complex mode the components are the holomorphic
    /// partials; [`Gradient::eval_complex`] conjugates them.
    pub fn gradient(&self) -> Gradient {
        Gradient {
            components: (0..self.arity()).map(|i| self.derivative(i)).collect(),
            mode: self.mode,
        }
    }

    /// Scales the expression by a real constant.
    pub fn scaled(&self, c: f64) -> Expression {
        Self::from_parts(
            diff::mul(Node::Const(c), (*self.root).clone()),
            self.variables.clone(),
            self.mode,
        )
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_node(f, &self.root, &self.variables, print::Prec::Sum)
    }
}

fn eval_node<T: Scalar>(node: &Node, p: &[T]) -> T {
    match node {
        Node::Const(c) => T::from_real(*c),
        Node::Var(i) => p[*i],
        Node::Add(a, b) => eval_node(a, p) + eval_node(b, p),
        Node::Sub(a, b) => eval_node(a, p) - eval_node(b, p),
        Node::Mul(a, b) => eval_node(a, p) * eval_node(b, p),
        Node::Neg(a) => -eval_node(a, p),
        Node::Pow(a, k) => eval_node(a, p).powu(*k),
        Node::Exp(a) => eval_node(a, p).exp(),
        Node::Sin(a) => eval_node(a, p).sin(),
        Node::Cos(a) => eval_node(a, p).cos(),
    }
}

fn eval_tracked<T: Scalar>(node: &Node, p: &[T], underflow: &mut bool) -> (T, f64) {
    match node {
        Node::Const(c) => (T::from_real(*c), c.abs()),
        Node::Var(i) => (p[*i], p[*i].modulus()),
        Node::Add(a, b) | Node::Sub(a, b) => {
            let (va, ma) = eval_tracked(a, p, underflow);
            let (vb, mb) = eval_tracked(b, p, underflow);
            let v = if matches!(node, Node::Add(..)) { va + vb } else { va - vb };
            (v, ma + mb)
        }
        Node::Mul(a, b) => {
            let (va, ma) = eval_tracked(a, p, underflow);
            let (vb, mb) = eval_tracked(b, p, underflow);
            (va * vb, ma * mb)
        }
        Node::Neg(a) => {
            let (v, m) = eval_tracked(a, p, underflow);
            (-v, m)
        }
        Node::Pow(a, k) => {
            let (v, m) = eval_tracked(a, p, underflow);
            (v.powu(*k), m.powi(*k as i32))
        }
        Node::Exp(a) => {
            let (v, m) = eval_tracked(a, p, underflow);
            if v.real_part() < EXP_UNDERFLOW {
                *underflow = true;
            }
            let e = v.exp();
            (e, e.modulus() * (1.0 + m))
        }
        Node::Sin(a) | Node::Cos(a) => {
            let (v, m) = eval_tracked(a, p, underflow);
            let r = if matches!(node, Node::Sin(_)) { v.sin() } else { v.cos() };
            (r, 1.0 + m)
        }
    }
}

/// Gradient of an [`Expression`], one component per variable.
#[derive(Debug, Clone)]
pub struct Gradient {
    components: Vec<Expression>,
    mode: Mode,
}

impl Gradient {
    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.components.iter().map(|c| c.eval(point)).collect()
    }

    /// Conjugated partials in complex mode; plain partials of a real-mode
    /// expression otherwise.
    pub fn eval_complex(&self, point: &[Complex64]) -> Result<Vec<Complex64>, ExprError> {
        self.components
            .iter()
            .map(|c| {
                let v = c.eval_complex(point)?;
                Ok(match self.mode {
                    Mode::Complex => v.conj(),
                    Mode::Real => v,
                })
            })
            .collect()
    }

    /// Second derivatives of the (unconjugated) partials, row-major.
    pub fn jacobian(&self) -> Vec<Vec<Expression>> {
        self.components
            .iter()
            .map(|c| (0..c.arity()).map(|j| c.derivative(j)).collect())
            .collect()
    }
}

/// Function with its gradient and Hessian precomputed, shared by the solvers.
#[derive(Debug, Clone)]
pub struct DerivativeTable {
    pub function: Expression,
    pub partials: Vec<Expression>,
    pub hessian: Vec<Vec<Expression>>,
}

impl DerivativeTable {
    pub fn new(function: &Expression) -> Self {
        let gradient = function.gradient();
        let hessian = gradient.jacobian();
        DerivativeTable {
            function: function.clone(),
            partials: gradient.components,
            hessian,
        }
    }

    pub fn arity(&self) -> usize {
        self.function.arity()
    }

    pub fn mode(&self) -> Mode {
        self.function.mode()
    }

    /// Gradient in real mode together with the rounding magnitudes of its components.
    pub fn real_gradient(&self, x: &[f64], grad: &mut [f64], mag: &mut [f64]) -> bool {
        let mut underflow = false;
        for (i, p) in self.partials.iter().enumerate() {
            let e = p.evaluate_tracked(x);
            grad[i] = e.value;
            mag[i] = e.magnitude;
            underflow |= e.underflow;
        }
        underflow
    }

    /// Conjugated gradient in complex mode with rounding magnitudes.
    pub fn complex_gradient(&self, z: &[Complex64], grad: &mut [Complex64], mag: &mut [f64]) -> bool {
        let mut underflow = false;
        for (i, p) in self.partials.iter().enumerate() {
            let e = p.evaluate_tracked(z);
            grad[i] = e.value.conj();
            mag[i] = e.magnitude;
            underflow |= e.underflow;
        }
        underflow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(text: &str, vars: &[&str]) -> Expression {
        Expression::parse(text, vars, Mode::Real).unwrap()
    }

    #[test]
    fn parse_and_evaluate_fixtures() {
        let g = real("x^2*y^2 + 2*x*y", &["x", "y"]);
        assert_eq!(g.eval(&[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(g.eval(&[1.0, -1.0]).unwrap(), -1.0);

        let f = real("x*exp(x)", &["x"]);
        assert_eq!(f.eval(&[0.0]).unwrap(), 0.0);
        assert!((f.eval(&[-1.0]).unwrap() + (-1.0f64).exp()).abs() < 1e-15);
        assert!((f.eval(&[-1.0]).unwrap() + 0.3678794).abs() < 1e-7);

        let b = real("x + x^2*y", &["x", "y"]);
        assert_eq!(b.eval(&[2.0, 0.5]).unwrap(), 4.0);

        let c = Expression::parse("z + z^2*w", &["z", "w"], Mode::Complex).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(c.eval_complex(&[zero, zero]).unwrap(), zero);
    }

    #[test]
    fn evaluation_errors() {
        let g = real("x*y", &["x", "y"]);
        assert_eq!(
            g.eval(&[1.0]),
            Err(ExprError::DimensionMismatch { expected: 2, got: 1 })
        );
        let e = real("exp(x)", &["x"]);
        assert_eq!(e.eval(&[1000.0]), Err(ExprError::NonFinite));
        let c = Expression::parse("z", &["z"], Mode::Complex).unwrap();
        assert_eq!(c.eval(&[1.0]), Err(ExprError::ModeMismatch));
    }

    #[test]
    fn gradient_examples() {
        let g = real("x^2*y^2 + 2*x*y", &["x", "y"]);
        assert_eq!(g.gradient().eval(&[1.0, 0.0]).unwrap(), vec![0.0, 2.0]);

        let f = real("x*exp(x)", &["x"]);
        assert!(f.gradient().eval(&[-1.0]).unwrap()[0].abs() < 1e-16);

        let c = Expression::parse("z + z^2*w", &["z", "w"], Mode::Complex).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        let grad = c.gradient().eval_complex(&[zero, zero]).unwrap();
        assert_eq!(grad, vec![Complex64::new(1.0, 0.0), zero]);
        // conjugation is visible off the real axis: d/dz = 1 + 2zw
        let p = [Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0)];
        let grad = c.gradient().eval_complex(&p).unwrap();
        assert_eq!(grad[0], Complex64::new(1.0, -2.0));
    }

    #[test]
    fn tracked_evaluation_flags_exp_underflow() {
        let e = real("exp(2*x)", &["x"]);
        assert!(!e.evaluate_tracked(&[-300.0]).underflow);
        assert!(e.evaluate_tracked(&[-400.0]).underflow);
        let m = real("x - y", &["x", "y"]).evaluate_tracked(&[3.0, 3.0]);
        assert_eq!(m.value, 0.0);
        assert_eq!(m.magnitude, 6.0);
    }

    #[test]
    fn nondefinable_detection() {
        let opts = ParseOptions::new(Mode::Real).allow_nondefinable(true);
        let e = Expression::parse_with("x*sin(x)", &["x"], &opts).unwrap();
        assert!(e.is_nondefinable());
        assert!(!real("x*exp(x)", &["x"]).is_nondefinable());
    }
}
