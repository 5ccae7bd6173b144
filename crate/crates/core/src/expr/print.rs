use std::fmt;

use super::Node;

/// Binding strength of the context a node is printed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(super) enum Prec {
    Sum,
    Product,
    Unary,
    Power,
}

fn prec_of(n: &Node) -> Prec {
    match n {
        Node::Add(..) | Node::Sub(..) => Prec::Sum,
        Node::Mul(..) => Prec::Product,
        Node::Neg(_) => Prec::Unary,
        Node::Const(c) if *c < 0.0 || c.is_sign_negative() => Prec::Unary,
        Node::Pow(..) => Prec::Power,
        _ => Prec::Power,
    }
}

/// Canonical printer; the output re-parses to a tree with identical values.
pub(super) fn write_node(
    f: &mut fmt::Formatter<'_>,
    n: &Node,
    vars: &[String],
    ctx: Prec,
) -> fmt::Result {
    let paren = prec_of(n) < ctx;
    if paren {
        f.write_str("(")?;
    }
    match n {
        // `{:?}` is the shortest representation that round-trips.
        Node::Const(c) => write!(f, "{c:?}")?,
        Node::Var(i) => f.write_str(&vars[*i])?,
        Node::Add(a, b) => {
            write_node(f, a, vars, Prec::Sum)?;
            f.write_str(" + ")?;
            write_node(f, b, vars, Prec::Product)?;
        }
        Node::Sub(a, b) => {
            write_node(f, a, vars, Prec::Sum)?;
            f.write_str(" - ")?;
            write_node(f, b, vars, Prec::Product)?;
        }
        Node::Mul(a, b) => {
            write_node(f, a, vars, Prec::Product)?;
            f.write_str("*")?;
            write_node(f, b, vars, Prec::Unary)?;
        }
        Node::Neg(a) => {
            f.write_str("-")?;
            write_node(f, a, vars, Prec::Unary)?;
        }
        Node::Pow(a, k) => {
            // bases are always atoms or parenthesized
            let needs = !matches!(**a, Node::Var(_))
                && !matches!(**a, Node::Const(c) if c >= 0.0 && !c.is_sign_negative());
            if needs {
                f.write_str("(")?;
                write_node(f, a, vars, Prec::Sum)?;
                f.write_str(")")?;
            } else {
                write_node(f, a, vars, Prec::Power)?;
            }
            write!(f, "^{k}")?;
        }
        Node::Exp(a) | Node::Sin(a) | Node::Cos(a) => {
            let name = match n {
                Node::Exp(_) => "exp",
                Node::Sin(_) => "sin",
                _ => "cos",
            };
            write!(f, "{name}(")?;
            write_node(f, a, vars, Prec::Sum)?;
            f.write_str(")")?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::expr::{Expression, Mode};

    #[test]
    fn printing_is_readable() {
        let e = Expression::parse("x^2*y^2 + 2*x*y", &["x", "y"], Mode::Real).unwrap();
        assert_eq!(e.to_string(), "x^2*y^2 + 2.0*x*y");
        let e = Expression::parse("-(x - (y - 1))*exp(-x)", &["x", "y"], Mode::Real).unwrap();
        assert_eq!(e.to_string(), "-(x - (y - 1.0))*exp(-x)");
        let e = Expression::parse("(2*x)^3 - x*(y+1)", &["x", "y"], Mode::Real).unwrap();
        let again = Expression::parse(&e.to_string(), &["x", "y"], Mode::Real).unwrap();
        assert_eq!(e, again);
    }
}
