//! Symbolic differentiation with light constant folding so that repeated
//! differentiation does not blow the tree up with `0*` and `1*` factors.

use super::Node;

fn is_const(n: &Node, v: f64) -> bool {
    matches!(n, Node::Const(c) if *c == v)
}

pub(super) fn add(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

pub(super) fn sub(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x - y),
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

pub(super) fn mul(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => Node::Const(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => Node::Const(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        // keep constants on the left: c*(d*e) -> (c*d)*e
        (Node::Const(x), Node::Mul(l, r)) if matches!(**l, Node::Const(_)) => {
            let Node::Const(y) = **l else { unreachable!() };
            mul(Node::Const(x * y), (**r).clone())
        }
        (_, Node::Const(_)) => mul(b, a),
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn pow(a: Node, k: u32) -> Node {
    match (a, k) {
        (_, 0) => Node::Const(1.0),
        (a, 1) => a,
        (Node::Const(c), k) => Node::Const(c.powi(k as i32)),
        (a, k) => Node::Pow(Box::new(a), k),
    }
}

pub(super) fn derivative(n: &Node, var: usize) -> Node {
    match n {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(i) => Node::Const(if *i == var { 1.0 } else { 0.0 }),
        Node::Add(a, b) => add(derivative(a, var), derivative(b, var)),
        Node::Sub(a, b) => sub(derivative(a, var), derivative(b, var)),
        Node::Mul(a, b) => add(
            mul(derivative(a, var), (**b).clone()),
            mul((**a).clone(), derivative(b, var)),
        ),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Pow(_, 0) => Node::Const(0.0),
        Node::Pow(a, k) => mul(
            mul(Node::Const(*k as f64), pow((**a).clone(), k - 1)),
            derivative(a, var),
        ),
        Node::Exp(a) => mul(n.clone(), derivative(a, var)),
        Node::Sin(a) => mul(Node::Cos(a.clone()), derivative(a, var)),
        Node::Cos(a) => mul(neg(Node::Sin(a.clone())), derivative(a, var)),
    }
}
