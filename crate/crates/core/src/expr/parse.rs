use super::{ExprError, Mode, Node};

/// Parser switches.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub mode: Mode,
    /// Accept `sin`/`cos`. Only meant for negative controls.
    pub allow_nondefinable: bool,
}

impl ParseOptions {
    pub fn new(mode: Mode) -> Self {
        ParseOptions {
            mode,
            allow_nondefinable: false,
        }
    }

    pub fn allow_nondefinable(mut self, yes: bool) -> Self {
        self.allow_nondefinable = yes;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the token and its start offset.
    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number().map(|t| (t, start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self
                .src
                .get(self.pos)
                .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
            {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            return Ok((Tok::Ident(s.to_string()), start));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Op(c as char), start));
        }
        Err(ExprError::Syntax {
            pos: start,
            msg: format!("unexpected character `{}`", c as char),
        })
    }

    fn number(&mut self) -> Result<Tok, ExprError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ExprError::Syntax {
                pos: start,
                msg: "malformed number".into(),
            });
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2e` followed by something else: not an exponent.
                self.pos = save;
            }
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        s.parse::<f64>().map(Tok::Num).map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("malformed number `{s}`"),
        })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    tok_pos: usize,
    vars: &'a [String],
    options: &'a ParseOptions,
}

pub(super) fn parse(text: &str, vars: &[String], options: &ParseOptions) -> Result<Node, ExprError> {
    let mut lexer = Lexer {
        src: text.as_bytes(),
        pos: 0,
    };
    let (tok, tok_pos) = lexer.next()?;
    let mut p = Parser {
        lexer,
        tok,
        tok_pos,
        vars,
        options,
    };
    let node = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(node)
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ExprError> {
        let (t, pos) = self.lexer.next()?;
        self.tok = t;
        self.tok_pos = pos;
        Ok(())
    }

    fn error(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.tok_pos,
            msg: msg.to_string(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.tok == Tok::Op(c) {
            self.bump()
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    let pos = self.tok_pos;
                    self.bump()?;
                    let rhs = self.unary()?;
                    let d = constant_value(&rhs).ok_or(ExprError::Syntax {
                        pos,
                        msg: "division is only supported by constant expressions".into(),
                    })?;
                    if d == 0.0 || !d.is_finite() {
                        return Err(ExprError::Syntax {
                            pos,
                            msg: "division by zero".into(),
                        });
                    }
                    lhs = Node::Mul(Box::new(lhs), Box::new(Node::Const(1.0 / d)));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.tok == Tok::Op('+') {
            self.bump()?;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.tok != Tok::Op('^') {
            return Ok(base);
        }
        self.bump()?;
        let k = self.exponent()?;
        if self.tok == Tok::Op('^') {
            return Err(self.error("chained `^` is ambiguous; add parentheses"));
        }
        Ok(Node::Pow(Box::new(base), k))
    }

    fn exponent(&mut self) -> Result<u32, ExprError> {
        let paren = self.tok == Tok::Op('(');
        if paren {
            self.bump()?;
        }
        if self.tok == Tok::Op('-') {
            return Err(self.error("exponents must be non-negative integers"));
        }
        let Tok::Num(v) = self.tok else {
            return Err(self.error("expected an integer exponent"));
        };
        if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
            return Err(self.error("exponents must be non-negative integers"));
        }
        self.bump()?;
        if paren {
            self.expect(')')?;
        }
        Ok(v as u32)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Node::Const(v))
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.tok_pos;
                self.bump()?;
                if self.tok == Tok::Op('(') {
                    return self.call(&name, pos);
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(ExprError::UndeclaredVariable { name, pos }),
                }
            }
            Tok::End => Err(self.error("unexpected end of input")),
            Tok::Op(c) => Err(self.error(&format!("unexpected `{c}`"))),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Node, ExprError> {
        let wrap: fn(Box<Node>) -> Node = match name {
            "exp" => Node::Exp,
            "sin" => Node::Sin,
            "cos" => Node::Cos,
            _ => {
                return Err(ExprError::Syntax {
                    pos,
                    msg: format!("unknown function `{name}`"),
                })
            }
        };
        if self.options.mode == Mode::Complex {
            return Err(ExprError::ComplexExp { func: name.into() });
        }
        if name != "exp" && !self.options.allow_nondefinable {
            return Err(ExprError::NonDefinable { func: name.into() });
        }
        self.expect('(')?;
        let arg = self.expr()?;
        self.expect(')')?;
        Ok(wrap(Box::new(arg)))
    }
}

/// Folds a variable-free subtree to its value.
fn constant_value(n: &Node) -> Option<f64> {
    Some(match n {
        Node::Const(c) => *c,
        Node::Var(_) => return None,
        Node::Add(a, b) => constant_value(a)? + constant_value(b)?,
        Node::Sub(a, b) => constant_value(a)? - constant_value(b)?,
        Node::Mul(a, b) => constant_value(a)? * constant_value(b)?,
        Node::Neg(a) => -constant_value(a)?,
        Node::Pow(a, k) => constant_value(a)?.powi(*k as i32),
        Node::Exp(a) => constant_value(a)?.exp(),
        Node::Sin(a) => constant_value(a)?.sin(),
        Node::Cos(a) => constant_value(a)?.cos(),
    })
}
