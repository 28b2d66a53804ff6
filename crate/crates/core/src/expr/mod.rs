//! Coefficient expressions: a small arithmetic language for drift, diffusion
//! and coefficient maps in model files.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-2^2`
//! is `-4` and `2^3^2` is `512`. There is no implicit multiplication.
//! Functions: `sqrt exp log abs min max sgn`.

mod diff;
mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::{parse, parse_with, MAX_SOURCE_BYTES};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {line}:{column}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown identifier `{name}` at {line}:{column}")]
    UnknownIdentifier { name: String, line: usize, column: usize },
    #[error("expression source is {bytes} bytes, limit is 64 KiB")]
    TooLong { bytes: usize },
    #[error("unbound identifier `{name}`")]
    Unbound { name: String },
    #[error("{reason} in `{subtree}`")]
    Domain { reason: &'static str, subtree: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Abs,
    Min,
    Max,
    Sgn,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "sgn" | "sign" => Func::Sgn,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sgn => "sgn",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(v) if *v < 0.0 => PREC_NEG,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Neg(_) => PREC_NEG,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }

    /// Free identifiers, sorted.
    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) => e.collect_identifiers(out),
            Expr::Binary(_, a, b) => {
                a.collect_identifiers(out);
                b.collect_identifiers(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_identifiers(out)),
        }
    }

    pub fn depends_on(&self, var: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => v == var,
            Expr::Neg(e) => e.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
            Expr::Call(_, args) => args.iter().any(|a| a.depends_on(var)),
        }
    }

    /// Evaluate with identifier lookup through `env`.
    pub fn eval_with<F: Fn(&str) -> Option<f64>>(&self, env: &F) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => env(name).ok_or_else(|| ExprError::Unbound { name: name.clone() })?,
            Expr::Neg(e) => -e.eval_with(env)?,
            Expr::Binary(op, a, b) => {
                let (x, y) = (a.eval_with(env)?, b.eval_with(env)?);
                apply_binary(*op, x, y, || self.to_string())?
            }
            Expr::Call(f, args) => {
                let x = args[0].eval_with(env)?;
                let y = match args.get(1) {
                    Some(e) => e.eval_with(env)?,
                    None => 0.0,
                };
                apply_func(*f, x, y, || self.to_string())?
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain {
                reason: "non-finite result",
                subtree: self.to_string(),
            })
        }
    }

    /// Evaluate with `(name, value)` bindings.
    pub fn eval(&self, bindings: &[(&str, f64)]) -> Result<f64, ExprError> {
        self.eval_with(&|name: &str| bindings.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
    }

    /// Replace identifiers that appear in `constants` by their values.
    pub fn substitute(&self, constants: &dyn Fn(&str) -> Option<f64>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(name) => match constants(name) {
                Some(v) => Expr::Num(v),
                None => Expr::Var(name.clone()),
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(constants))),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.substitute(constants)), Box::new(b.substitute(constants))),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.substitute(constants)).collect()),
        }
    }

    /// Degree of the expression as a polynomial in `var`, if it is one
    /// (other identifiers count as constants).
    pub fn polynomial_degree(&self, var: &str) -> Option<usize> {
        match self {
            Expr::Num(_) => Some(0),
            Expr::Var(v) => Some(usize::from(v == var)),
            Expr::Neg(e) => e.polynomial_degree(var),
            Expr::Binary(op, a, b) => {
                let (da, db) = (a.polynomial_degree(var), b.polynomial_degree(var));
                match op {
                    BinOp::Add | BinOp::Sub => Some(da?.max(db?)),
                    BinOp::Mul => Some(da? + db?),
                    BinOp::Div => (db? == 0).then_some(da?),
                    BinOp::Pow => {
                        if !b.depends_on(var) && !a.depends_on(var) {
                            return Some(0);
                        }
                        match **b {
                            Expr::Num(n) if n >= 0.0 && n.fract() == 0.0 && n <= 64.0 => Some(da? * n as usize),
                            _ => None,
                        }
                    }
                }
            }
            Expr::Call(_, args) => args.iter().all(|a| !a.depends_on(var)).then_some(0),
        }
    }

    /// Symbolic derivative with respect to `var`.
    pub fn differentiate(&self, var: &str) -> Expr {
        diff::differentiate(self, var)
    }

    /// Resolve variables to slots. Identifiers not in `slots` must be bound
    /// by `constants`.
    pub fn compile(&self, slots: &[&str], constants: &dyn Fn(&str) -> Option<f64>) -> Result<CompiledExpr, ExprError> {
        let names: Arc<Vec<String>> = Arc::new(slots.iter().map(|s| s.to_string()).collect());
        let root = Node::build(self, slots, constants)?;
        Ok(CompiledExpr { root, names })
    }
}

fn apply_binary(op: BinOp, x: f64, y: f64, subtree: impl Fn() -> String) -> Result<f64, ExprError> {
    Ok(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => {
            if y == 0.0 {
                return Err(ExprError::Domain {
                    reason: "division by zero",
                    subtree: subtree(),
                });
            }
            x / y
        }
        BinOp::Pow => {
            let v = if y == 2.0 { x * x } else { x.powf(y) };
            if v.is_nan() {
                return Err(ExprError::Domain {
                    reason: "power of negative base",
                    subtree: subtree(),
                });
            }
            if x == 0.0 && y < 0.0 {
                return Err(ExprError::Domain {
                    reason: "division by zero",
                    subtree: subtree(),
                });
            }
            v
        }
    })
}

fn apply_func(f: Func, x: f64, y: f64, subtree: impl Fn() -> String) -> Result<f64, ExprError> {
    Ok(match f {
        Func::Sqrt => {
            if x < 0.0 {
                return Err(ExprError::Domain {
                    reason: "square root of negative value",
                    subtree: subtree(),
                });
            }
            x.sqrt()
        }
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= 0.0 {
                return Err(ExprError::Domain {
                    reason: "logarithm of non-positive value",
                    subtree: subtree(),
                });
            }
            x.ln()
        }
        Func::Abs => x.abs(),
        Func::Min => x.min(y),
        Func::Max => x.max(y),
        Func::Sgn => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(e) => {
                if e.precedence() < PREC_NEG {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                let left_parens = if *op == BinOp::Pow { a.precedence() <= p } else { a.precedence() < p };
                let right_parens = if *op == BinOp::Pow {
                    b.precedence() < PREC_NEG
                } else {
                    b.precedence() <= p
                };
                if left_parens {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if right_parens {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>, Option<Box<Node>>),
}

impl Node {
    fn build(e: &Expr, slots: &[&str], constants: &dyn Fn(&str) -> Option<f64>) -> Result<Node, ExprError> {
        Ok(match e {
            Expr::Num(v) => Node::Const(*v),
            Expr::Var(name) => {
                if let Some(i) = slots.iter().position(|s| s == name) {
                    Node::Slot(i)
                } else if let Some(v) = constants(name) {
                    Node::Const(v)
                } else {
                    return Err(ExprError::Unbound { name: name.clone() });
                }
            }
            Expr::Neg(a) => match Node::build(a, slots, constants)? {
                Node::Const(v) => Node::Const(-v),
                n => Node::Neg(Box::new(n)),
            },
            Expr::Binary(op, a, b) => {
                let (na, nb) = (Node::build(a, slots, constants)?, Node::build(b, slots, constants)?);
                if let (Node::Const(x), Node::Const(y)) = (&na, &nb) {
                    if let Ok(v) = apply_binary(*op, *x, *y, || e.to_string()) {
                        if v.is_finite() {
                            return Ok(Node::Const(v));
                        }
                    }
                }
                Node::Binary(*op, Box::new(na), Box::new(nb))
            }
            Expr::Call(f, args) => {
                let a = Node::build(&args[0], slots, constants)?;
                let b = match args.get(1) {
                    Some(x) => Some(Box::new(Node::build(x, slots, constants)?)),
                    None => None,
                };
                Node::Call(*f, Box::new(a), b)
            }
        })
    }

    fn eval(&self, vars: &[f64], names: &[String]) -> Result<f64, ExprError> {
        match self {
            Node::Const(v) => Ok(*v),
            Node::Slot(i) => Ok(vars[*i]),
            Node::Neg(a) => Ok(-a.eval(vars, names)?),
            Node::Binary(op, a, b) => {
                let (x, y) = (a.eval(vars, names)?, b.eval(vars, names)?);
                apply_binary(*op, x, y, || self.render(names))
            }
            Node::Call(f, a, b) => {
                let x = a.eval(vars, names)?;
                let y = match b {
                    Some(b) => b.eval(vars, names)?,
                    None => 0.0,
                };
                apply_func(*f, x, y, || self.render(names))
            }
        }
    }

    fn to_expr(&self, names: &[String]) -> Expr {
        match self {
            Node::Const(v) => Expr::Num(*v),
            Node::Slot(i) => Expr::Var(names[*i].clone()),
            Node::Neg(a) => Expr::Neg(Box::new(a.to_expr(names))),
            Node::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.to_expr(names)), Box::new(b.to_expr(names))),
            Node::Call(f, a, b) => {
                let mut args = vec![a.to_expr(names)];
                if let Some(b) = b {
                    args.push(b.to_expr(names));
                }
                Expr::Call(*f, args)
            }
        }
    }

    fn render(&self, names: &[String]) -> String {
        self.to_expr(names).to_string()
    }
}

/// An expression with variables resolved to positional slots and constants
/// folded; cheap to evaluate repeatedly.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
    names: Arc<Vec<String>>,
}

impl CompiledExpr {
    pub fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        debug_assert!(vars.len() >= self.names.len());
        let v = self.root.eval(vars, &self.names)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain {
                reason: "non-finite result",
                subtree: self.root.render(&self.names),
            })
        }
    }

    pub fn slots(&self) -> &[String] {
        &self.names
    }

    pub fn to_expr(&self) -> Expr {
        self.root.to_expr(&self.names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str) -> f64 {
        parse(s).unwrap().eval(&[]).unwrap()
    }

    #[test]
    fn precedence_corpus() {
        assert_eq!(ev("2+3*4"), 14.0);
        assert_eq!(ev("-2^2"), -4.0);
        assert_eq!(ev("2^3^2"), 512.0);
        assert_eq!(ev("(2+3)*4"), 20.0);
        assert_eq!(ev("2^-1"), 0.5);
        assert_eq!(ev("8/4/2"), 1.0);
        assert_eq!(ev("1-2-3"), -4.0);
        assert_eq!(ev("--3"), 3.0);
        assert_eq!(ev("1.5e2 + .5"), 150.5);
    }

    #[test]
    fn bound_constants() {
        let e = parse("a*(b - x)").unwrap();
        assert_eq!(e.eval(&[("a", 2.0), ("b", 1.0), ("x", 0.5)]).unwrap(), 1.0);
    }

    #[test]
    fn sqrt_square() {
        let e = parse("sqrt(x)^2").unwrap();
        assert!((e.eval(&[("x", 7.0)]).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn verhulst_like_drift() {
        let e = parse("2*(1 - x)*x - 0.5*x^2").unwrap();
        assert_eq!(e.eval(&[("x", 1.0)]).unwrap(), -0.5);
    }

    #[test]
    fn syntax_error_position() {
        match parse("1 +\n  * 2") {
            Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("2 3"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(1+2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("min(1)"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn unknown_identifiers() {
        assert!(matches!(parse("foo(1)"), Err(ExprError::UnknownIdentifier { .. })));
        match parse_with("x + y", &["x"]) {
            Err(ExprError::UnknownIdentifier { name, line, column }) => {
                assert_eq!(name, "y");
                assert_eq!((line, column), (1, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_with("2*\u{3be}", &["xi"]).unwrap();
        assert_eq!(e.eval(&[("xi", 3.0)]).unwrap(), 6.0);
    }

    #[test]
    fn domain_errors() {
        let e = parse("sqrt(x - 1)").unwrap();
        match e.eval(&[("x", 0.0)]) {
            Err(ExprError::Domain { subtree, .. }) => assert_eq!(subtree, "sqrt(x - 1.0)"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("log(0)").unwrap().eval(&[]).is_err());
        assert!(parse("1/(x-x)").unwrap().eval(&[("x", 2.0)]).is_err());
        assert!(parse("y").unwrap().eval(&[]).is_err());
    }

    #[test]
    fn too_long_rejected() {
        let s = "1+".repeat(40_000) + "1";
        assert!(matches!(parse(&s), Err(ExprError::TooLong { .. })));
    }

    #[test]
    fn compiled_matches_tree() {
        let e = parse("a*(b - x1) + sqrt(x2)*exp(-x1)").unwrap();
        let c = e
            .compile(&["x1", "x2"], &|n| match n {
                "a" => Some(2.0),
                "b" => Some(1.0),
                _ => None,
            })
            .unwrap();
        let direct = e.eval(&[("a", 2.0), ("b", 1.0), ("x1", 0.3), ("x2", 4.0)]).unwrap();
        assert_eq!(c.eval(&[0.3, 4.0]).unwrap(), direct);
        assert!(e.compile(&["x1"], &|_| None).is_err());
    }

    #[test]
    fn polynomial_degrees() {
        let d = |s: &str| parse(s).unwrap().polynomial_degree("x");
        assert_eq!(d("a*(b - x)"), Some(1));
        assert_eq!(d("x*(a-x)"), Some(2));
        assert_eq!(d("sigma^2*x^2"), Some(2));
        assert_eq!(d("sqrt(x)"), None);
        assert_eq!(d("1/x"), None);
        assert_eq!(d("exp(a)*x^3/2"), Some(3));
    }

    #[test]
    fn printing_reparses() {
        for s in ["-2^2", "(-2)^2", "2^3^2", "(2^3)^2", "a-(b-c)", "a/(b*c)", "-(a+b)*c", "2^-x", "min(x, -1)"] {
            let e = parse(s).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{s} -> {printed}");
        }
    }
}
