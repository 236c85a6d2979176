use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Bool,
    Num,
    Str,
    Vec3,
    Poly,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Bool => "bool",
            Type::Num => "num",
            Type::Str => "str",
            Type::Vec3 => "vec3",
            Type::Poly => "poly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Or,
    And,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "or",
            BinaryOp::And => "and",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

const NOT_PREC: u8 = 3;
const NEG_PREC: u8 = 7;
const ATOM_PREC: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Bool(bool),
    /// Always finite and non-negative; negation is a unary node.
    Num(f64),
    Str(String),
    Call { name: String, args: Vec<Expr> },
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn call(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Call { name: name.to_string(), args }
    }

    pub fn str(s: &str) -> Expr {
        Expr::Str(s.to_string())
    }

    pub fn unary(op: UnaryOp, expr: Expr) -> Expr {
        Expr::Unary { op, expr: Box::new(expr) }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Unary { op: UnaryOp::Not, .. } => NOT_PREC,
            Expr::Unary { op: UnaryOp::Neg, .. } => NEG_PREC,
            _ => ATOM_PREC,
        }
    }

    /// Object names used as builtin arguments.
    pub fn collect_objects(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Call { name, args } => {
                let sig = builtin(name);
                for (i, a) in args.iter().enumerate() {
                    match (a, sig.map(|s| s.params.get(i))) {
                        (Expr::Str(s), Some(Some(Type::Str))) => {
                            out.insert(s.clone());
                        }
                        _ => a.collect_objects(out),
                    }
                }
            }
            Expr::Unary { expr, .. } => expr.collect_objects(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_objects(out);
                rhs.collect_objects(out);
            }
            Expr::Bool(_) | Expr::Num(_) | Expr::Str(_) => {}
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::size).sum::<usize>(),
            Expr::Unary { expr, .. } => 1 + expr.size(),
            Expr::Binary { lhs, rhs, .. } => 1 + lhs.size() + rhs.size(),
            _ => 1,
        }
    }
}

pub(crate) fn write_string(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Num(n) => {
                if n.fract() == 0.0 && n.abs() < 1e15 {
                    write!(f, "{n:.1}")
                } else {
                    write!(f, "{n}")
                }
            }
            Expr::Str(s) => write_string(f, s),
            Expr::Call { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Unary { op: UnaryOp::Not, expr } => {
                f.write_str("not ")?;
                write_operand(f, expr, NOT_PREC)
            }
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                f.write_str("-")?;
                // `--x` would lex fine, but keep nested negation readable.
                write_operand(f, expr, NEG_PREC + 1)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                // Left-associative; comparisons do not chain.
                let (lp, rp) = if op.is_comparison() { (p + 1, p + 1) } else { (p, p + 1) };
                write_operand(f, lhs, lp)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, rhs, rp)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Milestone {
    pub name: String,
    /// Strictly positive.
    pub weight: f64,
    pub expr: Expr,
}

/// A parsed, type-checked metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricProgram {
    pub success: Expr,
    pub milestones: Vec<Milestone>,
}

impl MetricProgram {
    pub fn referenced_objects(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.success.collect_objects(&mut out);
        for m in &self.milestones {
            m.expr.collect_objects(&mut out);
        }
        out
    }

    pub fn total_weight(&self) -> f64 {
        self.milestones.iter().map(|m| m.weight).sum()
    }
}

impl fmt::Display for MetricProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric {{")?;
        writeln!(f, "  success: {};", self.success)?;
        for m in &self.milestones {
            writeln!(f, "  milestone {} weight {}: {};", m.name, Expr::Num(m.weight), m.expr)?;
        }
        writeln!(f, "}}")
    }
}

/// A builtin's parameter and result types.
#[derive(Debug, Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    pub params: &'static [Type],
    pub result: Type,
    pub doc: &'static str,
}

use Type::{Bool as B, Num as N, Poly as P, Str as S, Vec3 as V};

pub const BUILTINS: &[Builtin] = &[
    Builtin { name: "pos", params: &[S], result: V, doc: "rigid position, or particle centroid (m)" },
    Builtin { name: "vel_norm", params: &[S], result: N, doc: "rigid speed, or the fastest particle's speed (m/s)" },
    Builtin { name: "hull", params: &[S], result: P, doc: "xy footprint: convex_hull_2d, else the bounds rectangle" },
    Builtin { name: "overlap_frac", params: &[S, S], result: N, doc: "area(hull(a) ∩ hull(b)) / area(hull(a))" },
    Builtin { name: "on_table", params: &[S], result: B, doc: "footprint on the table top and resting at table height" },
    Builtin { name: "min_z", params: &[S], result: N, doc: "lowest z (m)" },
    Builtin { name: "max_z", params: &[S], result: N, doc: "highest z (m)" },
    Builtin { name: "dist", params: &[S, S], result: N, doc: "distance between positions (m)" },
    Builtin {
        name: "contained_frac",
        params: &[S, S, N, N],
        result: N,
        doc: "share of o's particles inside hull(region) between z_lo and z_hi",
    },
    Builtin { name: "still", params: &[S, N], result: B, doc: "vel_norm(o) < eps" },
    Builtin { name: "euler", params: &[S], result: V, doc: "rigid orientation (degrees)" },
    Builtin { name: "x_of", params: &[V], result: N, doc: "x component" },
    Builtin { name: "y_of", params: &[V], result: N, doc: "y component" },
    Builtin { name: "z_of", params: &[V], result: N, doc: "z component" },
    Builtin { name: "norm", params: &[V], result: N, doc: "euclidean length" },
    Builtin { name: "abs", params: &[N], result: N, doc: "absolute value" },
    Builtin { name: "area", params: &[P], result: N, doc: "polygon area (m²)" },
];

pub fn builtin(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Why an expression fails to type-check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeIssue {
    UnknownBuiltin(String),
    Mismatch(String),
}

/// Result type of a binary operator over operand types.
pub fn binary_type(op: BinaryOp, l: Type, r: Type) -> Result<Type, String> {
    use BinaryOp::*;
    match op {
        Or | And if l == Type::Bool && r == Type::Bool => Ok(Type::Bool),
        Or | And => Err(format!("'{}' needs bool operands, got {l} and {r}", op.symbol())),
        Lt | Le | Gt | Ge if l == Type::Num && r == Type::Num => Ok(Type::Bool),
        Lt | Le | Gt | Ge => Err(format!("cannot compare {l} to {r} with '{}'", op.symbol())),
        Eq | Ne if l == r && matches!(l, Type::Num | Type::Bool | Type::Str) => Ok(Type::Bool),
        Eq | Ne => Err(format!("cannot compare {l} to {r} with '{}'", op.symbol())),
        Add | Sub | Mul | Div if l == Type::Num && r == Type::Num => Ok(Type::Num),
        Add | Sub | Mul | Div => Err(format!("'{}' needs num operands, got {l} and {r}", op.symbol())),
    }
}

pub fn unary_type(op: UnaryOp, t: Type) -> Result<Type, String> {
    match (op, t) {
        (UnaryOp::Not, Type::Bool) => Ok(Type::Bool),
        (UnaryOp::Neg, Type::Num) => Ok(Type::Num),
        (UnaryOp::Not, t) => Err(format!("'not' needs a bool operand, got {t}")),
        (UnaryOp::Neg, t) => Err(format!("'-' needs a num operand, got {t}")),
    }
}

pub fn call_type(name: &str, args: &[Type]) -> Result<Type, TypeIssue> {
    let b = builtin(name).ok_or_else(|| TypeIssue::UnknownBuiltin(name.to_string()))?;
    if args.len() != b.params.len() {
        return Err(TypeIssue::Mismatch(format!(
            "{name} takes {} argument(s), got {}",
            b.params.len(),
            args.len()
        )));
    }
    for (i, (want, got)) in b.params.iter().zip(args).enumerate() {
        if want != got {
            return Err(TypeIssue::Mismatch(format!("{name} argument {} must be {want}, got {got}", i + 1)));
        }
    }
    Ok(b.result)
}

/// Infers the type of a whole expression tree.
pub fn type_of(e: &Expr) -> Result<Type, TypeIssue> {
    match e {
        Expr::Bool(_) => Ok(Type::Bool),
        Expr::Num(n) if n.is_finite() && *n >= 0.0 => Ok(Type::Num),
        Expr::Num(n) => Err(TypeIssue::Mismatch(format!("literal {n} is not a finite non-negative number"))),
        Expr::Str(_) => Ok(Type::Str),
        Expr::Call { name, args } => {
            let ts = args.iter().map(type_of).collect::<Result<Vec<_>, _>>()?;
            call_type(name, &ts)
        }
        Expr::Unary { op, expr } => unary_type(*op, type_of(expr)?).map_err(TypeIssue::Mismatch),
        Expr::Binary { op, lhs, rhs } => binary_type(*op, type_of(lhs)?, type_of(rhs)?).map_err(TypeIssue::Mismatch),
    }
}
