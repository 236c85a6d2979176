use std::collections::BTreeSet;

use super::ast::{self, BinaryOp, Expr, MetricProgram, Milestone, Type, TypeIssue, UnaryOp};
use super::MetricError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Colon,
    Semi,
    Comma,
    Op(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Colon => "':'".into(),
            Tok::Semi => "';'".into(),
            Tok::Comma => "','".into(),
            Tok::Op(o) => format!("'{o}'"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> MetricError {
    MetricError::Syntax { line, column, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Spanned>, MetricError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let (sl, sc) = (line, col);
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            if i < chars.len() && chars[i] == '.' {
                bump!();
                if !(i < chars.len() && chars[i].is_ascii_digit()) {
                    return Err(syntax(line, col, "expected digits after '.'"));
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
            }
            let text: String = chars[start..i].iter().collect();
            let n: f64 = text.parse().map_err(|_| syntax(sl, sc, format!("bad number {text:?}")))?;
            if !n.is_finite() {
                return Err(syntax(sl, sc, format!("number {text:?} is out of range")));
            }
            Tok::Num(n)
        } else if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(syntax(sl, sc, "unterminated string")),
                    Some('"') => {
                        bump!();
                        break;
                    }
                    Some('\\') => {
                        bump!();
                        let esc = match chars.get(i) {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            _ => return Err(syntax(line, col, "unknown escape sequence")),
                        };
                        s.push(esc);
                        bump!();
                    }
                    Some(&ch) => {
                        s.push(ch);
                        bump!();
                    }
                }
            }
            Tok::Str(s)
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op2 = ["<=", ">=", "==", "!="].into_iter().find(|o| *o == two);
            if let Some(o) = op2 {
                bump!();
                bump!();
                Tok::Op(o)
            } else {
                let t = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ':' => Tok::Colon,
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    '<' => Tok::Op("<"),
                    '>' => Tok::Op(">"),
                    '+' => Tok::Op("+"),
                    '-' => Tok::Op("-"),
                    '*' => Tok::Op("*"),
                    '/' => Tok::Op("/"),
                    other => return Err(syntax(sl, sc, format!("unexpected character {other:?}"))),
                };
                bump!();
                t
            }
        };
        out.push(Spanned { tok, line: sl, column: sc });
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

const KEYWORDS: &[&str] = &["metric", "success", "milestone", "weight", "and", "or", "not", "true", "false"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type Typed = (Expr, Type);

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, expected: &str) -> MetricError {
        let t = self.peek();
        syntax(t.line, t.column, format!("expected {expected}, found {}", t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Spanned, MetricError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.error_here(what))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<Spanned, MetricError> {
        if self.is_keyword(kw) {
            Ok(self.next())
        } else {
            Err(self.error_here(&format!("'{kw}'")))
        }
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(&self.peek().tok, Tok::Op(o) if *o == op)
    }

    fn program(&mut self) -> Result<MetricProgram, MetricError> {
        self.keyword("metric")?;
        self.expect(Tok::LBrace, "'{'")?;
        self.keyword("success")?;
        self.expect(Tok::Colon, "':'")?;
        let success = self.bool_expr()?;
        self.expect(Tok::Semi, "';'")?;
        let mut milestones = Vec::new();
        let mut names = BTreeSet::new();
        while self.is_keyword("milestone") {
            self.next();
            let at = self.peek().clone();
            let name = match at.tok {
                Tok::Ident(ref s) if !KEYWORDS.contains(&s.as_str()) => s.clone(),
                _ => return Err(self.error_here("a milestone name")),
            };
            self.next();
            if !names.insert(name.clone()) {
                return Err(syntax(at.line, at.column, format!("duplicate milestone '{name}'")));
            }
            self.keyword("weight")?;
            let wt = self.next();
            let weight = match wt.tok {
                Tok::Num(w) if w > 0.0 => w,
                Tok::Num(_) => return Err(syntax(wt.line, wt.column, "milestone weight must be positive")),
                other => {
                    return Err(syntax(wt.line, wt.column, format!("expected a weight, found {}", other.describe())))
                }
            };
            self.expect(Tok::Colon, "':'")?;
            let expr = self.bool_expr()?;
            self.expect(Tok::Semi, "';'")?;
            milestones.push(Milestone { name, weight, expr });
        }
        self.expect(Tok::RBrace, "'milestone' or '}'")?;
        if self.peek().tok != Tok::Eof {
            return Err(self.error_here("end of input"));
        }
        Ok(MetricProgram { success, milestones })
    }

    fn bool_expr(&mut self) -> Result<Expr, MetricError> {
        let at = self.peek().clone();
        let (e, t) = self.or_expr()?;
        if t != Type::Bool {
            return Err(MetricError::Type { line: at.line, column: at.column, message: format!("expected bool, got {t}") });
        }
        Ok(e)
    }

    fn binary(&mut self, op: BinaryOp, at: &Spanned, l: Typed, r: Typed) -> Result<Typed, MetricError> {
        let t = ast::binary_type(op, l.1, r.1)
            .map_err(|message| MetricError::Type { line: at.line, column: at.column, message })?;
        Ok((Expr::binary(op, l.0, r.0), t))
    }

    fn or_expr(&mut self) -> Result<Typed, MetricError> {
        let mut l = self.and_expr()?;
        while self.is_keyword("or") {
            let at = self.next();
            let r = self.and_expr()?;
            l = self.binary(BinaryOp::Or, &at, l, r)?;
        }
        Ok(l)
    }

    fn and_expr(&mut self) -> Result<Typed, MetricError> {
        let mut l = self.not_expr()?;
        while self.is_keyword("and") {
            let at = self.next();
            let r = self.not_expr()?;
            l = self.binary(BinaryOp::And, &at, l, r)?;
        }
        Ok(l)
    }

    fn not_expr(&mut self) -> Result<Typed, MetricError> {
        if self.is_keyword("not") {
            let at = self.next();
            let (e, t) = self.not_expr()?;
            let t = ast::unary_type(UnaryOp::Not, t)
                .map_err(|message| MetricError::Type { line: at.line, column: at.column, message })?;
            return Ok((Expr::unary(UnaryOp::Not, e), t));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Typed, MetricError> {
        let l = self.additive()?;
        let op = match &self.peek().tok {
            Tok::Op("<") => BinaryOp::Lt,
            Tok::Op("<=") => BinaryOp::Le,
            Tok::Op(">") => BinaryOp::Gt,
            Tok::Op(">=") => BinaryOp::Ge,
            Tok::Op("==") => BinaryOp::Eq,
            Tok::Op("!=") => BinaryOp::Ne,
            _ => return Ok(l),
        };
        let at = self.next();
        let r = self.additive()?;
        if matches!(&self.peek().tok, Tok::Op(o) if ["<", "<=", ">", ">=", "==", "!="].contains(o)) {
            return Err(syntax(self.peek().line, self.peek().column, "comparisons do not chain; add parentheses"));
        }
        self.binary(op, &at, l, r)
    }

    fn additive(&mut self) -> Result<Typed, MetricError> {
        let mut l = self.multiplicative()?;
        loop {
            let op = if self.is_op("+") {
                BinaryOp::Add
            } else if self.is_op("-") {
                BinaryOp::Sub
            } else {
                return Ok(l);
            };
            let at = self.next();
            let r = self.multiplicative()?;
            l = self.binary(op, &at, l, r)?;
        }
    }

    fn multiplicative(&mut self) -> Result<Typed, MetricError> {
        let mut l = self.unary()?;
        loop {
            let op = if self.is_op("*") {
                BinaryOp::Mul
            } else if self.is_op("/") {
                BinaryOp::Div
            } else {
                return Ok(l);
            };
            let at = self.next();
            let r = self.unary()?;
            l = self.binary(op, &at, l, r)?;
        }
    }

    fn unary(&mut self) -> Result<Typed, MetricError> {
        if self.is_op("-") {
            let at = self.next();
            let (e, t) = self.unary()?;
            let t = ast::unary_type(UnaryOp::Neg, t)
                .map_err(|message| MetricError::Type { line: at.line, column: at.column, message })?;
            return Ok((Expr::unary(UnaryOp::Neg, e), t));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Typed, MetricError> {
        let at = self.next();
        match at.tok {
            Tok::Num(n) => Ok((Expr::Num(n), Type::Num)),
            Tok::Str(s) => Ok((Expr::Str(s), Type::Str)),
            Tok::LParen => {
                let inner = self.or_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(ref s) if s == "true" => Ok((Expr::Bool(true), Type::Bool)),
            Tok::Ident(ref s) if s == "false" => Ok((Expr::Bool(false), Type::Bool)),
            Tok::Ident(ref s) if KEYWORDS.contains(&s.as_str()) => {
                Err(syntax(at.line, at.column, format!("unexpected keyword '{s}'")))
            }
            Tok::Ident(name) => {
                if self.peek().tok != Tok::LParen {
                    return Err(syntax(
                        at.line,
                        at.column,
                        format!("bare identifier '{name}'; object names are quoted strings"),
                    ));
                }
                self.next();
                let mut args: Vec<Typed> = Vec::new();
                if self.peek().tok != Tok::RParen {
                    loop {
                        args.push(self.or_expr()?);
                        if self.peek().tok == Tok::Comma {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen, "',' or ')'")?;
                let types: Vec<Type> = args.iter().map(|a| a.1).collect();
                let t = ast::call_type(&name, &types).map_err(|issue| match issue {
                    TypeIssue::UnknownBuiltin(n) => MetricError::UnknownBuiltin { name: n, line: at.line, column: at.column },
                    TypeIssue::Mismatch(message) => MetricError::Type { line: at.line, column: at.column, message },
                })?;
                Ok((Expr::Call { name, args: args.into_iter().map(|a| a.0).collect() }, t))
            }
            other => Err(syntax(at.line, at.column, format!("expected an expression, found {}", other.describe()))),
        }
    }
}

/// Parses and type-checks a metric program.
pub fn parse_metric(source: &str) -> Result<MetricProgram, MetricError> {
    let toks = lex(source)?;
    Parser { toks, pos: 0 }.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retrieve_cube_example() {
        let p = parse_metric(
            r#"metric { success: overlap_frac("cube","target_area") > 0.5 and vel_norm("cube") < 0.01; }"#,
        )
        .unwrap();
        assert!(p.milestones.is_empty());
        assert_eq!(p.referenced_objects().into_iter().collect::<Vec<_>>(), ["cube", "target_area"]);
        assert_eq!(parse_metric(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn constant_program() {
        let p = parse_metric("metric { success: true; }").unwrap();
        assert_eq!(p.success, Expr::Bool(true));
    }

    #[test]
    fn precedence() {
        let p = parse_metric("metric { success: not 1 + 2 * 3 < 7 or false and true; }").unwrap();
        assert_eq!(p.success.to_string(), "not 1.0 + 2.0 * 3.0 < 7.0 or false and true");
        match p.success {
            Expr::Binary { op: BinaryOp::Or, lhs, .. } => {
                assert!(matches!(*lhs, Expr::Unary { op: UnaryOp::Not, .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn milestones_parse() {
        let src = "metric {\n  success: still(\"a\", 0.01);\n  milestone lifted weight 2: max_z(\"a\") > 0.9;\n}";
        let p = parse_metric(src).unwrap();
        assert_eq!(p.milestones.len(), 1);
        assert_eq!(p.milestones[0].weight, 2.0);
    }

    fn err_pos(src: &str) -> (usize, usize) {
        match parse_metric(src).unwrap_err() {
            MetricError::Syntax { line, column, .. }
            | MetricError::Type { line, column, .. }
            | MetricError::UnknownBuiltin { line, column, .. } => (line, column),
        }
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(err_pos("metric {\n  success: 1 +;\n}"), (2, 15));
        assert!(matches!(
            parse_metric("metric { success: pos(\"a\") < 1; }"),
            Err(MetricError::Type { .. })
        ));
        assert!(matches!(
            parse_metric("metric { success: teleport(\"a\"); }"),
            Err(MetricError::UnknownBuiltin { ref name, line: 1, column: 19 }) if name == "teleport"
        ));
        assert!(matches!(parse_metric("metric { success: 1 < 2 < 3; }"), Err(MetricError::Syntax { .. })));
        assert!(matches!(parse_metric("metric { success: 1; }"), Err(MetricError::Type { .. })));
        assert!(matches!(
            parse_metric("metric { success: true; milestone a weight 0: true; }"),
            Err(MetricError::Syntax { .. })
        ));
        assert!(matches!(
            parse_metric("metric { success: true; milestone a weight 1: true; milestone a weight 1: true; }"),
            Err(MetricError::Syntax { .. })
        ));
        assert!(matches!(parse_metric("metric { success: \"cube; }"), Err(MetricError::Syntax { .. })));
    }

    #[test]
    fn comments_and_escapes() {
        let p = parse_metric("// header\nmetric { success: dist(\"a \\\"b\\\"\", \"c\") < 1; } // tail").unwrap();
        assert!(p.referenced_objects().contains("a \"b\""));
        assert_eq!(parse_metric(&p.to_string()).unwrap(), p);
    }
}
