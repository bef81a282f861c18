//! The plan surface syntax: a single functional expression that spec files
//! put in their `plan` field.
//!
//! ```text
//! plan  := scan(NAME)
//!        | filter(plan, expr)
//!        | project(plan, field, ...)            field  := NAME = expr | NAME
//!        | join(plan, plan, [expr, ...], [expr, ...])
//!        | agg(plan, [field, ...], [aggdef, ...])
//!        | udf(plan, FUNC, OUTFIELD, [expr, ...])
//! aggdef := NAME = sum(expr) | count() | avg(expr) | min(expr) | max(expr)
//! ```
//!
//! Expressions use the usual precedence: `or` < `and` < comparisons
//! (`== != < <= > >=`, non-associative) < `+ -` < `* / %` < unary `-`/`not`,
//! with `if(c, a, b)` and `i2f(e)` as builtin forms and parentheses for
//! grouping. Bare `name` in a project or group-key list is shorthand for
//! `name = name`. Number literals with a decimal point or exponent are
//! float64, otherwise int64. The words `if i2f not and or` plus the plan
//! heads and aggregate names are reserved and cannot name columns in plan
//! text.
//!
//! Parsing produces a [`PlanAst`] that still refers to inputs and functions
//! by name; the spec layer resolves it against the declared tables and
//! models. [`print_plan`] renders the canonical spelling, and
//! parse ∘ print ∘ parse = parse holds for every valid plan.

use tandem_ir::numeric::fmt_g17;
use tandem_rel::{AggKind, PlanExpr};

use crate::error::{CliError, Result};

/// Plan tree as written, before input/function names are resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanAst {
    Scan { input: String },
    Filter { input: Box<PlanAst>, pred: PlanExpr },
    Project { input: Box<PlanAst>, fields: Vec<(String, PlanExpr)> },
    Join { left: Box<PlanAst>, right: Box<PlanAst>, lkeys: Vec<PlanExpr>, rkeys: Vec<PlanExpr> },
    Agg {
        input: Box<PlanAst>,
        keys: Vec<(String, PlanExpr)>,
        aggs: Vec<(String, AggKind, Option<PlanExpr>)>,
    },
    Udf { input: Box<PlanAst>, name: String, out: String, args: Vec<PlanExpr> },
}

impl PlanAst {
    /// Every scan target, in plan order (with repeats).
    pub fn scan_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let PlanAst::Scan { input } = p {
                out.push(input.as_str());
            }
        });
        out
    }

    /// Every applied function name, in plan order (with repeats).
    pub fn udf_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let PlanAst::Udf { name, .. } = p {
                out.push(name.as_str());
            }
        });
        out
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a PlanAst)) {
        f(self);
        match self {
            PlanAst::Scan { .. } => {}
            PlanAst::Filter { input, .. }
            | PlanAst::Project { input, .. }
            | PlanAst::Agg { input, .. }
            | PlanAst::Udf { input, .. } => input.walk(f),
            PlanAst::Join { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
        }
    }
}

// ---- lexer -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    /// One of `( ) [ ] , = + - * / % < > == != <= >=` — multi-char ops kept
    /// as their full spelling.
    Punct(&'static str),
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Float(v) => write!(f, "`{v}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
        }
    }
}

fn err(pos: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Spec(format!("plan text: {msg} at byte {pos}"))
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let b = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            toks.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i < b.len() && b[i] == b'.' {
                is_float = true;
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                is_float = true;
                i += 1;
                if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                    i += 1;
                }
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let lit = &text[start..i];
            let tok = if is_float {
                Tok::Float(lit.parse::<f64>().map_err(|e| err(start, format!("bad float literal '{lit}': {e}")))?)
            } else {
                Tok::Int(lit.parse::<i64>().map_err(|e| err(start, format!("bad int literal '{lit}': {e}")))?)
            };
            toks.push((start, tok));
            continue;
        }
        let two = if i + 1 < b.len() { &text[i..i + 2] } else { "" };
        let p: &'static str = match two {
            "==" => "==",
            "!=" => "!=",
            "<=" => "<=",
            ">=" => ">=",
            _ => match c {
                b'(' => "(",
                b')' => ")",
                b'[' => "[",
                b']' => "]",
                b',' => ",",
                b'=' => "=",
                b'+' => "+",
                b'-' => "-",
                b'*' => "*",
                b'/' => "/",
                b'%' => "%",
                b'<' => "<",
                b'>' => ">",
                _ => return Err(err(i, format!("unexpected character '{}'", c as char))),
            },
        };
        i += p.len();
        toks.push((i - p.len(), Tok::Punct(p)));
    }
    Ok(toks)
}

// ---- parser ----------------------------------------------------------------

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn expect(&mut self, p: &str) -> Result<()> {
        match self.next() {
            Some(Tok::Punct(q)) if q == p => Ok(()),
            Some(t) => Err(err(self.toks[self.at - 1].0, format!("expected `{p}`, found {t}"))),
            None => Err(err(self.end, format!("expected `{p}`, found end of plan"))),
        }
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(t) => Err(err(self.toks[self.at - 1].0, format!("expected {what}, found {t}"))),
            None => Err(err(self.end, format!("expected {what}, found end of plan"))),
        }
    }

    fn plan(&mut self) -> Result<PlanAst> {
        let pos = self.pos();
        let head = self.ident("a plan operator")?;
        self.expect("(")?;
        let ast = match head.as_str() {
            "scan" => PlanAst::Scan { input: self.ident("an input name")? },
            "filter" => {
                let input = Box::new(self.plan()?);
                self.expect(",")?;
                let pred = self.expr()?;
                PlanAst::Filter { input, pred }
            }
            "project" => {
                let input = Box::new(self.plan()?);
                let mut fields = Vec::new();
                while self.eat(",") {
                    fields.push(self.field()?);
                }
                if fields.is_empty() {
                    return Err(err(pos, "project needs at least one field"));
                }
                PlanAst::Project { input, fields }
            }
            "join" => {
                let left = Box::new(self.plan()?);
                self.expect(",")?;
                let right = Box::new(self.plan()?);
                self.expect(",")?;
                let lkeys = self.expr_list()?;
                self.expect(",")?;
                let rkeys = self.expr_list()?;
                PlanAst::Join { left, right, lkeys, rkeys }
            }
            "agg" => {
                let input = Box::new(self.plan()?);
                self.expect(",")?;
                self.expect("[")?;
                let mut keys = Vec::new();
                if !self.eat("]") {
                    loop {
                        keys.push(self.field()?);
                        if self.eat("]") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                self.expect(",")?;
                self.expect("[")?;
                let mut aggs = Vec::new();
                if !self.eat("]") {
                    loop {
                        aggs.push(self.aggdef()?);
                        if self.eat("]") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                PlanAst::Agg { input, keys, aggs }
            }
            "udf" => {
                let input = Box::new(self.plan()?);
                self.expect(",")?;
                let name = self.ident("a function name")?;
                self.expect(",")?;
                let out = self.ident("an output field name")?;
                self.expect(",")?;
                let args = self.expr_list()?;
                PlanAst::Udf { input, name, out, args }
            }
            other => {
                return Err(err(
                    pos,
                    format!("unknown plan operator `{other}` (expected scan/filter/project/join/agg/udf)"),
                ))
            }
        };
        self.expect(")")?;
        Ok(ast)
    }

    fn field(&mut self) -> Result<(String, PlanExpr)> {
        let name = self.ident("a field name")?;
        if self.eat("=") {
            Ok((name, self.expr()?))
        } else {
            let col = PlanExpr::Col(name.clone());
            Ok((name, col))
        }
    }

    fn aggdef(&mut self) -> Result<(String, AggKind, Option<PlanExpr>)> {
        let name = self.ident("an aggregate field name")?;
        self.expect("=")?;
        let pos = self.pos();
        let kind = match self.ident("an aggregate kind")?.as_str() {
            "sum" => AggKind::Sum,
            "count" => AggKind::Count,
            "avg" => AggKind::Avg,
            "min" => AggKind::Min,
            "max" => AggKind::Max,
            other => return Err(err(pos, format!("unknown aggregate `{other}`"))),
        };
        self.expect("(")?;
        let expr = if self.eat(")") {
            None
        } else {
            let e = self.expr()?;
            self.expect(")")?;
            Some(e)
        };
        if kind == AggKind::Count && expr.is_some() {
            return Err(err(pos, "count() takes no argument"));
        }
        if kind != AggKind::Count && expr.is_none() {
            return Err(err(pos, format!("{kind}() needs an argument")));
        }
        Ok((name, kind, expr))
    }

    fn expr_list(&mut self) -> Result<Vec<PlanExpr>> {
        self.expect("[")?;
        let mut out = Vec::new();
        if self.eat("]") {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat("]") {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn expr(&mut self) -> Result<PlanExpr> {
        let mut e = self.and_expr()?;
        while matches!(self.peek(), Some(Tok::Ident(w)) if w == "or") {
            self.at += 1;
            let r = self.and_expr()?;
            e = PlanExpr::Or(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<PlanExpr> {
        let mut e = self.cmp_expr()?;
        while matches!(self.peek(), Some(Tok::Ident(w)) if w == "and") {
            self.at += 1;
            let r = self.cmp_expr()?;
            e = PlanExpr::And(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn cmp_expr(&mut self) -> Result<PlanExpr> {
        let l = self.sum_expr()?;
        let op = match self.peek() {
            Some(Tok::Punct(p)) if matches!(*p, "==" | "!=" | "<" | "<=" | ">" | ">=") => *p,
            _ => return Ok(l),
        };
        self.at += 1;
        let r = self.sum_expr()?;
        let (l, r) = (Box::new(l), Box::new(r));
        Ok(match op {
            "==" => PlanExpr::Eq(l, r),
            "!=" => PlanExpr::Ne(l, r),
            "<" => PlanExpr::Lt(l, r),
            "<=" => PlanExpr::Le(l, r),
            ">" => PlanExpr::Gt(l, r),
            _ => PlanExpr::Ge(l, r),
        })
    }

    fn sum_expr(&mut self) -> Result<PlanExpr> {
        let mut e = self.term_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Punct(p)) if matches!(*p, "+" | "-") => *p,
                _ => return Ok(e),
            };
            self.at += 1;
            let r = self.term_expr()?;
            let (l, r) = (Box::new(e), Box::new(r));
            e = if op == "+" { PlanExpr::Add(l, r) } else { PlanExpr::Sub(l, r) };
        }
    }

    fn term_expr(&mut self) -> Result<PlanExpr> {
        let mut e = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Punct(p)) if matches!(*p, "*" | "/" | "%") => *p,
                _ => return Ok(e),
            };
            self.at += 1;
            let r = self.unary_expr()?;
            let (l, r) = (Box::new(e), Box::new(r));
            e = match op {
                "*" => PlanExpr::Mul(l, r),
                "/" => PlanExpr::Div(l, r),
                _ => PlanExpr::Rem(l, r),
            };
        }
    }

    fn unary_expr(&mut self) -> Result<PlanExpr> {
        if self.eat("-") {
            return Ok(PlanExpr::Neg(Box::new(self.unary_expr()?)));
        }
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == "not") {
            self.at += 1;
            return Ok(PlanExpr::Not(Box::new(self.unary_expr()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<PlanExpr> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Int(v)) => Ok(PlanExpr::LitI(v)),
            Some(Tok::Float(v)) => Ok(PlanExpr::LitF(v)),
            Some(Tok::Punct("(")) => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Ident(w)) if w == "if" => {
                self.expect("(")?;
                let c = self.expr()?;
                self.expect(",")?;
                let t = self.expr()?;
                self.expect(",")?;
                let f = self.expr()?;
                self.expect(")")?;
                Ok(PlanExpr::Cond(Box::new(c), Box::new(t), Box::new(f)))
            }
            Some(Tok::Ident(w)) if w == "i2f" => {
                self.expect("(")?;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(PlanExpr::I2F(Box::new(e)))
            }
            Some(Tok::Ident(w)) => Ok(PlanExpr::Col(w)),
            Some(t) => Err(err(pos, format!("expected an expression, found {t}"))),
            None => Err(err(pos, "expected an expression, found end of plan")),
        }
    }
}

/// Parse plan text into its unresolved tree.
pub fn parse_plan(text: &str) -> Result<PlanAst> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0, end: text.len() };
    let ast = p.plan()?;
    if let Some(t) = p.peek() {
        return Err(err(p.pos(), format!("trailing input after plan: {t}")));
    }
    Ok(ast)
}

// ---- printer ---------------------------------------------------------------

/// Canonical single-line spelling of a plan tree.
pub fn print_plan(p: &PlanAst) -> String {
    match p {
        PlanAst::Scan { input } => format!("scan({input})"),
        PlanAst::Filter { input, pred } => {
            format!("filter({}, {})", print_plan(input), print_expr(pred))
        }
        PlanAst::Project { input, fields } => {
            let fs: Vec<String> =
                fields.iter().map(|(n, e)| format!("{n} = {}", print_expr(e))).collect();
            format!("project({}, {})", print_plan(input), fs.join(", "))
        }
        PlanAst::Join { left, right, lkeys, rkeys } => format!(
            "join({}, {}, {}, {})",
            print_plan(left),
            print_plan(right),
            print_expr_list(lkeys),
            print_expr_list(rkeys)
        ),
        PlanAst::Agg { input, keys, aggs } => {
            let ks: Vec<String> =
                keys.iter().map(|(n, e)| format!("{n} = {}", print_expr(e))).collect();
            let ags: Vec<String> = aggs
                .iter()
                .map(|(n, k, e)| match e {
                    Some(e) => format!("{n} = {k}({})", print_expr(e)),
                    None => format!("{n} = {k}()"),
                })
                .collect();
            format!("agg({}, [{}], [{}])", print_plan(input), ks.join(", "), ags.join(", "))
        }
        PlanAst::Udf { input, name, out, args } => format!(
            "udf({}, {name}, {out}, {})",
            print_plan(input),
            print_expr_list(args)
        ),
    }
}

fn print_expr_list(es: &[PlanExpr]) -> String {
    let parts: Vec<String> = es.iter().map(print_expr).collect();
    format!("[{}]", parts.join(", "))
}

fn prec(e: &PlanExpr) -> u8 {
    use PlanExpr::*;
    match e {
        Or(..) => 1,
        And(..) => 2,
        Eq(..) | Ne(..) | Lt(..) | Le(..) | Gt(..) | Ge(..) => 3,
        Add(..) | Sub(..) => 4,
        Mul(..) | Div(..) | Rem(..) => 5,
        Neg(..) | Not(..) => 6,
        Col(..) | LitI(..) | LitF(..) | Cond(..) | I2F(..) => 7,
    }
}

/// Canonical spelling of an expression, with only the parentheses the
/// precedence rules require.
pub fn print_expr(e: &PlanExpr) -> String {
    use PlanExpr::*;
    let bin = |op: &str, l: &PlanExpr, r: &PlanExpr| {
        let p = prec(e);
        // Binary operators associate left; comparisons do not chain at all,
        // so a comparison child needs parentheses on either side.
        let lwrap = prec(l) < p || (p == 3 && prec(l) == 3);
        let ls = if lwrap { format!("({})", print_expr(l)) } else { print_expr(l) };
        let rs = if prec(r) <= p { format!("({})", print_expr(r)) } else { print_expr(r) };
        format!("{ls} {op} {rs}")
    };
    match e {
        Col(n) => n.clone(),
        LitI(v) => v.to_string(),
        LitF(v) => {
            let s = fmt_g17(*v);
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
                s
            } else {
                format!("{s}.0")
            }
        }
        Add(l, r) => bin("+", l, r),
        Sub(l, r) => bin("-", l, r),
        Mul(l, r) => bin("*", l, r),
        Div(l, r) => bin("/", l, r),
        Rem(l, r) => bin("%", l, r),
        Eq(l, r) => bin("==", l, r),
        Ne(l, r) => bin("!=", l, r),
        Lt(l, r) => bin("<", l, r),
        Le(l, r) => bin("<=", l, r),
        Gt(l, r) => bin(">", l, r),
        Ge(l, r) => bin(">=", l, r),
        And(l, r) => bin("and", l, r),
        Or(l, r) => bin("or", l, r),
        Not(a) => {
            if prec(a) < prec(e) {
                format!("not ({})", print_expr(a))
            } else {
                format!("not {}", print_expr(a))
            }
        }
        Neg(a) => {
            if prec(a) < prec(e) {
                format!("-({})", print_expr(a))
            } else {
                format!("-{}", print_expr(a))
            }
        }
        Cond(c, t, f) => {
            format!("if({}, {}, {})", print_expr(c), print_expr(t), print_expr(f))
        }
        I2F(a) => format!("i2f({})", print_expr(a)),
    }
}
