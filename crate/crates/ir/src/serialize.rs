//! Text form of the node table: one s-expression per node, defined so
//! that equal graphs serialize to identical bytes (floats print as hex
//! bit patterns) and any structurally valid text parses back to the same
//! graph.
//!
//! Layout: a header line, then `(id op (operands) (imms) effect scope)`
//! per node in id order.

use crate::types::*;
use std::fmt::Write as _;

const HEADER: &str = "tandemir v1";

pub fn to_text(g: &IrGraph) -> String {
    let mut s = String::new();
    s.push_str(HEADER);
    s.push('\n');
    for id in g.ids() {
        let n = g.node(id);
        let _ = write!(s, "({} {} (", id, n.op.name());
        for (i, o) in n.operands.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", o);
        }
        s.push_str(") (");
        for (i, imm) in n.imms.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write_imm(&mut s, imm);
        }
        s.push_str(") ");
        match n.effect {
            Effect::Pure => s.push_str("pure"),
            Effect::Read(r) => {
                let _ = write!(s, "(read {})", r);
            }
            Effect::Write(w) => {
                let _ = write!(s, "(write {})", w);
            }
            Effect::Global => s.push_str("global"),
        }
        let _ = writeln!(s, " {})", n.scope);
    }
    s
}

fn write_imm(s: &mut String, imm: &Imm) {
    match imm {
        Imm::I(v) => {
            let _ = write!(s, "(i {})", v);
        }
        Imm::F(v) => {
            let _ = write!(s, "(f {:016x})", v.to_bits());
        }
        Imm::B(v) => {
            let _ = write!(s, "(b {})", v);
        }
        Imm::U(v) => {
            let _ = write!(s, "(u {})", v);
        }
        Imm::S(v) => {
            s.push_str("(s ");
            write_str(s, v);
            s.push(')');
        }
        Imm::Ty(t) => {
            let _ = write!(s, "(ty {})", ty_name(*t));
        }
        Imm::St(t) => {
            s.push_str("(st ");
            write_stype(s, t);
            s.push(')');
        }
        Imm::Kind(k) => {
            let _ = write!(s, "(kind {})", kind_name(*k));
        }
        Imm::FVec(v) => {
            s.push_str("(fv");
            for x in v {
                let _ = write!(s, " {:016x}", x.to_bits());
            }
            s.push(')');
        }
        Imm::IVec(v) => {
            s.push_str("(iv");
            for x in v {
                let _ = write!(s, " {}", x);
            }
            s.push(')');
        }
        Imm::Csv(c) => {
            s.push_str("(csv ");
            write_str(s, &c.path);
            let _ = write!(s, " {} (", c.header);
            for (i, col) in c.cols.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                s.push_str("(col ");
                write_str(s, &col.name);
                s.push(' ');
                s.push_str(match col.ty {
                    ColKind::I64 => "i64",
                    ColKind::F64 => "f64",
                    ColKind::Str => "str",
                });
                s.push_str(" (");
                for (j, d) in col.dict.iter().enumerate() {
                    if j > 0 {
                        s.push(' ');
                    }
                    write_str(s, d);
                }
                s.push_str("))");
            }
            s.push_str("))");
        }
        Imm::Pool(p) => {
            let _ = write!(
                s,
                "(pool {} {} {} {} (",
                p.workers, p.queue_cap, p.batch, p.arity
            );
            for (i, t) in p.comp.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                s.push_str(ty_name(*t));
            }
            s.push_str("))");
        }
        Imm::Fmt(fs) => {
            s.push_str("(fmt");
            for f in fs {
                s.push(' ');
                match f {
                    PrintFmt::I64 => s.push_str("i64"),
                    PrintFmt::F64 => s.push_str("f64"),
                    PrintFmt::Str(dict) => {
                        s.push_str("(str");
                        for d in dict {
                            s.push(' ');
                            write_str(s, d);
                        }
                        s.push(')');
                    }
                }
            }
            s.push(')');
        }
    }
}

fn write_stype(s: &mut String, t: &Stype) {
    match t {
        Stype::I64 => s.push_str("int64"),
        Stype::F64 => s.push_str("float64"),
        Stype::Bool => s.push_str("bool"),
        Stype::Unit => s.push_str("unit"),
        Stype::Dict => s.push_str("dict"),
        Stype::Src => s.push_str("src"),
        Stype::Pool => s.push_str("pool"),
        Stype::Arr(e) => {
            s.push_str("(arr ");
            write_stype(s, e);
            s.push(')');
        }
        Stype::Struct(fs) => {
            s.push_str("(struct");
            for (n, ft) in fs {
                s.push_str(" (");
                write_str(s, n);
                s.push(' ');
                write_stype(s, ft);
                s.push(')');
            }
            s.push(')');
        }
    }
}

fn write_str(s: &mut String, v: &str) {
    s.push('"');
    for c in v.chars() {
        match c {
            '"' => s.push_str("\\\""),
            '\\' => s.push_str("\\\\"),
            '\n' => s.push_str("\\n"),
            '\t' => s.push_str("\\t"),
            '\r' => s.push_str("\\r"),
            c => s.push(c),
        }
    }
    s.push('"');
}

fn ty_name(t: ScalarTy) -> &'static str {
    match t {
        ScalarTy::I64 => "i64",
        ScalarTy::F64 => "f64",
    }
}

fn kind_name(k: BlockKind) -> &'static str {
    match k {
        BlockKind::Root => "root",
        BlockKind::LoopBody => "loop-body",
        BlockKind::WhileCond => "while-cond",
        BlockKind::WhileBody => "while-body",
        BlockKind::IfThen => "if-then",
        BlockKind::IfElse => "if-else",
        BlockKind::FuncBody => "func-body",
    }
}

#[derive(Debug)]
pub struct ParseError(pub String);

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ParseError {}

pub fn from_text(text: &str) -> Result<IrGraph, ParseError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        other => {
            return Err(ParseError(format!(
                "bad header: expected '{}', got {:?}",
                HEADER, other
            )))
        }
    }
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let sxs = parse_sexprs(&rest)?;
    let mut g = IrGraph::default();
    for (i, sx) in sxs.iter().enumerate() {
        let node = parse_node(sx, i)?;
        g.nodes.push(node);
    }
    g.validate().map_err(ParseError)?;
    Ok(g)
}

// ---- s-expression reader -------------------------------------------------

#[derive(Debug, Clone)]
enum Sx {
    Atom(String),
    Str(String),
    List(Vec<Sx>),
}

impl Sx {
    fn atom(&self) -> Result<&str, ParseError> {
        match self {
            Sx::Atom(a) => Ok(a),
            other => Err(ParseError(format!("expected atom, got {:?}", other))),
        }
    }

    fn string(&self) -> Result<&str, ParseError> {
        match self {
            Sx::Str(a) => Ok(a),
            other => Err(ParseError(format!("expected string, got {:?}", other))),
        }
    }

    fn list(&self) -> Result<&[Sx], ParseError> {
        match self {
            Sx::List(l) => Ok(l),
            other => Err(ParseError(format!("expected list, got {:?}", other))),
        }
    }
}

fn parse_sexprs(text: &str) -> Result<Vec<Sx>, ParseError> {
    let mut chars = text.chars().peekable();
    let mut stack: Vec<Vec<Sx>> = vec![Vec::new()];
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                stack.push(Vec::new());
            }
            ')' => {
                chars.next();
                let done = stack
                    .pop()
                    .ok_or_else(|| ParseError("unbalanced ')'".into()))?;
                let top = stack
                    .last_mut()
                    .ok_or_else(|| ParseError("unbalanced ')'".into()))?;
                top.push(Sx::List(done));
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(ParseError("unterminated string".into())),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            other => {
                                return Err(ParseError(format!("bad escape {:?}", other)))
                            }
                        },
                        Some(c) => s.push(c),
                    }
                }
                stack
                    .last_mut()
                    .expect("stack non-empty")
                    .push(Sx::Str(s));
            }
            _ => {
                let mut a = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    a.push(c);
                    chars.next();
                }
                stack.last_mut().expect("stack non-empty").push(Sx::Atom(a));
            }
        }
    }
    if stack.len() != 1 {
        return Err(ParseError("unbalanced '('".into()));
    }
    Ok(stack.pop().expect("single frame"))
}

// ---- node decoding ---------------------------------------------------------

fn parse_node(sx: &Sx, expect_id: usize) -> Result<IrNode, ParseError> {
    let l = sx.list()?;
    if l.len() != 6 {
        return Err(ParseError(format!(
            "node {}: expected 6 fields, got {}",
            expect_id,
            l.len()
        )));
    }
    let id: usize = parse_num(&l[0])?;
    if id != expect_id {
        return Err(ParseError(format!(
            "node id {} out of order (expected {})",
            id, expect_id
        )));
    }
    let op_name = l[1].atom()?;
    let op =
        Op::from_name(op_name).ok_or_else(|| ParseError(format!("unknown op '{}'", op_name)))?;
    let operands = l[2]
        .list()?
        .iter()
        .map(|s| Ok(NodeId(parse_num::<u32>(s)?)))
        .collect::<Result<Vec<_>, ParseError>>()?;
    let imms = l[3]
        .list()?
        .iter()
        .map(parse_imm)
        .collect::<Result<Vec<_>, ParseError>>()?;
    let effect = match &l[4] {
        Sx::Atom(a) if a == "pure" => Effect::Pure,
        Sx::Atom(a) if a == "global" => Effect::Global,
        Sx::List(el) if el.len() == 2 => {
            let r = NodeId(parse_num::<u32>(&el[1])?);
            match el[0].atom()? {
                "read" => Effect::Read(r),
                "write" => Effect::Write(r),
                other => return Err(ParseError(format!("bad effect '{}'", other))),
            }
        }
        other => return Err(ParseError(format!("bad effect {:?}", other))),
    };
    let scope = NodeId(parse_num::<u32>(&l[5])?);
    Ok(IrNode {
        op,
        operands,
        imms,
        effect,
        scope,
    })
}

fn parse_num<T: std::str::FromStr>(sx: &Sx) -> Result<T, ParseError> {
    sx.atom()?
        .parse::<T>()
        .map_err(|_| ParseError(format!("bad number '{}'", sx.atom().unwrap_or("?"))))
}

fn parse_f64_bits(sx: &Sx) -> Result<f64, ParseError> {
    let a = sx.atom()?;
    u64::from_str_radix(a, 16)
        .map(f64::from_bits)
        .map_err(|_| ParseError(format!("bad float bits '{}'", a)))
}

fn parse_imm(sx: &Sx) -> Result<Imm, ParseError> {
    let l = sx.list()?;
    if l.is_empty() {
        return Err(ParseError("empty immediate".into()));
    }
    let tag = l[0].atom()?;
    let imm = match tag {
        "i" => Imm::I(parse_num(&l[1])?),
        "f" => Imm::F(parse_f64_bits(&l[1])?),
        "b" => Imm::B(parse_bool(&l[1])?),
        "u" => Imm::U(parse_num(&l[1])?),
        "s" => Imm::S(l[1].string()?.to_string()),
        "ty" => Imm::Ty(parse_ty(&l[1])?),
        "st" => Imm::St(parse_stype(&l[1])?),
        "kind" => Imm::Kind(parse_kind(&l[1])?),
        "fv" => Imm::FVec(
            l[1..]
                .iter()
                .map(parse_f64_bits)
                .collect::<Result<_, _>>()?,
        ),
        "iv" => Imm::IVec(l[1..].iter().map(parse_num).collect::<Result<_, _>>()?),
        "csv" => {
            let path = l[1].string()?.to_string();
            let header = parse_bool(&l[2])?;
            let cols = l[3]
                .list()?
                .iter()
                .map(parse_col)
                .collect::<Result<_, _>>()?;
            Imm::Csv(CsvSpec { path, header, cols })
        }
        "pool" => Imm::Pool(PoolCfg {
            workers: parse_num(&l[1])?,
            queue_cap: parse_num(&l[2])?,
            batch: parse_num(&l[3])?,
            arity: parse_num(&l[4])?,
            comp: l[5]
                .list()?
                .iter()
                .map(parse_ty)
                .collect::<Result<_, _>>()?,
        }),
        "fmt" => Imm::Fmt(
            l[1..]
                .iter()
                .map(|s| match s {
                    Sx::Atom(a) if a == "i64" => Ok(PrintFmt::I64),
                    Sx::Atom(a) if a == "f64" => Ok(PrintFmt::F64),
                    Sx::List(dl) if !dl.is_empty() && dl[0].atom().ok() == Some("str") => {
                        Ok(PrintFmt::Str(
                            dl[1..]
                                .iter()
                                .map(|d| Ok(d.string()?.to_string()))
                                .collect::<Result<_, ParseError>>()?,
                        ))
                    }
                    other => Err(ParseError(format!("bad print format {:?}", other))),
                })
                .collect::<Result<_, _>>()?,
        ),
        other => return Err(ParseError(format!("unknown immediate tag '{}'", other))),
    };
    Ok(imm)
}

fn parse_bool(sx: &Sx) -> Result<bool, ParseError> {
    match sx.atom()? {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ParseError(format!("bad bool '{}'", other))),
    }
}

fn parse_ty(sx: &Sx) -> Result<ScalarTy, ParseError> {
    match sx.atom()? {
        "i64" => Ok(ScalarTy::I64),
        "f64" => Ok(ScalarTy::F64),
        other => Err(ParseError(format!("bad element type '{}'", other))),
    }
}

fn parse_kind(sx: &Sx) -> Result<BlockKind, ParseError> {
    Ok(match sx.atom()? {
        "root" => BlockKind::Root,
        "loop-body" => BlockKind::LoopBody,
        "while-cond" => BlockKind::WhileCond,
        "while-body" => BlockKind::WhileBody,
        "if-then" => BlockKind::IfThen,
        "if-else" => BlockKind::IfElse,
        "func-body" => BlockKind::FuncBody,
        other => return Err(ParseError(format!("bad block kind '{}'", other))),
    })
}

fn parse_stype(sx: &Sx) -> Result<Stype, ParseError> {
    match sx {
        Sx::Atom(a) => Ok(match a.as_str() {
            "int64" => Stype::I64,
            "float64" => Stype::F64,
            "bool" => Stype::Bool,
            "unit" => Stype::Unit,
            "dict" => Stype::Dict,
            "src" => Stype::Src,
            "pool" => Stype::Pool,
            other => return Err(ParseError(format!("bad type '{}'", other))),
        }),
        Sx::List(l) if !l.is_empty() => match l[0].atom()? {
            "arr" => Ok(Stype::arr(parse_stype(&l[1])?)),
            "struct" => {
                let fields = l[1..]
                    .iter()
                    .map(|f| {
                        let fl = f.list()?;
                        Ok((fl[0].string()?.to_string(), parse_stype(&fl[1])?))
                    })
                    .collect::<Result<_, ParseError>>()?;
                Ok(Stype::Struct(fields))
            }
            other => Err(ParseError(format!("bad type constructor '{}'", other))),
        },
        other => Err(ParseError(format!("bad type {:?}", other))),
    }
}

fn parse_col(sx: &Sx) -> Result<CsvColTy, ParseError> {
    let l = sx.list()?;
    if l.len() != 4 || l[0].atom()? != "col" {
        return Err(ParseError(format!("bad column {:?}", sx)));
    }
    let name = l[1].string()?.to_string();
    let ty = match l[2].atom()? {
        "i64" => ColKind::I64,
        "f64" => ColKind::F64,
        "str" => ColKind::Str,
        other => return Err(ParseError(format!("bad column type '{}'", other))),
    };
    let dict = l[3]
        .list()?
        .iter()
        .map(|d| Ok(d.string()?.to_string()))
        .collect::<Result<_, ParseError>>()?;
    Ok(CsvColTy { name, ty, dict })
}
