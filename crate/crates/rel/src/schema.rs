use std::collections::HashMap;
use std::sync::Arc;

use tandem_ir::{ColKind, ScalarTy, Stype};

use crate::error::{RelError, Result};

/// Field type of a relational column. Strings are dictionary-coded: the
/// column itself stores int64 codes and the pipeline-wide interner maps
/// codes back to text.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FieldTy {
    I64,
    F64,
    Str,
}

impl FieldTy {
    pub fn stype(self) -> Stype {
        match self {
            FieldTy::I64 | FieldTy::Str => Stype::I64,
            FieldTy::F64 => Stype::F64,
        }
    }

    pub fn scalar_ty(self) -> ScalarTy {
        match self {
            FieldTy::I64 | FieldTy::Str => ScalarTy::I64,
            FieldTy::F64 => ScalarTy::F64,
        }
    }

    pub fn col_kind(self) -> ColKind {
        match self {
            FieldTy::I64 => ColKind::I64,
            FieldTy::F64 => ColKind::F64,
            FieldTy::Str => ColKind::Str,
        }
    }
}

impl std::fmt::Display for FieldTy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FieldTy::I64 => "int64",
            FieldTy::F64 => "float64",
            FieldTy::Str => "str",
        };
        f.write_str(s)
    }
}

/// One field an operator exposes to its consumer: name, type, and — for
/// string fields — the dictionary snapshot that decodes its codes.
#[derive(Clone, Debug)]
pub struct FieldInfo {
    pub name: String,
    pub ty: FieldTy,
    pub dict: Option<Arc<Vec<String>>>,
}

impl FieldInfo {
    pub fn new(name: &str, ty: FieldTy) -> FieldInfo {
        FieldInfo {
            name: name.into(),
            ty,
            dict: None,
        }
    }

    pub fn with_dict(name: &str, dict: Arc<Vec<String>>) -> FieldInfo {
        FieldInfo {
            name: name.into(),
            ty: FieldTy::Str,
            dict: Some(dict),
        }
    }
}

/// Ordered, uniquely named fields of a source table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelSchema {
    pub fields: Vec<(String, FieldTy)>,
}

impl RelSchema {
    pub fn new(fields: Vec<(String, FieldTy)>) -> Result<RelSchema> {
        if fields.is_empty() {
            return Err(RelError::Plan("schema needs at least one field".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (n, _) in &fields {
            if !seen.insert(n.clone()) {
                return Err(RelError::Plan(format!("duplicate field name '{}'", n)));
            }
        }
        Ok(RelSchema { fields })
    }

    pub fn of(fields: &[(&str, FieldTy)]) -> Result<RelSchema> {
        Self::new(
            fields
                .iter()
                .map(|(n, t)| ((*n).to_string(), *t))
                .collect(),
        )
    }
}

/// Pipeline-wide string dictionary. Every string column of every scan
/// interns into this one table, so two equal strings carry the same code
/// no matter which file they came from, and code equality is string
/// equality across the whole pipeline.
#[derive(Default, Debug)]
pub struct StrInterner {
    map: HashMap<String, i64>,
    list: Vec<String>,
}

impl StrInterner {
    pub fn new() -> StrInterner {
        StrInterner::default()
    }

    pub fn intern(&mut self, s: &str) -> i64 {
        if let Some(&c) = self.map.get(s) {
            return c;
        }
        let c = self.list.len() as i64;
        self.map.insert(s.to_string(), c);
        self.list.push(s.to_string());
        c
    }

    pub fn lookup(&self, s: &str) -> Option<i64> {
        self.map.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    /// Immutable copy of the table so far. Codes are indices into it;
    /// columns interned earlier only hold codes below their snapshot's
    /// length, so a later, longer snapshot decodes them equally well.
    pub fn snapshot(&self) -> Arc<Vec<String>> {
        Arc::new(self.list.clone())
    }
}
