//! Frontend for a small ATL-like subset.
//!
//! Accepted input:
//!
//! ```text
//! module Class2Relational;
//! create OUT : Relational from IN : UML;
//!
//! rule Class2Table {
//!     from c : UML!Class ( c.isAbstract = false and c.owner.name <> 'lib' )
//!     to t : Relational!Table ( name <- c.name ),
//!        k : Relational!Key ( owner <- t )
//! }
//!
//! lazy rule Attr2Column { from a : UML!Attribute to col : Relational!Column }
//! ```
//!
//! Each matched rule lowers to one [`Rule`]: the `from` element becomes the
//! single LHS node, guard conjuncts become attribute conditions on it, every
//! `to` element becomes an RHS node and each binding a `bind` condition. The
//! control scheme is a sequence in declaration order; lazy rules are lowered
//! but left out of the schedule. Anything else (helpers, imperative blocks,
//! disjunctive guards, ...) is rejected with an error naming the construct.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{
    validate, AttrCond, AttrOp, ControlKind, ControlScheme, GraphPattern, Node, Rule, Step,
    Transformation,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AtlError {
    #[error("{path}:{line}:{column}: syntax error: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}:{line}:{column}: unsupported construct `{construct}`")]
    Unsupported {
        path: String,
        line: usize,
        column: usize,
        construct: String,
    },
    #[error("{path}: source is empty")]
    Empty { path: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// A source file plus a line index for diagnostics.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub path: PathBuf,
    pub text: String,
    line_starts: Vec<usize>,
}

impl SourceUnit {
    pub fn new(path: impl Into<PathBuf>, text: impl Into<String>) -> Result<Self, AtlError> {
        let path = path.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(AtlError::Empty {
                path: path.display().to_string(),
            });
        }
        let line_starts = std::iter::once(0)
            .chain(text.match_indices('\n').map(|(i, _)| i + 1))
            .collect();
        Ok(SourceUnit {
            path,
            text,
            line_starts,
        })
    }

    pub fn read(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Self::new(path, text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// 1-based line and column of a byte offset.
    pub fn position(&self, offset: usize) -> (usize, usize) {
        let line = self.line_starts.partition_point(|&s| s <= offset);
        let start = self.line_starts[line - 1];
        (line, self.text[start..offset].chars().count() + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

const SYMBOLS: [&str; 19] = [
    "<-", "<>", "->", "<=", ">=", "=", "<", ">", ";", ":", ",", ".", "(", ")", "{", "}", "!", "#",
    "|",
];

const UNSUPPORTED_KEYWORDS: [&str; 14] = [
    "helper", "query", "library", "uses", "endpoint", "entrypoint", "called", "do", "using",
    "refining", "distinct", "foreach", "unique", "extends",
];

struct Lexer<'a> {
    unit: &'a SourceUnit,
}

impl<'a> Lexer<'a> {
    fn tokenize(&self) -> Result<Vec<Token>, AtlError> {
        let src = self.unit.text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < src.len() {
            let c = src[i];
            if c.is_ascii_whitespace() {
                i += 1;
            } else if src[i..].starts_with(b"--") {
                while i < src.len() && src[i] != b'\n' {
                    i += 1;
                }
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < src.len() && (src[i].is_ascii_alphanumeric() || src[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(self.unit.text[start..i].to_string()),
                    start,
                    end: i,
                });
            } else if c.is_ascii_digit() {
                let start = i;
                while i < src.len() && (src[i].is_ascii_digit() || src[i] == b'.') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Number(self.unit.text[start..i].to_string()),
                    start,
                    end: i,
                });
            } else if c == b'\'' || c == b'"' {
                let start = i;
                i += 1;
                while i < src.len() && src[i] != c {
                    i += 1;
                }
                if i == src.len() {
                    return Err(self.syntax(start, "unterminated string literal"));
                }
                i += 1;
                out.push(Token {
                    tok: Tok::Str(self.unit.text[start..i].to_string()),
                    start,
                    end: i,
                });
            } else if let Some(s) = SYMBOLS.iter().find(|s| src[i..].starts_with(s.as_bytes())) {
                out.push(Token {
                    tok: Tok::Sym(s),
                    start: i,
                    end: i + s.len(),
                });
                i += s.len();
            } else {
                let ch = self.unit.text[i..].chars().next().unwrap_or('?');
                return Err(self.syntax(i, &format!("unexpected character `{ch}`")));
            }
        }
        out.push(Token {
            tok: Tok::Eof,
            start: src.len(),
            end: src.len(),
        });
        Ok(out)
    }

    fn syntax(&self, offset: usize, message: &str) -> AtlError {
        syntax_at(self.unit, offset, message)
    }
}

fn syntax_at(unit: &SourceUnit, offset: usize, message: &str) -> AtlError {
    let (line, column) = unit.position(offset);
    AtlError::Syntax {
        path: unit.path.display().to_string(),
        line,
        column,
        message: message.into(),
    }
}

struct Parser<'a> {
    unit: &'a SourceUnit,
    toks: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn is_sym(&self, s: &str) -> bool {
        self.peek().tok == Tok::Sym(match SYMBOLS.iter().find(|x| **x == s) {
            Some(x) => x,
            None => return false,
        })
    }

    fn error(&self, message: &str) -> AtlError {
        syntax_at(self.unit, self.peek().start, message)
    }

    fn unsupported(&self, tok: &Token, construct: &str) -> AtlError {
        let (line, column) = self.unit.position(tok.start);
        AtlError::Unsupported {
            path: self.unit.path.display().to_string(),
            line,
            column,
            construct: construct.into(),
        }
    }

    /// Reject keywords outside the subset before they confuse the grammar.
    fn check_supported(&self) -> Result<(), AtlError> {
        if let Tok::Ident(s) = &self.peek().tok {
            if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) {
                return Err(self.unsupported(self.peek(), s));
            }
        }
        Ok(())
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) | Tok::Number(s) | Tok::Str(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<Token, AtlError> {
        if self.is_sym(s) {
            Ok(self.bump())
        } else {
            self.check_supported()?;
            Err(self.error(&format!(
                "expected `{s}`, found {}",
                Self::describe(&self.peek().tok)
            )))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Token, AtlError> {
        if self.is_kw(kw) {
            Ok(self.bump())
        } else {
            self.check_supported()?;
            Err(self.error(&format!(
                "expected `{kw}`, found {}",
                Self::describe(&self.peek().tok)
            )))
        }
    }

    fn ident(&mut self) -> Result<String, AtlError> {
        self.check_supported()?;
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.error(&format!("expected an identifier, found {}", Self::describe(&other)))),
        }
    }

    /// `Class` or `MM!Class`; the metamodel prefix is dropped.
    fn type_ref(&mut self) -> Result<String, AtlError> {
        let first = self.ident()?;
        if self.is_sym("!") {
            self.bump();
            return self.ident();
        }
        Ok(first)
    }

    fn transformation(&mut self) -> Result<Transformation, AtlError> {
        self.check_supported()?;
        self.expect_kw("module")?;
        let name = self.ident()?;
        self.expect_sym(";")?;
        if self.is_kw("create") {
            self.header()?;
        }
        let mut rules = Vec::new();
        let mut steps = Vec::new();
        while self.peek().tok != Tok::Eof {
            self.check_supported()?;
            let lazy = if self.is_kw("lazy") {
                self.bump();
                true
            } else {
                false
            };
            self.check_supported()?;
            let rule = self.rule()?;
            if !lazy {
                steps.push(Step {
                    rule: rule.name.clone(),
                    order: steps.len() as u32,
                    looping: false,
                    branch: false,
                });
            }
            rules.push(rule);
        }
        Ok(Transformation {
            name,
            rules,
            control: ControlScheme {
                kind: ControlKind::Sequence,
                steps,
                edges: vec![],
            },
        })
    }

    /// `create OUT : MM (, ...)* from IN : MM (, ...)* ;`
    fn header(&mut self) -> Result<(), AtlError> {
        self.expect_kw("create")?;
        self.model_decls()?;
        self.check_supported()?;
        self.expect_kw("from")?;
        self.model_decls()?;
        self.expect_sym(";")?;
        Ok(())
    }

    fn model_decls(&mut self) -> Result<(), AtlError> {
        loop {
            self.ident()?;
            self.expect_sym(":")?;
            self.ident()?;
            if !self.is_sym(",") {
                return Ok(());
            }
            self.bump();
        }
    }

    fn rule(&mut self) -> Result<Rule, AtlError> {
        self.expect_kw("rule")?;
        let name = self.ident()?;
        if self.is_sym("(") {
            let t = self.peek().clone();
            return Err(self.unsupported(&t, "rule parameters"));
        }
        self.expect_sym("{")?;
        self.expect_kw("from")?;
        let var = self.ident()?;
        self.expect_sym(":")?;
        let ty = self.type_ref()?;
        let mut lhs = GraphPattern {
            nodes: vec![Node {
                id: var.clone(),
                ty,
            }],
            ..Default::default()
        };
        if self.is_sym(",") {
            let t = self.peek().clone();
            return Err(self.unsupported(&t, "multiple source elements"));
        }
        if self.is_sym("(") {
            self.bump();
            lhs.attrs = self.guard(&var)?;
            self.expect_sym(")")?;
        }
        self.check_supported()?;
        self.expect_kw("to")?;
        let mut rhs = GraphPattern::default();
        loop {
            let id = self.ident()?;
            self.expect_sym(":")?;
            let ty = self.type_ref()?;
            if self.is_sym("(") {
                self.bump();
                self.bindings(&id, &mut rhs.attrs)?;
                self.expect_sym(")")?;
            }
            rhs.nodes.push(Node { id, ty });
            if !self.is_sym(",") {
                break;
            }
            self.bump();
        }
        self.check_supported()?;
        self.expect_sym("}")?;
        Ok(Rule {
            name,
            lhs,
            rhs,
            nacs: vec![],
        })
    }

    /// Conjunction of `var.nav (= | <> | < | >) literal`.
    fn guard(&mut self, var: &str) -> Result<Vec<AttrCond>, AtlError> {
        let mut out = Vec::new();
        loop {
            let parens = if self.is_sym("(") {
                self.bump();
                true
            } else {
                false
            };
            out.push(self.comparison(var)?);
            if parens {
                self.expect_sym(")")?;
            }
            match &self.peek().tok {
                Tok::Ident(s) if s == "and" => {
                    self.bump();
                }
                Tok::Ident(s) if matches!(s.as_str(), "or" | "not" | "implies" | "xor" | "if") => {
                    let t = self.peek().clone();
                    let s = s.clone();
                    return Err(self.unsupported(&t, &s));
                }
                _ => return Ok(out),
            }
        }
    }

    fn comparison(&mut self, var: &str) -> Result<AttrCond, AtlError> {
        if let Tok::Ident(s) = &self.peek().tok {
            if matches!(s.as_str(), "not" | "if" | "let") {
                let (t, s) = (self.peek().clone(), s.clone());
                return Err(self.unsupported(&t, &s));
            }
        }
        let owner_tok = self.peek().clone();
        let owner = self.ident()?;
        if owner != var {
            return Err(syntax_at(
                self.unit,
                owner_tok.start,
                &format!("guard refers to `{owner}`, expected the source element `{var}`"),
            ));
        }
        let mut path = Vec::new();
        while self.is_sym(".") {
            self.bump();
            path.push(self.ident()?);
        }
        if path.is_empty() {
            return Err(self.error("expected a navigation such as `v.attribute`"));
        }
        if self.is_sym("->") {
            let t = self.peek().clone();
            return Err(self.unsupported(&t, "collection operation `->`"));
        }
        let op_tok = self.bump();
        let op = match op_tok.tok {
            Tok::Sym("=") => AttrOp::Eq,
            Tok::Sym("<>") => AttrOp::Neq,
            Tok::Sym("<") => AttrOp::Lt,
            Tok::Sym(">") => AttrOp::Gt,
            Tok::Sym(s @ ("<=" | ">=")) => return Err(self.unsupported(&op_tok, s)),
            other => {
                return Err(syntax_at(
                    self.unit,
                    op_tok.start,
                    &format!("expected a comparison operator, found {}", Self::describe(&other)),
                ))
            }
        };
        let lit = self.bump();
        let value = match lit.tok {
            Tok::Number(s) | Tok::Str(s) | Tok::Ident(s) => s,
            Tok::Sym("#") => format!("#{}", self.ident()?),
            other => {
                return Err(syntax_at(
                    self.unit,
                    lit.start,
                    &format!("expected a literal, found {}", Self::describe(&other)),
                ))
            }
        };
        let op = if path.len() > 1 { AttrOp::Other } else { op };
        Ok(AttrCond {
            owner: owner.to_string(),
            name: path.join("."),
            op,
            value,
        })
    }

    /// `feature <- expr (, feature <- expr)*`; expressions stay opaque text.
    fn bindings(&mut self, owner: &str, out: &mut Vec<AttrCond>) -> Result<(), AtlError> {
        if self.is_sym(")") {
            return Ok(());
        }
        loop {
            let name = self.ident()?;
            self.expect_sym("<-")?;
            let start = self.peek().start;
            let mut depth = 0usize;
            let mut end = start;
            loop {
                let t = self.peek().clone();
                match t.tok {
                    Tok::Eof => return Err(self.error("unterminated binding")),
                    Tok::Sym("(" | "{") => depth += 1,
                    Tok::Sym(")" | "}") if depth == 0 => break,
                    Tok::Sym(")" | "}") => depth -= 1,
                    Tok::Sym(",") if depth == 0 => break,
                    Tok::Ident(ref s) if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => {
                        return Err(self.unsupported(&t, s));
                    }
                    _ => {}
                }
                end = t.end;
                self.bump();
            }
            if end == start {
                return Err(self.error("empty binding expression"));
            }
            out.push(AttrCond {
                owner: owner.to_string(),
                name,
                op: AttrOp::Bind,
                value: self.unit.text[start..end].trim().to_string(),
            });
            if !self.is_sym(",") {
                return Ok(());
            }
            self.bump();
        }
    }
}

/// Lower an ATL-subset source to a [`Transformation`].
pub fn parse_atl_subset(src: &SourceUnit) -> Result<Transformation, AtlError> {
    let toks = Lexer { unit: src }.tokenize()?;
    let mut p = Parser {
        unit: src,
        toks,
        pos: 0,
    };
    let t = p.transformation()?;
    if let Some(v) = validate(&t).into_iter().next() {
        return Err(AtlError::Invalid {
            path: src.path.display().to_string(),
            message: format!("{}: {}", v.location, v.message),
        });
    }
    Ok(t)
}
