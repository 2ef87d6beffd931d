//! Canonical string encoding of rules and participant templates.
//!
//! A rule becomes `R`, then one block per graph pattern (`L` for the
//! left-hand side, `G` for the right-hand side, `N` per NAC), then `C`
//! followed by its control flags. Inside a block every element is a short
//! code:
//!
//! | element            | code                      |
//! |--------------------|---------------------------|
//! | node               | `n` type                  |
//! | edge               | `e` type src-type tgt-type|
//! | attribute compare  | `a` owner-type op         |
//! | attribute bind     | `b` owner-type            |
//!
//! Types are replaced by single-letter tokens `A`..`Z`, assigned in order of
//! first appearance. Element order inside a block depends only on structure
//! (degrees, attribute counts), never on names, so a participant template and
//! a rule with the same shape produce the same bytes.
//!
//! ```
//! use mtpd::encoder::encode_rule;
//! use mtpd::model::{AttrCond, AttrOp, ControlFlags, GraphPattern, Node, Rule};
//!
//! let rule = Rule {
//!     name: "ClassToTable".into(),
//!     lhs: GraphPattern {
//!         nodes: vec![Node { id: "c".into(), ty: "Class".into() }],
//!         ..Default::default()
//!     },
//!     rhs: GraphPattern {
//!         nodes: vec![Node { id: "t".into(), ty: "Table".into() }],
//!         attrs: vec![AttrCond {
//!             owner: "t".into(),
//!             name: "name".into(),
//!             op: AttrOp::Bind,
//!             value: "c.name".into(),
//!         }],
//!         ..Default::default()
//!     },
//!     nacs: vec![],
//! };
//! let flags = ControlFlags { seq_pos: Some(0), ..Default::default() };
//! let enc = encode_rule(&rule, &flags).unwrap();
//! assert_eq!(enc.as_str(), "RLnAGnBbBCs");
//! ```

use std::cmp::Reverse;
use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{ControlRequirement, Participant, WILDCARD};
use crate::model::{AttrOp, ControlFlags, GraphPattern, PatternRole, Rule};

/// Symbols of the encoding alphabet.
pub mod sym {
    pub const RULE: u8 = b'R';
    pub const LHS: u8 = b'L';
    pub const RHS: u8 = b'G';
    pub const NAC: u8 = b'N';
    pub const CONTROL: u8 = b'C';

    pub const NODE: u8 = b'n';
    pub const EDGE: u8 = b'e';
    pub const ATTR: u8 = b'a';
    pub const BIND: u8 = b'b';

    pub const OP_EQ: u8 = b'=';
    pub const OP_NEQ: u8 = b'!';
    pub const OP_LT: u8 = b'<';
    pub const OP_GT: u8 = b'>';
    pub const OP_OTHER: u8 = b'~';

    pub const FLAG_SEQ: u8 = b's';
    pub const FLAG_LOOP: u8 = b'l';
    pub const FLAG_SELF_LOOP: u8 = b'r';
    pub const FLAG_BRANCH: u8 = b'x';

    pub const FIRST_TOKEN: u8 = b'A';
    pub const LAST_TOKEN: u8 = b'Z';
}

pub const MAX_TOKENS: usize = 26;
pub const DEFAULT_PERM_CAP: usize = 720;

/// Every byte an encoding can contain, sorted. Block markers double as type
/// tokens (`C` is both the control marker and the third token); position in
/// the grammar disambiguates them.
pub fn alphabet() -> Vec<u8> {
    let mut a: Vec<u8> = (sym::FIRST_TOKEN..=sym::LAST_TOKEN)
        .chain([
            sym::NODE,
            sym::EDGE,
            sym::ATTR,
            sym::BIND,
            sym::OP_EQ,
            sym::OP_NEQ,
            sym::OP_LT,
            sym::OP_GT,
            sym::OP_OTHER,
            sym::FLAG_SEQ,
            sym::FLAG_LOOP,
            sym::FLAG_SELF_LOOP,
            sym::FLAG_BRANCH,
        ])
        .collect();
    a.sort_unstable();
    a.dedup();
    a
}

pub fn op_symbol(op: AttrOp) -> u8 {
    match op {
        AttrOp::Eq => sym::OP_EQ,
        AttrOp::Neq => sym::OP_NEQ,
        AttrOp::Lt => sym::OP_LT,
        AttrOp::Gt => sym::OP_GT,
        AttrOp::Other => sym::OP_OTHER,
        AttrOp::Bind => sym::BIND,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{unit} uses more than {MAX_TOKENS} distinct types")]
    TokenOverflow { unit: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed encoding at byte {pos}: {message}")]
pub struct DecodeError {
    pub pos: usize,
    pub message: String,
}

/// Reference into one of a [`GraphPattern`]'s element lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementRef {
    Node(usize),
    Edge(usize),
    Attr(usize),
}

/// Nodes, then edges, then attributes, each sorted by structural keys only.
pub fn canonical_order(p: &GraphPattern) -> Vec<ElementRef> {
    let pos_of: HashMap<&str, usize> = p
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut degree = vec![0usize; p.nodes.len()];
    let mut in_degree = vec![0usize; p.nodes.len()];
    let mut attr_count = vec![0usize; p.nodes.len()];
    for e in &p.edges {
        if let Some(&s) = pos_of.get(e.src.as_str()) {
            degree[s] += 1;
        }
        if let Some(&t) = pos_of.get(e.tgt.as_str()) {
            degree[t] += 1;
            in_degree[t] += 1;
        }
    }
    for a in &p.attrs {
        if let Some(&o) = pos_of.get(a.owner.as_str()) {
            attr_count[o] += 1;
        }
    }

    let mut nodes: Vec<usize> = (0..p.nodes.len()).collect();
    nodes.sort_by_key(|&i| (Reverse(degree[i]), Reverse(attr_count[i]), Reverse(in_degree[i]), i));
    let mut canon = vec![usize::MAX; p.nodes.len()];
    for (rank, &i) in nodes.iter().enumerate() {
        canon[i] = rank;
    }
    let rank_of = |id: &str| pos_of.get(id).map_or(usize::MAX, |&i| canon[i]);

    let mut edges: Vec<usize> = (0..p.edges.len()).collect();
    edges.sort_by_key(|&i| (rank_of(&p.edges[i].src), rank_of(&p.edges[i].tgt), i));
    let mut attrs: Vec<usize> = (0..p.attrs.len()).collect();
    attrs.sort_by_key(|&i| (rank_of(&p.attrs[i].owner), op_symbol(p.attrs[i].op), i));

    nodes
        .into_iter()
        .map(ElementRef::Node)
        .chain(edges.into_iter().map(ElementRef::Edge))
        .chain(attrs.into_iter().map(ElementRef::Attr))
        .collect()
}

/// Ordered type-name → token table. Wildcards appear once per occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenMap {
    entries: Vec<(String, u8)>,
}

impl TokenMap {
    pub fn entries(&self) -> &[(String, u8)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_of(&self, name: &str) -> Option<u8> {
        if name == WILDCARD {
            return None;
        }
        self.entries.iter().find(|(n, _)| n == name).map(|&(_, t)| t)
    }

    pub fn name_of(&self, token: u8) -> Option<&str> {
        self.entries
            .iter()
            .find(|&&(_, t)| t == token)
            .map(|(n, _)| n.as_str())
    }

    fn intern(&mut self, name: &str, unit: &str) -> Result<u8, EncodeError> {
        if let Some(t) = self.token_of(name) {
            return Ok(t);
        }
        if self.entries.len() == MAX_TOKENS {
            return Err(EncodeError::TokenOverflow { unit: unit.into() });
        }
        let t = sym::FIRST_TOKEN + self.entries.len() as u8;
        self.entries.push((name.to_string(), t));
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Source {
    Rule(String),
    Participant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EncodedString {
    pub bytes: Vec<u8>,
    pub token_map: TokenMap,
    pub source: Source,
}

impl EncodedString {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.bytes).expect("encodings are ASCII")
    }
}

fn encode_blocks<'a>(
    blocks: impl Iterator<Item = (PatternRole, &'a GraphPattern)>,
    flag_bytes: &[u8],
    unit: &str,
) -> Result<(Vec<u8>, TokenMap), EncodeError> {
    let mut bytes = vec![sym::RULE];
    let mut tokens = TokenMap::default();
    for (role, p) in blocks {
        bytes.push(match role {
            PatternRole::Lhs => sym::LHS,
            PatternRole::Rhs => sym::RHS,
            PatternRole::Nac(_) => sym::NAC,
        });
        let mut node_tok: HashMap<&str, u8> = HashMap::new();
        for el in canonical_order(p) {
            match el {
                ElementRef::Node(i) => {
                    let n = &p.nodes[i];
                    let t = tokens.intern(&n.ty, unit)?;
                    node_tok.insert(&n.id, t);
                    bytes.extend([sym::NODE, t]);
                }
                ElementRef::Edge(i) => {
                    let e = &p.edges[i];
                    let t = tokens.intern(&e.ty, unit)?;
                    bytes.extend([sym::EDGE, t, node_tok[e.src.as_str()], node_tok[e.tgt.as_str()]]);
                }
                ElementRef::Attr(i) => {
                    let a = &p.attrs[i];
                    let owner = node_tok[a.owner.as_str()];
                    if a.op.is_bind() {
                        bytes.extend([sym::BIND, owner]);
                    } else {
                        bytes.extend([sym::ATTR, owner, op_symbol(a.op)]);
                    }
                }
            }
        }
    }
    bytes.push(sym::CONTROL);
    bytes.extend_from_slice(flag_bytes);
    Ok((bytes, tokens))
}

/// Token table for a sequence of blocks walked in encoding order.
pub fn assign_tokens(blocks: &[&GraphPattern]) -> Result<TokenMap, EncodeError> {
    let roles = blocks.iter().enumerate().map(|(i, p)| {
        let role = match i {
            0 => PatternRole::Lhs,
            1 => PatternRole::Rhs,
            k => PatternRole::Nac(k - 2),
        };
        (role, *p)
    });
    encode_blocks(roles, &[], "pattern").map(|(_, t)| t)
}

fn rule_flag_bytes(f: &ControlFlags) -> Vec<u8> {
    [
        (f.seq_pos.is_some(), sym::FLAG_SEQ),
        (f.in_loop, sym::FLAG_LOOP),
        (f.self_loop, sym::FLAG_SELF_LOOP),
        (f.in_branch, sym::FLAG_BRANCH),
    ]
    .into_iter()
    .filter_map(|(on, b)| on.then_some(b))
    .collect()
}

fn requirement_flag_bytes(r: &ControlRequirement) -> Vec<u8> {
    [
        (r.sequenced, sym::FLAG_SEQ),
        (r.in_loop, sym::FLAG_LOOP),
        (r.self_loop, sym::FLAG_SELF_LOOP),
        (r.in_branch, sym::FLAG_BRANCH),
    ]
    .into_iter()
    .filter_map(|(req, b)| (req == Some(true)).then_some(b))
    .collect()
}

pub fn encode_rule(rule: &Rule, flags: &ControlFlags) -> Result<EncodedString, EncodeError> {
    let unit = format!("rule `{}`", rule.name);
    let (bytes, token_map) = encode_blocks(rule.blocks(), &rule_flag_bytes(flags), &unit)?;
    Ok(EncodedString {
        bytes,
        token_map,
        source: Source::Rule(rule.name.clone()),
    })
}

/// Encode a participant. Only flags the participant requires to be `true`
/// are emitted; unconstrained flags cost nothing when matched.
pub fn encode_participant(part: &Participant) -> Result<EncodedString, EncodeError> {
    let unit = format!("participant `{}`", part.role);
    let (bytes, token_map) = encode_blocks(
        part.template.blocks(),
        &requirement_flag_bytes(&part.control),
        &unit,
    )?;
    Ok(EncodedString {
        bytes,
        token_map,
        source: Source::Participant(part.role.clone()),
    })
}

/// One structural item of an encoding, recovered by [`decode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    Rule,
    Block(u8),
    Node { ty: u8 },
    Edge { ty: u8, src: u8, tgt: u8 },
    Attr { owner: u8, op: u8 },
    Bind { owner: u8 },
    Control,
    Flag(u8),
}

impl Item {
    fn width(self) -> usize {
        match self {
            Item::Node { .. } | Item::Bind { .. } => 2,
            Item::Attr { .. } => 3,
            Item::Edge { .. } => 4,
            _ => 1,
        }
    }
}

fn is_token(b: u8) -> bool {
    (sym::FIRST_TOKEN..=sym::LAST_TOKEN).contains(&b)
}

/// Parse an encoding back into its items.
pub fn decode(bytes: &[u8]) -> Result<Vec<Item>, DecodeError> {
    let err = |pos: usize, message: &str| DecodeError {
        pos,
        message: message.into(),
    };
    let tok = |pos: usize| -> Result<u8, DecodeError> {
        match bytes.get(pos) {
            Some(&b) if is_token(b) => Ok(b),
            _ => Err(err(pos, "expected a type token")),
        }
    };
    if bytes.first() != Some(&sym::RULE) {
        return Err(err(0, "encoding must start with R"));
    }
    let mut items = vec![Item::Rule];
    let mut pos = 1;
    // L, then G, then any number of N
    let mut blocks_seen = 0;
    loop {
        let Some(&b) = bytes.get(pos) else {
            return Err(err(pos, "missing control block"));
        };
        let item = match b {
            sym::NODE => Item::Node { ty: tok(pos + 1)? },
            sym::EDGE => Item::Edge {
                ty: tok(pos + 1)?,
                src: tok(pos + 2)?,
                tgt: tok(pos + 3)?,
            },
            sym::ATTR => match bytes.get(pos + 2) {
                Some(&op @ (sym::OP_EQ | sym::OP_NEQ | sym::OP_LT | sym::OP_GT | sym::OP_OTHER)) => {
                    Item::Attr {
                        owner: tok(pos + 1)?,
                        op,
                    }
                }
                _ => return Err(err(pos + 2, "expected an operator symbol")),
            },
            sym::BIND => Item::Bind { owner: tok(pos + 1)? },
            sym::CONTROL if blocks_seen >= 2 => Item::Control,
            sym::LHS | sym::RHS | sym::NAC => {
                let want = match blocks_seen {
                    0 => sym::LHS,
                    1 => sym::RHS,
                    _ => sym::NAC,
                };
                if b != want {
                    return Err(err(pos, "block marker out of order"));
                }
                blocks_seen += 1;
                Item::Block(b)
            }
            _ => return Err(err(pos, "unexpected byte")),
        };
        if blocks_seen == 0 {
            return Err(err(pos, "element before the first block"));
        }
        pos += item.width();
        items.push(item);
        if item == Item::Control {
            break;
        }
    }
    let mut last = None;
    for (i, &b) in bytes[pos..].iter().enumerate() {
        let rank = [sym::FLAG_SEQ, sym::FLAG_LOOP, sym::FLAG_SELF_LOOP, sym::FLAG_BRANCH]
            .iter()
            .position(|&f| f == b)
            .ok_or_else(|| err(pos + i, "unknown control flag"))?;
        if last.is_some_and(|l| l >= rank) {
            return Err(err(pos + i, "control flags out of order"));
        }
        last = Some(rank);
        items.push(Item::Flag(b));
    }
    Ok(items)
}

/// Byte positions holding type tokens.
fn token_positions(bytes: &[u8]) -> Vec<usize> {
    let items = decode(bytes).expect("remapping a well-formed encoding");
    let mut out = Vec::new();
    let mut pos = 0;
    for it in items {
        match it {
            Item::Node { .. } | Item::Attr { .. } | Item::Bind { .. } => out.push(pos + 1),
            Item::Edge { .. } => out.extend([pos + 1, pos + 2, pos + 3]),
            _ => {}
        }
        pos += it.width();
    }
    out
}

/// Renames the type tokens of one encoding under permutations of its tokens.
#[derive(Debug, Clone)]
pub struct Remapper {
    bytes: Vec<u8>,
    positions: Vec<usize>,
    /// sorted distinct tokens used by the encoding
    used: Vec<u8>,
}

impl Remapper {
    pub fn new(bytes: &[u8]) -> Self {
        let positions = token_positions(bytes);
        let mut used: Vec<u8> = positions.iter().map(|&p| bytes[p]).collect();
        used.sort_unstable();
        used.dedup();
        Remapper {
            bytes: bytes.to_vec(),
            positions,
            used,
        }
    }

    pub fn used_tokens(&self) -> &[u8] {
        &self.used
    }

    /// Image of every used token under `perm`: token `used[j]` maps to `used[perm[j]]`.
    pub fn mapping(&self, perm: &[usize]) -> Vec<(u8, u8)> {
        self.used
            .iter()
            .zip(perm)
            .map(|(&from, &j)| (from, self.used[j]))
            .collect()
    }

    pub fn apply(&self, perm: &[usize]) -> Vec<u8> {
        let mut out = self.bytes.clone();
        let mut image = [0u8; 256];
        for (j, &from) in self.used.iter().enumerate() {
            image[from as usize] = self.used[perm[j]];
        }
        for &p in &self.positions {
            out[p] = image[self.bytes[p] as usize];
        }
        out
    }

    /// Permutations of the used tokens in lexicographic order, identity first.
    pub fn permutations(&self) -> Permutations {
        Permutations {
            next: Some((0..self.used.len()).collect()),
        }
    }

    pub fn permutation_count(&self) -> u128 {
        (1..=self.used.len() as u128).product()
    }
}

pub struct Permutations {
    next: Option<Vec<usize>>,
}

impl Iterator for Permutations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        // standard next-permutation step
        if let Some(i) = (1..succ.len()).rev().find(|&i| succ[i - 1] < succ[i]) {
            let j = (i..succ.len()).rev().find(|&j| succ[j] > succ[i - 1]).unwrap();
            succ.swap(i - 1, j);
            succ[i..].reverse();
            self.next = Some(succ);
        }
        Some(cur)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remappings {
    pub strings: Vec<Vec<u8>>,
    pub truncated: bool,
}

/// The encoding under every permutation of its tokens, at most `cap` of them.
pub fn token_remappings(s: &EncodedString, cap: usize) -> Remappings {
    let r = Remapper::new(&s.bytes);
    let strings = r.permutations().take(cap.max(1)).map(|p| r.apply(&p)).collect();
    Remappings {
        strings,
        truncated: r.permutation_count() > cap.max(1) as u128,
    }
}
