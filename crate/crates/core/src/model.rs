//! Transformation model and the `.mtj` interchange format.
//!
//! A [`Transformation`] is an ordered list of rewrite [`Rule`]s tied together by
//! a [`ControlScheme`]. Each rule carries a left-hand side, a right-hand side and
//! zero or more negative application conditions, all expressed as typed
//! [`GraphPattern`]s. Attribute conditions are reduced to an operator category
//! and an opaque value; the value text never takes part in matching.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transformation {
    pub name: String,
    pub rules: Vec<Rule>,
    pub control: ControlScheme,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub name: String,
    pub lhs: GraphPattern,
    pub rhs: GraphPattern,
    #[serde(default)]
    pub nacs: Vec<GraphPattern>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphPattern {
    #[serde(default)]
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub attrs: Vec<AttrCond>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    #[serde(rename = "type")]
    pub ty: String,
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrCond {
    pub owner: String,
    pub name: String,
    pub op: AttrOp,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrOp {
    Eq,
    Neq,
    Lt,
    Gt,
    Bind,
    Other,
}

impl AttrOp {
    pub fn is_bind(self) -> bool {
        self == AttrOp::Bind
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlScheme {
    pub kind: ControlKind,
    #[serde(default)]
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<CtrlEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Sequence,
    Priority,
    Layered,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub rule: String,
    pub order: u32,
    #[serde(rename = "loop")]
    pub looping: bool,
    pub branch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtrlEdge {
    pub from: String,
    pub to: String,
    pub kind: CtrlEdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CtrlEdgeKind {
    #[serde(rename = "seq")]
    Seq,
    #[serde(rename = "loop-back")]
    LoopBack,
    #[serde(rename = "branch")]
    Branch,
}

/// Where a graph pattern sits inside its rule. `bind` is only legal on the
/// right-hand side, comparisons only on the left-hand side and in NACs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternRole {
    Lhs,
    Rhs,
    Nac(usize),
}

impl PatternRole {
    fn label(self) -> String {
        match self {
            PatternRole::Lhs => "lhs".into(),
            PatternRole::Rhs => "rhs".into(),
            PatternRole::Nac(i) => format!("nacs[{i}]"),
        }
    }
}

impl Rule {
    /// The rule's patterns in encoding order: LHS, RHS, then NACs.
    pub fn blocks(&self) -> impl Iterator<Item = (PatternRole, &GraphPattern)> {
        [(PatternRole::Lhs, &self.lhs), (PatternRole::Rhs, &self.rhs)]
            .into_iter()
            .chain(self.nacs.iter().enumerate().map(|(i, p)| (PatternRole::Nac(i), p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DuplicateRule,
    DuplicateNode,
    UnknownNode,
    UnknownRule,
    BindInLhs,
    CompareInRhs,
    EmptyName,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    pub location: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("reference error at {location}: unknown {what} `{name}`")]
    Reference {
        location: String,
        what: &'static str,
        name: String,
    },
    #[error("duplicate id `{name}` at {location}")]
    DuplicateId { location: String, name: String },
    #[error("invalid transformation at {location}: {message} ({code})")]
    Invalid {
        code: ViolationCode,
        location: String,
        message: String,
    },
}

/// Parse an `.mtj` document. The returned transformation satisfies every
/// structural invariant; anything [`validate`] would flag is turned into an
/// error instead.
pub fn parse_transformation(doc: &str) -> Result<Transformation, ModelError> {
    let t: Transformation = serde_json::from_str(doc).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if let Some(v) = validate(&t).into_iter().next() {
        return Err(violation_to_error(v));
    }
    Ok(t)
}

fn violation_to_error(v: Violation) -> ModelError {
    let name = v
        .message
        .split('`')
        .nth(1)
        .unwrap_or_default()
        .to_string();
    match v.code {
        ViolationCode::UnknownNode => ModelError::Reference {
            location: v.location,
            what: "node id",
            name,
        },
        ViolationCode::UnknownRule => ModelError::Reference {
            location: v.location,
            what: "rule",
            name,
        },
        ViolationCode::DuplicateRule | ViolationCode::DuplicateNode => ModelError::DuplicateId {
            location: v.location,
            name,
        },
        code => ModelError::Invalid {
            code,
            location: v.location,
            message: v.message,
        },
    }
}

/// Serialize to the interchange format. Keys follow declaration order and
/// lists keep their element order, so `parse_transformation` inverts this.
pub fn to_mtj(t: &Transformation) -> String {
    serde_json::to_string_pretty(t).expect("transformation is always serializable")
}

/// Check a single graph pattern. `location` prefixes every reported location.
pub fn validate_pattern(p: &GraphPattern, role: PatternRole, location: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    let loc = format!("{location}.{}", role.label());
    let mut ids = HashSet::new();
    for (i, n) in p.nodes.iter().enumerate() {
        if n.id.is_empty() {
            out.push(Violation {
                code: ViolationCode::EmptyName,
                message: "node id is empty".into(),
                location: format!("{loc}.nodes[{i}]"),
            });
        }
        if !ids.insert(n.id.as_str()) {
            out.push(Violation {
                code: ViolationCode::DuplicateNode,
                message: format!("node id `{}` declared twice", n.id),
                location: format!("{loc}.nodes[{i}]"),
            });
        }
    }
    for (i, e) in p.edges.iter().enumerate() {
        for (field, id) in [("src", &e.src), ("tgt", &e.tgt)] {
            if !ids.contains(id.as_str()) {
                out.push(Violation {
                    code: ViolationCode::UnknownNode,
                    message: format!("edge {field} references undeclared node `{id}`"),
                    location: format!("{loc}.edges[{i}].{field}"),
                });
            }
        }
    }
    for (i, a) in p.attrs.iter().enumerate() {
        if !ids.contains(a.owner.as_str()) {
            out.push(Violation {
                code: ViolationCode::UnknownNode,
                message: format!("attribute owner references undeclared node `{}`", a.owner),
                location: format!("{loc}.attrs[{i}].owner"),
            });
        }
        match (role, a.op.is_bind()) {
            (PatternRole::Rhs, false) => out.push(Violation {
                code: ViolationCode::CompareInRhs,
                message: format!("comparison on `{}` inside a right-hand side", a.name),
                location: format!("{loc}.attrs[{i}]"),
            }),
            (PatternRole::Lhs | PatternRole::Nac(_), true) => out.push(Violation {
                code: ViolationCode::BindInLhs,
                message: format!("assignment to `{}` outside the right-hand side", a.name),
                location: format!("{loc}.attrs[{i}]"),
            }),
            _ => {}
        }
    }
    out
}

/// Report every violated invariant. Violations are data: an empty list means
/// the transformation is well formed.
pub fn validate(t: &Transformation) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for (ri, rule) in t.rules.iter().enumerate() {
        let loc = format!("rules[{ri}]");
        if rule.name.is_empty() {
            out.push(Violation {
                code: ViolationCode::EmptyName,
                message: "rule name is empty".into(),
                location: loc.clone(),
            });
        }
        if !names.insert(rule.name.as_str()) {
            out.push(Violation {
                code: ViolationCode::DuplicateRule,
                message: format!("rule `{}` declared twice", rule.name),
                location: format!("{loc}.name"),
            });
        }
        for (role, p) in rule.blocks() {
            out.extend(validate_pattern(p, role, &loc));
        }
    }
    for (i, s) in t.control.steps.iter().enumerate() {
        if !names.contains(s.rule.as_str()) {
            out.push(Violation {
                code: ViolationCode::UnknownRule,
                message: format!("control step names unknown rule `{}`", s.rule),
                location: format!("control.steps[{i}].rule"),
            });
        }
    }
    for (i, e) in t.control.edges.iter().enumerate() {
        for (field, r) in [("from", &e.from), ("to", &e.to)] {
            if !names.contains(r.as_str()) {
                out.push(Violation {
                    code: ViolationCode::UnknownRule,
                    message: format!("control edge names unknown rule `{r}`"),
                    location: format!("control.edges[{i}].{field}"),
                });
            }
        }
    }
    out
}

/// Per-rule projection of the control scheme, used by the encoder and by
/// `control_before` relation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlFlags {
    pub seq_pos: Option<u32>,
    pub in_loop: bool,
    pub self_loop: bool,
    pub in_branch: bool,
}

/// Project the control scheme onto per-rule flags, aligned with `t.rules`.
///
/// For `sequence`, `priority` and `layered` schemes a step's `order` becomes
/// `seq_pos`; a looping step is a rule re-applied to itself, so it sets both
/// `in_loop` and `self_loop`. For `graph` schemes loop membership comes from
/// cycles over `seq`/`loop-back` edges, and `seq_pos` still comes from any
/// step listed for the rule. Rules without a step get no position.
pub fn normalize_control(t: &Transformation) -> Vec<ControlFlags> {
    let index: HashMap<&str, usize> = t
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.as_str(), i))
        .collect();
    let mut flags = vec![ControlFlags::default(); t.rules.len()];
    for s in &t.control.steps {
        let Some(&i) = index.get(s.rule.as_str()) else {
            continue;
        };
        let f = &mut flags[i];
        // first step wins when a rule is listed more than once
        if f.seq_pos.is_none() {
            f.seq_pos = Some(s.order);
        }
        if t.control.kind != ControlKind::Graph {
            f.in_loop |= s.looping;
            f.self_loop |= s.looping;
            f.in_branch |= s.branch;
        }
    }
    if t.control.kind == ControlKind::Graph {
        let n = t.rules.len();
        let mut succ = vec![Vec::new(); n];
        for e in &t.control.edges {
            let (Some(&a), Some(&b)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) else {
                continue;
            };
            match e.kind {
                CtrlEdgeKind::Seq => succ[a].push(b),
                CtrlEdgeKind::LoopBack => {
                    succ[a].push(b);
                    if a == b {
                        flags[a].self_loop = true;
                    }
                }
                CtrlEdgeKind::Branch => flags[b].in_branch = true,
            }
        }
        for (i, f) in flags.iter_mut().enumerate() {
            f.in_loop = reaches(&succ, i, i);
        }
    }
    flags
}

/// True iff `to` is reachable from `from` by a path of at least one edge.
fn reaches(succ: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; succ.len()];
    let mut stack: Vec<usize> = succ[from].clone();
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend(&succ[v]);
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"name":"T","rules":[{"name":"r1","lhs":{"nodes":[{"id":"c","type":"Class"}],"edges":[],"attrs":[]},"rhs":{"nodes":[],"edges":[],"attrs":[]},"nacs":[]}],"control":{"kind":"sequence","steps":[{"rule":"r1","order":0,"loop":false,"branch":false}]}}"#;

    fn node(id: &str, ty: &str) -> Node {
        Node {
            id: id.into(),
            ty: ty.into(),
        }
    }

    fn rule(name: &str) -> Rule {
        Rule {
            name: name.into(),
            lhs: GraphPattern::default(),
            rhs: GraphPattern::default(),
            nacs: vec![],
        }
    }

    fn step(rule: &str, order: u32, looping: bool) -> Step {
        Step {
            rule: rule.into(),
            order,
            looping,
            branch: false,
        }
    }

    fn graph(rules: &[&str], edges: &[(&str, &str, CtrlEdgeKind)]) -> Transformation {
        Transformation {
            name: "G".into(),
            rules: rules.iter().map(|r| rule(r)).collect(),
            control: ControlScheme {
                kind: ControlKind::Graph,
                steps: vec![],
                edges: edges
                    .iter()
                    .map(|&(from, to, kind)| CtrlEdge {
                        from: from.into(),
                        to: to.into(),
                        kind,
                    })
                    .collect(),
            },
        }
    }

    #[test]
    fn parses_minimal_document() {
        let t = parse_transformation(MINIMAL).unwrap();
        assert_eq!(t.name, "T");
        assert_eq!(t.rules.len(), 1);
        assert_eq!(t.rules[0].lhs.nodes, vec![node("c", "Class")]);
    }

    #[test]
    fn undeclared_edge_endpoint_is_a_reference_error() {
        let doc = MINIMAL.replace(
            r#""edges":[],"attrs":[]},"rhs""#,
            r#""edges":[{"type":"e","src":"x","tgt":"c"}],"attrs":[]},"rhs""#,
        );
        match parse_transformation(&doc) {
            Err(ModelError::Reference { name, .. }) => assert_eq!(name, "x"),
            other => panic!("expected reference error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_rule_names_are_rejected() {
        let doc = MINIMAL.replace(
            r#""nacs":[]}]"#,
            r#""nacs":[]},{"name":"r1","lhs":{},"rhs":{}}]"#,
        );
        assert!(matches!(
            parse_transformation(&doc),
            Err(ModelError::DuplicateId { name, .. }) if name == "r1"
        ));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_transformation("{\n  \"name\": \"T\",\n  oops }").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_fields_and_control_kinds_are_rejected() {
        let extra = MINIMAL.replacen(r#"{"name":"T","#, r#"{"name":"T","extra":1,"#, 1);
        assert!(matches!(parse_transformation(&extra), Err(ModelError::Syntax { .. })));
        let kind = MINIMAL.replace("\"sequence\"", "\"random\"");
        assert!(matches!(parse_transformation(&kind), Err(ModelError::Syntax { .. })));
    }

    #[test]
    fn validate_reports_codes() {
        let mut t = parse_transformation(MINIMAL).unwrap();
        assert!(validate(&t).is_empty());

        t.control.steps.push(step("rX", 1, false));
        let v = validate(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::UnknownRule);

        t.control.steps.pop();
        t.rules[0].lhs.attrs.push(AttrCond {
            owner: "c".into(),
            name: "name".into(),
            op: AttrOp::Bind,
            value: "x".into(),
        });
        let v = validate(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::BindInLhs);
        assert_eq!(v[0].location, "rules[0].lhs.attrs[0]");
    }

    #[test]
    fn bind_in_lhs_is_rejected_by_the_parser() {
        let doc = MINIMAL.replace(
            r#""edges":[],"attrs":[]},"rhs""#,
            r#""edges":[],"attrs":[{"owner":"c","name":"n","op":"bind","value":"1"}]},"rhs""#,
        );
        assert!(matches!(
            parse_transformation(&doc),
            Err(ModelError::Invalid {
                code: ViolationCode::BindInLhs,
                ..
            })
        ));
    }

    #[test]
    fn round_trip_preserves_values() {
        let t = parse_transformation(MINIMAL).unwrap();
        assert_eq!(parse_transformation(&to_mtj(&t)).unwrap(), t);
    }

    #[test]
    fn sequence_projection() {
        let t = Transformation {
            name: "S".into(),
            rules: vec![rule("r1"), rule("r2")],
            control: ControlScheme {
                kind: ControlKind::Sequence,
                steps: vec![step("r1", 0, false), step("r2", 1, true)],
                edges: vec![],
            },
        };
        let f = normalize_control(&t);
        assert_eq!((f[0].seq_pos, f[0].in_loop), (Some(0), false));
        assert_eq!((f[1].seq_pos, f[1].in_loop), (Some(1), true));
    }

    #[test]
    fn graph_two_cycle_marks_both_rules() {
        let t = graph(
            &["r1", "r2"],
            &[("r1", "r2", CtrlEdgeKind::Seq), ("r2", "r1", CtrlEdgeKind::LoopBack)],
        );
        let f = normalize_control(&t);
        assert!(f[0].in_loop && f[1].in_loop);
        assert!(!f[0].self_loop && !f[1].self_loop);
    }

    #[test]
    fn graph_self_loop() {
        let t = graph(&["r1"], &[("r1", "r1", CtrlEdgeKind::LoopBack)]);
        let f = normalize_control(&t);
        assert!(f[0].self_loop && f[0].in_loop);
    }

    #[test]
    fn graph_branch_edges_do_not_close_cycles() {
        let t = graph(
            &["r1", "r2", "r3"],
            &[
                ("r1", "r2", CtrlEdgeKind::Seq),
                ("r2", "r1", CtrlEdgeKind::Branch),
                ("r2", "r3", CtrlEdgeKind::Branch),
            ],
        );
        let f = normalize_control(&t);
        assert!(f.iter().all(|f| !f.in_loop));
        assert!(f[0].in_branch && f[2].in_branch && !f[1].in_branch);
    }
}
