//! Data-driven pattern definitions (`.mtp` files).
//!
//! A pattern is a set of participants, each a rule template whose type names
//! are role variables (`?T1`, `?E2`, ...) or the wildcard `?_`, plus relations
//! that constrain how participant matches combine. Detection never needs code
//! per pattern: adding a pattern means adding a catalog file.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_pattern, GraphPattern, PatternRole};

/// Environment variable that replaces the bundled catalog directory.
pub const CATALOG_DIR_ENV: &str = "MTPD_CATALOG_DIR";

pub const WILDCARD: &str = "?_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub participants: Vec<Participant>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participant {
    pub role: String,
    pub template: Template,
    #[serde(default, skip_serializing_if = "ControlRequirement::is_unconstrained")]
    pub control: ControlRequirement,
    #[serde(default)]
    pub optional: bool,
}

/// Rule-shaped participant body; type names are role variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    #[serde(default)]
    pub lhs: GraphPattern,
    #[serde(default)]
    pub rhs: GraphPattern,
    #[serde(default)]
    pub nacs: Vec<GraphPattern>,
}

impl Template {
    pub fn blocks(&self) -> impl Iterator<Item = (PatternRole, &GraphPattern)> {
        [(PatternRole::Lhs, &self.lhs), (PatternRole::Rhs, &self.rhs)]
            .into_iter()
            .chain(self.nacs.iter().enumerate().map(|(i, p)| (PatternRole::Nac(i), p)))
    }

    /// Role variables used by the template, wildcard excluded.
    pub fn variables(&self) -> BTreeSet<&str> {
        self.blocks()
            .flat_map(|(_, p)| {
                p.nodes
                    .iter()
                    .map(|n| n.ty.as_str())
                    .chain(p.edges.iter().map(|e| e.ty.as_str()))
            })
            .filter(|v| *v != WILDCARD)
            .collect()
    }
}

/// Control flags a participant demands of a matching rule. `None` leaves the
/// flag unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRequirement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequenced: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_loop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_loop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_branch: Option<bool>,
}

impl ControlRequirement {
    pub fn is_unconstrained(&self) -> bool {
        *self == Self::default()
    }
}

/// A role-qualified variable such as `iterate.?T1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub role: String,
    pub var: String,
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.role, self.var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRelation", into = "RawRelation")]
pub enum Relation {
    SameType(VarRef, VarRef),
    ControlBefore(String, String),
    DistinctRules(String, String),
}

impl Relation {
    pub fn roles(&self) -> (&str, &str) {
        match self {
            Relation::SameType(a, b) => (&a.role, &b.role),
            Relation::ControlBefore(a, b) | Relation::DistinctRules(a, b) => (a, b),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::SameType(a, b) => write!(f, "same_type({a}, {b})"),
            Relation::ControlBefore(a, b) => write!(f, "control_before({a}, {b})"),
            Relation::DistinctRules(a, b) => write!(f, "distinct_rules({a}, {b})"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelation {
    kind: String,
    operands: Vec<String>,
}

impl TryFrom<RawRelation> for Relation {
    type Error = String;

    fn try_from(raw: RawRelation) -> Result<Self, Self::Error> {
        let [a, b] = <[String; 2]>::try_from(raw.operands)
            .map_err(|ops| format!("relation `{}` needs 2 operands, got {}", raw.kind, ops.len()))?;
        match raw.kind.as_str() {
            "same_type" => Ok(Relation::SameType(split_var(&a)?, split_var(&b)?)),
            "control_before" => Ok(Relation::ControlBefore(a, b)),
            "distinct_rules" => Ok(Relation::DistinctRules(a, b)),
            other => Err(format!("unknown relation kind `{other}`")),
        }
    }
}

impl From<Relation> for RawRelation {
    fn from(r: Relation) -> Self {
        let (kind, operands) = match r {
            Relation::SameType(a, b) => ("same_type", vec![a.to_string(), b.to_string()]),
            Relation::ControlBefore(a, b) => ("control_before", vec![a, b]),
            Relation::DistinctRules(a, b) => ("distinct_rules", vec![a, b]),
        };
        RawRelation {
            kind: kind.into(),
            operands,
        }
    }
}

fn split_var(s: &str) -> Result<VarRef, String> {
    match s.split_once('.') {
        Some((role, var)) if !role.is_empty() && var.starts_with('?') => Ok(VarRef {
            role: role.into(),
            var: var.into(),
        }),
        _ => Err(format!("`{s}` is not a role-qualified variable (role.?Var)")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub k_exact: u32,
    pub k_approx: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("relation {relation} names undeclared role `{role}`")]
    UnknownRole { relation: String, role: String },
    #[error("relation {relation} names variable `{var}` not used by role `{role}`")]
    UnknownVariable {
        relation: String,
        role: String,
        var: String,
    },
    #[error("pattern `{0}` has no mandatory participant")]
    NoMandatoryParticipant(String),
    #[error("invalid pattern: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("no pattern named `{0}` in the catalog")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Pattern { path: String, source: PatternError },
}

fn is_role_variable(s: &str) -> bool {
    s.strip_prefix('?').is_some_and(|rest| {
        !rest.is_empty() && rest.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    })
}

pub fn parse_pattern(doc: &str) -> Result<PatternSpec, PatternError> {
    let spec: PatternSpec = serde_json::from_str(doc).map_err(|e| PatternError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    check_pattern(&spec)?;
    Ok(spec)
}

/// Check every [`PatternSpec`] invariant.
pub fn check_pattern(spec: &PatternSpec) -> Result<(), PatternError> {
    if spec.name.is_empty() {
        return Err(PatternError::Invalid("pattern name is empty".into()));
    }
    if spec.thresholds.k_exact != 0 {
        return Err(PatternError::Invalid(format!(
            "k_exact must be 0, got {}",
            spec.thresholds.k_exact
        )));
    }
    if spec.thresholds.k_approx < 1 {
        return Err(PatternError::Invalid("k_approx must be at least 1".into()));
    }
    let mut roles = HashSet::new();
    for p in &spec.participants {
        if p.role.is_empty() || !roles.insert(p.role.as_str()) {
            return Err(PatternError::Invalid(format!(
                "participant role `{}` is empty or declared twice",
                p.role
            )));
        }
        for (block, g) in p.template.blocks() {
            if let Some(v) = validate_pattern(g, block, &p.role).into_iter().next() {
                return Err(PatternError::Invalid(format!("{}: {}", v.location, v.message)));
            }
            let types = g.nodes.iter().map(|n| &n.ty).chain(g.edges.iter().map(|e| &e.ty));
            if let Some(bad) = types.into_iter().find(|t| !is_role_variable(t)) {
                return Err(PatternError::Invalid(format!(
                    "participant `{}` uses `{bad}` where a role variable (?Name) is required",
                    p.role
                )));
            }
        }
    }
    if spec.participants.iter().all(|p| p.optional) {
        return Err(PatternError::NoMandatoryParticipant(spec.name.clone()));
    }
    for r in &spec.relations {
        let (a, b) = r.roles();
        for role in [a, b] {
            if !roles.contains(role) {
                return Err(PatternError::UnknownRole {
                    relation: r.to_string(),
                    role: role.into(),
                });
            }
        }
        if let Relation::SameType(x, y) = r {
            for v in [x, y] {
                let part = spec.participant(&v.role).expect("role checked above");
                if v.var == WILDCARD || !part.template.variables().contains(v.var.as_str()) {
                    return Err(PatternError::UnknownVariable {
                        relation: r.to_string(),
                        role: v.role.clone(),
                        var: v.var.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

impl PatternSpec {
    pub fn participant(&self, role: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.role == role)
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.participants.iter().position(|p| p.role == role)
    }

    pub fn to_mtp(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern is always serializable")
    }
}

const BUNDLED: [(&str, &str); 4] = [
    (
        "fixed_point_iteration",
        include_str!("../catalog/fixed_point_iteration.mtp"),
    ),
    (
        "entities_before_relations",
        include_str!("../catalog/entities_before_relations.mtp"),
    ),
    ("visitor", include_str!("../catalog/visitor.mtp")),
    (
        "transitive_closure",
        include_str!("../catalog/transitive_closure.mtp"),
    ),
];

/// The patterns shipped with the crate.
pub fn builtin_catalog() -> Vec<PatternSpec> {
    BUNDLED
        .iter()
        .map(|(name, doc)| {
            parse_pattern(doc).unwrap_or_else(|e| panic!("bundled pattern {name} is invalid: {e}"))
        })
        .collect()
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn load_pattern_file(path: &Path) -> Result<PatternSpec, CatalogError> {
    let doc = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pattern(&doc).map_err(|source| CatalogError::Pattern {
        path: path.display().to_string(),
        source,
    })
}

/// Resolve a `--pattern` argument: an existing file path, a name in the
/// directory named by [`CATALOG_DIR_ENV`], or a bundled pattern name.
pub fn resolve_pattern(name_or_path: &str) -> Result<PatternSpec, CatalogError> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return load_pattern_file(path);
    }
    if let Some(dir) = std::env::var_os(CATALOG_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{name_or_path}.mtp"));
        if candidate.is_file() {
            return load_pattern_file(&candidate);
        }
        return Err(CatalogError::NotFound(name_or_path.into()));
    }
    builtin_catalog()
        .into_iter()
        .find(|p| p.name == name_or_path)
        .ok_or_else(|| CatalogError::NotFound(name_or_path.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED_POINT: &str = r#"{
      "name": "fp",
      "participants": [
        {"role": "iterate",
         "template": {"lhs": {"nodes": [{"id": "x", "type": "?T1"}]},
                      "rhs": {"nodes": [{"id": "x", "type": "?T1"}]}},
         "control": {"in_loop": true}},
        {"role": "terminate",
         "template": {"lhs": {"nodes": [{"id": "x", "type": "?T1"}]}}}
      ],
      "relations": [{"kind": "same_type", "operands": ["iterate.?T1", "terminate.?T1"]}],
      "thresholds": {"k_exact": 0, "k_approx": 2}
    }"#;

    #[test]
    fn parses_two_participant_pattern() {
        let p = parse_pattern(FIXED_POINT).unwrap();
        assert_eq!(p.participants.len(), 2);
        assert_eq!(p.relations.len(), 1);
        assert_eq!(p.participants[0].control.in_loop, Some(true));
    }

    #[test]
    fn unknown_role_in_relation() {
        let doc = FIXED_POINT.replace("\"terminate.?T1\"", "\"foo.?T1\"");
        assert!(matches!(
            parse_pattern(&doc),
            Err(PatternError::UnknownRole { role, .. }) if role == "foo"
        ));
    }

    #[test]
    fn unknown_variable_in_relation() {
        let doc = FIXED_POINT.replace("\"terminate.?T1\"", "\"terminate.?T9\"");
        assert!(matches!(parse_pattern(&doc), Err(PatternError::UnknownVariable { .. })));
    }

    #[test]
    fn all_optional_is_rejected() {
        let doc = FIXED_POINT
            .replace("\"control\": {\"in_loop\": true}}", "\"control\": {\"in_loop\": true}, \"optional\": true}")
            .replace("\"type\": \"?T1\"}]}}}", "\"type\": \"?T1\"}]}}, \"optional\": true}");
        assert!(matches!(
            parse_pattern(&doc),
            Err(PatternError::NoMandatoryParticipant(_))
        ));
    }

    #[test]
    fn thresholds_are_checked() {
        let doc = FIXED_POINT.replace("\"k_approx\": 2", "\"k_approx\": 0");
        assert!(matches!(parse_pattern(&doc), Err(PatternError::Invalid(_))));
        let doc = FIXED_POINT.replace("\"k_exact\": 0", "\"k_exact\": 1");
        assert!(matches!(parse_pattern(&doc), Err(PatternError::Invalid(_))));
    }

    #[test]
    fn concrete_type_names_are_rejected_in_templates() {
        let doc = FIXED_POINT.replacen("\"?T1\"", "\"Class\"", 1);
        assert!(matches!(parse_pattern(&doc), Err(PatternError::Invalid(_))));
    }

    #[test]
    fn builtin_catalog_ships_four_valid_patterns() {
        let cat = builtin_catalog();
        let names: Vec<_> = cat.iter().map(|p| p.name.as_str()).collect();
        for n in [
            "fixed_point_iteration",
            "entities_before_relations",
            "visitor",
            "transitive_closure",
        ] {
            assert!(names.contains(&n), "missing {n}");
        }
        assert!(cat.iter().all(|p| p.thresholds.k_approx >= 1));
        assert!(cat.iter().all(|p| p.description.is_some()));
    }

    #[test]
    fn entities_before_relations_orders_entities_first() {
        let ebr = resolve_pattern("entities_before_relations").unwrap();
        assert!(ebr.relations.contains(&Relation::ControlBefore(
            "entity_rule".into(),
            "relation_rule".into()
        )));
    }

    #[test]
    fn round_trip() {
        for p in builtin_catalog() {
            assert_eq!(parse_pattern(&p.to_mtp()).unwrap(), p);
        }
    }
}
