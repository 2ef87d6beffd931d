//! Machine-readable detection reports and their text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{DegenerateKind, Form, Occurrence};
use crate::catalog::{PatternSpec, Relation};
use crate::detect::{PatternResult, Prepared};
use crate::model::{GraphPattern, Rule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    /// Wall-clock time of the run; the only field that varies between
    /// identical runs.
    pub generated_at: String,
    pub results: Vec<ReportResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportResult {
    pub transformation: String,
    pub pattern: String,
    pub occurrences: Vec<ReportOccurrence>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOccurrence {
    pub id: String,
    pub form: Form,
    pub assignment: Vec<ReportMember>,
    #[serde(default)]
    pub missing: Vec<String>,
    pub total_distance: usize,
    pub bindings: BTreeMap<String, String>,
    pub violations: Vec<Relation>,
    pub hints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMember {
    pub role: String,
    pub rule: String,
    pub distance: usize,
    /// The rule's encoded string.
    pub encoding: String,
    /// Short human-readable summary of the rule.
    pub excerpt: String,
}

impl Report {
    pub fn new(tool_version: &str, generated_at: &str, results: Vec<ReportResult>) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            tool_version: tool_version.into(),
            generated_at: generated_at.into(),
            results,
        }
    }

    pub fn from_json(doc: &str) -> Result<Self, ReportError> {
        let r: Report = serde_json::from_str(doc)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(ReportError::Version(r.schema_version));
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn occurrences(&self) -> impl Iterator<Item = (&ReportResult, &ReportOccurrence)> {
        self.results
            .iter()
            .flat_map(|r| r.occurrences.iter().map(move |o| (r, o)))
    }
}

fn block_summary(g: &GraphPattern) -> String {
    let mut parts: Vec<String> = g.nodes.iter().map(|n| format!("{}:{}", n.id, n.ty)).collect();
    parts.extend(g.edges.iter().map(|e| format!("{}-{}->{}", e.src, e.ty, e.tgt)));
    parts.extend(g.attrs.iter().map(|a| {
        let op = match a.op {
            crate::model::AttrOp::Eq => "=",
            crate::model::AttrOp::Neq => "<>",
            crate::model::AttrOp::Lt => "<",
            crate::model::AttrOp::Gt => ">",
            crate::model::AttrOp::Bind => "<-",
            crate::model::AttrOp::Other => "~",
        };
        format!("{}.{} {} {}", a.owner, a.name, op, a.value)
    }));
    parts.join(", ")
}

/// One-line structural summary of a rule.
pub fn rule_excerpt(rule: &Rule) -> String {
    let mut s = format!("LHS [{}] RHS [{}]", block_summary(&rule.lhs), block_summary(&rule.rhs));
    for n in &rule.nacs {
        let _ = write!(s, " NAC [{}]", block_summary(n));
    }
    s
}

/// Improvement hints for degenerate occurrences.
pub fn hints(o: &Occurrence, pattern: &PatternSpec) -> Vec<String> {
    let Form::Degenerate(kind) = o.form else {
        return vec![];
    };
    let mut out = Vec::new();
    if kind == DegenerateKind::MissingParticipant {
        for role in &o.missing {
            if pattern.participant(role).is_some_and(|p| !p.optional) {
                out.push(format!(
                    "no rule plays `{role}`; the {} structure is incomplete here, add a rule for this role or drop the partial structure",
                    pattern.name
                ));
            }
        }
    }
    let rule_of = |role: &str| o.member(role).map_or("?", |m| m.rule.as_str());
    for v in &o.violations {
        out.push(match v {
            Relation::SameType(a, b) => {
                let ty = |r: &crate::catalog::VarRef| {
                    o.member(&r.role)
                        .and_then(|m| m.bindings.get(&r.var).cloned())
                        .unwrap_or_else(|| "?".into())
                };
                format!(
                    "`{a}` binds {} but `{b}` binds {}; the rules `{}` and `{}` should work on the same type",
                    ty(a),
                    ty(b),
                    rule_of(&a.role),
                    rule_of(&b.role)
                )
            }
            Relation::ControlBefore(a, b) => format!(
                "`{}` ({a}) is not scheduled before `{}` ({b}); reorder the control flow",
                rule_of(a),
                rule_of(b)
            ),
            Relation::DistinctRules(a, b) => format!(
                "`{a}` and `{b}` are played by the same rule `{}`; split it into two rules",
                rule_of(a)
            ),
        });
    }
    out
}

/// Build the report entries for one transformation.
pub fn results_for(prep: &Prepared<'_>, patterns: &[PatternSpec], found: &[PatternResult]) -> Vec<ReportResult> {
    let t = prep.transformation;
    found
        .iter()
        .map(|pr| {
            let pattern = patterns
                .iter()
                .find(|p| p.name == pr.pattern)
                .expect("results come from these patterns");
            ReportResult {
                transformation: t.name.clone(),
                pattern: pr.pattern.clone(),
                truncated: pr.truncated,
                occurrences: pr
                    .occurrences
                    .iter()
                    .map(|o| ReportOccurrence {
                        id: o.id(),
                        form: o.form,
                        assignment: o
                            .assignment
                            .iter()
                            .map(|m| ReportMember {
                                role: m.role.clone(),
                                rule: m.rule.clone(),
                                distance: m.distance,
                                encoding: prep.encodings[m.rule_index].as_str().to_string(),
                                excerpt: rule_excerpt(&t.rules[m.rule_index]),
                            })
                            .collect(),
                        missing: o.missing.clone(),
                        total_distance: o.total_distance,
                        bindings: o.bindings(),
                        violations: o.violations.clone(),
                        hints: hints(o, pattern),
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Markdown,
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Text => render_text(report),
        Format::Markdown => render_markdown(report),
    }
}

fn tally(r: &ReportResult) -> String {
    let mut counts: BTreeMap<u8, (String, usize)> = BTreeMap::new();
    for o in &r.occurrences {
        let label = match o.form {
            Form::Degenerate(_) => "degenerate".to_string(),
            f => f.to_string(),
        };
        counts.entry(o.form.rank()).or_insert((label, 0)).1 += 1;
    }
    if counts.is_empty() {
        return "no occurrences".into();
    }
    counts
        .values()
        .map(|(l, n)| format!("{n} {l}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mtpd {} report ({})", report.tool_version, report.generated_at);
    for r in &report.results {
        let _ = writeln!(s, "\n{} / {}: {}", r.transformation, r.pattern, tally(r));
        if r.truncated {
            let _ = writeln!(s, "  (search truncated)");
        }
        for o in &r.occurrences {
            let _ = writeln!(s, "  [{}] {} total distance {}", o.id, o.form, o.total_distance);
            for m in &o.assignment {
                let _ = writeln!(s, "    {} = {} (distance {})", m.role, m.rule, m.distance);
            }
            for role in &o.missing {
                let _ = writeln!(s, "    {role} = (none)");
            }
            for v in &o.violations {
                let _ = writeln!(s, "    violated: {v}");
            }
            for h in &o.hints {
                let _ = writeln!(s, "    hint: {h}");
            }
        }
    }
    s
}

pub fn render_markdown(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Pattern occurrences\n");
    let _ = writeln!(s, "Tool version {}, generated {}.", report.tool_version, report.generated_at);
    for r in &report.results {
        let _ = writeln!(s, "\n## `{}` / `{}`\n", r.transformation, r.pattern);
        let _ = writeln!(s, "{}.", tally(r));
        if r.truncated {
            let _ = writeln!(s, "\n> The search was truncated.");
        }
        if r.occurrences.is_empty() {
            continue;
        }
        let _ = writeln!(s, "\n| id | form | assignment | distance | violations |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for o in &r.occurrences {
            let assignment = o
                .assignment
                .iter()
                .map(|m| format!("{} = `{}` ({})", m.role, m.rule, m.distance))
                .chain(o.missing.iter().map(|r| format!("{r} = none")))
                .collect::<Vec<_>>()
                .join("<br>");
            let violations = o
                .violations
                .iter()
                .map(|v| format!("`{v}`"))
                .collect::<Vec<_>>()
                .join("<br>");
            let _ = writeln!(
                s,
                "| `{}` | {} | {} | {} | {} |",
                o.id, o.form, assignment, o.total_distance, violations
            );
        }
        let hinted: Vec<_> = r.occurrences.iter().filter(|o| !o.hints.is_empty()).collect();
        if !hinted.is_empty() {
            let _ = writeln!(s, "\nHints:\n");
            for o in hinted {
                for h in &o.hints {
                    let _ = writeln!(s, "- `{}`: {h}", o.id);
                }
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_catalog;
    use crate::corpus::{generate, FormCounts, PlantingPlan};
    use crate::detect::{detect_prepared, prepare, DetectOptions};

    fn sample() -> Report {
        let cat = builtin_catalog();
        let plan = PlantingPlan {
            seed: 3,
            patterns: cat
                .iter()
                .map(|p| (p.clone(), FormCounts { exact: 1, broken: 1, dropped: 1, ..Default::default() }))
                .collect(),
            noise_rules: 4,
            mutation_edits: 1,
        };
        let (t, _) = generate(&plan).unwrap();
        let prep = prepare(&t).unwrap();
        let found = detect_prepared(&prep, &cat, &DetectOptions::default()).unwrap();
        Report::new("0.0.0", "now", results_for(&prep, &cat, &found))
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut r = sample();
        r.schema_version = 2;
        assert!(matches!(Report::from_json(&r.to_json()), Err(ReportError::Version(2))));
    }

    #[test]
    fn degenerate_occurrences_carry_hints() {
        let r = sample();
        let (mut degenerate, mut hinted) = (0, 0);
        for (_, o) in r.occurrences() {
            if matches!(o.form, Form::Degenerate(_)) {
                degenerate += 1;
                hinted += usize::from(!o.hints.is_empty());
            } else {
                assert!(o.hints.is_empty());
            }
        }
        assert!(degenerate > 0);
        assert_eq!(degenerate, hinted);
    }

    #[test]
    fn renderings_mention_every_occurrence() {
        let r = sample();
        let text = render(&r, Format::Text);
        let md = render(&r, Format::Markdown);
        for (_, o) in r.occurrences() {
            assert!(text.contains(&o.id));
            assert!(md.contains(&o.id));
        }
    }
}
