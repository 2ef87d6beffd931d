//! Turning per-participant matches into pattern occurrences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{PatternSpec, Relation};
use crate::encoder::{encode_participant, EncodeError, EncodedString};
use crate::matcher::{tied_alignments, MatchMode};
use crate::model::ControlFlags;

pub const DEFAULT_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOptions {
    pub mode: MatchMode,
    pub perm_cap: usize,
    /// Replaces the pattern's `k_approx` when set.
    pub k_override: Option<u32>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            mode: MatchMode::SemiGlobal,
            perm_cap: crate::encoder::DEFAULT_PERM_CAP,
            k_override: None,
        }
    }
}

/// One rule that matched a participant within the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub rule: String,
    pub rule_index: usize,
    pub distance: usize,
    pub remapping_index: usize,
    /// Participant variable (`?T1`) → concrete type name in the rule.
    pub bindings: BTreeMap<String, String>,
    /// Every type a variable takes over the renamings that tie for the best
    /// distance. Empty means `bindings` is the only reading.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternatives: BTreeMap<String, BTreeSet<String>>,
}

impl MatchResult {
    /// Types `var` may be bound to.
    pub fn readings(&self, var: &str) -> BTreeSet<&str> {
        match self.alternatives.get(var) {
            Some(set) => set.iter().map(String::as_str).collect(),
            None => self.bindings.get(var).map(String::as_str).into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleCandidates {
    pub role: String,
    pub optional: bool,
    pub encoding: EncodedString,
    pub matches: Vec<MatchResult>,
}

/// Candidates for every participant, aligned with `pattern.participants`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub pattern: String,
    pub k_approx: u32,
    pub roles: Vec<RoleCandidates>,
    /// Some alignment hit the permutation cap.
    pub truncated: bool,
}

/// The effective approximate threshold for a pattern under `opts`.
pub fn effective_k(pattern: &PatternSpec, opts: &MatchOptions) -> u32 {
    opts.k_override.unwrap_or(pattern.thresholds.k_approx)
}

/// Match every participant against every rule. `encodings` is aligned with
/// the rules of the transformation.
pub fn candidates(
    pattern: &PatternSpec,
    encodings: &[EncodedString],
    opts: &MatchOptions,
) -> Result<CandidateSet, EncodeError> {
    let k = effective_k(pattern, opts) as usize;
    let parts = pattern
        .participants
        .iter()
        .map(encode_participant)
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..parts.len())
        .flat_map(|p| (0..encodings.len()).map(move |r| (p, r)))
        .collect();
    let found: Vec<(usize, Option<MatchResult>, bool)> = pairs
        .par_iter()
        .map(|&(p, r)| {
            let part = &parts[p];
            let rule = &encodings[r];
            let (al, ties) = tied_alignments(part, rule, opts.mode, opts.perm_cap);
            if al.distance > k {
                return (p, None, al.truncated);
            }
            let bind = |mapping: &[(u8, u8)]| -> BTreeMap<String, String> {
                part.token_map
                    .entries()
                    .iter()
                    .filter_map(|(var, tok)| {
                        let image = mapping
                            .iter()
                            .find(|(from, _)| from == tok)
                            .map_or(*tok, |&(_, to)| to);
                        let ty = rule.token_map.name_of(image)?;
                        Some((var.clone(), ty.to_string()))
                    })
                    .collect()
            };
            let bindings = bind(&al.remapping);
            let mut alternatives: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            if ties.len() > 1 {
                for t in &ties {
                    for (var, ty) in bind(t) {
                        alternatives.entry(var).or_default().insert(ty);
                    }
                }
            }
            let name = match &rule.source {
                crate::encoder::Source::Rule(n) | crate::encoder::Source::Participant(n) => n.clone(),
            };
            let m = MatchResult {
                rule: name,
                rule_index: r,
                distance: al.distance,
                remapping_index: al.remapping_index,
                bindings,
                alternatives,
            };
            (p, Some(m), al.truncated)
        })
        .collect();
    let mut truncated = false;
    let mut roles: Vec<RoleCandidates> = pattern
        .participants
        .iter()
        .zip(parts)
        .map(|(p, enc)| RoleCandidates {
            role: p.role.clone(),
            optional: p.optional,
            encoding: enc,
            matches: vec![],
        })
        .collect();
    for (p, m, t) in found {
        truncated |= t;
        if let Some(m) = m {
            roles[p].matches.push(m);
        }
    }
    for rc in &mut roles {
        rc.matches.sort_by_key(|m| (m.distance, m.rule_index));
    }
    Ok(CandidateSet {
        pattern: pattern.name.clone(),
        k_approx: k as u32,
        roles,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateKind {
    MissingParticipant,
    ConstraintViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Form {
    Complete,
    Approximate,
    Degenerate(DegenerateKind),
}

impl Form {
    pub fn rank(self) -> u8 {
        match self {
            Form::Complete => 0,
            Form::Approximate => 1,
            Form::Degenerate(_) => 2,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::Complete => "complete",
            Form::Approximate => "approximate",
            Form::Degenerate(DegenerateKind::MissingParticipant) => "degenerate:missing_participant",
            Form::Degenerate(DegenerateKind::ConstraintViolated) => "degenerate:constraint_violated",
        })
    }
}

impl From<Form> for String {
    fn from(f: Form) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Form {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "complete" => Ok(Form::Complete),
            "approximate" => Ok(Form::Approximate),
            "degenerate:missing_participant" => Ok(Form::Degenerate(DegenerateKind::MissingParticipant)),
            "degenerate:constraint_violated" => Ok(Form::Degenerate(DegenerateKind::ConstraintViolated)),
            _ => Err(format!("unknown form `{s}`")),
        }
    }
}

/// A role filled by a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub role: String,
    pub rule: String,
    pub rule_index: usize,
    pub distance: usize,
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub pattern: String,
    /// Assigned roles in participant order.
    pub assignment: Vec<Member>,
    /// Unassigned roles, optional ones included, in participant order.
    pub missing: Vec<String>,
    pub total_distance: usize,
    pub violations: Vec<Relation>,
    pub form: Form,
}

impl Occurrence {
    /// Stable identity: hash of the pattern name and the role → rule pairs.
    /// Distances are deliberately left out.
    pub fn id(&self) -> String {
        occurrence_id(
            &self.pattern,
            self.assignment.iter().map(|m| (m.role.as_str(), m.rule.as_str())),
        )
    }

    pub fn member(&self, role: &str) -> Option<&Member> {
        self.assignment.iter().find(|m| m.role == role)
    }

    /// `role.?Var` → type for every bound participant variable.
    pub fn bindings(&self) -> BTreeMap<String, String> {
        self.assignment
            .iter()
            .flat_map(|m| {
                m.bindings
                    .iter()
                    .map(move |(v, t)| (format!("{}.{}", m.role, v), t.clone()))
            })
            .collect()
    }
}

pub fn occurrence_id<'a>(pattern: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    h.update(pattern.as_bytes());
    for (role, rule) in pairs {
        h.update(b"\0");
        h.update(role.as_bytes());
        h.update(b"=");
        h.update(rule.as_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Relations of `pattern` that do not hold under `assignment`, which is
/// aligned with the participants (`None` = role unassigned).
pub fn check_relations(
    assignment: &[Option<&MatchResult>],
    pattern: &PatternSpec,
    control: &[ControlFlags],
) -> Vec<Relation> {
    let get = |role: &str| pattern.role_index(role).and_then(|i| assignment[i]);
    pattern
        .relations
        .iter()
        .filter(|rel| match rel {
            Relation::SameType(a, b) => {
                // violated only when both sides are bound and no tied
                // reading of one agrees with a reading of the other
                let (Some(ma), Some(mb)) = (get(&a.role), get(&b.role)) else {
                    return false;
                };
                let (ra, rb) = (ma.readings(&a.var), mb.readings(&b.var));
                !ra.is_empty() && !rb.is_empty() && ra.is_disjoint(&rb)
            }
            Relation::ControlBefore(a, b) => match (get(a), get(b)) {
                (Some(ma), Some(mb)) => {
                    let pa = control.get(ma.rule_index).and_then(|f| f.seq_pos);
                    let pb = control.get(mb.rule_index).and_then(|f| f.seq_pos);
                    !matches!((pa, pb), (Some(x), Some(y)) if x < y)
                }
                _ => false,
            },
            Relation::DistinctRules(a, b) => match (get(a), get(b)) {
                (Some(ma), Some(mb)) => ma.rule_index == mb.rule_index,
                _ => false,
            },
        })
        .cloned()
        .collect()
}

/// Form of an assembled occurrence, `None` when it fits no form.
pub fn classify(o: &Occurrence, pattern: &PatternSpec) -> Option<Form> {
    classify_with_k(o, pattern, pattern.thresholds.k_approx)
}

pub fn classify_with_k(o: &Occurrence, pattern: &PatternSpec, k_approx: u32) -> Option<Form> {
    let mandatory_missing = o
        .missing
        .iter()
        .any(|r| pattern.participant(r).is_none_or(|p| !p.optional));
    if mandatory_missing {
        return o
            .assignment
            .iter()
            .any(|m| m.distance == 0)
            .then_some(Form::Degenerate(DegenerateKind::MissingParticipant));
    }
    if !o.violations.is_empty() {
        return Some(Form::Degenerate(DegenerateKind::ConstraintViolated));
    }
    let budget = o.assignment.len() * k_approx as usize;
    match o.total_distance {
        0 => Some(Form::Complete),
        d if d <= budget => Some(Form::Approximate),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub occurrences: Vec<Occurrence>,
    /// The node budget ran out before the search finished.
    pub truncated: bool,
    pub explored: usize,
}

type Score = (usize, usize, usize);

struct Search<'a> {
    cs: &'a CandidateSet,
    pattern: &'a PatternSpec,
    control: &'a [ControlFlags],
    mandatory: Vec<usize>,
    optional: Vec<usize>,
    budget: usize,
    explored: usize,
    truncated: bool,
    current: Vec<Option<usize>>,
    used: BTreeSet<usize>,
    key_best: Option<(Score, Vec<Option<usize>>)>,
    out: Vec<Occurrence>,
}

impl<'a> Search<'a> {
    fn tick(&mut self) -> bool {
        if self.explored >= self.budget {
            self.truncated = true;
            return false;
        }
        self.explored += 1;
        true
    }

    fn chosen(&self, assign: &[Option<usize>]) -> Vec<Option<&'a MatchResult>> {
        assign
            .iter()
            .enumerate()
            .map(|(role, c)| c.map(|c| &self.cs.roles[role].matches[c]))
            .collect()
    }

    fn partial_total(&self) -> usize {
        self.chosen(&self.current)
            .iter()
            .flatten()
            .map(|m| m.distance)
            .sum()
    }

    fn score(&self, assign: &[Option<usize>]) -> Score {
        let chosen = self.chosen(assign);
        let total = chosen.iter().flatten().map(|m| m.distance).sum();
        let viol = check_relations(&chosen, self.pattern, self.control).len();
        let missing = chosen.iter().filter(|c| c.is_none()).count();
        (total, viol, missing)
    }

    /// Choices for role `r`: every candidate on an unused rule, then none.
    fn options(&self, r: usize) -> Vec<Option<usize>> {
        self.cs.roles[r]
            .matches
            .iter()
            .enumerate()
            .filter(|(_, m)| !self.used.contains(&m.rule_index))
            .map(|(i, _)| Some(i))
            .chain(std::iter::once(None))
            .collect()
    }

    fn place(&mut self, r: usize, c: Option<usize>) {
        self.current[r] = c;
        if let Some(c) = c {
            self.used.insert(self.cs.roles[r].matches[c].rule_index);
        }
    }

    fn unplace(&mut self, r: usize, c: Option<usize>) {
        if let Some(c) = c {
            self.used.remove(&self.cs.roles[r].matches[c].rule_index);
        }
        self.current[r] = None;
    }

    fn mandatory_step(&mut self, depth: usize) {
        if depth == self.mandatory.len() {
            self.key_best = None;
            self.optional_step(0);
            if let Some((_, assign)) = self.key_best.take() {
                self.emit(&assign);
            }
            return;
        }
        let r = self.mandatory[depth];
        for c in self.options(r) {
            if !self.tick() {
                return;
            }
            self.place(r, c);
            self.mandatory_step(depth + 1);
            self.unplace(r, c);
        }
    }

    fn optional_step(&mut self, depth: usize) {
        if let Some((best, _)) = &self.key_best {
            // distances only grow as more roles are filled
            if self.partial_total() > best.0 {
                return;
            }
        }
        if depth == self.optional.len() {
            let s = self.score(&self.current);
            if self.key_best.as_ref().is_none_or(|(b, _)| s < *b) {
                self.key_best = Some((s, self.current.clone()));
            }
            return;
        }
        let r = self.optional[depth];
        for c in self.options(r) {
            if !self.tick() {
                return;
            }
            self.place(r, c);
            self.optional_step(depth + 1);
            self.unplace(r, c);
        }
    }

    fn emit(&mut self, assign: &[Option<usize>]) {
        let chosen = self.chosen(assign);
        if chosen.iter().all(|c| c.is_none()) {
            return;
        }
        let mut o = Occurrence {
            pattern: self.pattern.name.clone(),
            assignment: vec![],
            missing: vec![],
            total_distance: 0,
            violations: check_relations(&chosen, self.pattern, self.control),
            form: Form::Complete,
        };
        for (rc, c) in self.cs.roles.iter().zip(&chosen) {
            match c {
                Some(m) => {
                    o.total_distance += m.distance;
                    o.assignment.push(Member {
                        role: rc.role.clone(),
                        rule: m.rule.clone(),
                        rule_index: m.rule_index,
                        distance: m.distance,
                        bindings: m.bindings.clone(),
                    });
                }
                None => o.missing.push(rc.role.clone()),
            }
        }
        if let Some(form) = classify_with_k(&o, self.pattern, self.cs.k_approx) {
            o.form = form;
            self.out.push(o);
        }
    }
}

/// Branch-and-bound over injective role → rule assignments.
///
/// Every distinct choice for the mandatory roles (a rule or nothing) is
/// completed with the optional roles that minimise
/// `(total_distance, |violations|, |missing|)`; the resulting occurrence is
/// kept if it classifies. At most `budget` search nodes are expanded.
pub fn assemble(
    cs: &CandidateSet,
    pattern: &PatternSpec,
    control: &[ControlFlags],
    budget: usize,
) -> Assembly {
    let n = cs.roles.len();
    let mut mandatory: Vec<usize> = (0..n).filter(|&r| !cs.roles[r].optional).collect();
    mandatory.sort_by_key(|&r| (cs.roles[r].matches.len(), r));
    let optional = (0..n).filter(|&r| cs.roles[r].optional).collect();
    let mut s = Search {
        cs,
        pattern,
        control,
        mandatory,
        optional,
        budget: budget.max(1),
        explored: 0,
        truncated: false,
        current: vec![None; n],
        used: BTreeSet::new(),
        key_best: None,
        out: vec![],
    };
    s.mandatory_step(0);
    let mut occurrences = s.out;
    sort_occurrences(&mut occurrences);
    Assembly {
        occurrences,
        truncated: s.truncated,
        explored: s.explored,
    }
}

pub fn sort_occurrences(occs: &mut [Occurrence]) {
    occs.sort_by_cached_key(|o| {
        (
            o.form.rank(),
            o.total_distance,
            o.violations.len() + o.missing.len(),
            o.missing.len(),
            o.assignment.iter().map(|m| (m.rule_index, m.role.clone())).collect::<Vec<_>>(),
        )
    });
}

/// Keep occurrences greedily in order, skipping any that reuses a rule
/// already claimed by a kept occurrence of the same pattern.
pub fn consolidate(occs: Vec<Occurrence>) -> Vec<Occurrence> {
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    occs.into_iter()
        .filter(|o| {
            if o.assignment.iter().any(|m| claimed.contains(&m.rule_index)) {
                return false;
            }
            claimed.extend(o.assignment.iter().map(|m| m.rule_index));
            true
        })
        .collect()
}
