//! Seeded synthetic transformations with planted pattern instances.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{DegenerateKind, Form, Occurrence};
use crate::catalog::{resolve_pattern, CatalogError, Participant, PatternSpec, Relation, WILDCARD};
use crate::encoder::encode_rule;
use crate::matcher::dp_edit_distance;
use crate::model::{
    AttrCond, AttrOp, ControlFlags, ControlKind, ControlScheme, Edge, GraphPattern, Node, Rule,
    Step, Transformation,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("plan is infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// How many instances of each form to plant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormCounts {
    #[serde(default)]
    pub exact: usize,
    #[serde(default)]
    pub mutated: usize,
    /// Degenerate: one mandatory participant left out.
    #[serde(default)]
    pub dropped: usize,
    /// Degenerate: one relation broken.
    #[serde(default)]
    pub broken: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantingPlan {
    pub seed: u64,
    pub patterns: Vec<(PatternSpec, FormCounts)>,
    pub noise_rules: usize,
    pub mutation_edits: usize,
}

/// On-disk plan: patterns are referenced by name or path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default)]
    pub seed: u64,
    pub patterns: Vec<PlanEntry>,
    #[serde(default)]
    pub noise_rules: usize,
    #[serde(default = "one")]
    pub mutation_edits: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub pattern: String,
    #[serde(flatten)]
    pub counts: FormCounts,
}

impl PlanFile {
    pub fn resolve(&self) -> Result<PlantingPlan, CorpusError> {
        let patterns = self
            .patterns
            .iter()
            .map(|e| Ok((resolve_pattern(&e.pattern)?, e.counts)))
            .collect::<Result<_, CorpusError>>()?;
        Ok(PlantingPlan {
            seed: self.seed,
            patterns,
            noise_rules: self.noise_rules,
            mutation_edits: self.mutation_edits,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthInstance {
    pub pattern: String,
    /// role → planted rule name
    pub rules: BTreeMap<String, String>,
    pub form: Form,
    /// Roles that are optional in the pattern.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub optional_roles: Vec<String>,
    /// Per-rule encoded edit cost of the applied mutations.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mutation_costs: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broken_relation: Option<Relation>,
}

impl TruthInstance {
    pub fn mandatory_rules(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .filter(|(role, _)| !self.optional_roles.contains(role))
            .map(|(_, r)| r.as_str())
            .collect()
    }

    pub fn max_mutation_cost(&self) -> usize {
        self.mutation_costs.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub transformation: String,
    pub instances: Vec<TruthInstance>,
}

/// Rule under construction together with its schedule flags.
#[derive(Debug, Clone)]
struct Slot {
    rule: Rule,
    looping: bool,
    branch: bool,
    planting: Option<usize>,
}

impl Slot {
    fn encoding(&self) -> Vec<u8> {
        let flags = ControlFlags {
            seq_pos: Some(0),
            in_loop: self.looping,
            self_loop: self.looping,
            in_branch: self.branch,
        };
        encode_rule(&self.rule, &flags)
            .expect("generated rules stay within the token limit")
            .bytes
    }
}

struct Planting {
    pattern: usize,
    form: Form,
    /// (role, slot index)
    slots: Vec<(String, usize)>,
    /// control_before pairs (earlier role, later role) to lay out
    order: Vec<(String, String)>,
    swap: Option<(String, String)>,
    dropped_role: Option<String>,
    broken: Option<Relation>,
    mutation_costs: BTreeMap<String, usize>,
}

struct Gen {
    rng: ChaCha8Rng,
    next_name: usize,
    vocabulary: Vec<String>,
    edge_vocabulary: Vec<String>,
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next_name += 1;
        format!("{prefix}{}", self.next_name)
    }

    fn fresh_type(&mut self, var: &str) -> String {
        let t = self.fresh(if var.starts_with("?E") { "Ref" } else { "Type" });
        if var.starts_with("?E") {
            self.edge_vocabulary.push(t.clone());
        } else {
            self.vocabulary.push(t.clone());
        }
        t
    }
}

/// Union-find over `(role, var)` keys linked by `same_type` relations.
fn type_classes(pattern: &PatternSpec, skip: Option<&Relation>) -> HashMap<(String, String), usize> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for p in &pattern.participants {
        for v in p.template.variables() {
            if v != WILDCARD {
                keys.push((p.role.clone(), v.to_string()));
            }
        }
    }
    let idx: HashMap<(String, String), usize> =
        keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for rel in &pattern.relations {
        if Some(rel) == skip {
            continue;
        }
        if let Relation::SameType(a, b) = rel {
            let ka = (a.role.clone(), a.var.clone());
            let kb = (b.role.clone(), b.var.clone());
            if let (Some(&x), Some(&y)) = (idx.get(&ka), idx.get(&kb)) {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                parent[rx] = ry;
            }
        }
    }
    idx.into_iter()
        .map(|(k, i)| {
            let r = find(&mut parent, i);
            (k, r)
        })
        .collect()
}

fn instantiate_block(
    g: &GraphPattern,
    role: &str,
    names: &HashMap<(String, String), String>,
    gen: &mut Gen,
) -> GraphPattern {
    let mut resolve = |ty: &str| {
        if ty == WILDCARD {
            gen.fresh_type("?T")
        } else {
            names[&(role.to_string(), ty.to_string())].clone()
        }
    };
    GraphPattern {
        nodes: g
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                ty: resolve(&n.ty),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| Edge {
                ty: resolve(&e.ty),
                src: e.src.clone(),
                tgt: e.tgt.clone(),
            })
            .collect(),
        attrs: g.attrs.clone(),
    }
}

fn instantiate(part: &Participant, names: &HashMap<(String, String), String>, gen: &mut Gen) -> Slot {
    let t = &part.template;
    Slot {
        rule: Rule {
            name: String::new(),
            lhs: instantiate_block(&t.lhs, &part.role, names, gen),
            rhs: instantiate_block(&t.rhs, &part.role, names, gen),
            nacs: t
                .nacs
                .iter()
                .map(|n| instantiate_block(n, &part.role, names, gen))
                .collect(),
        },
        looping: part.control.in_loop == Some(true) || part.control.self_loop == Some(true),
        branch: part.control.in_branch == Some(true),
        planting: None,
    }
}

#[derive(Debug, Clone, Copy)]
enum Edit {
    AddNode,
    RemoveNode,
    AddEdge,
    RemoveEdge,
    AddAttr,
    RemoveAttr,
    FlipFlag,
}

const EDITS: [Edit; 7] = [
    Edit::AddNode,
    Edit::RemoveNode,
    Edit::AddEdge,
    Edit::RemoveEdge,
    Edit::AddAttr,
    Edit::RemoveAttr,
    Edit::FlipFlag,
];

fn block_mut(rule: &mut Rule, b: usize) -> &mut GraphPattern {
    match b {
        0 => &mut rule.lhs,
        1 => &mut rule.rhs,
        n => &mut rule.nacs[n - 2],
    }
}

/// Try one edit; false when it does not apply to the chosen block.
fn apply_edit(slot: &mut Slot, part: &Participant, edit: Edit, gen: &mut Gen) -> bool {
    let nblocks = 2 + slot.rule.nacs.len();
    let b = gen.rng.random_range(0..nblocks);
    // types visible so far: this block and the ones before it
    let seen: Vec<String> = (0..=b)
        .flat_map(|i| block_mut(&mut slot.rule, i).nodes.iter().map(|n| n.ty.clone()).collect::<Vec<_>>())
        .collect();
    let edge_types: Vec<String> = (0..nblocks)
        .flat_map(|i| block_mut(&mut slot.rule, i).edges.iter().map(|e| e.ty.clone()).collect::<Vec<_>>())
        .collect();
    match edit {
        Edit::AddNode => {
            let Some(ty) = seen.choose(&mut gen.rng).cloned() else {
                return false;
            };
            let id = gen.fresh("m");
            block_mut(&mut slot.rule, b).nodes.push(Node { id, ty });
        }
        Edit::RemoveNode => {
            let g = block_mut(&mut slot.rule, b);
            let removable: Vec<usize> = (0..g.nodes.len())
                .filter(|&i| {
                    let id = &g.nodes[i].id;
                    g.nodes.len() > 1
                        && !g.edges.iter().any(|e| &e.src == id || &e.tgt == id)
                        && !g.attrs.iter().any(|a| &a.owner == id)
                })
                .collect();
            let Some(&i) = removable.choose(&mut gen.rng) else {
                return false;
            };
            g.nodes.remove(i);
        }
        Edit::AddEdge => {
            let ty = match edge_types.choose(&mut gen.rng) {
                Some(t) => t.clone(),
                None => gen.fresh_type("?E"),
            };
            let g = block_mut(&mut slot.rule, b);
            if g.nodes.len() < 2 {
                return false;
            }
            let s = gen.rng.random_range(0..g.nodes.len());
            let mut t = gen.rng.random_range(0..g.nodes.len() - 1);
            if t >= s {
                t += 1;
            }
            let (src, tgt) = (g.nodes[s].id.clone(), g.nodes[t].id.clone());
            g.edges.push(Edge { ty, src, tgt });
        }
        Edit::RemoveEdge => {
            let g = block_mut(&mut slot.rule, b);
            if g.edges.is_empty() {
                return false;
            }
            let i = gen.rng.random_range(0..g.edges.len());
            g.edges.remove(i);
        }
        Edit::AddAttr => {
            let op = if b == 1 {
                AttrOp::Bind
            } else {
                *[AttrOp::Eq, AttrOp::Neq, AttrOp::Lt, AttrOp::Gt].choose(&mut gen.rng).unwrap()
            };
            let name = gen.fresh("f");
            let g = block_mut(&mut slot.rule, b);
            let Some(owner) = g.nodes.choose(&mut gen.rng).map(|n| n.id.clone()) else {
                return false;
            };
            g.attrs.push(AttrCond {
                owner,
                name,
                op,
                value: "0".into(),
            });
        }
        Edit::RemoveAttr => {
            let g = block_mut(&mut slot.rule, b);
            if g.attrs.is_empty() {
                return false;
            }
            let i = gen.rng.random_range(0..g.attrs.len());
            g.attrs.remove(i);
        }
        Edit::FlipFlag => {
            let mut flags = Vec::new();
            if part.control.in_loop == Some(true) || part.control.self_loop == Some(true) {
                flags.push(0);
            }
            if part.control.in_branch == Some(true) {
                flags.push(1);
            }
            match flags.choose(&mut gen.rng) {
                Some(0) => slot.looping = !slot.looping,
                Some(_) => slot.branch = !slot.branch,
                None => return false,
            }
        }
    }
    true
}

/// Apply exactly `edits` structural edits spread over `slots`, each one
/// changing the encoding of the rule it touches. Returns per-slot costs, or
/// `None` if no attempt left a lasting change.
fn mutate(
    slots: &mut [Slot],
    members: &[(usize, &Participant)],
    edits: usize,
    gen: &mut Gen,
) -> Option<BTreeMap<usize, usize>> {
    let original: Vec<(usize, Slot)> = members.iter().map(|&(s, _)| (s, slots[s].clone())).collect();
    for _ in 0..20 {
        for (s, slot) in &original {
            slots[*s] = slot.clone();
        }
        let mut applied = 0;
        let mut attempts = 0;
        while applied < edits && attempts < 200 * edits {
            attempts += 1;
            let &(s, part) = members.choose(&mut gen.rng).unwrap();
            let edit = *EDITS.choose(&mut gen.rng).unwrap();
            let prev = slots[s].clone();
            let prev_enc = prev.encoding();
            if !apply_edit(&mut slots[s], part, edit, gen) || slots[s].encoding() == prev_enc {
                slots[s] = prev;
                continue;
            }
            applied += 1;
        }
        if applied < edits {
            continue;
        }
        // edits can undo each other, so cost is measured end to end
        let costs: BTreeMap<usize, usize> = original
            .iter()
            .map(|(s, slot)| (*s, dp_edit_distance(&slot.encoding(), &slots[*s].encoding())))
            .filter(|&(_, c)| c > 0)
            .collect();
        if !costs.is_empty() {
            return Some(costs);
        }
    }
    for (s, slot) in original {
        slots[s] = slot;
    }
    None
}

fn noise_rule(gen: &mut Gen) -> Slot {
    let pick = |gen: &mut Gen| {
        if !gen.vocabulary.is_empty() && gen.rng.random_bool(0.5) {
            gen.vocabulary.choose(&mut gen.rng).unwrap().clone()
        } else {
            gen.fresh("Noise")
        }
    };
    let n = gen.rng.random_range(2..=3);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("v{i}"),
            ty: pick(gen),
        })
        .collect();
    let edge_ty = if !gen.edge_vocabulary.is_empty() && gen.rng.random_bool(0.5) {
        gen.edge_vocabulary.choose(&mut gen.rng).unwrap().clone()
    } else {
        gen.fresh("Link")
    };
    let mut edges = vec![Edge {
        ty: edge_ty.clone(),
        src: "v0".into(),
        tgt: "v1".into(),
    }];
    if n == 3 && gen.rng.random_bool(0.5) {
        edges.push(Edge {
            ty: edge_ty,
            src: "v1".into(),
            tgt: "v2".into(),
        });
    }
    let mut attrs = Vec::new();
    if gen.rng.random_bool(0.5) {
        attrs.push(AttrCond {
            owner: "v0".into(),
            name: "flag".into(),
            op: AttrOp::Eq,
            value: "true".into(),
        });
    }
    let out_ty = pick(gen);
    let rhs = GraphPattern {
        nodes: vec![Node {
            id: "w".into(),
            ty: out_ty,
        }],
        edges: vec![],
        attrs: if gen.rng.random_bool(0.5) {
            vec![AttrCond {
                owner: "w".into(),
                name: "name".into(),
                op: AttrOp::Bind,
                value: "v0.name".into(),
            }]
        } else {
            vec![]
        },
    };
    Slot {
        rule: Rule {
            name: String::new(),
            lhs: GraphPattern { nodes, edges, attrs },
            rhs,
            nacs: vec![],
        },
        looping: gen.rng.random_bool(0.2),
        branch: false,
        planting: None,
    }
}

fn control_pairs(pattern: &PatternSpec, roles: &BTreeSet<&str>) -> Vec<(String, String)> {
    pattern
        .relations
        .iter()
        .filter_map(|r| match r {
            Relation::ControlBefore(a, b) if roles.contains(a.as_str()) && roles.contains(b.as_str()) => {
                Some((a.clone(), b.clone()))
            }
            _ => None,
        })
        .collect()
}

fn mandatory_roles(pattern: &PatternSpec) -> BTreeSet<&str> {
    pattern
        .participants
        .iter()
        .filter(|p| !p.optional)
        .map(|p| p.role.as_str())
        .collect()
}

fn check_feasible(pattern: &PatternSpec, counts: &FormCounts) -> Result<(), CorpusError> {
    let mandatory = mandatory_roles(pattern);
    if counts.dropped > 0 && mandatory.len() < 2 {
        return Err(CorpusError::Infeasible(format!(
            "pattern `{}` has fewer than two mandatory participants, so none can be dropped",
            pattern.name
        )));
    }
    if counts.broken > 0 && breakable(pattern).is_empty() {
        return Err(CorpusError::Infeasible(format!(
            "pattern `{}` has no relation between mandatory participants to break",
            pattern.name
        )));
    }
    Ok(())
}

fn breakable(pattern: &PatternSpec) -> Vec<&Relation> {
    let mandatory = mandatory_roles(pattern);
    pattern
        .relations
        .iter()
        .filter(|r| {
            let (a, b) = r.roles();
            a != b
                && mandatory.contains(a)
                && mandatory.contains(b)
                && !matches!(r, Relation::DistinctRules(..))
        })
        .collect()
}

/// Build a transformation with the planted instances plus noise.
pub fn generate(plan: &PlantingPlan) -> Result<(Transformation, GroundTruth), CorpusError> {
    if plan.mutation_edits == 0 && plan.patterns.iter().any(|(_, c)| c.mutated > 0) {
        return Err(CorpusError::Infeasible("mutated plantings need mutation_edits >= 1".into()));
    }
    for (p, c) in &plan.patterns {
        check_feasible(p, c)?;
    }
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(plan.seed),
        next_name: 0,
        vocabulary: vec![],
        edge_vocabulary: vec![],
    };
    let mut slots: Vec<Slot> = Vec::new();
    let mut plantings: Vec<Planting> = Vec::new();
    for (pi, (pattern, counts)) in plan.patterns.iter().enumerate() {
        let forms = std::iter::repeat_n(Form::Complete, counts.exact)
            .chain(std::iter::repeat_n(Form::Approximate, counts.mutated))
            .chain(std::iter::repeat_n(
                Form::Degenerate(DegenerateKind::MissingParticipant),
                counts.dropped,
            ))
            .chain(std::iter::repeat_n(
                Form::Degenerate(DegenerateKind::ConstraintViolated),
                counts.broken,
            ));
        for form in forms {
            let planting = plant(pattern, pi, form, plan.mutation_edits, &mut slots, &mut gen, plantings.len())?;
            plantings.push(planting);
        }
    }
    for _ in 0..plan.noise_rules {
        slots.push(noise_rule(&mut gen));
    }

    // shuffle positions, then restore control_before order inside each planting
    let mut layout: Vec<usize> = (0..slots.len()).collect();
    layout.shuffle(&mut gen.rng);
    let mut position = vec![0usize; slots.len()];
    for (pos, &s) in layout.iter().enumerate() {
        position[s] = pos;
    }
    for p in &plantings {
        let roles: Vec<&str> = p.slots.iter().map(|(r, _)| r.as_str()).collect();
        let ordered = topo_order(&roles, &p.order);
        let mut positions: Vec<usize> = p.slots.iter().map(|&(_, s)| position[s]).collect();
        positions.sort_unstable();
        let slot_of: HashMap<&str, usize> = p.slots.iter().map(|(r, s)| (r.as_str(), *s)).collect();
        for (role, pos) in ordered.iter().zip(positions) {
            position[slot_of[role]] = pos;
        }
        if let Some((a, b)) = &p.swap {
            position.swap(slot_of[a.as_str()], slot_of[b.as_str()]);
        }
    }
    for (s, slot) in slots.iter_mut().enumerate() {
        slot.rule.name = format!("rule{:03}", position[s]);
    }

    let mut by_pos: Vec<(usize, &Slot)> = slots.iter().enumerate().map(|(s, sl)| (position[s], sl)).collect();
    by_pos.sort_by_key(|&(p, _)| p);
    let t = Transformation {
        name: format!("synthetic_{}", plan.seed),
        rules: by_pos.iter().map(|(_, s)| s.rule.clone()).collect(),
        control: ControlScheme {
            kind: ControlKind::Sequence,
            steps: by_pos
                .iter()
                .map(|&(p, s)| Step {
                    rule: s.rule.name.clone(),
                    order: p as u32,
                    looping: s.looping,
                    branch: s.branch,
                })
                .collect(),
            edges: vec![],
        },
    };
    let instances = plantings
        .iter()
        .map(|p| {
            let pattern = &plan.patterns[p.pattern].0;
            TruthInstance {
                pattern: pattern.name.clone(),
                rules: p
                    .slots
                    .iter()
                    .map(|(r, s)| (r.clone(), slots[*s].rule.name.clone()))
                    .collect(),
                form: p.form,
                optional_roles: pattern
                    .participants
                    .iter()
                    .filter(|x| x.optional)
                    .map(|x| x.role.clone())
                    .collect(),
                mutation_costs: p.mutation_costs.clone(),
                dropped_role: p.dropped_role.clone(),
                broken_relation: p.broken.clone(),
            }
        })
        .collect();
    debug_assert!(crate::model::validate(&t).is_empty());
    Ok((
        t.clone(),
        GroundTruth {
            seed: plan.seed,
            transformation: t.name,
            instances,
        },
    ))
}

/// Roles in an order where every `(a, b)` pair has `a` first; ties keep input order.
fn topo_order<'a>(roles: &[&'a str], pairs: &[(String, String)]) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut left: Vec<&str> = roles.to_vec();
    while !left.is_empty() {
        let i = left
            .iter()
            .position(|r| !pairs.iter().any(|(a, b)| b == r && left.contains(&a.as_str())))
            .unwrap_or(0);
        out.push(left.remove(i));
    }
    out
}

fn plant(
    pattern: &PatternSpec,
    pattern_index: usize,
    form: Form,
    mutation_edits: usize,
    slots: &mut Vec<Slot>,
    gen: &mut Gen,
    planting_index: usize,
) -> Result<Planting, CorpusError> {
    let mut dropped_role = None;
    let mut broken = None;
    let mut swap = None;
    match form {
        Form::Degenerate(DegenerateKind::MissingParticipant) => {
            let mandatory: Vec<&str> = mandatory_roles(pattern).into_iter().collect();
            dropped_role = Some(mandatory.choose(&mut gen.rng).unwrap().to_string());
        }
        Form::Degenerate(DegenerateKind::ConstraintViolated) => {
            let rel = (*breakable(pattern).choose(&mut gen.rng).unwrap()).clone();
            if let Relation::ControlBefore(a, b) = &rel {
                swap = Some((a.clone(), b.clone()));
            }
            broken = Some(rel);
        }
        _ => {}
    }

    let skip = match &broken {
        Some(r @ Relation::SameType(..)) => Some(r),
        _ => None,
    };
    let classes = type_classes(pattern, skip);
    let mut class_names: BTreeMap<usize, String> = BTreeMap::new();
    let mut keys: Vec<&(String, String)> = classes.keys().collect();
    keys.sort();
    let mut names: HashMap<(String, String), String> = HashMap::new();
    for k in keys {
        let c = classes[k];
        let name = match class_names.get(&c) {
            Some(n) => n.clone(),
            None => {
                let n = gen.fresh_type(&k.1);
                class_names.insert(c, n.clone());
                n
            }
        };
        names.insert(k.clone(), name);
    }
    if let Some(Relation::SameType(a, b)) = skip {
        // the two sides may still share a class through other relations
        let ka = (a.role.clone(), a.var.clone());
        let kb = (b.role.clone(), b.var.clone());
        if names[&ka] == names[&kb] {
            let fresh = gen.fresh_type(&b.var);
            names.insert(kb, fresh);
        }
    }

    let mut members: Vec<(String, usize)> = Vec::new();
    for part in &pattern.participants {
        if dropped_role.as_deref() == Some(part.role.as_str()) {
            continue;
        }
        let mut slot = instantiate(part, &names, gen);
        slot.planting = Some(planting_index);
        slots.push(slot);
        members.push((part.role.clone(), slots.len() - 1));
    }

    let mut mutation_costs = BTreeMap::new();
    if form == Form::Approximate {
        // optional roles may legitimately stay unassigned, so only
        // mandatory participants carry the mutations
        let parts: Vec<(usize, &Participant)> = members
            .iter()
            .map(|(r, s)| (*s, pattern.participant(r).unwrap()))
            .filter(|(_, p)| !p.optional)
            .collect();
        let costs = mutate(slots, &parts, mutation_edits, gen).ok_or_else(|| {
            CorpusError::Infeasible(format!(
                "could not apply {mutation_edits} effective edits to `{}`",
                pattern.name
            ))
        })?;
        for (role, s) in &members {
            if let Some(c) = costs.get(s) {
                mutation_costs.insert(role.clone(), *c);
            }
        }
    }

    let roles: BTreeSet<&str> = members.iter().map(|(r, _)| r.as_str()).collect();
    Ok(Planting {
        pattern: pattern_index,
        form,
        order: control_pairs(pattern, &roles),
        slots: members,
        swap,
        dropped_role,
        broken,
        mutation_costs,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FormTally {
    pub planted: usize,
    /// Matched by an occurrence over the same mandatory rules.
    pub found: usize,
    /// Found and classified as the intended form.
    pub correct_form: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub detected: usize,
    pub planted: usize,
    /// intended form → detected form (or `missed`) → count
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub per_form: BTreeMap<String, FormTally>,
}

/// Compare detections against the planted truth.
///
/// An occurrence is a true positive when it belongs to the same pattern as a
/// planted instance and the set of rules on its mandatory roles equals the
/// planted mandatory rules. Each instance and each occurrence is matched at
/// most once. With no detections precision is 1.0 by convention.
pub fn score(detected: &[Occurrence], patterns: &[PatternSpec], truth: &GroundTruth) -> Score {
    let optional = |pattern: &str, role: &str| {
        patterns
            .iter()
            .find(|p| p.name == pattern)
            .and_then(|p| p.participant(role))
            .is_some_and(|p| p.optional)
    };
    let mut used = vec![false; detected.len()];
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut per_form: BTreeMap<String, FormTally> = BTreeMap::new();
    let mut tp = 0;
    for inst in &truth.instances {
        let want = inst.mandatory_rules();
        let hit = detected.iter().enumerate().position(|(i, o)| {
            !used[i]
                && o.pattern == inst.pattern
                && o
                    .assignment
                    .iter()
                    .filter(|m| !optional(&o.pattern, &m.role))
                    .map(|m| m.rule.as_str())
                    .collect::<BTreeSet<_>>()
                    == want
        });
        let tally = per_form.entry(inst.form.to_string()).or_default();
        tally.planted += 1;
        let got = match hit {
            Some(i) => {
                used[i] = true;
                tp += 1;
                tally.found += 1;
                if detected[i].form == inst.form {
                    tally.correct_form += 1;
                }
                detected[i].form.to_string()
            }
            None => "missed".to_string(),
        };
        *confusion.entry(inst.form.to_string()).or_default().entry(got).or_default() += 1;
    }
    let planted = truth.instances.len();
    Score {
        precision: if detected.is_empty() { 1.0 } else { tp as f64 / detected.len() as f64 },
        recall: if planted == 0 { 1.0 } else { tp as f64 / planted as f64 },
        true_positives: tp,
        detected: detected.len(),
        planted,
        confusion,
        per_form,
    }
}
