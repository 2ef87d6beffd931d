//! Random instances shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mtpd::catalog::{Participant, Template};
use mtpd::model::{AttrCond, AttrOp, Edge, GraphPattern, Node, Rule};
use rand::seq::IndexedRandom;
use rand::Rng;

const COMPARE: [AttrOp; 5] = [AttrOp::Eq, AttrOp::Neq, AttrOp::Lt, AttrOp::Gt, AttrOp::Other];

fn block(rng: &mut impl Rng, types: &[String], edge_types: &[String], min_nodes: usize, rhs: bool) -> GraphPattern {
    let n = rng.random_range(min_nodes..=4);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            ty: types.choose(rng).unwrap().clone(),
        })
        .collect();
    let mut edges = Vec::new();
    if n >= 2 {
        for _ in 0..rng.random_range(0..=4) {
            let s = rng.random_range(0..n);
            let t = rng.random_range(0..n);
            edges.push(Edge {
                ty: edge_types.choose(rng).unwrap().clone(),
                src: nodes[s].id.clone(),
                tgt: nodes[t].id.clone(),
            });
        }
    }
    let mut attrs = Vec::new();
    if n > 0 {
        for i in 0..rng.random_range(0..=3) {
            attrs.push(AttrCond {
                owner: nodes.choose(rng).unwrap().id.clone(),
                name: format!("f{i}"),
                op: if rhs { AttrOp::Bind } else { *COMPARE.choose(rng).unwrap() },
                value: "v".into(),
            });
        }
    }
    GraphPattern { nodes, edges, attrs }
}

/// A valid rule over a small type vocabulary.
pub fn random_rule(rng: &mut impl Rng, name: &str) -> Rule {
    let types: Vec<String> = (0..rng.random_range(1..=6)).map(|i| format!("Type{i}")).collect();
    let edge_types: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("Ref{i}")).collect();
    Rule {
        name: name.into(),
        lhs: block(rng, &types, &edge_types, 1, false),
        rhs: block(rng, &types, &edge_types, 0, true),
        nacs: (0..rng.random_range(0..=2))
            .map(|_| block(rng, &types, &edge_types, 1, false))
            .collect(),
    }
}

/// Rename every node and edge type of `rule` through `f`.
pub fn rename_types(rule: &Rule, f: impl Fn(&str) -> String) -> Rule {
    let g = |p: &GraphPattern| GraphPattern {
        nodes: p.nodes.iter().map(|n| Node { id: n.id.clone(), ty: f(&n.ty) }).collect(),
        edges: p
            .edges
            .iter()
            .map(|e| Edge { ty: f(&e.ty), src: e.src.clone(), tgt: e.tgt.clone() })
            .collect(),
        attrs: p.attrs.clone(),
    };
    Rule {
        name: rule.name.clone(),
        lhs: g(&rule.lhs),
        rhs: g(&rule.rhs),
        nacs: rule.nacs.iter().map(g).collect(),
    }
}

/// A random injective renaming of the types used by `rule`.
pub fn random_bijection(rng: &mut impl Rng, rule: &Rule) -> BTreeMap<String, String> {
    let mut names: Vec<String> = rule
        .blocks()
        .flat_map(|(_, p)| {
            p.nodes
                .iter()
                .map(|n| n.ty.clone())
                .chain(p.edges.iter().map(|e| e.ty.clone()))
                .collect::<Vec<_>>()
        })
        .collect();
    names.sort();
    names.dedup();
    let salt: u32 = rng.random();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), format!("Renamed{salt}x{i}")))
        .collect()
}

/// Participant whose template is `rule` with types turned into `?` variables.
pub fn participant_from(rule: &Rule, prefix: &str) -> Participant {
    let r = rename_types(rule, |t| format!("?{prefix}{t}"));
    Participant {
        role: rule.name.clone(),
        template: Template {
            lhs: r.lhs,
            rhs: r.rhs,
            nacs: r.nacs,
        },
        control: Default::default(),
        optional: false,
    }
}
