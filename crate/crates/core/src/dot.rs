//! Graphviz export for product chains and projection graphs.

use std::fmt::Write as _;

use crate::chain::{self, MarkovChain};
use crate::collapse::ProjectionGraph;
use crate::model::Pomdp;
use crate::rational;
use crate::strategy::FiniteMemoryStrategy;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Product chain with nodes labelled `state·memory` and every recurrent
/// class drawn as a dashed cluster.
pub fn chain_dot(g: &Pomdp, sigma: &FiniteMemoryStrategy, mc: &MarkovChain) -> String {
    let name = |i: usize| match mc.label(i) {
        Some(l) => format!("{}·{}", g.state_name(l.state), sigma.memory[l.memory]),
        None => format!("n{i}"),
    };
    let mut out = String::from("digraph chain {\n  rankdir=LR;\n");
    for (k, class) in chain::recurrent_classes(mc).iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_rec{k} {{\n    style=dashed;\n    label=\"Rec\";");
        for &i in class {
            let _ = writeln!(out, "    n{i};");
        }
        out.push_str("  }\n");
    }
    for i in 0..mc.len() {
        let _ = writeln!(out, "  n{i} [label={}];", quote(&name(i)));
    }
    for i in 0..mc.len() {
        for (j, p) in mc.row(i).entries() {
            let _ = writeln!(out, "  n{i} -> n{j} [label={}];", quote(&rational::format(p)));
        }
    }
    out.push_str("}\n");
    out
}

pub fn projection_dot(g: &Pomdp, graph: &ProjectionGraph) -> String {
    let mut out = String::from("digraph projection {\n");
    for (v, cm) in graph.vertices.iter().enumerate() {
        let shape = if v == graph.initial { ", shape=doublecircle" } else { "" };
        let _ = writeln!(out, "  v{v} [label={}{shape}];", quote(&cm.describe(g)));
    }
    for &(v, a, t) in &graph.edges {
        let _ = writeln!(out, "  v{v} -> v{t} [label={}];", quote(g.action_name(a)));
    }
    out.push_str("}\n");
    out
}
