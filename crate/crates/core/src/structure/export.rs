use std::fmt::Write as _;

use crate::model::{LatentTreeStructure, VariableKind};

/// Graphviz rendering: observed nodes as boxes, hidden nodes as circles,
/// edges labelled with their length to four decimals.
pub fn to_dot(tree: &LatentTreeStructure) -> String {
    let mut out = String::from("graph cltm {\n");
    for node in tree.nodes() {
        let shape = match node.kind {
            VariableKind::Observed => "box",
            VariableKind::Hidden => "circle",
        };
        let _ = writeln!(out, "  \"{}\" [shape={shape}];", escape(&node.id));
    }
    for e in tree.edges() {
        let _ = writeln!(
            out,
            "  \"{}\" -- \"{}\" [label=\"{:.4}\"];",
            escape(&tree.nodes()[e.u].id),
            escape(&tree.nodes()[e.v].id),
            e.length
        );
    }
    out.push_str("}\n");
    out
}

fn escape(id: &str) -> String {
    id.replace('\\', "\\\\").replace('"', "\\\"")
}
