use std::fmt::Write;

use super::{Graph, GraphError, NodeId, NodeKind};

impl Graph {
    /// Graphviz rendering of `top` and everything it depends on.
    ///
    /// Vertices are listed in id order and edges in client order, so identical graphs
    /// produce byte-identical output. Leaves (parameters, observables) carry
    /// `class="leaf"`, function and PDF nodes `class="internal"`.
    pub fn export_dot(&mut self, top: NodeId) -> Result<String, GraphError> {
        self.node(top).map_err(|_| GraphError::UnknownNode(top))?;
        let order = self.topological_order(top)?;
        let mut out = String::new();
        out.push_str("// Edges point from a node to the servers it depends on.\n");
        let _ = writeln!(out, "digraph {} {{", quote(&self.nodes[top.0].name));
        out.push_str("  rankdir=TB;\n");
        for &id in &order {
            let node = &self.nodes[id.0];
            let (class, shape, color) = match node.kind {
                NodeKind::Parameter | NodeKind::Observable => ("leaf", "ellipse", "lightblue"),
                NodeKind::Function | NodeKind::Pdf => ("internal", "box", "lightcoral"),
            };
            let label = format!("{}\n{}", node.name, node.label());
            let _ = writeln!(
                out,
                "  n{} [label={}, class=\"{}\", shape={}, style=filled, fillcolor={}];",
                id.0,
                quote(&label),
                class,
                shape,
                color
            );
        }
        for &id in &order {
            let mut seen = Vec::new();
            for s in &self.nodes[id.0].servers {
                if !seen.contains(s) {
                    seen.push(*s);
                    let _ = writeln!(out, "  n{} -> n{};", id.0, s.0);
                }
            }
        }
        out.push_str("}\n");
        Ok(out)
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}
