//! Parse a snippet, build its code graph, and walk the edge structure.
//!
//! Run with: cargo run --example graph_extraction

use std::collections::BTreeMap;

use cgfuse::frontend::parse_source;
use cgfuse::graph::{build_code_graph, Relation};

fn main() {
    let source = "int total = base ; while ( step < total ) { total = total - step ; } return total ;";
    let ast = parse_source(source, false).expect("snippet is well formed");
    let graph = build_code_graph(&ast);

    println!("source: {source}");
    println!(
        "graph: {} syntax nodes, {} terminals, {} edges",
        graph.syntax_nodes.len(),
        graph.terminal_nodes.len(),
        graph.edges.len()
    );

    let mut by_rel = BTreeMap::new();
    for e in &graph.edges {
        *by_rel.entry(format!("{:?}", e.rel)).or_insert(0usize) += 1;
    }
    for (rel, n) in &by_rel {
        println!("  {rel:<12} {n}");
    }

    // Dataflow edges carry the reaching-definition structure: ComingFrom
    // points from a use back to the definitions that may feed it,
    // CalculatedBy from a defined variable to the reads on its right side.
    let text_of = |id: usize| {
        graph
            .terminal_nodes
            .iter()
            .find(|(n, _)| *n == id)
            .map(|(_, tok)| tok.text.clone())
            .unwrap_or_else(|| "?".into())
    };
    println!("\ndataflow detail:");
    for e in &graph.edges {
        if e.rel != Relation::Parent {
            println!(
                "  {:?}: {} (node {}) -> {} (node {})",
                e.rel,
                text_of(e.src),
                e.src,
                text_of(e.dst),
                e.dst
            );
        }
    }

    // Terminals keep their source byte spans, which is what the fusion layer
    // later uses to line graph nodes up with subword token positions.
    println!("\nfirst terminals:");
    for (node, tok) in graph.terminal_nodes.iter().take(5) {
        println!(
            "  node {node:>2} covers bytes {}..{} = {:?}",
            tok.span.start, tok.span.end, tok.text
        );
    }
}
