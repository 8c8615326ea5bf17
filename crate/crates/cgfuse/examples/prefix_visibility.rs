//! What the graph expert is allowed to see while code is still being decoded.
//!
//! Run with: cargo run --example prefix_visibility

use cgfuse::frontend::parse_source;
use cgfuse::graph::{build_code_graph, context_subgraph, Relation};

fn main() {
    let source = "int a = b ; int c = a ; return c ;";
    let full = build_code_graph(&parse_source(source, false).unwrap());
    let terminals = full.terminal_nodes.len();
    println!("source: {source}");
    println!("full graph: {} terminals, {} edges\n", terminals, full.edges.len());

    // During decoding, only terminals that are already generated may feed
    // the model. context_subgraph(g, k) keeps the first k terminals, every
    // syntax node needed to connect them, and no edge that touches the
    // future.
    for k in [2, 5, 9, terminals] {
        let sub = context_subgraph(&full, k);
        let dataflow = sub.edges.iter().filter(|e| e.rel != Relation::Parent).count();
        println!(
            "first {k:>2} terminals visible: {:>2} nodes, {:>2} edges, {dataflow} dataflow",
            sub.node_count(),
            sub.edges.len()
        );
    }
    assert_eq!(context_subgraph(&full, terminals), full);

    // Free decoding never sees complete programs, so the parser also runs in
    // a tolerant mode that closes unfinished constructs instead of failing.
    let partial = "int a = b ; int c = a";
    assert!(parse_source(partial, false).is_err());
    let ast = parse_source(partial, true).unwrap();
    let g = build_code_graph(&ast);
    println!(
        "\ntolerant parse of {partial:?}: {} terminals, {} edges",
        g.terminal_nodes.len(),
        g.edges.len()
    );
    let dataflow: Vec<String> = g
        .edges
        .iter()
        .filter(|e| e.rel != Relation::Parent)
        .map(|e| format!("{:?} {}->{}", e.rel, e.src, e.dst))
        .collect();
    println!("dataflow edges survive: {dataflow:?}");
}
