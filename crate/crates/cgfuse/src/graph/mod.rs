//! Code graphs: the AST plus dataflow, as one node set.
//!
//! Every AST node becomes a graph node. Internal nodes are *syntax nodes*
//! (labeled with their kind), leaves are *terminal nodes* (carrying their
//! code token, in source order). Three edge relations connect them:
//!
//! * [`Relation::Parent`]: parent to child, for every tree edge.
//! * [`Relation::ComingFrom`]: a variable use to each definition whose value
//!   may reach it.
//! * [`Relation::CalculatedBy`]: an assigned variable to each identifier
//!   appearing in its right-hand side.
//!
//! Node ids are the AST's pre-order indices, so a graph and its source parse
//! share numbering, and truncating to a token prefix ([`context_subgraph`])
//! keeps ids compact and ordered.

mod dataflow;

pub use dataflow::{dataflow_edges, DataflowResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Ast, AstKind, CodeToken};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph format error: {0}")]
    Format(String),
    #[error("terminal {terminal} has no subtoken positions")]
    UnalignedTerminal { terminal: usize },
    #[error("terminal {terminal} maps to non-contiguous positions")]
    SplitTerminal { terminal: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    /// AST parent to child.
    Parent,
    /// Variable use to a definition that may reach it.
    ComingFrom,
    /// Defined variable to an identifier its right-hand side reads.
    CalculatedBy,
}

impl Relation {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Relation::Parent => 0,
            Relation::ComingFrom => 1,
            Relation::CalculatedBy => 2,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Relation::Parent => "p",
            Relation::ComingFrom => "co",
            Relation::CalculatedBy => "ca",
        }
    }

    fn from_tag(tag: &str) -> Option<Relation> {
        match tag {
            "p" => Some(Relation::Parent),
            "co" => Some(Relation::ComingFrom),
            "ca" => Some(Relation::CalculatedBy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: Relation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CodeGraph {
    /// Internal nodes as (id, kind), ascending by id.
    pub syntax_nodes: Vec<(usize, AstKind)>,
    /// Leaf nodes as (id, token), in source order (ids ascend with it).
    pub terminal_nodes: Vec<(usize, CodeToken)>,
    /// Parent edges in pre-order, then dataflow edges sorted by
    /// (relation, src, dst). Later passes accumulate messages in this order.
    pub edges: Vec<Edge>,
}

impl CodeGraph {
    pub fn node_count(&self) -> usize {
        self.syntax_nodes.len() + self.terminal_nodes.len()
    }

    pub fn is_terminal(&self, id: usize) -> bool {
        self.terminal_nodes.binary_search_by_key(&id, |(i, _)| *i).is_ok()
    }

    /// Child lists reconstructed from the parent edges, indexed by node id.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.node_count()];
        for e in &self.edges {
            if e.rel == Relation::Parent {
                out[e.src].push(e.dst);
            }
        }
        out
    }
}

/// Build the code graph of an AST: one node per AST node, parent edges for
/// the tree, and the dataflow edges of [`dataflow_edges`].
pub fn build_code_graph(ast: &Ast) -> CodeGraph {
    let mut syntax_nodes = Vec::new();
    let mut terminal_nodes = Vec::new();
    for (id, node) in ast.nodes.iter().enumerate() {
        match &node.token {
            Some(tok) => terminal_nodes.push((id, tok.clone())),
            None => syntax_nodes.push((id, node.kind)),
        }
    }
    let mut edges = Vec::new();
    for (id, node) in ast.nodes.iter().enumerate() {
        for &c in &node.children {
            edges.push(Edge { src: id, dst: c, rel: Relation::Parent });
        }
    }
    edges.extend(dataflow_edges(ast).edges);
    debug_assert!(edges.iter().all(|e| e.src != e.dst));
    CodeGraph { syntax_nodes, terminal_nodes, edges }
}

/// Restrict a graph to its first `visible` terminals.
///
/// Keeps a syntax node iff at least one of its terminal descendants is kept,
/// drops every edge with a dropped endpoint, and renumbers the survivors
/// compactly in their old order. `visible = |terminals|` returns the graph
/// unchanged.
pub fn context_subgraph(g: &CodeGraph, visible: usize) -> CodeGraph {
    assert!(visible <= g.terminal_nodes.len(), "visible terminal count out of range");
    if visible == g.terminal_nodes.len() {
        return g.clone();
    }
    if visible == 0 {
        return CodeGraph::default();
    }
    let n = g.node_count();
    let children = g.children();
    // Terminal ids ascend with source order, so the kept terminals are
    // exactly those with id <= the last kept one.
    let max_kept = g.terminal_nodes[visible - 1].0;
    let mut keep = vec![false; n];
    for (id, _) in &g.terminal_nodes[..visible] {
        keep[*id] = true;
    }
    // Children always have larger pre-order ids than their parent, so one
    // descending sweep propagates "has a kept terminal descendant".
    for id in (0..n).rev() {
        if children[id].iter().any(|&c| keep[c]) && id <= max_kept {
            keep[id] = true;
        }
    }
    let mut remap = vec![usize::MAX; n];
    let mut next = 0;
    for id in 0..n {
        if keep[id] {
            remap[id] = next;
            next += 1;
        }
    }
    CodeGraph {
        syntax_nodes: g
            .syntax_nodes
            .iter()
            .filter(|(id, _)| keep[*id])
            .map(|&(id, kind)| (remap[id], kind))
            .collect(),
        terminal_nodes: g.terminal_nodes[..visible]
            .iter()
            .map(|(id, tok)| (remap[*id], tok.clone()))
            .collect(),
        edges: g
            .edges
            .iter()
            .filter(|e| keep[e.src] && keep[e.dst])
            .map(|e| Edge { src: remap[e.src], dst: remap[e.dst], rel: e.rel })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct TermDto {
    id: usize,
    t: String,
    k: crate::frontend::TokenKind,
    s: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct GraphDto {
    syntax: Vec<(usize, String)>,
    terminals: Vec<TermDto>,
    edges: Vec<(usize, usize, String)>,
}

/// Serialize a graph as one line of JSON. Node order is the canonical
/// (pre-order) id order, so equal graphs serialize to equal bytes.
pub fn serialize(g: &CodeGraph) -> Vec<u8> {
    let dto = GraphDto {
        syntax: g.syntax_nodes.iter().map(|&(id, k)| (id, k.as_str().to_string())).collect(),
        terminals: g
            .terminal_nodes
            .iter()
            .map(|(id, tok)| TermDto {
                id: *id,
                t: tok.text.clone(),
                k: tok.kind,
                s: (tok.span.start, tok.span.end),
            })
            .collect(),
        edges: g.edges.iter().map(|e| (e.src, e.dst, e.rel.tag().to_string())).collect(),
    };
    serde_json::to_vec(&dto).expect("graph serialization cannot fail")
}

pub fn deserialize(bytes: &[u8]) -> Result<CodeGraph, GraphError> {
    let dto: GraphDto =
        serde_json::from_slice(bytes).map_err(|e| GraphError::Format(e.to_string()))?;
    let mut syntax_nodes = Vec::with_capacity(dto.syntax.len());
    for (id, name) in dto.syntax {
        let kind = AstKind::from_name(&name)
            .ok_or_else(|| GraphError::Format(format!("unknown node kind {name:?}")))?;
        syntax_nodes.push((id, kind));
    }
    let terminal_nodes = dto
        .terminals
        .into_iter()
        .map(|t| {
            (
                t.id,
                CodeToken {
                    text: t.t,
                    kind: t.k,
                    span: crate::frontend::Span { start: t.s.0, end: t.s.1 },
                },
            )
        })
        .collect();
    let mut edges = Vec::with_capacity(dto.edges.len());
    for (src, dst, tag) in dto.edges {
        let rel = Relation::from_tag(&tag)
            .ok_or_else(|| GraphError::Format(format!("unknown relation {tag:?}")))?;
        edges.push(Edge { src, dst, rel });
    }
    Ok(CodeGraph { syntax_nodes, terminal_nodes, edges })
}

/// Where each terminal lands in a subword sequence: node id to a half-open
/// position range.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TerminalAlignment {
    pub spans: BTreeMap<usize, (usize, usize)>,
}

impl TerminalAlignment {
    pub fn span_of(&self, terminal_id: usize) -> Option<(usize, usize)> {
        self.spans.get(&terminal_id).copied()
    }
}

/// Map terminals to subword positions. `origins[pos]` names the source token
/// index (= terminal order index) the subtoken at `pos` came from, or `None`
/// for positions that are not code-derived (sequence markers, padding).
///
/// Every terminal must own at least one position and its positions must be
/// contiguous.
pub fn align_terminals(
    g: &CodeGraph,
    origins: &[Option<usize>],
) -> Result<TerminalAlignment, GraphError> {
    let mut spans = BTreeMap::new();
    for (idx, (id, _)) in g.terminal_nodes.iter().enumerate() {
        let mut range: Option<(usize, usize)> = None;
        for (pos, origin) in origins.iter().enumerate() {
            if *origin == Some(idx) {
                range = match range {
                    None => Some((pos, pos + 1)),
                    Some((s, e)) if e == pos => Some((s, pos + 1)),
                    Some(_) => return Err(GraphError::SplitTerminal { terminal: *id }),
                };
            }
        }
        let range = range.ok_or(GraphError::UnalignedTerminal { terminal: *id })?;
        spans.insert(*id, range);
    }
    Ok(TerminalAlignment { spans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse, parse_source, tokenize};

    fn graph_of(src: &str) -> CodeGraph {
        build_code_graph(&parse_source(src, false).unwrap())
    }

    // Id of the n-th terminal (0-based) whose text matches.
    fn term(g: &CodeGraph, text: &str, occurrence: usize) -> usize {
        g.terminal_nodes
            .iter()
            .filter(|(_, t)| t.text == text)
            .nth(occurrence)
            .unwrap_or_else(|| panic!("no occurrence {occurrence} of {text:?}"))
            .0
    }

    fn dataflow(g: &CodeGraph) -> Vec<Edge> {
        g.edges.iter().copied().filter(|e| e.rel != Relation::Parent).collect()
    }

    #[test]
    fn literal_return_has_no_dataflow() {
        let g = graph_of("return 0;");
        assert!(dataflow(&g).is_empty());
        assert_eq!(g.terminal_nodes.len(), 3);
        let parents = g.edges.iter().filter(|e| e.rel == Relation::Parent).count();
        assert_eq!(parents, g.node_count() - 1);
    }

    #[test]
    fn declaration_then_use() {
        let g = graph_of("int a = b + c; return a;");
        let df = dataflow(&g);
        let a_decl = term(&g, "a", 0);
        let a_use = term(&g, "a", 1);
        assert!(df.contains(&Edge { src: a_use, dst: a_decl, rel: Relation::ComingFrom }));
        assert!(df.contains(&Edge { src: a_decl, dst: term(&g, "b", 0), rel: Relation::CalculatedBy }));
        assert!(df.contains(&Edge { src: a_decl, dst: term(&g, "c", 0), rel: Relation::CalculatedBy }));
        assert_eq!(df.len(), 3);
    }

    #[test]
    fn both_branches_reach_a_later_use() {
        let g = graph_of("int x = 0; if (c) { x = 1; } else { x = 2; } return x;");
        let x_ret = term(&g, "x", 3);
        let co: Vec<usize> = dataflow(&g)
            .into_iter()
            .filter(|e| e.rel == Relation::ComingFrom && e.src == x_ret)
            .map(|e| e.dst)
            .collect();
        // Both branch definitions, but not the overwritten initial one.
        assert_eq!(co, vec![term(&g, "x", 1), term(&g, "x", 2)]);
    }

    #[test]
    fn skipped_branch_falls_through() {
        let g = graph_of("int x = 0; if (c) { x = 1; } return x;");
        let x_ret = term(&g, "x", 2);
        let co: Vec<usize> = dataflow(&g)
            .into_iter()
            .filter(|e| e.rel == Relation::ComingFrom && e.src == x_ret)
            .map(|e| e.dst)
            .collect();
        assert_eq!(co, vec![term(&g, "x", 0), term(&g, "x", 1)]);
    }

    #[test]
    fn loop_carried_definitions_reach_the_condition() {
        let g = graph_of("int i = 0; while (i < n) { i = i + 1; }");
        let i_cond = term(&g, "i", 1);
        let i_body_def = term(&g, "i", 2);
        let i_body_use = term(&g, "i", 3);
        let df = dataflow(&g);
        let co_of = |src: usize| -> Vec<usize> {
            df.iter()
                .filter(|e| e.rel == Relation::ComingFrom && e.src == src)
                .map(|e| e.dst)
                .collect()
        };
        let i_decl = term(&g, "i", 0);
        assert_eq!(co_of(i_cond), vec![i_decl, i_body_def]);
        assert_eq!(co_of(i_body_use), vec![i_decl, i_body_def]);
    }

    #[test]
    fn call_names_feed_calculated_by_but_not_coming_from() {
        let src = "int calc(int p) { _total = extract(p); return _total + p.size; }";
        let g = graph_of(src);
        let df = dataflow(&g);
        let total_def = term(&g, "_total", 0);
        let total_use = term(&g, "_total", 1);
        assert!(df.contains(&Edge { src: total_use, dst: total_def, rel: Relation::ComingFrom }));
        // The right-hand side contributes every identifier, the call name included.
        assert!(df.contains(&Edge { src: total_def, dst: term(&g, "extract", 0), rel: Relation::CalculatedBy }));
        assert!(df.contains(&Edge { src: total_def, dst: term(&g, "p", 1), rel: Relation::CalculatedBy }));
        // The parameter has no definition terminal, so its uses resolve to nothing.
        assert!(!df.iter().any(|e| e.rel == Relation::ComingFrom && e.src == term(&g, "p", 1)));
        let res = dataflow_edges(&parse_source(src, false).unwrap());
        assert_eq!(res.unresolved_uses, 2); // p in the call, p before .size
    }

    #[test]
    fn inner_declarations_shadow_and_stay_scoped() {
        let g = graph_of("int x = 1; { int x = 2; y = x; } z = x;");
        let df = dataflow(&g);
        let co_dst = |src: usize| -> Vec<usize> {
            df.iter()
                .filter(|e| e.rel == Relation::ComingFrom && e.src == src)
                .map(|e| e.dst)
                .collect()
        };
        assert_eq!(co_dst(term(&g, "x", 2)), vec![term(&g, "x", 1)]); // y = x sees the inner decl
        assert_eq!(co_dst(term(&g, "x", 3)), vec![term(&g, "x", 0)]); // z = x sees the outer one
    }

    #[test]
    fn assignment_to_undeclared_name_escapes_blocks() {
        let g = graph_of("if (c) { x = 1; } r = x;");
        let df = dataflow(&g);
        let x_use = term(&g, "x", 1);
        assert!(df.contains(&Edge { src: x_use, dst: term(&g, "x", 0), rel: Relation::ComingFrom }));
    }

    #[test]
    fn truncation_drops_edges_with_dropped_endpoints() {
        let src = "int a = b + c; return a;";
        let g = graph_of(src);
        let toks = tokenize(src).unwrap();
        // Cut right before `return`: the use disappears, and with it the edge.
        let cut = 7;
        assert_eq!(toks[cut].text, "return");
        let sub = context_subgraph(&g, cut);
        assert!(!dataflow(&sub).iter().any(|e| e.rel == Relation::ComingFrom));
        assert_eq!(sub.terminal_nodes.len(), cut);
        // Calculated-by edges among the kept terminals survive.
        assert_eq!(dataflow(&sub).len(), 2);
    }

    #[test]
    fn full_and_empty_truncations() {
        let g = graph_of("int a = 1; return a;");
        assert_eq!(context_subgraph(&g, g.terminal_nodes.len()), g);
        assert_eq!(context_subgraph(&g, 0), CodeGraph::default());
    }

    #[test]
    fn subgraph_matches_reparsed_prefix_for_straight_line_code() {
        let src = "int a = 2; int b = a * a; b = b + 1; return a + b;";
        let toks = tokenize(src).unwrap();
        let full = build_code_graph(&parse(&toks, false).unwrap());
        for k in 0..=toks.len() {
            let sub = context_subgraph(&full, k);
            let reparsed = build_code_graph(&parse(&toks[..k], true).unwrap());
            if k == 0 {
                // The reparse keeps an empty Program node; the subgraph keeps nothing.
                assert_eq!(sub, CodeGraph::default());
                continue;
            }
            assert_eq!(sub, reparsed, "prefix of {k} tokens diverged");
        }
    }

    #[test]
    fn serialization_round_trips_byte_identically() {
        let g = graph_of("int calc(int p) { int t = p + 1; while (t > 0) { t = t - 1; } return t; }");
        let bytes = serialize(&g);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize(&back), bytes);
    }

    #[test]
    fn deserialize_rejects_malformed_input() {
        assert!(matches!(deserialize(b"not json"), Err(GraphError::Format(_))));
        let mut bytes = serialize(&graph_of("return 0;"));
        let s = String::from_utf8(bytes.clone()).unwrap().replace("\"p\"", "\"xx\"");
        bytes = s.into_bytes();
        assert!(matches!(deserialize(&bytes), Err(GraphError::Format(_))));
    }

    #[test]
    fn terminal_alignment_spans_subtoken_positions() {
        let g = graph_of("return x;");
        // Sequence: marker, then "return" in one piece, "x" split in two, ";".
        let origins = vec![None, Some(0), Some(1), Some(1), Some(2)];
        let a = align_terminals(&g, &origins).unwrap();
        let ids: Vec<usize> = g.terminal_nodes.iter().map(|(id, _)| *id).collect();
        assert_eq!(a.span_of(ids[0]), Some((1, 2)));
        assert_eq!(a.span_of(ids[1]), Some((2, 4)));
        assert_eq!(a.span_of(ids[2]), Some((4, 5)));

        let missing = vec![None, Some(0), Some(2)];
        assert_eq!(
            align_terminals(&g, &missing).unwrap_err(),
            GraphError::UnalignedTerminal { terminal: ids[1] }
        );
        let split = vec![Some(0), Some(1), Some(0), Some(2)];
        assert_eq!(
            align_terminals(&g, &split).unwrap_err(),
            GraphError::SplitTerminal { terminal: ids[0] }
        );
    }
}
