//! Reaching-definition analysis over the AST, producing the dataflow edges.
//!
//! The walker tracks, per lexical scope, which definition terminals may hold
//! each variable's current value. Definitions are initialized declarations
//! and assignment targets; parameters, fields and call names never define.
//! `if` joins the arm states by union (no `else` falls through), and `while`
//! runs its condition and body a second time over the joined state so that
//! loop-carried values reach the condition and earlier body reads.

use std::collections::{BTreeMap, BTreeSet};

use super::{Edge, Relation};
use crate::frontend::{Ast, AstKind, NodeId, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataflowResult {
    /// ComingFrom edges sorted by (src, dst), then CalculatedBy likewise.
    pub edges: Vec<Edge>,
    /// Distinct use sites whose name had no visible definition.
    pub unresolved_uses: usize,
}

type Scope = BTreeMap<String, BTreeSet<usize>>;
type Env = Vec<Scope>;

/// Compute the dataflow edges of an AST.
///
/// ComingFrom points each variable use at every definition that may reach it;
/// CalculatedBy points each definition at every identifier terminal inside
/// its right-hand side. A use is a `VarRef` that is not immediately followed
/// by an argument list (that position is a call name).
pub fn dataflow_edges(ast: &Ast) -> DataflowResult {
    let mut w = Walker {
        ast,
        co: BTreeSet::new(),
        ca: BTreeSet::new(),
        unresolved: BTreeSet::new(),
    };
    if ast.nodes[ast.root].kind == AstKind::MethodDecl {
        w.walk_method(ast.root);
    } else {
        let mut env: Env = vec![Scope::new()];
        w.walk_stmts(ast.root, &mut env);
    }
    let mut edges = Vec::with_capacity(w.co.len() + w.ca.len());
    edges.extend(w.co.iter().map(|&(s, d)| Edge { src: s, dst: d, rel: Relation::ComingFrom }));
    edges.extend(w.ca.iter().map(|&(s, d)| Edge { src: s, dst: d, rel: Relation::CalculatedBy }));
    DataflowResult { edges, unresolved_uses: w.unresolved.len() }
}

struct Walker<'a> {
    ast: &'a Ast,
    co: BTreeSet<(usize, usize)>,
    ca: BTreeSet<(usize, usize)>,
    unresolved: BTreeSet<usize>,
}

impl<'a> Walker<'a> {
    fn kind(&self, id: NodeId) -> AstKind {
        self.ast.nodes[id].kind
    }

    fn children(&self, id: NodeId) -> &[NodeId] {
        &self.ast.nodes[id].children
    }

    fn find_child(&self, id: NodeId, kind: AstKind) -> Option<NodeId> {
        self.children(id).iter().copied().find(|&c| self.kind(c) == kind)
    }

    /// Terminal id under a Name or VarRef wrapper.
    fn wrapped_terminal(&self, id: NodeId) -> Option<NodeId> {
        self.children(id).first().copied()
    }

    fn terminal_text(&self, id: NodeId) -> &str {
        &self.ast.nodes[id].token.as_ref().expect("terminal without token").text
    }

    fn walk_method(&mut self, id: NodeId) {
        let mut env: Env = vec![Scope::new()];
        if let Some(block) = self.find_child(id, AstKind::Block) {
            self.walk_block(block, &mut env);
        }
    }

    fn walk_stmts(&mut self, container: NodeId, env: &mut Env) {
        let ch: Vec<NodeId> = self.children(container).to_vec();
        for c in ch {
            match self.kind(c) {
                AstKind::LocalVarDecl => self.decl(c, env),
                AstKind::AssignStmt => self.assign(c, env),
                AstKind::ExprStmt | AstKind::ReturnStmt => {
                    if let Some(e) = self.find_child(c, AstKind::Expr) {
                        self.uses_in_expr(e, env);
                    }
                }
                AstKind::IfStmt => self.if_stmt(c, env),
                AstKind::WhileStmt => self.while_stmt(c, env),
                AstKind::Block => self.walk_block(c, env),
                AstKind::MethodDecl => self.walk_method(c),
                _ => {}
            }
        }
    }

    fn walk_block(&mut self, id: NodeId, env: &mut Env) {
        env.push(Scope::new());
        self.walk_stmts(id, env);
        env.pop();
    }

    fn decl(&mut self, id: NodeId, env: &mut Env) {
        let expr = self.find_child(id, AstKind::Expr);
        if let Some(e) = expr {
            self.uses_in_expr(e, env);
        }
        let Some(name) = self.find_child(id, AstKind::Name) else { return };
        let Some(term) = self.wrapped_terminal(name) else { return };
        if let Some(e) = expr {
            self.calculated_by(term, e);
            let text = self.terminal_text(term).to_string();
            env.last_mut().unwrap().insert(text, BTreeSet::from([term]));
        }
        // An uninitialized declaration introduces the name without a value,
        // so later uses before the first assignment stay unresolved.
        if expr.is_none() {
            let text = self.terminal_text(term).to_string();
            env.last_mut().unwrap().insert(text, BTreeSet::new());
        }
    }

    fn assign(&mut self, id: NodeId, env: &mut Env) {
        let expr = self.find_child(id, AstKind::Expr);
        if let Some(e) = expr {
            self.uses_in_expr(e, env);
        }
        let Some(name) = self.find_child(id, AstKind::Name) else { return };
        let Some(term) = self.wrapped_terminal(name) else { return };
        if expr.is_none() {
            return; // incomplete `x =` defines nothing yet
        }
        self.calculated_by(term, expr.unwrap());
        let text = self.terminal_text(term).to_string();
        let defs = BTreeSet::from([term]);
        // Rebind where the name lives; names never declared (fields and the
        // like) land in the outermost scope so they survive block joins.
        for scope in env.iter_mut().rev() {
            if scope.contains_key(&text) {
                scope.insert(text, defs);
                return;
            }
        }
        env[0].insert(text, defs);
    }

    fn cond_uses(&mut self, stmt: NodeId, env: &Env) {
        if let Some(cond) = self.find_child(stmt, AstKind::Cond) {
            if let Some(e) = self.find_child(cond, AstKind::Expr) {
                self.uses_in_expr(e, env);
            }
        }
    }

    fn if_stmt(&mut self, id: NodeId, env: &mut Env) {
        self.cond_uses(id, env);
        let blocks: Vec<NodeId> = self
            .children(id)
            .iter()
            .copied()
            .filter(|&c| self.kind(c) == AstKind::Block)
            .collect();
        let Some(&then_block) = blocks.first() else { return };
        let mut then_env = env.clone();
        self.walk_block(then_block, &mut then_env);
        if let Some(&else_block) = blocks.get(1) {
            let mut else_env = env.clone();
            self.walk_block(else_block, &mut else_env);
            *env = merge(&then_env, &else_env);
        } else {
            *env = merge(env, &then_env);
        }
    }

    fn while_stmt(&mut self, id: NodeId, env: &mut Env) {
        let body = self.find_child(id, AstKind::Block);
        self.cond_uses(id, env);
        let mut once = env.clone();
        if let Some(b) = body {
            self.walk_block(b, &mut once);
        }
        // Second pass over the join of "never ran" and "ran once": condition
        // and body reads now also see definitions from a previous iteration.
        let mut twice = merge(env, &once);
        self.cond_uses(id, &twice);
        if let Some(b) = body {
            self.walk_block(b, &mut twice);
        }
        *env = merge(env, &twice);
    }

    fn uses_in_expr(&mut self, expr: NodeId, env: &Env) {
        let ch: Vec<NodeId> = self.children(expr).to_vec();
        for (i, &c) in ch.iter().enumerate() {
            match self.kind(c) {
                AstKind::VarRef => {
                    let is_call_name =
                        ch.get(i + 1).is_some_and(|&n| self.kind(n) == AstKind::ArgList);
                    if is_call_name {
                        continue;
                    }
                    let Some(term) = self.wrapped_terminal(c) else { continue };
                    let text = self.terminal_text(term).to_string();
                    match env.iter().rev().find_map(|s| s.get(&text)) {
                        Some(defs) if !defs.is_empty() => {
                            for &d in defs {
                                self.co.insert((term, d));
                            }
                        }
                        _ => {
                            self.unresolved.insert(term);
                        }
                    }
                }
                AstKind::ArgList | AstKind::ParenGroup => {
                    let grandchildren: Vec<NodeId> = self.children(c).to_vec();
                    for gc in grandchildren {
                        if self.kind(gc) == AstKind::Expr {
                            self.uses_in_expr(gc, env);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// CalculatedBy from a definition terminal to every identifier terminal
    /// in the right-hand side, call and field names included.
    fn calculated_by(&mut self, def_term: NodeId, expr: NodeId) {
        let mut stack = vec![expr];
        while let Some(id) = stack.pop() {
            let node = &self.ast.nodes[id];
            if let Some(tok) = &node.token {
                if tok.kind == TokenKind::Identifier {
                    self.ca.insert((def_term, id));
                }
            }
            stack.extend(node.children.iter().copied());
        }
    }
}

fn merge(a: &Env, b: &Env) -> Env {
    debug_assert_eq!(a.len(), b.len(), "merging environments of different depth");
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut m = x.clone();
            for (name, defs) in y {
                m.entry(name.clone()).or_default().extend(defs.iter().copied());
            }
            m
        })
        .collect()
}
