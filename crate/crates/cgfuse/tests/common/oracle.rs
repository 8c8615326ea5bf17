//! Independent reaching-definitions interpreter used to cross-check the
//! dataflow builder.
//!
//! Where the builder walks the AST once with merged definition *sets*, this
//! oracle enumerates concrete execution paths (each `if` both ways, each
//! `while` run 0, 1, or 2 times) and simulates them with a single reaching
//! definition per variable. The union of per-path results must equal the
//! builder's may-reach edge sets.

use std::collections::{BTreeMap, BTreeSet};

use cgfuse::frontend::{Ast, AstKind, TokenKind};

/// One lexical scope: name -> definition terminal, or None for a declared
/// but uninitialized name.
type Scope = BTreeMap<String, Option<usize>>;
type Env = Vec<Scope>;

pub struct OracleEdges {
    pub co: BTreeSet<(usize, usize)>,
    pub ca: BTreeSet<(usize, usize)>,
}

pub fn reaching_defs_by_path(ast: &Ast) -> OracleEdges {
    let mut sim = Sim { ast, co: BTreeSet::new(), ca: BTreeSet::new() };
    let root = ast.root;
    let env: Env = vec![Scope::new()];
    if ast.nodes[root].kind == AstKind::MethodDecl {
        if let Some(block) = child_of(ast, root, AstKind::Block) {
            sim.run_block(block, env);
        }
    } else {
        sim.run_stmts(root, env);
    }
    OracleEdges { co: sim.co, ca: sim.ca }
}

fn child_of(ast: &Ast, id: usize, kind: AstKind) -> Option<usize> {
    ast.nodes[id].children.iter().copied().find(|&c| ast.nodes[c].kind == kind)
}

struct Sim<'a> {
    ast: &'a Ast,
    co: BTreeSet<(usize, usize)>,
    ca: BTreeSet<(usize, usize)>,
}

impl<'a> Sim<'a> {
    fn kind(&self, id: usize) -> AstKind {
        self.ast.nodes[id].kind
    }

    fn children(&self, id: usize) -> &[usize] {
        &self.ast.nodes[id].children
    }

    fn name_terminal(&self, stmt: usize) -> Option<(usize, String)> {
        let name = child_of(self.ast, stmt, AstKind::Name)?;
        let term = *self.children(name).first()?;
        let text = self.ast.nodes[term].token.as_ref()?.text.clone();
        Some((term, text))
    }

    /// All ways the statement list can end, one env per enumerated path.
    fn run_stmts(&mut self, container: usize, env: Env) -> Vec<Env> {
        let mut worlds: BTreeSet<Env> = BTreeSet::from([env]);
        for &c in &self.children(container).to_vec() {
            let mut next = BTreeSet::new();
            for env in worlds {
                for out in self.exec(c, env) {
                    next.insert(out);
                }
            }
            worlds = next;
        }
        worlds.into_iter().collect()
    }

    fn run_block(&mut self, block: usize, mut env: Env) -> Vec<Env> {
        env.push(Scope::new());
        let mut outs = self.run_stmts(block, env);
        for e in &mut outs {
            e.pop();
        }
        outs
    }

    fn exec(&mut self, stmt: usize, mut env: Env) -> Vec<Env> {
        match self.kind(stmt) {
            AstKind::LocalVarDecl => {
                let expr = child_of(self.ast, stmt, AstKind::Expr);
                if let Some(e) = expr {
                    self.uses_in_expr(e, &env);
                }
                if let Some((term, text)) = self.name_terminal(stmt) {
                    if let Some(e) = expr {
                        self.calculated_by(term, e);
                    }
                    let def = expr.map(|_| term);
                    env.last_mut().unwrap().insert(text, def);
                }
                vec![env]
            }
            AstKind::AssignStmt => {
                let Some(e) = child_of(self.ast, stmt, AstKind::Expr) else {
                    return vec![env];
                };
                self.uses_in_expr(e, &env);
                if let Some((term, text)) = self.name_terminal(stmt) {
                    self.calculated_by(term, e);
                    // Rebind where the name is declared; undeclared targets
                    // live at the root so they outlast the enclosing block.
                    let idx = env.iter().rposition(|s| s.contains_key(&text)).unwrap_or(0);
                    env[idx].insert(text, Some(term));
                }
                vec![env]
            }
            AstKind::ExprStmt | AstKind::ReturnStmt => {
                if let Some(e) = child_of(self.ast, stmt, AstKind::Expr) {
                    self.uses_in_expr(e, &env);
                }
                vec![env]
            }
            AstKind::IfStmt => {
                self.cond_uses(stmt, &env);
                let blocks: Vec<usize> = self
                    .children(stmt)
                    .iter()
                    .copied()
                    .filter(|&c| self.kind(c) == AstKind::Block)
                    .collect();
                let Some(&then_block) = blocks.first() else { return vec![env] };
                let mut outs = self.run_block(then_block, env.clone());
                match blocks.get(1) {
                    Some(&else_block) => outs.extend(self.run_block(else_block, env)),
                    None => outs.push(env),
                }
                outs
            }
            AstKind::WhileStmt => {
                let body = child_of(self.ast, stmt, AstKind::Block);
                self.cond_uses(stmt, &env);
                let mut outs = vec![env.clone()]; // zero iterations
                let Some(body) = body else { return outs };
                for e1 in self.run_block(body, env) {
                    self.cond_uses(stmt, &e1);
                    outs.push(e1.clone()); // one iteration
                    for e2 in self.run_block(body, e1) {
                        self.cond_uses(stmt, &e2);
                        outs.push(e2); // two iterations
                    }
                }
                outs
            }
            AstKind::Block => self.run_block(stmt, env),
            _ => vec![env],
        }
    }

    fn cond_uses(&mut self, stmt: usize, env: &Env) {
        if let Some(cond) = child_of(self.ast, stmt, AstKind::Cond) {
            if let Some(e) = child_of(self.ast, cond, AstKind::Expr) {
                self.uses_in_expr(e, env);
            }
        }
    }

    fn uses_in_expr(&mut self, expr: usize, env: &Env) {
        let ch = self.children(expr).to_vec();
        for (i, &c) in ch.iter().enumerate() {
            match self.kind(c) {
                AstKind::VarRef => {
                    // A VarRef directly followed by an argument list is a
                    // call name, not a value read.
                    if ch.get(i + 1).is_some_and(|&n| self.kind(n) == AstKind::ArgList) {
                        continue;
                    }
                    let Some(&term) = self.children(c).first() else { continue };
                    let text = self.ast.nodes[term].token.as_ref().unwrap().text.clone();
                    if let Some(Some(def)) = env.iter().rev().find_map(|s| s.get(&text)) {
                        self.co.insert((term, *def));
                    }
                }
                AstKind::ArgList | AstKind::ParenGroup => {
                    for gc in self.children(c).to_vec() {
                        if self.kind(gc) == AstKind::Expr {
                            self.uses_in_expr(gc, env);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn calculated_by(&mut self, def_term: usize, expr: usize) {
        let node = &self.ast.nodes[expr];
        if node.token.as_ref().is_some_and(|t| t.kind == TokenKind::Identifier) {
            self.ca.insert((def_term, expr));
        }
        for c in node.children.clone() {
            self.calculated_by(def_term, c);
        }
    }
}
