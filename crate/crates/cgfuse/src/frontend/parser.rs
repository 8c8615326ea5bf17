use super::{Ast, AstKind, AstNode, CodeToken, FrontendError, NodeId, TokenKind};

// Build tree used during parsing; flattened into the id-based `Ast` at the end.
struct TNode {
    kind: AstKind,
    token: Option<CodeToken>,
    children: Vec<TNode>,
}

impl TNode {
    fn new(kind: AstKind) -> Self {
        TNode { kind, token: None, children: Vec::new() }
    }

    fn leaf(tok: CodeToken) -> Self {
        TNode { kind: AstKind::leaf_for(tok.kind), token: Some(tok), children: Vec::new() }
    }
}

enum Stop {
    Eof { expected: Vec<String> },
    Mismatch { offset: usize, expected: Vec<String> },
}

type PResult = Result<(), Stop>;

/// Parse a token stream into an [`Ast`].
///
/// In strict mode any deviation from the grammar is a
/// [`FrontendError::SyntaxError`]. In tolerant mode the parser keeps the
/// structure built from the longest parsable prefix: end of input simply
/// closes every open construct, and a hard mismatch moves all remaining
/// tokens into a trailing [`AstKind::Incomplete`] node, so every token still
/// appears as a leaf.
///
/// A lone method declaration becomes the root; anything else is wrapped in a
/// `Program` node. Where end of input leaves a choice open, the parser picks
/// the reading that the tokens so far already justify: a statement-leading
/// identifier becomes an assignment target, and `type ident` stays a local
/// declaration because no `(` was seen.
pub fn parse(tokens: &[CodeToken], tolerant: bool) -> Result<Ast, FrontendError> {
    let mut p = Parser { toks: tokens, pos: 0 };
    let mut items: Vec<TNode> = Vec::new();
    while p.peek(0).is_some() {
        match p.parse_item(&mut items) {
            Ok(()) => {}
            Err(stop) if tolerant => match stop {
                Stop::Eof { .. } => break,
                Stop::Mismatch { .. } => break,
            },
            Err(Stop::Mismatch { offset, expected }) => {
                return Err(FrontendError::SyntaxError { offset, expected });
            }
            Err(Stop::Eof { expected }) => {
                let offset = tokens.last().map_or(0, |t| t.span.end);
                return Err(FrontendError::SyntaxError { offset, expected });
            }
        }
    }
    if p.pos < tokens.len() {
        let mut inc = TNode::new(AstKind::Incomplete);
        while p.pos < tokens.len() {
            let tok = p.take();
            inc.children.push(TNode::leaf(tok));
        }
        items.push(inc);
    }
    let root = if items.len() == 1 && items[0].kind == AstKind::MethodDecl {
        items.pop().unwrap()
    } else {
        let mut prog = TNode::new(AstKind::Program);
        prog.children = items;
        prog
    };
    let mut nodes = Vec::new();
    let root = flatten(root, &mut nodes);
    Ok(Ast { nodes, root })
}

fn flatten(n: TNode, nodes: &mut Vec<AstNode>) -> NodeId {
    let id = nodes.len();
    nodes.push(AstNode { kind: n.kind, children: Vec::new(), token: n.token });
    let kids: Vec<NodeId> = n.children.into_iter().map(|c| flatten(c, nodes)).collect();
    nodes[id].children = kids;
    id
}

fn push_if_nonempty(out: &mut Vec<TNode>, child: TNode) {
    if !child.children.is_empty() {
        out.push(child);
    }
}

struct Parser<'t> {
    toks: &'t [CodeToken],
    pos: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self, n: usize) -> Option<&CodeToken> {
        self.toks.get(self.pos + n)
    }

    fn take(&mut self) -> CodeToken {
        let t = self.toks[self.pos].clone();
        self.pos += 1;
        t
    }

    fn is_punct(&self, n: usize, s: &str) -> bool {
        self.peek(n).is_some_and(|t| t.kind == TokenKind::Punct && t.text == s)
    }

    fn is_op(&self, n: usize, s: &str) -> bool {
        self.peek(n).is_some_and(|t| t.kind == TokenKind::Operator && t.text == s)
    }

    fn is_kw(&self, n: usize, s: &str) -> bool {
        self.peek(n).is_some_and(|t| t.kind == TokenKind::Keyword && t.text == s)
    }

    fn is_type_kw(&self, n: usize) -> bool {
        self.peek(n)
            .is_some_and(|t| t.kind == TokenKind::Keyword && super::TYPE_KEYWORDS.contains(&t.text.as_str()))
    }

    fn is_ident(&self, n: usize) -> bool {
        self.peek(n).is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    fn is_lit(&self, n: usize) -> bool {
        self.peek(n).is_some_and(|t| t.kind == TokenKind::Literal)
    }

    fn expected(&self, names: &[&str]) -> Stop {
        let expected = names.iter().map(|s| s.to_string()).collect();
        match self.peek(0) {
            Some(t) => Stop::Mismatch { offset: t.span.start, expected },
            None => Stop::Eof { expected },
        }
    }

    fn expect_punct(&mut self, s: &str, parent: &mut TNode) -> PResult {
        if self.is_punct(0, s) {
            let tok = self.take();
            parent.children.push(TNode::leaf(tok));
            Ok(())
        } else {
            Err(self.expected(&[s]))
        }
    }

    fn expect_name(&mut self, parent: &mut TNode) -> PResult {
        if self.is_ident(0) {
            let mut name = TNode::new(AstKind::Name);
            let tok = self.take();
            name.children.push(TNode::leaf(tok));
            parent.children.push(name);
            Ok(())
        } else {
            Err(self.expected(&["identifier"]))
        }
    }

    fn expect_type(&mut self, parent: &mut TNode) -> PResult {
        if self.is_type_kw(0) {
            let mut ty = TNode::new(AstKind::TypeSpec);
            let tok = self.take();
            ty.children.push(TNode::leaf(tok));
            parent.children.push(ty);
            Ok(())
        } else {
            Err(self.expected(&["type"]))
        }
    }

    // Program items: method declarations or top-level statements. Only a seen
    // `type ident (` opens a method; at end of input the statement reading
    // wins, which keeps prefix parses of statement programs aligned with the
    // full parse.
    fn parse_item(&mut self, items: &mut Vec<TNode>) -> PResult {
        if self.is_type_kw(0) && self.is_ident(1) && self.is_punct(2, "(") {
            let mut m = TNode::new(AstKind::MethodDecl);
            let r = self.parse_method(&mut m);
            items.push(m);
            return r;
        }
        self.parse_stmt_into(items)
    }

    fn parse_method(&mut self, m: &mut TNode) -> PResult {
        self.expect_type(m)?;
        self.expect_name(m)?;
        let mut pl = TNode::new(AstKind::ParamList);
        let r = self.parse_params(&mut pl);
        push_if_nonempty(&mut m.children, pl);
        r?;
        self.parse_block(&mut m.children)
    }

    fn parse_params(&mut self, pl: &mut TNode) -> PResult {
        self.expect_punct("(", pl)?;
        if !self.is_punct(0, ")") {
            loop {
                let mut param = TNode::new(AstKind::Param);
                let r = self.expect_type(&mut param).and_then(|()| self.expect_name(&mut param));
                push_if_nonempty(&mut pl.children, param);
                r?;
                if self.is_punct(0, ",") {
                    let tok = self.take();
                    pl.children.push(TNode::leaf(tok));
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")", pl)
    }

    fn parse_block(&mut self, out: &mut Vec<TNode>) -> PResult {
        let mut b = TNode::new(AstKind::Block);
        let r = self.parse_block_inner(&mut b);
        if !b.children.is_empty() {
            out.push(b);
        }
        r
    }

    fn parse_block_inner(&mut self, b: &mut TNode) -> PResult {
        self.expect_punct("{", b)?;
        loop {
            if self.is_punct(0, "}") {
                let tok = self.take();
                b.children.push(TNode::leaf(tok));
                return Ok(());
            }
            if self.peek(0).is_none() {
                return Err(Stop::Eof { expected: vec!["statement".into(), "}".into()] });
            }
            self.parse_stmt_into(&mut b.children)?;
        }
    }

    // Statements push themselves into `out`; the terminating `;` of simple
    // statements becomes a sibling leaf in the same container.
    fn parse_stmt_into(&mut self, out: &mut Vec<TNode>) -> PResult {
        if self.is_type_kw(0) {
            let mut d = TNode::new(AstKind::LocalVarDecl);
            let r = self.parse_local_decl(&mut d);
            out.push(d);
            r?;
            return self.expect_semi_into(out);
        }
        if self.is_kw(0, "return") {
            let mut ret = TNode::new(AstKind::ReturnStmt);
            let tok = self.take();
            ret.children.push(TNode::leaf(tok));
            let r = if self.at_expr_start() { self.parse_expr(&mut ret.children) } else { Ok(()) };
            out.push(ret);
            r?;
            return self.expect_semi_into(out);
        }
        if self.is_kw(0, "if") {
            let mut stmt = TNode::new(AstKind::IfStmt);
            let r = self.parse_if(&mut stmt);
            out.push(stmt);
            return r;
        }
        if self.is_kw(0, "while") {
            let mut stmt = TNode::new(AstKind::WhileStmt);
            let r = self.parse_while(&mut stmt);
            out.push(stmt);
            return r;
        }
        if self.is_punct(0, "{") {
            return self.parse_block(out);
        }
        if self.is_ident(0) && (self.is_punct(1, "=") || self.peek(1).is_none()) {
            let mut a = TNode::new(AstKind::AssignStmt);
            let r = self
                .expect_name(&mut a)
                .and_then(|()| self.expect_punct("=", &mut a))
                .and_then(|()| self.parse_expr(&mut a.children));
            out.push(a);
            r?;
            return self.expect_semi_into(out);
        }
        if self.at_expr_start() {
            let mut s = TNode::new(AstKind::ExprStmt);
            let r = self.parse_expr(&mut s.children);
            out.push(s);
            r?;
            return self.expect_semi_into(out);
        }
        Err(self.expected(&["statement"]))
    }

    fn expect_semi_into(&mut self, out: &mut Vec<TNode>) -> PResult {
        if self.is_punct(0, ";") {
            let tok = self.take();
            out.push(TNode::leaf(tok));
            Ok(())
        } else {
            Err(self.expected(&[";"]))
        }
    }

    fn parse_local_decl(&mut self, d: &mut TNode) -> PResult {
        self.expect_type(d)?;
        self.expect_name(d)?;
        if self.is_punct(0, "=") {
            let tok = self.take();
            d.children.push(TNode::leaf(tok));
            self.parse_expr(&mut d.children)?;
        } else if !self.is_punct(0, ";") {
            return Err(self.expected(&["=", ";"]));
        }
        Ok(())
    }

    fn parse_if(&mut self, stmt: &mut TNode) -> PResult {
        let tok = self.take();
        stmt.children.push(TNode::leaf(tok));
        self.parse_cond(stmt)?;
        self.parse_block(&mut stmt.children)?;
        if self.is_kw(0, "else") {
            let tok = self.take();
            stmt.children.push(TNode::leaf(tok));
            self.parse_block(&mut stmt.children)?;
        }
        Ok(())
    }

    fn parse_while(&mut self, stmt: &mut TNode) -> PResult {
        let tok = self.take();
        stmt.children.push(TNode::leaf(tok));
        self.parse_cond(stmt)?;
        self.parse_block(&mut stmt.children)
    }

    fn parse_cond(&mut self, stmt: &mut TNode) -> PResult {
        let mut c = TNode::new(AstKind::Cond);
        let r = self
            .expect_punct("(", &mut c)
            .and_then(|()| self.parse_expr(&mut c.children))
            .and_then(|()| self.expect_punct(")", &mut c));
        push_if_nonempty(&mut stmt.children, c);
        r
    }

    fn at_expr_start(&self) -> bool {
        self.is_ident(0) || self.is_lit(0) || self.is_punct(0, "(")
    }

    // Expressions are a single flat region: operator leaves and atom wrappers
    // (VarRef, Lit, ParenGroup, FieldRef, ArgList) all become direct children
    // of one Expr node, in source order. The usual precedence climbing is
    // kept only to validate the input.
    fn parse_expr(&mut self, out: &mut Vec<TNode>) -> PResult {
        let mut e = TNode::new(AstKind::Expr);
        let r = self.parse_cmp(&mut e);
        push_if_nonempty(out, e);
        r
    }

    fn parse_cmp(&mut self, e: &mut TNode) -> PResult {
        self.parse_add(e)?;
        while self.is_op(0, "==") || self.is_op(0, "<") || self.is_op(0, ">") {
            let tok = self.take();
            e.children.push(TNode::leaf(tok));
            self.parse_add(e)?;
        }
        Ok(())
    }

    fn parse_add(&mut self, e: &mut TNode) -> PResult {
        self.parse_mul(e)?;
        while self.is_op(0, "+") || self.is_op(0, "-") {
            let tok = self.take();
            e.children.push(TNode::leaf(tok));
            self.parse_mul(e)?;
        }
        Ok(())
    }

    fn parse_mul(&mut self, e: &mut TNode) -> PResult {
        self.parse_postfix(e)?;
        while self.is_op(0, "*") || self.is_op(0, "/") {
            let tok = self.take();
            e.children.push(TNode::leaf(tok));
            self.parse_postfix(e)?;
        }
        Ok(())
    }

    fn parse_postfix(&mut self, e: &mut TNode) -> PResult {
        self.parse_primary(e)?;
        loop {
            if self.is_punct(0, "(") {
                self.parse_args(e)?;
            } else if self.is_punct(0, ".") {
                self.parse_field(e)?;
            } else {
                return Ok(());
            }
        }
    }

    fn parse_primary(&mut self, e: &mut TNode) -> PResult {
        if self.is_ident(0) {
            let mut v = TNode::new(AstKind::VarRef);
            let tok = self.take();
            v.children.push(TNode::leaf(tok));
            e.children.push(v);
            Ok(())
        } else if self.is_lit(0) {
            let mut l = TNode::new(AstKind::Lit);
            let tok = self.take();
            l.children.push(TNode::leaf(tok));
            e.children.push(l);
            Ok(())
        } else if self.is_punct(0, "(") {
            let mut g = TNode::new(AstKind::ParenGroup);
            let r = self
                .expect_punct("(", &mut g)
                .and_then(|()| self.parse_expr(&mut g.children))
                .and_then(|()| self.expect_punct(")", &mut g));
            push_if_nonempty(&mut e.children, g);
            r
        } else {
            Err(self.expected(&["expression"]))
        }
    }

    fn parse_args(&mut self, e: &mut TNode) -> PResult {
        let mut a = TNode::new(AstKind::ArgList);
        let r = self.parse_args_inner(&mut a);
        push_if_nonempty(&mut e.children, a);
        r
    }

    fn parse_args_inner(&mut self, a: &mut TNode) -> PResult {
        self.expect_punct("(", a)?;
        if !self.is_punct(0, ")") {
            loop {
                self.parse_expr(&mut a.children)?;
                if self.is_punct(0, ",") {
                    let tok = self.take();
                    a.children.push(TNode::leaf(tok));
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")", a)
    }

    fn parse_field(&mut self, e: &mut TNode) -> PResult {
        let mut f = TNode::new(AstKind::FieldRef);
        let r = self.expect_punct(".", &mut f).and_then(|()| self.expect_name(&mut f));
        push_if_nonempty(&mut e.children, f);
        r
    }
}
