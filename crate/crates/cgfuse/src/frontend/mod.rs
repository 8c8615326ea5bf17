//! Lexer and parser for the Java-like mini-language.
//!
//! The grammar covers method declarations with typed parameters, local
//! variable declarations, assignments, `return`, `if`/`else`, `while`,
//! expression statements, calls, field access, and binary arithmetic and
//! comparison operators.
//!
//! The AST is shaped so that every node is introduced by its first token and
//! never re-parented or re-labeled by later input: expressions are flat
//! regions ([`AstKind::Expr`]) whose atoms get small wrappers (`VarRef`,
//! `Lit`, `ArgList`, `FieldRef`, `ParenGroup`) created at their leading
//! token, and statement terminators attach to the enclosing container. As a
//! consequence, the tree built from a source prefix is exactly the full tree
//! restricted to the tokens of that prefix, which downstream graph masking
//! relies on.

mod lexer;
mod parser;

pub use lexer::tokenize;
pub use parser::parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEYWORDS: [&str; 7] = ["int", "string", "void", "return", "if", "else", "while"];
pub const TYPE_KEYWORDS: [&str; 3] = ["int", "string", "void"];

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("invalid character {ch:?} at byte {offset}")]
    InvalidCharacter { ch: char, offset: usize },
    #[error("syntax error at byte {offset}: expected {}", expected.join(" | "))]
    SyntaxError { offset: usize, expected: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Literal,
    Operator,
    Punct,
}

/// Byte range of a token in its source; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeToken {
    pub text: String,
    pub kind: TokenKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AstKind {
    Program,
    MethodDecl,
    TypeSpec,
    Name,
    ParamList,
    Param,
    Block,
    LocalVarDecl,
    AssignStmt,
    ExprStmt,
    ReturnStmt,
    IfStmt,
    WhileStmt,
    Cond,
    Expr,
    VarRef,
    Lit,
    FieldRef,
    ArgList,
    ParenGroup,
    Incomplete,
    IdentifierLeaf,
    KeywordLeaf,
    LiteralLeaf,
    OperatorLeaf,
    PunctLeaf,
}

pub const SYNTAX_KINDS: [AstKind; 21] = [
    AstKind::Program,
    AstKind::MethodDecl,
    AstKind::TypeSpec,
    AstKind::Name,
    AstKind::ParamList,
    AstKind::Param,
    AstKind::Block,
    AstKind::LocalVarDecl,
    AstKind::AssignStmt,
    AstKind::ExprStmt,
    AstKind::ReturnStmt,
    AstKind::IfStmt,
    AstKind::WhileStmt,
    AstKind::Cond,
    AstKind::Expr,
    AstKind::VarRef,
    AstKind::Lit,
    AstKind::FieldRef,
    AstKind::ArgList,
    AstKind::ParenGroup,
    AstKind::Incomplete,
];

impl AstKind {
    pub fn is_leaf(self) -> bool {
        matches!(
            self,
            AstKind::IdentifierLeaf
                | AstKind::KeywordLeaf
                | AstKind::LiteralLeaf
                | AstKind::OperatorLeaf
                | AstKind::PunctLeaf
        )
    }

    pub fn leaf_for(kind: TokenKind) -> AstKind {
        match kind {
            TokenKind::Identifier => AstKind::IdentifierLeaf,
            TokenKind::Keyword => AstKind::KeywordLeaf,
            TokenKind::Literal => AstKind::LiteralLeaf,
            TokenKind::Operator => AstKind::OperatorLeaf,
            TokenKind::Punct => AstKind::PunctLeaf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AstKind::Program => "Program",
            AstKind::MethodDecl => "MethodDecl",
            AstKind::TypeSpec => "TypeSpec",
            AstKind::Name => "Name",
            AstKind::ParamList => "ParamList",
            AstKind::Param => "Param",
            AstKind::Block => "Block",
            AstKind::LocalVarDecl => "LocalVarDecl",
            AstKind::AssignStmt => "AssignStmt",
            AstKind::ExprStmt => "ExprStmt",
            AstKind::ReturnStmt => "ReturnStmt",
            AstKind::IfStmt => "IfStmt",
            AstKind::WhileStmt => "WhileStmt",
            AstKind::Cond => "Cond",
            AstKind::Expr => "Expr",
            AstKind::VarRef => "VarRef",
            AstKind::Lit => "Lit",
            AstKind::FieldRef => "FieldRef",
            AstKind::ArgList => "ArgList",
            AstKind::ParenGroup => "ParenGroup",
            AstKind::Incomplete => "Incomplete",
            AstKind::IdentifierLeaf => "IdentifierLeaf",
            AstKind::KeywordLeaf => "KeywordLeaf",
            AstKind::LiteralLeaf => "LiteralLeaf",
            AstKind::OperatorLeaf => "OperatorLeaf",
            AstKind::PunctLeaf => "PunctLeaf",
        }
    }

    pub fn from_name(name: &str) -> Option<AstKind> {
        const LEAVES: [AstKind; 5] = [
            AstKind::IdentifierLeaf,
            AstKind::KeywordLeaf,
            AstKind::LiteralLeaf,
            AstKind::OperatorLeaf,
            AstKind::PunctLeaf,
        ];
        SYNTAX_KINDS.iter().chain(LEAVES.iter()).copied().find(|k| k.as_str() == name)
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub kind: AstKind,
    pub children: Vec<NodeId>,
    /// Present exactly on leaves.
    pub token: Option<CodeToken>,
}

/// Nodes are stored in pre-order: a node's id is smaller than all ids in its
/// subtree, and leaves appear in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
    pub root: NodeId,
}

impl Ast {
    pub fn kind(&self, id: NodeId) -> AstKind {
        self.nodes[id].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    /// Leaf node ids in source order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if self.nodes[id].kind.is_leaf() {
                out.push(id);
            } else {
                for &c in self.nodes[id].children.iter().rev() {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// Tokens of the leaves, in source order.
    pub fn leaf_tokens(&self) -> Vec<&CodeToken> {
        self.leaves()
            .into_iter()
            .map(|id| self.nodes[id].token.as_ref().expect("leaf without token"))
            .collect()
    }

    pub fn contains_incomplete(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == AstKind::Incomplete)
    }
}

/// Tokenize and parse in one step.
pub fn parse_source(source: &str, tolerant: bool) -> Result<Ast, FrontendError> {
    parse(&tokenize(source)?, tolerant)
}
