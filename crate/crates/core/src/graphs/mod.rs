//! Code graphs over parse nodes: AST containment, statement-level control
//! flow and def→use data flow, all sharing one node index space.
//!
//! `M(i, j) = 1` means a directed edge `i → j`. Graphs are stored as sorted
//! edge sets and expanded to dense token-level `L × L` matrices on demand.

mod flow;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{self, LexError, TokenStream};
use crate::numerics::Matrix;

pub use parser::{parse, parse_with, ParseOptions};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("no code tokens to parse")]
    EmptyInput,
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: token range {child:?} is not contained in parent range {parent:?}")]
    Containment { path: String, child: TokenRange, parent: TokenRange },
    #[error("node {node}: token range {range:?} exceeds token count {len}")]
    RangeOutOfBounds { node: usize, range: TokenRange, len: usize },
    #[error("graph node count mismatch: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("{0}")]
    Io(String),
}

/// Inclusive token index range `[lo, hi]`, serialised as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenRange {
    pub lo: usize,
    pub hi: usize,
}

impl From<[usize; 2]> for TokenRange {
    fn from([lo, hi]: [usize; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<TokenRange> for [usize; 2] {
    fn from(r: TokenRange) -> Self {
        [r.lo, r.hi]
    }
}

impl TokenRange {
    pub fn contains(&self, other: &TokenRange) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    FunctionDef,
    ParamList,
    Param,
    Block,
    Decl,
    Type,
    /// A name being declared (variable, parameter or function).
    Identifier,
    /// A variable or function referenced in an expression.
    IdentifierUse,
    /// A member name after `.` or `->`.
    Field,
    Literal,
    Operator,
    /// Leaf for a punctuation token; only produced by external parsers.
    Punctuation,
    ArraySuffix,
    InitializerList,
    Assign,
    If,
    While,
    DoWhile,
    For,
    Return,
    Break,
    Continue,
    EmptyStmt,
    EmptyExpr,
    Call,
    BinaryExpr,
    UnaryExpr,
    CastExpr,
    ConditionalExpr,
    CommaExpr,
    IndexExpr,
    MemberAccess,
    StmtOpaque,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseNode {
    pub id: usize,
    pub kind: NodeKind,
    pub token_range: TokenRange,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphKind {
    #[serde(rename = "AST")]
    Ast,
    #[serde(rename = "CFG")]
    Cfg,
    #[serde(rename = "DFG")]
    Dfg,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Ast => "AST",
            GraphKind::Cfg => "CFG",
            GraphKind::Dfg => "DFG",
        })
    }
}

/// Directed binary adjacency over parse nodes.
///
/// Serialises as `{kind, n, edges: [[i, j], ...], node_tokens: [[lo, hi], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct CodeGraph {
    pub kind: GraphKind,
    edges: BTreeSet<(usize, usize)>,
    pub node_tokens: Vec<TokenRange>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    kind: GraphKind,
    n: usize,
    edges: Vec<[usize; 2]>,
    node_tokens: Vec<TokenRange>,
}

impl TryFrom<GraphRecord> for CodeGraph {
    type Error = String;

    fn try_from(r: GraphRecord) -> Result<Self, String> {
        if r.node_tokens.len() != r.n {
            return Err(format!("n = {} but {} node_tokens entries", r.n, r.node_tokens.len()));
        }
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|&[a, b]| (a, b)).collect();
        CodeGraph::from_edges(r.kind, r.node_tokens, edges).map_err(|e| e.to_string())
    }
}

impl From<CodeGraph> for GraphRecord {
    fn from(g: CodeGraph) -> Self {
        GraphRecord {
            kind: g.kind,
            n: g.n(),
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
            node_tokens: g.node_tokens,
        }
    }
}

impl CodeGraph {
    pub fn empty(kind: GraphKind, node_tokens: Vec<TokenRange>) -> Self {
        Self { kind, edges: BTreeSet::new(), node_tokens }
    }

    /// Builds a graph, rejecting out-of-range endpoints.
    pub fn from_edges(
        kind: GraphKind,
        node_tokens: Vec<TokenRange>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let n = node_tokens.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Schema {
                    path: format!("edges[{a},{b}]"),
                    message: format!("endpoint outside 0..{n}"),
                });
            }
            set.insert((a, b));
        }
        Ok(Self { kind, edges: set, node_tokens })
    }

    pub fn n(&self) -> usize {
        self.node_tokens.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Dense `n × n` adjacency matrix.
    pub fn dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for &(a, b) in &self.edges {
            m.set(a, b, 1.0);
        }
        m
    }

    /// Relabels node `i` as `perm[i]`: `M' = P M Pᵀ`.
    pub fn relabel(&self, perm: &[usize]) -> CodeGraph {
        assert_eq!(perm.len(), self.n());
        let mut node_tokens = vec![TokenRange { lo: 0, hi: 0 }; self.n()];
        for (old, &new) in perm.iter().enumerate() {
            node_tokens[new] = self.node_tokens[old];
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        CodeGraph { kind: self.kind, edges, node_tokens }
    }
}

/// The three graphs of one function over a shared node index space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub tokens: TokenStream,
    pub nodes: Vec<ParseNode>,
    pub ast: CodeGraph,
    pub cfg: CodeGraph,
    pub dfg: CodeGraph,
}

impl GraphBundle {
    pub fn graph(&self, kind: GraphKind) -> &CodeGraph {
        match kind {
            GraphKind::Ast => &self.ast,
            GraphKind::Cfg => &self.cfg,
            GraphKind::Dfg => &self.dfg,
        }
    }

    pub fn check_consistent(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        for g in [&self.ast, &self.cfg, &self.dfg] {
            if g.n() != n {
                return Err(GraphError::Inconsistent(format!("{} has {} nodes, parse has {n}", g.kind, g.n())));
            }
            if g.node_tokens.iter().zip(&self.nodes).any(|(r, node)| *r != node.token_range) {
                return Err(GraphError::Inconsistent(format!("{} node_tokens differ from the parse", g.kind)));
            }
        }
        Ok(())
    }
}

fn node_tokens(nodes: &[ParseNode]) -> Vec<TokenRange> {
    nodes.iter().map(|n| n.token_range).collect()
}

/// `M(parent, child) = 1` for every containment pair.
pub fn build_ast(nodes: &[ParseNode]) -> CodeGraph {
    let edges = nodes.iter().flat_map(|n| n.children.iter().map(move |&c| (n.id, c)));
    CodeGraph::from_edges(GraphKind::Ast, node_tokens(nodes), edges).expect("child ids are node ids")
}

/// Successor edges between statement-level nodes.
pub fn build_cfg(nodes: &[ParseNode]) -> CodeGraph {
    let cf = flow::control_flow(nodes);
    CodeGraph::from_edges(GraphKind::Cfg, node_tokens(nodes), cf.edges).expect("cfg ids are node ids")
}

/// Def→use edges from reaching definitions over the control-flow graph.
pub fn build_dfg(nodes: &[ParseNode], tokens: &TokenStream) -> CodeGraph {
    let edges = flow::data_flow(nodes, tokens);
    CodeGraph::from_edges(GraphKind::Dfg, node_tokens(nodes), edges).expect("dfg ids are node ids")
}

/// Builds all three graphs after validating the forest against the tokens.
pub fn build_bundle(tokens: TokenStream, nodes: Vec<ParseNode>) -> Result<GraphBundle, GraphError> {
    validate_forest(&nodes)?;
    let len = tokens.len();
    if let Some(n) = nodes.iter().find(|n| n.token_range.hi >= len) {
        return Err(GraphError::RangeOutOfBounds { node: n.id, range: n.token_range, len });
    }
    let ast = build_ast(&nodes);
    let cfg = build_cfg(&nodes);
    let dfg = build_dfg(&nodes, &tokens);
    Ok(GraphBundle { tokens, nodes, ast, cfg, dfg })
}

/// Tokenizes, parses and builds the graphs of one source function.
pub fn extract(source: &str) -> Result<GraphBundle, GraphError> {
    let tokens = lexer::tokenize(source)?;
    let nodes = parse(&tokens)?;
    build_bundle(tokens, nodes)
}

/// Length-2 MetaPath rule: adds the reverse of every edge, `M' = M ∨ Mᵀ`.
pub fn apply_metapath(g: &CodeGraph) -> CodeGraph {
    let mut edges = g.edges.clone();
    edges.extend(g.edges.iter().map(|&(a, b)| (b, a)));
    CodeGraph { kind: g.kind, edges, node_tokens: g.node_tokens.clone() }
}

/// Token-level expansion: `S(a, b) = 1` iff `a ∈ range(i)`, `b ∈ range(j)`
/// and `M(i, j) = 1`, restricted to `a, b < len`. Sorted, deduplicated.
pub fn sequence_edges(g: &CodeGraph, len: usize) -> Vec<(u32, u32)> {
    let words = len.div_ceil(64);
    let mut bits = vec![0u64; len * words];
    for &(i, j) in &g.edges {
        let (ri, rj) = (g.node_tokens[i], g.node_tokens[j]);
        if ri.lo >= len || rj.lo >= len {
            continue;
        }
        let (bh, bl) = (rj.hi.min(len - 1), rj.lo);
        for a in ri.lo..=ri.hi.min(len - 1) {
            let row = &mut bits[a * words..(a + 1) * words];
            for b in bl..=bh {
                row[b / 64] |= 1 << (b % 64);
            }
        }
    }
    let mut out = Vec::new();
    for a in 0..len {
        for w in 0..words {
            let mut word = bits[a * words + w];
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                out.push((a as u32, (w * 64 + bit) as u32));
                word &= word - 1;
            }
        }
    }
    out
}

/// Dense `len × len` token-level matrix; see [`sequence_edges`].
pub fn node_adjacency_to_sequence_matrix(g: &CodeGraph, len: usize) -> Matrix {
    let mut m = Matrix::zeros(len, len);
    for (a, b) in sequence_edges(g, len) {
        m.set(a as usize, b as usize, 1.0);
    }
    m
}

#[derive(Serialize, Deserialize)]
struct ParseTreeDocument {
    nodes: Vec<ParseNode>,
}

/// Checks ids, preorder numbering, single parents and range containment.
pub fn validate_forest(nodes: &[ParseNode]) -> Result<(), GraphError> {
    let n = nodes.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for (i, node) in nodes.iter().enumerate() {
        let path = format!("nodes[{i}]");
        if node.id != i {
            return Err(GraphError::Schema { path: format!("{path}.id"), message: format!("expected id {i}, found {}", node.id) });
        }
        if node.token_range.lo > node.token_range.hi {
            return Err(GraphError::Schema { path: format!("{path}.token_range"), message: "lo exceeds hi".into() });
        }
        for (k, &c) in node.children.iter().enumerate() {
            let cpath = format!("{path}.children[{k}]");
            if c >= n {
                return Err(GraphError::Schema { path: cpath, message: format!("unknown node id {c}") });
            }
            if c == i {
                return Err(GraphError::Schema { path: cpath, message: "node lists itself as a child".into() });
            }
            if let Some(p) = parent[c] {
                return Err(GraphError::Schema { path: cpath, message: format!("node {c} already has parent {p}") });
            }
            parent[c] = Some(i);
            if !node.token_range.contains(&nodes[c].token_range) {
                return Err(GraphError::Containment { path: cpath, child: nodes[c].token_range, parent: node.token_range });
            }
        }
    }
    // Preorder: a depth-first walk from the roots must visit 0, 1, 2, ...
    let mut expected = 0;
    let mut stack: Vec<usize> = Vec::new();
    for root in (0..n).filter(|&i| parent[i].is_none()) {
        stack.push(root);
        while let Some(id) = stack.pop() {
            if id != expected {
                return Err(GraphError::Schema {
                    path: format!("nodes[{id}]"),
                    message: format!("ids are not a preorder numbering (expected {expected})"),
                });
            }
            expected += 1;
            stack.extend(nodes[id].children.iter().rev());
        }
    }
    if expected != n {
        return Err(GraphError::Schema { path: "nodes".into(), message: "parent links contain a cycle".into() });
    }
    Ok(())
}

/// Parses a `{nodes: [{id, kind, token_range, children}]}` document.
pub fn parse_tree_from_json(text: &str) -> Result<Vec<ParseNode>, GraphError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GraphError::Schema { path: "$".into(), message: e.to_string() })?;
    let items = doc
        .get("nodes")
        .and_then(|v| v.as_array())
        .ok_or_else(|| GraphError::Schema { path: "nodes".into(), message: "missing array".into() })?;
    let mut nodes = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let node: ParseNode = serde_json::from_value(item.clone())
            .map_err(|e| GraphError::Schema { path: format!("nodes[{i}]"), message: e.to_string() })?;
        nodes.push(node);
    }
    validate_forest(&nodes)?;
    Ok(nodes)
}

pub fn parse_tree_to_json(nodes: &[ParseNode]) -> String {
    serde_json::to_string_pretty(&ParseTreeDocument { nodes: nodes.to_vec() }).expect("plain data serialises")
}

pub fn bundle_to_json(bundle: &GraphBundle) -> String {
    serde_json::to_string_pretty(bundle).expect("plain data serialises")
}

/// Reads a bundle written by [`bundle_to_json`], checking that all three
/// graphs share the node set.
pub fn bundle_from_json(text: &str) -> Result<GraphBundle, GraphError> {
    let b: GraphBundle =
        serde_json::from_str(text).map_err(|e| GraphError::Schema { path: "$".into(), message: e.to_string() })?;
    validate_forest(&b.nodes)?;
    b.check_consistent()?;
    Ok(b)
}

pub fn import_parse_tree(path: &Path) -> Result<Vec<ParseNode>, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
    parse_tree_from_json(&text)
}
