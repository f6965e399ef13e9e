//! Statement-level control flow and reaching-definitions data flow.
//!
//! Both graphs share one node granularity: simple statements, plus the
//! condition/init/step children of `if`, loops and `for`. Blocks are
//! transparent and function definitions contribute only their parameters as
//! entry definitions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{NodeKind, ParseNode};
use crate::lexer::{TokenKind, TokenStream};

#[derive(Debug, Default)]
struct Fragment {
    entry: Option<usize>,
    exits: Vec<usize>,
}

struct LoopContext {
    continue_target: usize,
    breaks: Vec<usize>,
}

struct Unit {
    entry: Option<usize>,
    params: Vec<usize>,
}

/// Control-flow facts for a parse forest.
pub(crate) struct ControlFlow {
    pub edges: BTreeSet<(usize, usize)>,
    /// CFG nodes in discovery order.
    pub stmts: Vec<usize>,
    units: Vec<Unit>,
}

struct CfgBuilder<'a> {
    nodes: &'a [ParseNode],
    edges: BTreeSet<(usize, usize)>,
    stmts: Vec<usize>,
    loops: Vec<LoopContext>,
}

impl<'a> CfgBuilder<'a> {
    fn edge(&mut self, from: usize, to: usize) {
        if from != to {
            self.edges.insert((from, to));
        }
    }

    fn register(&mut self, id: usize) -> usize {
        self.stmts.push(id);
        id
    }

    fn atomic(&mut self, id: usize) -> Fragment {
        self.register(id);
        Fragment { entry: Some(id), exits: vec![id] }
    }

    fn sequence(&mut self, ids: &[usize]) -> Fragment {
        let mut out = Fragment::default();
        for &id in ids {
            let f = self.statement(id);
            let Some(entry) = f.entry else { continue };
            if out.entry.is_none() {
                out.entry = Some(entry);
            } else {
                for &x in &out.exits {
                    self.edge(x, entry);
                }
            }
            out.exits = f.exits;
        }
        out
    }

    /// Links `from` to the fragment entry, or returns `from` as a pass-through exit.
    fn enter(&mut self, from: usize, f: &Fragment) -> Vec<usize> {
        match f.entry {
            Some(e) => {
                self.edge(from, e);
                f.exits.clone()
            }
            None => vec![from],
        }
    }

    fn statement(&mut self, id: usize) -> Fragment {
        let node = &self.nodes[id];
        let ch = node.children.clone();
        match (node.kind, ch.len()) {
            (NodeKind::Block, _) => self.sequence(&ch),
            (NodeKind::If, 2 | 3) => {
                let cond = self.register(ch[0]);
                let then = self.statement(ch[1]);
                let mut exits = self.enter(cond, &then);
                if ch.len() == 3 {
                    let other = self.statement(ch[2]);
                    exits.extend(self.enter(cond, &other));
                } else {
                    exits.push(cond);
                }
                exits.sort_unstable();
                exits.dedup();
                Fragment { entry: Some(cond), exits }
            }
            (NodeKind::While, 2) => {
                let cond = self.register(ch[0]);
                self.loops.push(LoopContext { continue_target: cond, breaks: Vec::new() });
                let body = self.statement(ch[1]);
                for x in self.enter(cond, &body) {
                    self.edge(x, cond);
                }
                let ctx = self.loops.pop().expect("loop context");
                let mut exits = vec![cond];
                exits.extend(ctx.breaks);
                Fragment { entry: Some(cond), exits }
            }
            (NodeKind::DoWhile, 2) => {
                let cond = ch[1];
                self.loops.push(LoopContext { continue_target: cond, breaks: Vec::new() });
                let body = self.statement(ch[0]);
                self.register(cond);
                for &x in &body.exits {
                    self.edge(x, cond);
                }
                if let Some(e) = body.entry {
                    self.edge(cond, e);
                }
                let ctx = self.loops.pop().expect("loop context");
                let mut exits = vec![cond];
                exits.extend(ctx.breaks);
                Fragment { entry: Some(body.entry.unwrap_or(cond)), exits }
            }
            (NodeKind::For, 4) => {
                let init = self.register(ch[0]);
                let cond = self.register(ch[1]);
                let step = self.register(ch[2]);
                self.edge(init, cond);
                self.loops.push(LoopContext { continue_target: step, breaks: Vec::new() });
                let body = self.statement(ch[3]);
                match body.entry {
                    Some(e) => self.edge(cond, e),
                    None => self.edge(cond, step),
                }
                for &x in &body.exits {
                    self.edge(x, step);
                }
                self.edge(step, cond);
                let ctx = self.loops.pop().expect("loop context");
                let mut exits = vec![cond];
                exits.extend(ctx.breaks);
                Fragment { entry: Some(init), exits }
            }
            (NodeKind::Return, _) => {
                self.register(id);
                Fragment { entry: Some(id), exits: Vec::new() }
            }
            (NodeKind::Break, _) if !self.loops.is_empty() => {
                self.register(id);
                self.loops.last_mut().expect("loop context").breaks.push(id);
                Fragment { entry: Some(id), exits: Vec::new() }
            }
            (NodeKind::Continue, _) if !self.loops.is_empty() => {
                self.register(id);
                let target = self.loops.last().expect("loop context").continue_target;
                self.edge(id, target);
                Fragment { entry: Some(id), exits: Vec::new() }
            }
            _ => self.atomic(id),
        }
    }
}

fn roots(nodes: &[ParseNode]) -> Vec<usize> {
    let mut has_parent = vec![false; nodes.len()];
    for n in nodes {
        for &c in &n.children {
            has_parent[c] = true;
        }
    }
    (0..nodes.len()).filter(|&i| !has_parent[i]).collect()
}

pub(crate) fn control_flow(nodes: &[ParseNode]) -> ControlFlow {
    let mut b = CfgBuilder { nodes, edges: BTreeSet::new(), stmts: Vec::new(), loops: Vec::new() };
    let mut units = Vec::new();
    let mut loose = Vec::new();
    for r in roots(nodes) {
        let node = &nodes[r];
        let body = node.children.iter().copied().find(|&c| nodes[c].kind == NodeKind::Block);
        if let (NodeKind::FunctionDef, Some(body)) = (node.kind, body) {
            let params = node
                .children
                .iter()
                .filter(|&&c| nodes[c].kind == NodeKind::ParamList)
                .flat_map(|&c| nodes[c].children.iter().copied())
                .filter(|&p| nodes[p].kind == NodeKind::Param)
                .collect();
            let f = b.statement(body);
            units.push(Unit { entry: f.entry, params });
        } else {
            loose.push(r);
        }
    }
    if !loose.is_empty() {
        let f = b.sequence(&loose);
        units.push(Unit { entry: f.entry, params: Vec::new() });
    }
    ControlFlow { edges: b.edges, stmts: b.stmts, units }
}

#[derive(Debug, Default)]
struct Access {
    uses: BTreeSet<u32>,
    strong: BTreeSet<u32>,
    weak: BTreeSet<u32>,
}

struct AccessCollector<'a> {
    nodes: &'a [ParseNode],
    tokens: &'a TokenStream,
    names: &'a mut HashMap<String, u32>,
}

impl AccessCollector<'_> {
    fn intern(&mut self, token: usize) -> u32 {
        let text = &self.tokens.tokens[token].text;
        let next = self.names.len() as u32;
        *self.names.entry(text.clone()).or_insert(next)
    }

    fn text(&self, id: usize) -> &str {
        &self.tokens.tokens[self.nodes[id].token_range.lo].text
    }

    /// Variable modified by an lvalue such as `a[i]`, `s->f` or `*p`.
    fn base_variable(&mut self, id: usize) -> Option<u32> {
        let n = &self.nodes[id];
        match n.kind {
            NodeKind::IdentifierUse => Some(self.intern(n.token_range.lo)),
            NodeKind::IndexExpr | NodeKind::MemberAccess => n.children.first().and_then(|&c| self.base_variable(c)),
            NodeKind::CastExpr => n.children.last().and_then(|&c| self.base_variable(c)),
            NodeKind::UnaryExpr => {
                let operand = n.children.iter().copied().find(|&c| self.nodes[c].kind != NodeKind::Operator)?;
                self.base_variable(operand)
            }
            _ => None,
        }
    }

    fn modify(&mut self, target: usize, also_use: bool, acc: &mut Access) {
        if self.nodes[target].kind == NodeKind::IdentifierUse {
            let v = self.intern(self.nodes[target].token_range.lo);
            if also_use {
                acc.uses.insert(v);
            }
            acc.strong.insert(v);
        } else {
            self.walk(target, acc);
            if let Some(v) = self.base_variable(target) {
                acc.weak.insert(v);
            }
        }
    }

    fn walk(&mut self, id: usize, acc: &mut Access) {
        let n = &self.nodes[id];
        let ch = n.children.clone();
        match n.kind {
            NodeKind::Identifier => {
                let v = self.intern(n.token_range.lo);
                acc.strong.insert(v);
            }
            NodeKind::IdentifierUse => {
                let v = self.intern(n.token_range.lo);
                acc.uses.insert(v);
            }
            NodeKind::StmtOpaque => {
                let r = n.token_range;
                for t in r.lo..=r.hi {
                    let tok = &self.tokens.tokens[t];
                    if tok.kind == TokenKind::Identifier {
                        let v = self.intern(t);
                        acc.uses.insert(v);
                        acc.weak.insert(v);
                    }
                }
            }
            NodeKind::Assign if ch.len() == 3 => {
                let compound = self.text(ch[1]) != "=";
                self.walk(ch[2], acc);
                self.modify(ch[0], compound, acc);
            }
            NodeKind::UnaryExpr if ch.len() == 2 => {
                let (op, operand) =
                    if self.nodes[ch[0]].kind == NodeKind::Operator { (ch[0], ch[1]) } else { (ch[1], ch[0]) };
                match self.text(op) {
                    "++" | "--" => self.modify(operand, true, acc),
                    "&" => {
                        self.walk(operand, acc);
                        if let Some(v) = self.base_variable(operand) {
                            acc.weak.insert(v);
                        }
                    }
                    _ => self.walk(operand, acc),
                }
            }
            _ => {
                for c in ch {
                    self.walk(c, acc);
                }
            }
        }
    }
}

/// Reaching-definitions def→use edges over the statement-level CFG.
///
/// Plain-variable assignments are strong (killing) definitions; writes
/// through an index, member, dereference or address-of are weak. Opaque
/// statements are handled flow-insensitively: every identifier they mention
/// is a use and a weak definition linked to all definitions and uses of that
/// name in the forest.
pub(crate) fn data_flow(nodes: &[ParseNode], tokens: &TokenStream) -> BTreeSet<(usize, usize)> {
    let cf = control_flow(nodes);
    let mut names = HashMap::new();
    let mut access: BTreeMap<usize, Access> = BTreeMap::new();
    {
        let mut col = AccessCollector { nodes, tokens, names: &mut names };
        for &s in &cf.stmts {
            let mut acc = Access::default();
            col.walk(s, &mut acc);
            access.insert(s, acc);
        }
        for unit in &cf.units {
            for &p in &unit.params {
                let mut acc = Access::default();
                col.walk(p, &mut acc);
                acc.uses.clear();
                access.insert(p, acc);
            }
        }
    }

    let mut preds: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(a, b) in &cf.edges {
        preds.entry(b).or_default().push(a);
    }
    let mut entry_defs: HashMap<usize, BTreeSet<(usize, u32)>> = HashMap::new();
    for unit in &cf.units {
        if let Some(e) = unit.entry {
            let set = entry_defs.entry(e).or_default();
            for &p in &unit.params {
                for &v in &access[&p].strong {
                    set.insert((p, v));
                }
            }
        }
    }

    let mut out: HashMap<usize, BTreeSet<(usize, u32)>> = cf.stmts.iter().map(|&s| (s, BTreeSet::new())).collect();
    let mut input: HashMap<usize, BTreeSet<(usize, u32)>> = HashMap::new();
    let mut changed = true;
    while changed {
        changed = false;
        for &s in &cf.stmts {
            let mut inn: BTreeSet<(usize, u32)> = entry_defs.get(&s).cloned().unwrap_or_default();
            for p in preds.get(&s).into_iter().flatten() {
                inn.extend(out[p].iter().copied());
            }
            let acc = &access[&s];
            let mut new_out: BTreeSet<(usize, u32)> =
                inn.iter().copied().filter(|(_, v)| !acc.strong.contains(v)).collect();
            new_out.extend(acc.strong.iter().chain(&acc.weak).map(|&v| (s, v)));
            if new_out != out[&s] {
                out.insert(s, new_out);
                changed = true;
            }
            input.insert(s, inn);
        }
    }

    let mut edges = BTreeSet::new();
    for &s in &cf.stmts {
        let acc = &access[&s];
        for &(d, v) in &input[&s] {
            if acc.uses.contains(&v) && d != s {
                edges.insert((d, s));
            }
        }
    }

    let opaque: Vec<usize> = cf.stmts.iter().copied().filter(|&s| nodes[s].kind == NodeKind::StmtOpaque).collect();
    for &o in &opaque {
        for &v in &access[&o].uses {
            for (&other, acc) in &access {
                if other == o {
                    continue;
                }
                if acc.strong.contains(&v) || acc.weak.contains(&v) {
                    edges.insert((other, o));
                }
                if acc.uses.contains(&v) {
                    edges.insert((o, other));
                }
            }
        }
    }
    edges
}
