//! Recursive-descent parser for the supported C subset.
//!
//! Any statement the grammar does not cover is recovered as a single
//! `stmt_opaque` node spanning its tokens, so corpus code never fails to parse.

use super::{GraphError, NodeKind, ParseNode, TokenRange};
use crate::lexer::{Token, TokenKind, TokenStream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject streams without code tokens.
    pub strict: bool,
}

/// Parses a token stream into a preorder-numbered parse forest.
pub fn parse(ts: &TokenStream) -> Result<Vec<ParseNode>, GraphError> {
    parse_with(ts, ParseOptions::default())
}

pub fn parse_with(ts: &TokenStream, options: ParseOptions) -> Result<Vec<ParseNode>, GraphError> {
    let code: Vec<usize> = ts.tokens.iter().enumerate().filter(|(_, t)| !t.is_directive()).map(|(i, _)| i).collect();
    if code.is_empty() && options.strict {
        return Err(GraphError::EmptyInput);
    }
    let mut p = Parser { toks: &ts.tokens, code, pos: 0 };
    let mut roots = Vec::new();
    while !p.eof() {
        roots.push(p.top_level());
    }
    Ok(flatten(&roots))
}

struct Syn {
    kind: NodeKind,
    lo: usize,
    hi: usize,
    children: Vec<Syn>,
}

impl Syn {
    fn leaf(kind: NodeKind, at: usize) -> Syn {
        Syn { kind, lo: at, hi: at, children: Vec::new() }
    }

    fn node(kind: NodeKind, lo: usize, hi: usize, children: Vec<Syn>) -> Syn {
        Syn { kind, lo, hi, children }
    }
}

/// Numbers nodes in preorder.
fn flatten(roots: &[Syn]) -> Vec<ParseNode> {
    fn visit(s: &Syn, out: &mut Vec<ParseNode>) -> usize {
        let id = out.len();
        out.push(ParseNode { id, kind: s.kind, token_range: TokenRange { lo: s.lo, hi: s.hi }, children: Vec::new() });
        let kids: Vec<usize> = s.children.iter().map(|c| visit(c, out)).collect();
        out[id].children = kids;
        id
    }
    let mut out = Vec::new();
    for r in roots {
        visit(r, &mut out);
    }
    out
}

type PResult<T> = Result<T, ()>;

struct Parser<'a> {
    toks: &'a [Token],
    /// Stream indices of non-directive tokens.
    code: Vec<usize>,
    pos: usize,
}

const TYPE_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool", "_Complex",
];
const QUALIFIERS: &[&str] = &[
    "const", "volatile", "static", "extern", "register", "inline", "auto", "restrict", "_Atomic", "_Noreturn",
    "_Thread_local",
];
const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

impl<'a> Parser<'a> {
    fn eof(&self) -> bool {
        self.pos >= self.code.len()
    }

    /// Stream index of the current token.
    fn at(&self) -> usize {
        self.code[self.pos]
    }

    fn prev(&self) -> usize {
        self.code[self.pos - 1]
    }

    fn peek_tok(&self, ahead: usize) -> Option<&'a Token> {
        self.code.get(self.pos + ahead).map(|&i| &self.toks[i])
    }

    fn peek(&self, ahead: usize) -> &'a str {
        self.peek_tok(ahead).map_or("", |t| t.text.as_str())
    }

    fn is(&self, text: &str) -> bool {
        self.peek(0) == text
    }

    fn kind(&self, ahead: usize) -> Option<TokenKind> {
        self.peek_tok(ahead).map(|t| t.kind)
    }

    fn bump(&mut self) -> usize {
        let idx = self.at();
        self.pos += 1;
        idx
    }

    fn expect(&mut self, text: &str) -> PResult<usize> {
        if !self.eof() && self.is(text) {
            Ok(self.bump())
        } else {
            Err(())
        }
    }

    fn top_level(&mut self) -> Syn {
        let save = self.pos;
        if let Ok(f) = self.function_def() {
            return f;
        }
        self.pos = save;
        self.statement()
    }

    fn function_def(&mut self) -> PResult<Syn> {
        let lo = self.at();
        let ty = self.type_spec()?;
        let mut children = vec![ty];
        while self.is("*") {
            children.push(Syn::leaf(NodeKind::Operator, self.bump()));
        }
        if self.kind(0) != Some(TokenKind::Identifier) {
            return Err(());
        }
        children.push(Syn::leaf(NodeKind::Identifier, self.bump()));
        if !self.is("(") {
            return Err(());
        }
        children.push(self.param_list()?);
        if !self.is("{") {
            return Err(());
        }
        let body = self.block(true)?;
        let hi = body.hi;
        children.push(body);
        Ok(Syn::node(NodeKind::FunctionDef, lo, hi, children))
    }

    fn param_list(&mut self) -> PResult<Syn> {
        let lo = self.expect("(")?;
        let mut params = Vec::new();
        if self.is("void") && self.peek(1) == ")" {
            self.bump();
        }
        while !self.is(")") {
            if self.eof() {
                return Err(());
            }
            if self.is("...") {
                params.push(Syn::leaf(NodeKind::Operator, self.bump()));
            } else {
                params.push(self.param()?);
            }
            if self.is(",") {
                self.bump();
            } else if !self.is(")") {
                return Err(());
            }
        }
        let hi = self.bump();
        Ok(Syn::node(NodeKind::ParamList, lo, hi, params))
    }

    fn param(&mut self) -> PResult<Syn> {
        let lo = self.at();
        let mut children = vec![self.type_spec()?];
        while self.is("*") || self.is("const") {
            children.push(Syn::leaf(NodeKind::Operator, self.bump()));
        }
        if self.kind(0) == Some(TokenKind::Identifier) {
            children.push(Syn::leaf(NodeKind::Identifier, self.bump()));
        }
        while self.is("[") {
            children.push(self.array_suffix()?);
        }
        let hi = self.prev();
        Ok(Syn::node(NodeKind::Param, lo, hi, children))
    }

    fn is_type_start(&self, ahead: usize) -> bool {
        let t = self.peek(ahead);
        TYPE_KEYWORDS.contains(&t) || QUALIFIERS.contains(&t) || matches!(t, "struct" | "union" | "enum")
    }

    /// Declaration specifiers, accepting one typedef name when no builtin
    /// base type has been seen.
    fn type_spec(&mut self) -> PResult<Syn> {
        let lo = self.pos;
        let mut has_base = false;
        loop {
            let t = self.peek(0);
            if TYPE_KEYWORDS.contains(&t) {
                has_base = true;
                self.bump();
            } else if QUALIFIERS.contains(&t) {
                self.bump();
            } else if matches!(t, "struct" | "union" | "enum") {
                if has_base {
                    return Err(());
                }
                self.bump();
                if self.kind(0) != Some(TokenKind::Identifier) || self.peek(1) == "{" {
                    return Err(());
                }
                self.bump();
                has_base = true;
            } else if !has_base && self.kind(0) == Some(TokenKind::Identifier) {
                self.bump();
                has_base = true;
            } else {
                break;
            }
        }
        if !has_base {
            return Err(());
        }
        Ok(Syn::node(NodeKind::Type, self.code[lo], self.prev(), Vec::new()))
    }

    fn looks_like_declaration(&self) -> bool {
        if self.is_type_start(0) {
            return true;
        }
        if self.kind(0) != Some(TokenKind::Identifier) {
            return false;
        }
        let mut k = 1;
        if self.kind(1) == Some(TokenKind::Identifier) {
            return true;
        }
        while self.peek(k) == "*" {
            k += 1;
        }
        k > 1 && self.kind(k) == Some(TokenKind::Identifier) && matches!(self.peek(k + 1), "=" | ";" | "," | "[")
    }

    /// Parses `type declarator [= init] {, declarator [= init]}` without the
    /// terminating `;`.
    fn declaration(&mut self) -> PResult<Syn> {
        let lo = self.at();
        let mut children = vec![self.type_spec()?];
        loop {
            while self.is("*") || self.is("const") {
                children.push(Syn::leaf(NodeKind::Operator, self.bump()));
            }
            if self.kind(0) != Some(TokenKind::Identifier) {
                return Err(());
            }
            children.push(Syn::leaf(NodeKind::Identifier, self.bump()));
            while self.is("[") {
                children.push(self.array_suffix()?);
            }
            if self.is("=") {
                children.push(Syn::leaf(NodeKind::Operator, self.bump()));
                children.push(self.initializer()?);
            }
            if self.is(",") {
                self.bump();
                continue;
            }
            break;
        }
        let hi = self.prev();
        Ok(Syn::node(NodeKind::Decl, lo, hi, children))
    }

    fn array_suffix(&mut self) -> PResult<Syn> {
        let lo = self.expect("[")?;
        let mut children = Vec::new();
        if !self.is("]") {
            children.push(self.expression()?);
        }
        let hi = self.expect("]")?;
        Ok(Syn::node(NodeKind::ArraySuffix, lo, hi, children))
    }

    fn initializer(&mut self) -> PResult<Syn> {
        if !self.is("{") {
            return self.assignment();
        }
        let lo = self.bump();
        let mut items = Vec::new();
        while !self.is("}") {
            if self.eof() {
                return Err(());
            }
            items.push(self.initializer()?);
            if self.is(",") {
                self.bump();
            } else if !self.is("}") {
                return Err(());
            }
        }
        let hi = self.bump();
        Ok(Syn::node(NodeKind::InitializerList, lo, hi, items))
    }

    /// Parses one statement, recovering unparseable input as `stmt_opaque`.
    fn statement(&mut self) -> Syn {
        let save = self.pos;
        match self.statement_inner() {
            Ok(s) => s,
            Err(()) => {
                self.pos = save;
                self.opaque()
            }
        }
    }

    fn opaque(&mut self) -> Syn {
        let lo = self.at();
        let start = self.pos;
        let mut depth = 0usize;
        let mut opened_brace = false;
        while !self.eof() {
            let t = self.peek(0);
            match t {
                "(" | "[" => depth += 1,
                "{" => {
                    if depth == 0 {
                        opened_brace = true;
                    }
                    depth += 1;
                }
                ")" | "]" => depth = depth.saturating_sub(1),
                "}" => {
                    if depth == 0 {
                        // Belongs to the enclosing block.
                        break;
                    }
                    depth -= 1;
                    if depth == 0 && opened_brace {
                        self.bump();
                        if self.is(";") {
                            self.bump();
                        }
                        return Syn::node(NodeKind::StmtOpaque, lo, self.prev(), Vec::new());
                    }
                }
                ";" if depth == 0 => {
                    self.bump();
                    return Syn::node(NodeKind::StmtOpaque, lo, self.prev(), Vec::new());
                }
                _ => {}
            }
            self.bump();
        }
        if self.pos == start {
            // Nothing consumed: take the single offending token.
            self.bump();
        }
        Syn::node(NodeKind::StmtOpaque, lo, self.prev(), Vec::new())
    }

    fn statement_inner(&mut self) -> PResult<Syn> {
        if self.eof() {
            return Err(());
        }
        let lo = self.at();
        match self.peek(0) {
            "{" => self.block(false),
            ";" => Ok(Syn::leaf(NodeKind::EmptyStmt, self.bump())),
            "if" => {
                self.bump();
                self.expect("(")?;
                let cond = self.expression()?;
                self.expect(")")?;
                let then = self.statement_strict()?;
                let mut children = vec![cond, then];
                if self.is("else") {
                    self.bump();
                    children.push(self.statement_strict()?);
                }
                let hi = self.prev();
                Ok(Syn::node(NodeKind::If, lo, hi, children))
            }
            "while" => {
                self.bump();
                self.expect("(")?;
                let cond = self.expression()?;
                self.expect(")")?;
                let body = self.statement_strict()?;
                let hi = body.hi;
                Ok(Syn::node(NodeKind::While, lo, hi, vec![cond, body]))
            }
            "do" => {
                self.bump();
                let body = self.statement_strict()?;
                self.expect("while")?;
                self.expect("(")?;
                let cond = self.expression()?;
                self.expect(")")?;
                let hi = self.expect(";")?;
                Ok(Syn::node(NodeKind::DoWhile, lo, hi, vec![body, cond]))
            }
            "for" => {
                self.bump();
                self.expect("(")?;
                let init = if self.is(";") {
                    Syn::leaf(NodeKind::EmptyExpr, self.at())
                } else if self.looks_like_declaration() {
                    self.declaration()?
                } else {
                    self.expression()?
                };
                self.expect(";")?;
                let cond = if self.is(";") { Syn::leaf(NodeKind::EmptyExpr, self.at()) } else { self.expression()? };
                self.expect(";")?;
                let step = if self.is(")") { Syn::leaf(NodeKind::EmptyExpr, self.at()) } else { self.expression()? };
                self.expect(")")?;
                let body = self.statement_strict()?;
                let hi = body.hi;
                Ok(Syn::node(NodeKind::For, lo, hi, vec![init, cond, step, body]))
            }
            "return" => {
                self.bump();
                let mut children = Vec::new();
                if !self.is(";") {
                    children.push(self.expression()?);
                }
                let hi = self.prev();
                self.expect(";")?;
                Ok(Syn::node(NodeKind::Return, lo, hi, children))
            }
            "break" | "continue" => {
                let kind = if self.is("break") { NodeKind::Break } else { NodeKind::Continue };
                self.bump();
                self.expect(";")?;
                Ok(Syn::leaf(kind, lo))
            }
            "else" | "switch" | "case" | "default" | "goto" | "typedef" => Err(()),
            _ => {
                let s = if self.looks_like_declaration() { self.declaration()? } else { self.expression()? };
                self.expect(";")?;
                Ok(s)
            }
        }
    }

    /// Sub-statements of compound statements: an opaque recovery inside is
    /// fine, but running out of tokens fails the enclosing statement.
    fn statement_strict(&mut self) -> PResult<Syn> {
        if self.eof() || self.is("}") {
            return Err(());
        }
        Ok(self.statement())
    }

    /// `{ stmt* }`. Function bodies tolerate a missing closing brace.
    fn block(&mut self, lenient: bool) -> PResult<Syn> {
        let lo = self.expect("{")?;
        let mut stmts = Vec::new();
        loop {
            if self.eof() {
                if lenient {
                    let hi = self.prev();
                    return Ok(Syn::node(NodeKind::Block, lo, hi, stmts));
                }
                return Err(());
            }
            if self.is("}") {
                let hi = self.bump();
                return Ok(Syn::node(NodeKind::Block, lo, hi, stmts));
            }
            stmts.push(self.statement());
        }
    }

    fn expression(&mut self) -> PResult<Syn> {
        let first = self.assignment()?;
        if !self.is(",") {
            return Ok(first);
        }
        let lo = first.lo;
        let mut children = vec![first];
        while self.is(",") {
            children.push(Syn::leaf(NodeKind::Operator, self.bump()));
            children.push(self.assignment()?);
        }
        let hi = self.prev();
        Ok(Syn::node(NodeKind::CommaExpr, lo, hi, children))
    }

    fn assignment(&mut self) -> PResult<Syn> {
        let lhs = self.conditional()?;
        if !self.eof() && ASSIGN_OPS.contains(&self.peek(0)) {
            let op = Syn::leaf(NodeKind::Operator, self.bump());
            let rhs = self.assignment()?;
            let (lo, hi) = (lhs.lo, rhs.hi);
            return Ok(Syn::node(NodeKind::Assign, lo, hi, vec![lhs, op, rhs]));
        }
        Ok(lhs)
    }

    fn conditional(&mut self) -> PResult<Syn> {
        let cond = self.binary(1)?;
        if !self.is("?") {
            return Ok(cond);
        }
        let q = Syn::leaf(NodeKind::Operator, self.bump());
        let then = self.expression()?;
        let colon = Syn::leaf(NodeKind::Operator, self.expect(":")?);
        let other = self.conditional()?;
        let (lo, hi) = (cond.lo, other.hi);
        Ok(Syn::node(NodeKind::ConditionalExpr, lo, hi, vec![cond, q, then, colon, other]))
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Syn> {
        let mut lhs = self.unary()?;
        loop {
            let prec = match binary_precedence(self.peek(0)) {
                Some(p) if p >= min_prec && self.kind(0) == Some(TokenKind::Operator) => p,
                _ => break,
            };
            let op = Syn::leaf(NodeKind::Operator, self.bump());
            let rhs = self.binary(prec + 1)?;
            let (lo, hi) = (lhs.lo, rhs.hi);
            lhs = Syn::node(NodeKind::BinaryExpr, lo, hi, vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn is_cast(&self) -> bool {
        if !self.is("(") {
            return false;
        }
        if self.is_type_start(1) {
            return true;
        }
        // `(Name *)` and `(Name **)` are unambiguous casts.
        let mut k = 2;
        if self.kind(1) != Some(TokenKind::Identifier) {
            return false;
        }
        while self.peek(k) == "*" {
            k += 1;
        }
        k > 2 && self.peek(k) == ")"
    }

    /// Type name inside a cast or `sizeof(...)`, pointer stars included.
    fn type_name(&mut self) -> PResult<Syn> {
        let ty = self.type_spec()?;
        let lo = ty.lo;
        while self.is("*") || self.is("const") {
            self.bump();
        }
        Ok(Syn::node(NodeKind::Type, lo, self.prev(), Vec::new()))
    }

    fn unary(&mut self) -> PResult<Syn> {
        if self.eof() {
            return Err(());
        }
        let lo = self.at();
        match self.peek(0) {
            "!" | "~" | "-" | "+" | "*" | "&" | "++" | "--" if self.kind(0) == Some(TokenKind::Operator) => {
                let op = Syn::leaf(NodeKind::Operator, self.bump());
                let operand = self.unary()?;
                let hi = operand.hi;
                Ok(Syn::node(NodeKind::UnaryExpr, lo, hi, vec![op, operand]))
            }
            "sizeof" => {
                let op = Syn::leaf(NodeKind::Operator, self.bump());
                let operand = if self.is("(") && (self.is_type_start(1) || self.is_cast()) {
                    self.bump();
                    let t = self.type_name()?;
                    self.expect(")")?;
                    t
                } else {
                    self.unary()?
                };
                let hi = self.prev();
                Ok(Syn::node(NodeKind::UnaryExpr, lo, hi, vec![op, operand]))
            }
            _ if self.is_cast() => {
                self.bump();
                let ty = self.type_name()?;
                self.expect(")")?;
                let operand = self.unary()?;
                let hi = operand.hi;
                Ok(Syn::node(NodeKind::CastExpr, lo, hi, vec![ty, operand]))
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Syn> {
        let mut e = self.primary()?;
        loop {
            let lo = e.lo;
            match self.peek(0) {
                "(" => {
                    self.bump();
                    let mut children = vec![e];
                    while !self.is(")") {
                        if self.eof() {
                            return Err(());
                        }
                        children.push(self.assignment()?);
                        if self.is(",") {
                            self.bump();
                        } else if !self.is(")") {
                            return Err(());
                        }
                    }
                    let hi = self.bump();
                    e = Syn::node(NodeKind::Call, lo, hi, children);
                }
                "[" => {
                    self.bump();
                    let index = self.expression()?;
                    let hi = self.expect("]")?;
                    e = Syn::node(NodeKind::IndexExpr, lo, hi, vec![e, index]);
                }
                "." | "->" => {
                    let op = Syn::leaf(NodeKind::Operator, self.bump());
                    if self.kind(0) != Some(TokenKind::Identifier) {
                        return Err(());
                    }
                    let field = Syn::leaf(NodeKind::Field, self.bump());
                    let hi = field.hi;
                    e = Syn::node(NodeKind::MemberAccess, lo, hi, vec![e, op, field]);
                }
                "++" | "--" => {
                    let op = Syn::leaf(NodeKind::Operator, self.bump());
                    let hi = op.hi;
                    e = Syn::node(NodeKind::UnaryExpr, lo, hi, vec![e, op]);
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> PResult<Syn> {
        if self.eof() {
            return Err(());
        }
        match self.kind(0) {
            Some(TokenKind::Identifier) => Ok(Syn::leaf(NodeKind::IdentifierUse, self.bump())),
            Some(TokenKind::Number) | Some(TokenKind::CharLiteral) => Ok(Syn::leaf(NodeKind::Literal, self.bump())),
            Some(TokenKind::StringLiteral) => {
                let lo = self.bump();
                while self.kind(0) == Some(TokenKind::StringLiteral) {
                    self.bump();
                }
                Ok(Syn::node(NodeKind::Literal, lo, self.prev(), Vec::new()))
            }
            Some(TokenKind::Punctuation) if self.is("(") => {
                self.bump();
                let inner = self.expression()?;
                self.expect(")")?;
                Ok(inner)
            }
            _ => Err(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::tokenize;

    fn parse_src(src: &str) -> (TokenStream, Vec<ParseNode>) {
        let ts = tokenize(src).unwrap();
        let nodes = parse(&ts).unwrap();
        (ts, nodes)
    }

    fn kinds(nodes: &[ParseNode], id: usize) -> Vec<NodeKind> {
        nodes[id].children.iter().map(|&c| nodes[c].kind).collect()
    }

    #[test]
    fn declaration_children() {
        let (_, nodes) = parse_src("int count=1;");
        assert_eq!(nodes[0].kind, NodeKind::Decl);
        assert_eq!(kinds(&nodes, 0), vec![NodeKind::Type, NodeKind::Identifier, NodeKind::Operator, NodeKind::Literal]);
        assert_eq!(nodes[0].token_range, TokenRange { lo: 0, hi: 3 });
    }

    #[test]
    fn if_statement_shape() {
        let (_, nodes) = parse_src("if(n>0){ n = n - 1; }");
        assert_eq!(nodes[0].kind, NodeKind::If);
        assert_eq!(kinds(&nodes, 0), vec![NodeKind::BinaryExpr, NodeKind::Block]);
    }

    #[test]
    fn garbage_is_one_opaque_node() {
        let (_, nodes) = parse_src("@@garbage@@;");
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].kind, NodeKind::StmtOpaque);
        assert_eq!(nodes[0].token_range, TokenRange { lo: 0, hi: 5 });
    }

    #[test]
    fn function_definition() {
        let (_, nodes) = parse_src("static int f(const char *s, int n) { return n; }");
        assert_eq!(nodes[0].kind, NodeKind::FunctionDef);
        assert_eq!(
            kinds(&nodes, 0),
            vec![NodeKind::Type, NodeKind::Identifier, NodeKind::ParamList, NodeKind::Block]
        );
        let params = nodes[0].children[2];
        assert_eq!(nodes[params].children.len(), 2);
    }

    #[test]
    fn for_loop_always_has_four_children() {
        let (_, nodes) = parse_src("for(;;) x++;");
        assert_eq!(nodes[0].kind, NodeKind::For);
        assert_eq!(
            kinds(&nodes, 0),
            vec![NodeKind::EmptyExpr, NodeKind::EmptyExpr, NodeKind::EmptyExpr, NodeKind::UnaryExpr]
        );
    }

    #[test]
    fn opaque_recovery_is_local() {
        let (_, nodes) = parse_src("void f() { a = 1; switch (a) { case 1: b(); break; } c = 2; }");
        let block = nodes[0].children[3];
        assert_eq!(kinds(&nodes, block), vec![NodeKind::Assign, NodeKind::StmtOpaque, NodeKind::Assign]);
    }

    #[test]
    fn expressions() {
        let (ts, nodes) = parse_src("x = s->path[i + 1] * (int)y + f(a, &b) ? 1 : sizeof(struct foo);");
        assert_eq!(nodes[0].kind, NodeKind::Assign);
        assert!(nodes.iter().any(|n| n.kind == NodeKind::MemberAccess));
        assert!(nodes.iter().any(|n| n.kind == NodeKind::CastExpr));
        assert!(nodes.iter().any(|n| n.kind == NodeKind::ConditionalExpr));
        let field = nodes.iter().find(|n| n.kind == NodeKind::Field).unwrap();
        assert_eq!(ts.tokens[field.token_range.lo].text, "path");
    }

    #[test]
    fn typedef_declarations() {
        let (_, nodes) = parse_src("CoefType lt, rt, md; AVFrame *frame = NULL; a * 2;");
        let decls = nodes.iter().filter(|n| n.kind == NodeKind::Decl).count();
        assert_eq!(decls, 2);
        assert_eq!(nodes.iter().filter(|n| n.kind == NodeKind::Identifier).count(), 4);
    }

    #[test]
    fn directives_are_ignored() {
        let (ts, nodes) = parse_src("#define X 1\nint a = X;\n");
        assert_eq!(nodes[0].kind, NodeKind::Decl);
        assert_eq!(nodes[0].token_range.lo, 1);
        assert!(ts.tokens[0].is_directive());
    }

    #[test]
    fn strict_mode_rejects_empty() {
        let ts = tokenize("  // nothing\n").unwrap();
        assert_eq!(parse_with(&ts, ParseOptions { strict: true }), Err(GraphError::EmptyInput));
        assert_eq!(parse(&ts).unwrap(), Vec::new());
    }

    #[test]
    fn stray_tokens_make_progress() {
        let (_, nodes) = parse_src("} x = 1;");
        assert!(nodes.iter().filter(|n| n.kind == NodeKind::StmtOpaque).count() >= 1);
        assert!(nodes.iter().any(|n| n.kind == NodeKind::Assign));
    }

    #[test]
    fn truncated_function_body_is_lenient() {
        let (_, nodes) = parse_src("int f(int a) { a = 1; if (a) {");
        assert_eq!(nodes[0].kind, NodeKind::FunctionDef);
    }
}
