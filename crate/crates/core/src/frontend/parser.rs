use super::ast::*;
use crate::tensor::LevelKind;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("syntax error at {span}: {msg}")]
    SyntaxError { span: Span, msg: String },
    #[error("unknown tensor `{name}` at {span}")]
    UnknownTensor { name: String, span: Span },
    #[error("unknown index variable `{name}` at {span}")]
    UnknownIndexVar { name: String, span: Span },
    #[error("tensor `{name}` written twice (second write at {span})")]
    DuplicateWrite { name: String, span: Span },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Float(f64),
    Punct(&'static str),
    Eof,
}

struct Lexer;

impl Lexer {
    fn tokenize(src: &str) -> Result<Vec<(Tok, Span)>, FrontendError> {
        const PUNCT: [&str; 14] = ["->", "(", ")", ",", ";", ":", "=", "+", "-", "*", "/", "{", "}", "."];
        let mut out = Vec::new();
        for (li, line) in src.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            let bytes = line.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                let c = bytes[i] as char;
                let span = Span { line: li + 1, col: i + 1 };
                if c.is_whitespace() {
                    i += 1;
                } else if c.is_ascii_alphabetic() || c == '_' {
                    let start = i;
                    while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'\'') {
                        i += 1;
                    }
                    out.push((Tok::Ident(line[start..i].to_string()), span));
                } else if c.is_ascii_digit() {
                    let start = i;
                    let mut float = false;
                    while i < bytes.len() {
                        let d = bytes[i] as char;
                        if d.is_ascii_digit() {
                            i += 1;
                        } else if d == '.' && !float && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit() {
                            float = true;
                            i += 1;
                        } else if (d == 'e' || d == 'E') && i + 1 < bytes.len() {
                            float = true;
                            i += 1;
                            if bytes[i] == b'-' || bytes[i] == b'+' {
                                i += 1;
                            }
                        } else {
                            break;
                        }
                    }
                    let text = &line[start..i];
                    let tok = if float {
                        Tok::Float(text.parse().map_err(|_| FrontendError::SyntaxError { span, msg: format!("bad number `{text}`") })?)
                    } else {
                        Tok::Int(text.parse().map_err(|_| FrontendError::SyntaxError { span, msg: format!("bad integer `{text}`") })?)
                    };
                    out.push((tok, span));
                } else if c == '[' || c == ']' {
                    out.push((Tok::Punct(if c == '[' { "[" } else { "]" }), span));
                    i += 1;
                } else if let Some(p) = PUNCT.iter().find(|p| line[i..].starts_with(**p)) {
                    out.push((Tok::Punct(p), span));
                    i += p.len();
                } else {
                    return Err(FrontendError::SyntaxError { span, msg: format!("unexpected character `{c}`") });
                }
            }
        }
        let end = Span { line: src.lines().count().max(1), col: 1 };
        out.push((Tok::Eof, end));
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, FrontendError> {
        Err(FrontendError::SyntaxError { span: self.span(), msg: msg.into() })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), FrontendError> {
        if self.eat(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.bump() {
            Tok::Ident(s) => Ok(s),
            other => {
                self.pos -= 1;
                self.err(format!("expected identifier, found {}", describe(&other)))
            }
        }
    }

    fn int(&mut self) -> Result<usize, FrontendError> {
        match self.bump() {
            Tok::Int(n) => Ok(n),
            other => {
                self.pos -= 1;
                self.err(format!("expected integer, found {}", describe(&other)))
            }
        }
    }

    fn number(&mut self) -> Result<f64, FrontendError> {
        let neg = self.eat("-");
        let v = match self.bump() {
            Tok::Int(n) => n as f64,
            Tok::Float(x) => x,
            other => {
                self.pos -= 1;
                return self.err(format!("expected number, found {}", describe(&other)));
            }
        };
        Ok(if neg { -v } else { v })
    }

    fn ident_list(&mut self, close: &str) -> Result<Vec<String>, FrontendError> {
        let mut out = Vec::new();
        if self.eat(close) {
            return Ok(out);
        }
        loop {
            out.push(self.ident()?);
            if self.eat(close) {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn program(&mut self) -> Result<EinsumProgram, FrontendError> {
        let mut p = EinsumProgram { indices: vec![], tensors: vec![], items: vec![], directives: vec![] };
        while *self.peek() != Tok::Eof {
            let span = self.span();
            match self.peek().clone() {
                Tok::Ident(kw) if kw == "index" && matches!(self.peek_at(1), Tok::Ident(_)) => {
                    self.bump();
                    let name = self.ident()?;
                    self.expect("=")?;
                    let extent = self.int()?;
                    self.expect(";")?;
                    p.indices.push(IndexDecl { name, extent, span });
                }
                Tok::Ident(kw) if kw == "tensor" && matches!(self.peek_at(1), Tok::Ident(_)) => {
                    self.bump();
                    p.tensors.push(self.tensor_decl(span)?);
                }
                Tok::Ident(kw) if kw == "fuse" && self.peek_at(1) == &Tok::Punct("{") => {
                    self.bump();
                    self.bump();
                    let mut exprs = Vec::new();
                    let mut directives = Vec::new();
                    while !self.eat("}") {
                        if *self.peek() == Tok::Eof {
                            return self.err("unterminated fuse block");
                        }
                        if let Some(d) = self.directive()? {
                            directives.push(d);
                        } else {
                            exprs.push(self.expr_stmt()?);
                        }
                    }
                    p.items.push(Item::Fuse { exprs, directives, span });
                }
                Tok::Ident(kw) if kw == "reshape" && matches!(self.peek_at(1), Tok::Ident(_)) => {
                    self.bump();
                    let output = self.ident()?;
                    self.expect("=")?;
                    let input = self.ident()?;
                    self.expect(";")?;
                    p.items.push(Item::Reshape(Reshape { output, input, span }));
                }
                _ => {
                    if let Some(d) = self.directive()? {
                        p.directives.push(d);
                    } else {
                        p.items.push(Item::Expr(self.expr_stmt()?));
                    }
                }
            }
        }
        Ok(p)
    }

    /// Parses a schedule directive if the next tokens form one.
    fn directive(&mut self) -> Result<Option<Directive>, FrontendError> {
        let Tok::Ident(kw) = self.peek().clone() else { return Ok(None) };
        if self.peek_at(1) != &Tok::Punct("(") {
            return Ok(None);
        }
        // `order(a, b) = ...` would be an expression writing a tensor named order
        let is_directive = matches!(kw.as_str(), "order" | "parallelize" | "block" | "density" | "rate" | "orders_cap");
        if !is_directive || self.directive_is_assignment() {
            return Ok(None);
        }
        self.bump();
        self.bump();
        let d = match kw.as_str() {
            "order" => Directive::Order(self.ident_list(")")?),
            "parallelize" => {
                let v = self.ident()?;
                self.expect(",")?;
                let f = self.int()? as u32;
                self.expect(")")?;
                Directive::Parallelize(v, f)
            }
            "block" => {
                let mut b = vec![self.int()?];
                while self.eat(",") {
                    b.push(self.int()?);
                }
                self.expect(")")?;
                Directive::Block(b)
            }
            "density" => {
                let t = self.ident()?;
                self.expect(",")?;
                let d = self.number()?;
                self.expect(")")?;
                Directive::Density(t, d)
            }
            "rate" => {
                let a = self.dotted()?;
                self.expect(",")?;
                let b = self.dotted()?;
                self.expect(",")?;
                let rate = self.number()?;
                self.expect(")")?;
                Directive::Rate(Rate { a, b, rate })
            }
            _ => {
                let n = self.int()?;
                self.expect(")")?;
                Directive::OrdersCap(n)
            }
        };
        self.expect(";")?;
        Ok(Some(d))
    }

    fn directive_is_assignment(&self) -> bool {
        let mut depth = 0i32;
        let mut k = 1;
        loop {
            match self.peek_at(k) {
                Tok::Punct("(") => depth += 1,
                Tok::Punct(")") => {
                    depth -= 1;
                    if depth == 0 {
                        return self.peek_at(k + 1) == &Tok::Punct("=");
                    }
                }
                Tok::Eof => return false,
                _ => {}
            }
            k += 1;
        }
    }

    fn dotted(&mut self) -> Result<(String, String), FrontendError> {
        let t = self.ident()?;
        self.expect(".")?;
        Ok((t, self.ident()?))
    }

    fn mode_ref(&mut self, dims: &[Dim]) -> Result<usize, FrontendError> {
        let span = self.span();
        match self.bump() {
            Tok::Int(n) if n < dims.len() => Ok(n),
            Tok::Ident(name) => dims
                .iter()
                .position(|d| matches!(d, Dim::Index(i) if *i == name))
                .ok_or(FrontendError::SyntaxError { span, msg: format!("`{name}` is not a mode of this tensor") }),
            other => Err(FrontendError::SyntaxError { span, msg: format!("expected mode, found {}", describe(&other)) }),
        }
    }

    fn tensor_decl(&mut self, span: Span) -> Result<TensorDecl, FrontendError> {
        let name = self.ident()?;
        self.expect("(")?;
        let mut dims = Vec::new();
        if !self.eat(")") {
            loop {
                match self.bump() {
                    Tok::Ident(s) => dims.push(Dim::Index(s)),
                    Tok::Int(n) => dims.push(Dim::Extent(n)),
                    other => {
                        self.pos -= 1;
                        return self.err(format!("expected dimension, found {}", describe(&other)));
                    }
                }
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        let mut levels = Vec::new();
        if self.eat(":") {
            loop {
                let kspan = self.span();
                let kw = self.ident()?;
                let kind = LevelKind::from_keyword(&kw)
                    .ok_or(FrontendError::SyntaxError { span: kspan, msg: format!("unknown level format `{kw}`") })?;
                self.expect("(")?;
                let mode = self.mode_ref(&dims)?;
                self.expect(")")?;
                levels.push(LevelSpec { kind, mode });
                if !self.eat("->") {
                    break;
                }
            }
        }
        let mut order = None;
        if matches!(self.peek(), Tok::Ident(s) if s == "order") {
            self.bump();
            self.expect("(")?;
            let mut o = Vec::new();
            if !self.eat(")") {
                loop {
                    o.push(self.mode_ref(&dims)?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            order = Some(o);
        }
        let role = match self.peek() {
            Tok::Ident(s) if s == "input" => Some(Role::Input),
            Tok::Ident(s) if s == "output" => Some(Role::Output),
            Tok::Ident(s) if s == "intermediate" => Some(Role::Intermediate),
            _ => None,
        };
        if role.is_some() {
            self.bump();
        }
        self.expect(";")?;
        if let Some(o) = &order {
            let mut seen: Vec<usize> = o.clone();
            seen.sort();
            if seen != (0..dims.len()).collect::<Vec<_>>() {
                return Err(FrontendError::SyntaxError { span, msg: format!("order of `{name}` is not a permutation of its modes") });
            }
        }
        if !levels.is_empty() {
            let mut seen: Vec<usize> = levels.iter().map(|l| l.mode).collect();
            seen.sort();
            if seen != (0..dims.len()).collect::<Vec<_>>() {
                return Err(FrontendError::SyntaxError { span, msg: format!("level chain of `{name}` must name every mode once") });
            }
        }
        Ok(TensorDecl { name, dims, levels, order, role, span })
    }

    fn access(&mut self) -> Result<Access, FrontendError> {
        let span = self.span();
        let tensor = self.ident()?;
        self.expect("(")?;
        let indices = self.ident_list(")")?;
        Ok(Access { tensor, indices, span })
    }

    fn expr_stmt(&mut self) -> Result<EinsumExpr, FrontendError> {
        let span = self.span();
        let output = self.access()?;
        self.expect("=")?;
        let body = self.expr()?;
        self.expect(";")?;
        Ok(EinsumExpr { output, body, span })
    }

    fn expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.atom()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.atom()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn atom(&mut self) -> Result<Expr, FrontendError> {
        if self.eat("(") {
            let e = self.expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        let Tok::Ident(name) = self.peek().clone() else {
            return self.err(format!("expected expression, found {}", describe(self.peek())));
        };
        let next = self.peek_at(1).clone();
        if matches!(name.as_str(), "sum" | "max") && next == Tok::Punct("[") {
            self.bump();
            self.bump();
            let vars = self.ident_list("]")?;
            self.expect("(")?;
            let e = self.expr()?;
            self.expect(")")?;
            let op = if name == "sum" { ReduceOp::Sum } else { ReduceOp::Max };
            return Ok(Expr::Reduce(op, vars, Box::new(e)));
        }
        if next == Tok::Punct("(") && !self.looks_like_access() {
            match name.as_str() {
                "relu" | "exp" | "gelu" | "max" => {
                    self.bump();
                    self.bump();
                    let e = self.expr()?;
                    self.expect(")")?;
                    return Ok(match name.as_str() {
                        "relu" => Expr::Map(MapFn::Relu, Box::new(e)),
                        "exp" => Expr::Map(MapFn::Exp, Box::new(e)),
                        "gelu" => Expr::Map(MapFn::Gelu, Box::new(e)),
                        _ => Expr::MaxAll(Box::new(e)),
                    });
                }
                "scale" => {
                    self.bump();
                    self.bump();
                    let e = self.expr()?;
                    self.expect(",")?;
                    let c = self.number()?;
                    self.expect(")")?;
                    return Ok(Expr::Map(MapFn::Scale(c), Box::new(e)));
                }
                "mask" => {
                    self.bump();
                    self.bump();
                    let m = self.access()?;
                    self.expect(",")?;
                    let e = self.expr()?;
                    self.expect(")")?;
                    return Ok(Expr::Mask(m, Box::new(e)));
                }
                "div" => {
                    self.bump();
                    self.bump();
                    let a = self.expr()?;
                    self.expect(",")?;
                    let b = self.expr()?;
                    self.expect(")")?;
                    return Ok(Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)));
                }
                _ => {}
            }
        }
        Ok(Expr::Access(self.access()?))
    }

    /// A call whose parenthesized list holds only identifiers and commas is an access.
    fn looks_like_access(&self) -> bool {
        let mut k = 2;
        loop {
            match self.peek_at(k) {
                Tok::Punct(")") => return true,
                Tok::Ident(_) => {}
                Tok::Punct(",") => {}
                _ => return false,
            }
            // `relu(x)` with a single identifier is still a call when x is not followed by `(`
            if let Tok::Ident(_) = self.peek_at(k) {
                if self.peek_at(k + 1) == &Tok::Punct("(") {
                    return false;
                }
            }
            k += 1;
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(n) => format!("`{n}`"),
        Tok::Float(x) => format!("`{x}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses and resolves names. Semantic checks beyond name resolution live in `validate`.
pub fn parse_program(source: &str) -> Result<EinsumProgram, FrontendError> {
    let toks = Lexer::tokenize(source)?;
    let mut parser = Parser { toks, pos: 0 };
    let program = parser.program()?;
    resolve(&program)?;
    Ok(program)
}

fn resolve(p: &EinsumProgram) -> Result<(), FrontendError> {
    let mut written: BTreeSet<String> = BTreeSet::new();
    let declared: BTreeSet<&str> = p.tensors.iter().map(|t| t.name.as_str()).collect();
    let all_written = p.written();
    let check_access = |a: &Access| -> Result<(), FrontendError> {
        if !declared.contains(a.tensor.as_str()) && !all_written.contains(&a.tensor) {
            return Err(FrontendError::UnknownTensor { name: a.tensor.clone(), span: a.span });
        }
        for (pos, v) in a.indices.iter().enumerate() {
            let inferable = p.tensor(&a.tensor).is_some_and(|t| t.dims.len() == a.indices.len() && matches!(t.dims[pos], Dim::Extent(_)));
            if p.index_extent(v).is_none() && !inferable {
                return Err(FrontendError::UnknownIndexVar { name: v.clone(), span: a.span });
            }
        }
        Ok(())
    };
    for item in &p.items {
        let exprs: Vec<&EinsumExpr> = match item {
            Item::Expr(e) => vec![e],
            Item::Fuse { exprs, .. } => exprs.iter().collect(),
            Item::Reshape(r) => {
                if !declared.contains(r.input.as_str()) && !all_written.contains(&r.input) {
                    return Err(FrontendError::UnknownTensor { name: r.input.clone(), span: r.span });
                }
                if !declared.contains(r.output.as_str()) {
                    return Err(FrontendError::UnknownTensor { name: r.output.clone(), span: r.span });
                }
                if !written.insert(r.output.clone()) {
                    return Err(FrontendError::DuplicateWrite { name: r.output.clone(), span: r.span });
                }
                continue;
            }
        };
        for e in exprs {
            let mut err = None;
            e.body.visit_accesses(&mut |a| {
                if err.is_none() {
                    err = check_access(a).err();
                }
            });
            if let Some(err) = err {
                return Err(err);
            }
            check_access(&e.output)?;
            if !written.insert(e.output.tensor.clone()) {
                return Err(FrontendError::DuplicateWrite { name: e.output.tensor.clone(), span: e.span });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPMM: &str = "index i = 2; index k = 3; index j = 2;\n\
        tensor A(i,k): dense(i)->compressed(k);\n\
        tensor X(k,j): dense(k)->dense(j);\n\
        T(i,j) = A(i,k) * X(k,j);\n";

    #[test]
    fn parses_spmm() {
        let p = parse_program(SPMM).unwrap();
        let exprs = p.expressions();
        assert_eq!(exprs.len(), 1);
        assert_eq!(exprs[0].reduction_vars(), vec!["k".to_string()]);
        assert_eq!(p.tensor("A").unwrap().storage().1, vec![LevelKind::Dense, LevelKind::Compressed]);
    }

    #[test]
    fn parses_fused_gcn_layer() {
        let src = "index i = 4; index l = 4; index m = 3; index j = 2;\n\
            tensor Adj(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->dense(m);\ntensor W(m,j): dense(m)->dense(j);\n\
            fuse {\n  Y(i,j) = relu(Adj(i,l) * X(l,m) * W(m,j));\n}\n";
        let p = parse_program(src).unwrap();
        let s = p.schedule();
        assert_eq!(s.regions, vec![vec![0]]);
        assert!(matches!(p.expressions()[0].body, Expr::Map(MapFn::Relu, _)));
    }

    #[test]
    fn unknown_tensor_has_span() {
        let src = "index i = 2; index j = 2;\nT(i,j) = A(i,j);\n";
        assert_eq!(
            parse_program(src),
            Err(FrontendError::UnknownTensor { name: "A".into(), span: Span { line: 2, col: 10 } })
        );
        let e = parse_program(src).unwrap_err();
        let FrontendError::UnknownTensor { span, .. } = e else { panic!() };
        assert_eq!((span.line, span.col), (2, 10));
    }

    #[test]
    fn rejects_duplicate_write_and_unknown_var() {
        let dup = "index i = 2;\ntensor A(i);\nT(i) = A(i);\nT(i) = A(i);\n";
        assert!(matches!(parse_program(dup), Err(FrontendError::DuplicateWrite { .. })));
        let var = "index i = 2;\ntensor A(i);\nT(q) = A(q);\n";
        assert!(matches!(parse_program(var), Err(FrontendError::UnknownIndexVar { .. })));
        assert!(matches!(parse_program("index i = ;"), Err(FrontendError::SyntaxError { .. })));
    }

    #[test]
    fn parses_directives_and_calls() {
        let src = "index i = 2; index j = 2;\ntensor S(i,j);\ntensor M(i,j);\n\
            P(i,j) = div(exp(scale(mask(M(i,j), S(i,j)), -0.5)), sum[j](S(i,j)) + max(S(i,j)));\n\
            order(i,j); parallelize(i,2); block(2,2); density(S, 0.5); rate(S.j, M.j, 0.5); orders_cap(7);\n";
        let p = parse_program(src).unwrap();
        let s = p.schedule();
        assert_eq!(s.order_cap, 7);
        assert_eq!(s.parallelize, vec![("i".to_string(), 2)]);
        assert_eq!(s.block, Some(vec![2, 2]));
        assert_eq!(s.orders[0], Some(vec!["i".to_string(), "j".to_string()]));
        assert_eq!(s.rates[0].rate, 0.5);
    }
}
