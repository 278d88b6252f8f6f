//! Parser for the scene text format (`.csg` files).
//!
//! The grammar is a small OpenSCAD-like language:
//!
//! ```text
//! scene      := stmt*
//! stmt       := param | node
//! param      := "param" IDENT "=" NUMBER ("min" NUMBER)? ("positive")? ";"
//! node       := group | modifier* primitive ";"
//! group      := ("union" | "intersection" | "difference") "{" node* "}"
//! modifier   := "translate" "(" expr "," expr "," expr ")"
//!             | "rotate" "(" expr "," expr "," expr ")"      # Euler XYZ, radians
//!             | "scale" "(" expr ")"                          # uniform
//!             | "color" "(" NUMBER "," NUMBER "," NUMBER ")"
//! primitive  := "sphere" "(" args ")" | "cylinder" "(" args ")"
//!             | "box" "(" args ")" | "extrude" "(" args ")" "{" profile "}"
//! profile    := "start" "(" expr "," expr ")" ";" curve* close
//! curve      := "curve" "(" expr ","... 6 exprs ")" ";"
//! close      := "close" "(" expr ","... 4 exprs ")" ";"
//! expr       := affine arithmetic over parameters and constants
//! ```
//!
//! Geometric modifiers must appear in `translate rotate scale` order (each at
//! most once) because a primitive carries exactly one T*R*S placement.
//! Multiple top-level nodes form an implicit union. `difference` subtracts
//! every child after the first from the first.

use std::fmt;

use super::params::{ParamExpr, ParamTable};
use super::types::{
    BezierLoop, BezierSegment, CsgNode, PrimitiveKind, PrimitiveSpec, Transform,
};
use super::Scene;

/// Default per-primitive colors, assigned by leaf id when the scene gives no
/// explicit `color(...)`.
pub const PALETTE: [[f64; 3]; 12] = [
    [0.80, 0.29, 0.27],
    [0.27, 0.51, 0.79],
    [0.34, 0.68, 0.37],
    [0.89, 0.68, 0.22],
    [0.58, 0.40, 0.74],
    [0.25, 0.71, 0.67],
    [0.85, 0.47, 0.19],
    [0.48, 0.55, 0.60],
    [0.74, 0.33, 0.55],
    [0.52, 0.66, 0.23],
    [0.36, 0.42, 0.75],
    [0.65, 0.50, 0.39],
];

pub fn palette_color(id: usize) -> [f64; 3] {
    PALETTE[id % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, col {}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Semi,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(n) => write!(f, "number {n}"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    macro_rules! err {
        ($l:expr, $c:expr, $($arg:tt)*) => {
            return Err(ParseError { line: $l, col: $c, message: format!($($arg)*) })
        };
    }
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '/' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'/') {
                    while let Some(&c) = chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        chars.next();
                        col += 1;
                    }
                } else {
                    out.push(Spanned { tok: Tok::Slash, line: tl, col: tc });
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(s), line: tl, col: tc });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut s = String::new();
                let mut saw_exp = false;
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || c == '.' {
                        s.push(c);
                        chars.next();
                        col += 1;
                    } else if (c == 'e' || c == 'E') && !saw_exp {
                        saw_exp = true;
                        s.push(c);
                        chars.next();
                        col += 1;
                        if let Some(&sign) = chars.peek() {
                            if sign == '+' || sign == '-' {
                                s.push(sign);
                                chars.next();
                                col += 1;
                            }
                        }
                    } else {
                        break;
                    }
                }
                match s.parse::<f64>() {
                    Ok(n) => out.push(Spanned { tok: Tok::Number(n), line: tl, col: tc }),
                    Err(_) => err!(tl, tc, "malformed number literal `{s}`"),
                }
            }
            '{' | '}' | '(' | ')' | ',' | ';' | '=' | '+' | '-' | '*' => {
                chars.next();
                col += 1;
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    '=' => Tok::Eq,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    _ => Tok::Star,
                };
                out.push(Spanned { tok, line: tl, col: tc });
            }
            other => err!(tl, tc, "unexpected character `{other}`"),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    params: ParamTable,
    primitives: Vec<PrimitiveSpec>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, at: &Spanned, message: String) -> Result<T, ParseError> {
        Err(ParseError {
            line: at.line,
            col: at.col,
            message,
        })
    }

    fn error_here<T>(&self, message: String) -> Result<T, ParseError> {
        let at = self.peek().clone();
        self.error(&at, message)
    }

    fn expect(&mut self, tok: Tok) -> Result<Spanned, ParseError> {
        let t = self.next();
        if t.tok == tok {
            Ok(t)
        } else {
            self.error(&t, format!("expected {tok}, found {}", t.tok))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, Spanned), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => self.error(&t, format!("expected identifier, found {other}")),
        }
    }

    fn expect_number(&mut self) -> Result<f64, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Number(n) => Ok(n),
            Tok::Minus => match self.next() {
                Spanned { tok: Tok::Number(n), .. } => Ok(-n),
                other => self.error(&other, format!("expected number, found {}", other.tok)),
            },
            ref other => self.error(&t, format!("expected number, found {other}")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<ParamExpr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    let rhs = self.term()?;
                    acc = acc.add(&rhs);
                }
                Tok::Minus => {
                    self.next();
                    let rhs = self.term()?.scale(-1.0);
                    acc = acc.add(&rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := unary (('*'|'/') unary)*  restricted to affine results
    fn term(&mut self) -> Result<ParamExpr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    let at = self.next();
                    let rhs = self.unary()?;
                    if !acc.is_constant() && !rhs.is_constant() {
                        return self.error(
                            &at,
                            "non-affine expression: cannot multiply two parameter terms".into(),
                        );
                    }
                    acc = if rhs.is_constant() {
                        acc.scale(rhs.constant)
                    } else {
                        rhs.scale(acc.constant)
                    };
                }
                Tok::Slash => {
                    let at = self.next();
                    let rhs = self.unary()?;
                    if !rhs.is_constant() {
                        return self.error(
                            &at,
                            "non-affine expression: divisor must be constant".into(),
                        );
                    }
                    if rhs.constant == 0.0 {
                        return self.error(&at, "division by zero".into());
                    }
                    acc = acc.scale(1.0 / rhs.constant);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<ParamExpr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.next();
                Ok(self.unary()?.scale(-1.0))
            }
            Tok::Number(n) => {
                self.next();
                Ok(ParamExpr::constant(n))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let (name, at) = self.expect_ident()?;
                match self.params.lookup(&name) {
                    Some(id) => Ok(ParamExpr::param(id)),
                    None => self.error(&at, format!("unknown parameter `{name}`")),
                }
            }
            _ => self.error_here(format!("expected expression, found {}", self.peek().tok)),
        }
    }

    fn param_decl(&mut self) -> Result<(), ParseError> {
        self.next(); // `param`
        let (name, at) = self.expect_ident()?;
        self.expect(Tok::Eq)?;
        let init = self.expect_number()?;
        let mut lower_bound = None;
        let mut positive = false;
        loop {
            if self.at_keyword("min") {
                self.next();
                lower_bound = Some(self.expect_number()?);
            } else if self.at_keyword("positive") {
                self.next();
                positive = true;
            } else {
                break;
            }
        }
        self.expect(Tok::Semi)?;
        self.params
            .define(&name, init, lower_bound, positive)
            .map_err(|e| ParseError {
                line: at.line,
                col: at.col,
                message: e.to_string(),
            })?;
        Ok(())
    }

    /// Named argument list `name = expr, ...` inside parentheses.
    fn named_args(&mut self) -> Result<Vec<(String, Spanned, ParamExpr)>, ParseError> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let (name, at) = self.expect_ident()?;
                self.expect(Tok::Eq)?;
                let e = self.expr()?;
                args.push((name, at, e));
                match self.next() {
                    Spanned { tok: Tok::Comma, .. } => continue,
                    Spanned { tok: Tok::RParen, .. } => break,
                    other => {
                        return self
                            .error(&other, format!("expected `,` or `)`, found {}", other.tok))
                    }
                }
            }
        } else {
            self.next();
        }
        Ok(args)
    }

    fn take_arg(
        &self,
        args: &mut Vec<(String, Spanned, ParamExpr)>,
        name: &str,
        at: &Spanned,
        prim: &str,
    ) -> Result<ParamExpr, ParseError> {
        match args.iter().position(|(n, _, _)| n == name) {
            Some(i) => Ok(args.remove(i).2),
            None => self.error(at, format!("{prim} requires argument `{name}`")),
        }
    }

    fn finish_args(
        &self,
        args: Vec<(String, Spanned, ParamExpr)>,
        prim: &str,
    ) -> Result<(), ParseError> {
        if let Some((name, at, _)) = args.into_iter().next() {
            return self.error(&at, format!("unknown argument `{name}` for {prim}"));
        }
        Ok(())
    }

    fn exprs_in_parens(&mut self, n: usize) -> Result<Vec<ParamExpr>, ParseError> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect(Tok::Comma)?;
            }
            out.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        Ok(out)
    }

    fn profile(&mut self) -> Result<BezierLoop, ParseError> {
        self.expect(Tok::LBrace)?;
        let start_at = self.peek().clone();
        if !self.at_keyword("start") {
            return self.error(&start_at, "extrude profile must begin with `start(x, y);`".into());
        }
        self.next();
        let mut s = self.exprs_in_parens(2)?;
        let start = [s.remove(0), s.remove(0)];
        self.expect(Tok::Semi)?;
        let mut segments = Vec::new();
        let mut closed = false;
        loop {
            let at = self.peek().clone();
            match &at.tok {
                Tok::Ident(k) if k == "curve" => {
                    if closed {
                        return self.error(&at, "profile already closed".into());
                    }
                    self.next();
                    let mut e = self.exprs_in_parens(6)?;
                    segments.push(BezierSegment {
                        c1: [e.remove(0), e.remove(0)],
                        c2: [e.remove(0), e.remove(0)],
                        end: Some([e.remove(0), e.remove(0)]),
                    });
                    self.expect(Tok::Semi)?;
                }
                Tok::Ident(k) if k == "close" => {
                    if closed {
                        return self.error(&at, "profile already closed".into());
                    }
                    self.next();
                    let mut e = self.exprs_in_parens(4)?;
                    segments.push(BezierSegment {
                        c1: [e.remove(0), e.remove(0)],
                        c2: [e.remove(0), e.remove(0)],
                        end: None,
                    });
                    self.expect(Tok::Semi)?;
                    closed = true;
                }
                Tok::RBrace => {
                    self.next();
                    if !closed {
                        return self.error(
                            &at,
                            "unclosed Bezier loop: profile must end with `close(c1x, c1y, c2x, c2y);`"
                                .into(),
                        );
                    }
                    return Ok(BezierLoop { start, segments });
                }
                other => {
                    return self.error(
                        &at,
                        format!("expected `curve`, `close` or `}}` in profile, found {other}"),
                    )
                }
            }
        }
    }

    fn primitive(
        &mut self,
        kw: &str,
        at: &Spanned,
        transform: Transform,
        color: Option<[f64; 3]>,
    ) -> Result<CsgNode, ParseError> {
        let mut args = self.named_args()?;
        let kind = match kw {
            "sphere" => {
                let radius = self.take_arg(&mut args, "r", at, "sphere")?;
                self.finish_args(args, "sphere")?;
                PrimitiveKind::Sphere { radius }
            }
            "cylinder" => {
                let r_top = self.take_arg(&mut args, "rt", at, "cylinder")?;
                let r_bottom = self.take_arg(&mut args, "rb", at, "cylinder")?;
                let height = self.take_arg(&mut args, "h", at, "cylinder")?;
                self.finish_args(args, "cylinder")?;
                PrimitiveKind::Cylinder {
                    r_top,
                    r_bottom,
                    height,
                }
            }
            "box" => {
                let width = self.take_arg(&mut args, "w", at, "box")?;
                let height = self.take_arg(&mut args, "h", at, "box")?;
                let depth = self.take_arg(&mut args, "d", at, "box")?;
                self.finish_args(args, "box")?;
                PrimitiveKind::Box {
                    width,
                    height,
                    depth,
                }
            }
            "extrude" => {
                let depth = self.take_arg(&mut args, "depth", at, "extrude")?;
                let samples = match args.iter().position(|(n, _, _)| n == "samples") {
                    Some(i) => {
                        let (_, sat, e) = args.remove(i);
                        if !e.is_constant() || e.constant.fract() != 0.0 || e.constant < 2.0 {
                            return self.error(
                                &sat,
                                "extrude `samples` must be a constant integer >= 2".into(),
                            );
                        }
                        e.constant as usize
                    }
                    None => 15,
                };
                self.finish_args(args, "extrude")?;
                let profile = self.profile()?;
                PrimitiveKind::Extrude {
                    profile,
                    depth,
                    samples_per_curve: samples,
                }
            }
            _ => unreachable!(),
        };
        let id = self.primitives.len();
        self.primitives.push(PrimitiveSpec {
            kind,
            transform,
            color: color.unwrap_or_else(|| palette_color(id)),
            id,
        });
        Ok(CsgNode::Leaf(id))
    }

    fn node(&mut self) -> Result<CsgNode, ParseError> {
        let at = self.peek().clone();
        let kw = match &at.tok {
            Tok::Ident(s) => s.clone(),
            other => return self.error(&at, format!("expected a node, found {other}")),
        };
        match kw.as_str() {
            "union" | "intersection" | "difference" => {
                self.next();
                self.expect(Tok::LBrace)?;
                let mut children = Vec::new();
                while self.peek().tok != Tok::RBrace {
                    if self.peek().tok == Tok::Eof {
                        return self.error_here(format!("unclosed `{kw}` block"));
                    }
                    children.push(self.node()?);
                }
                self.next(); // `}`
                match kw.as_str() {
                    "union" => Ok(CsgNode::Union(children)),
                    "intersection" => {
                        if children.is_empty() {
                            self.error(&at, "intersection requires at least one child".into())
                        } else {
                            Ok(CsgNode::Intersection(children))
                        }
                    }
                    _ => {
                        if children.is_empty() {
                            return self.error(&at, "difference requires at least one child".into());
                        }
                        let mut it = children.into_iter();
                        let first = it.next().unwrap();
                        let mut rest: Vec<CsgNode> = it.collect();
                        match rest.len() {
                            0 => Ok(first),
                            1 => Ok(CsgNode::Difference(
                                Box::new(first),
                                Box::new(rest.pop().unwrap()),
                            )),
                            _ => Ok(CsgNode::Difference(
                                Box::new(first),
                                Box::new(CsgNode::Union(rest)),
                            )),
                        }
                    }
                }
            }
            "translate" | "rotate" | "scale" | "color" | "sphere" | "cylinder" | "box"
            | "extrude" => {
                let mut transform = Transform::identity();
                // 0 = nothing seen, 1 = translate, 2 = rotate, 3 = scale.
                let mut stage = 0;
                let mut color = None;
                loop {
                    let at = self.peek().clone();
                    let kw = match &at.tok {
                        Tok::Ident(s) => s.clone(),
                        other => {
                            return self.error(&at, format!("expected a primitive, found {other}"))
                        }
                    };
                    match kw.as_str() {
                        "translate" => {
                            if stage >= 1 {
                                return self.error(
                                    &at,
                                    "modifiers must appear in `translate rotate scale` order, each at most once"
                                        .into(),
                                );
                            }
                            stage = 1;
                            self.next();
                            let mut e = self.exprs_in_parens(3)?;
                            transform.translation =
                                [e.remove(0), e.remove(0), e.remove(0)];
                        }
                        "rotate" => {
                            if stage >= 2 {
                                return self.error(
                                    &at,
                                    "modifiers must appear in `translate rotate scale` order, each at most once"
                                        .into(),
                                );
                            }
                            stage = 2;
                            self.next();
                            let mut e = self.exprs_in_parens(3)?;
                            transform.rotation = [e.remove(0), e.remove(0), e.remove(0)];
                        }
                        "scale" => {
                            if stage >= 3 {
                                return self.error(
                                    &at,
                                    "modifiers must appear in `translate rotate scale` order, each at most once"
                                        .into(),
                                );
                            }
                            stage = 3;
                            self.next();
                            let mut e = self.exprs_in_parens(1)?;
                            transform.uniform_scale = e.remove(0);
                        }
                        "color" => {
                            if color.is_some() {
                                return self.error(&at, "duplicate color modifier".into());
                            }
                            self.next();
                            self.expect(Tok::LParen)?;
                            let r = self.expect_number()?;
                            self.expect(Tok::Comma)?;
                            let g = self.expect_number()?;
                            self.expect(Tok::Comma)?;
                            let b = self.expect_number()?;
                            self.expect(Tok::RParen)?;
                            for v in [r, g, b] {
                                if !(0.0..=1.0).contains(&v) {
                                    return self.error(
                                        &at,
                                        format!("color component {v} outside [0, 1]"),
                                    );
                                }
                            }
                            color = Some([r, g, b]);
                        }
                        "sphere" | "cylinder" | "box" | "extrude" => {
                            self.next();
                            let node = self.primitive(&kw, &at, transform, color)?;
                            // The extrude profile block is brace-terminated.
                            if kw != "extrude" {
                                self.expect(Tok::Semi)?;
                            }
                            return Ok(node);
                        }
                        other => {
                            return self.error(
                                &at,
                                format!("expected a primitive or modifier, found `{other}`"),
                            )
                        }
                    }
                }
            }
            other => self.error(&at, format!("unknown statement `{other}`")),
        }
    }
}

/// Parses scene text into a [`Scene`]. Leaf ids are assigned in source order.
pub fn parse_scene(text: &str) -> Result<Scene, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        params: ParamTable::new(),
        primitives: Vec::new(),
    };
    let mut nodes = Vec::new();
    loop {
        match &p.peek().tok {
            Tok::Eof => break,
            Tok::Ident(s) if s == "param" => p.param_decl()?,
            _ => nodes.push(p.node()?),
        }
    }
    let root = match nodes.len() {
        0 => CsgNode::Union(Vec::new()),
        1 => nodes.into_iter().next().unwrap(),
        _ => CsgNode::Union(nodes),
    };
    Ok(Scene::new(p.params, p.primitives, root))
}
