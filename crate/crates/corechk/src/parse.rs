//! Parser for the parenthesized program format. Comments start with `;` and
//! run to end of line. Identifiers match `[a-zA-Z_][a-zA-Z0-9_]*`; integers
//! are signed 64-bit and out-of-range literals are a parse error.
//!
//! `ret` is machine-introduced and rejected here, as is a `malloc` of a
//! function type.

use std::fmt;

use thiserror::Error;

use crate::syntax::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at {line}:{col}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    Int(i64),
    Sym(String),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Int(n) => write!(f, "integer {n}"),
            Tok::Sym(s) => write!(f, "'{s}'"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0, line: 1, col: 1 }
    }

    fn bump(&mut self, c: char) {
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.src[self.pos..].chars().next() {
            let (line, col) = (self.line, self.col);
            match c {
                ';' => {
                    while let Some(c) = self.src[self.pos..].chars().next() {
                        self.bump(c);
                        if c == '\n' {
                            break;
                        }
                    }
                }
                c if c.is_whitespace() => self.bump(c),
                '(' => {
                    self.bump(c);
                    out.push((Tok::LParen, line, col));
                }
                ')' => {
                    self.bump(c);
                    out.push((Tok::RParen, line, col));
                }
                '-' | '+' if self.peek_second_is_digit() => {
                    let text = self.take_while(|c| c == '-' || c == '+' || c.is_ascii_digit());
                    let n = text.parse::<i64>().map_err(|_| ParseError {
                        line,
                        col,
                        expected: "a signed 64-bit integer".into(),
                        found: format!("'{text}'"),
                    })?;
                    out.push((Tok::Int(n), line, col));
                }
                '+' => {
                    self.bump(c);
                    out.push((Tok::Sym("+".into()), line, col));
                }
                c if c.is_ascii_digit() => {
                    let text = self.take_while(|c| c.is_ascii_digit());
                    let n = text.parse::<i64>().map_err(|_| ParseError {
                        line,
                        col,
                        expected: "a signed 64-bit integer".into(),
                        found: format!("'{text}'"),
                    })?;
                    out.push((Tok::Int(n), line, col));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let text =
                        self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                    out.push((Tok::Sym(text), line, col));
                }
                other => {
                    return Err(ParseError {
                        line,
                        col,
                        expected: "a token".into(),
                        found: format!("'{other}'"),
                    })
                }
            }
        }
        Ok(out)
    }

    fn peek_second_is_digit(&self) -> bool {
        let mut it = self.src[self.pos..].chars();
        it.next();
        matches!(it.next(), Some(c) if c.is_ascii_digit())
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if pred(c) {
                self.bump(c);
            } else {
                break;
            }
        }
        self.src[start..self.pos].to_string()
    }
}

pub struct Parser {
    toks: Vec<Spanned>,
    idx: usize,
}

impl Parser {
    pub fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser { toks: Lexer::new(src).tokens()?, idx: 0 })
    }

    fn err(&self, expected: impl Into<String>) -> ParseError {
        match self.toks.get(self.idx) {
            Some((t, line, col)) => ParseError {
                line: *line,
                col: *col,
                expected: expected.into(),
                found: t.to_string(),
            },
            None => {
                let (line, col) = self
                    .toks
                    .last()
                    .map(|(_, l, c)| (*l, *c + 1))
                    .unwrap_or((1, 1));
                ParseError { line, col, expected: expected.into(), found: "end of input".into() }
            }
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _, _)| t)
    }

    fn expect_lparen(&mut self, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(self.err(format!("'(' starting {what}"))),
        }
    }

    fn expect_rparen(&mut self, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(self.err(format!("')' closing {what}"))),
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Sym(s)) if s == sym => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(self.err(format!("'{sym}'"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Sym(s)) => {
                let s = s.clone();
                self.idx += 1;
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn int(&mut self, what: &str) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.idx += 1;
                Ok(n)
            }
            _ => Err(self.err(what)),
        }
    }

    fn ptr_mode(&mut self) -> Result<PtrMode, ParseError> {
        let s = self.ident("a pointer mode (c, t or u)")?;
        match s.as_str() {
            "c" => Ok(PtrMode::Checked),
            "t" => Ok(PtrMode::Tainted),
            "u" => Ok(PtrMode::Unchecked),
            _ => {
                self.idx -= 1;
                Err(self.err("a pointer mode (c, t or u)"))
            }
        }
    }

    fn region(&mut self) -> Result<Region, ParseError> {
        let s = self.ident("a region (c or u)")?;
        match s.as_str() {
            "c" => Ok(Region::C),
            "u" => Ok(Region::U),
            _ => {
                self.idx -= 1;
                Err(self.err("a region (c or u)"))
            }
        }
    }

    // Small wrappers used by the target-language parser.

    pub fn peek_some(&self) -> bool {
        self.peek().is_some()
    }

    pub fn peek_lparen(&self) -> bool {
        matches!(self.peek(), Some(Tok::LParen))
    }

    pub fn peek_rparen(&self) -> bool {
        matches!(self.peek(), Some(Tok::RParen))
    }

    pub fn open(&mut self, what: &str) -> Result<(), ParseError> {
        self.expect_lparen(what)
    }

    pub fn close(&mut self, what: &str) -> Result<(), ParseError> {
        self.expect_rparen(what)
    }

    pub fn keyword(&mut self, sym: &str) -> Result<(), ParseError> {
        self.expect_sym(sym)
    }

    pub fn try_keyword(&mut self, sym: &str) -> bool {
        match self.peek() {
            Some(Tok::Sym(s)) if s == sym => {
                self.idx += 1;
                true
            }
            _ => false,
        }
    }

    pub fn ident_tok(&mut self, what: &str) -> Result<String, ParseError> {
        self.ident(what)
    }

    pub fn int_tok(&mut self, what: &str) -> Result<i64, ParseError> {
        self.int(what)
    }

    pub fn int_or_none(&mut self) -> Result<Option<i64>, ParseError> {
        if self.try_keyword("none") {
            Ok(None)
        } else {
            Ok(Some(self.int("an integer or 'none'")?))
        }
    }

    pub fn region_tok(&mut self) -> Result<Region, ParseError> {
        self.region()
    }

    pub fn mode_tok(&mut self) -> Result<PtrMode, ParseError> {
        self.ptr_mode()
    }

    pub fn word_type_tok(&mut self) -> Result<WordType, ParseError> {
        self.word_type()
    }

    pub fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(self.err(expected))
    }

    pub fn bound(&mut self) -> Result<Bound, ParseError> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.idx += 1;
                Ok(Bound::Lit(n))
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                self.expect_sym("+")?;
                let x = self.ident("a bound variable")?;
                let n = self.int("a bound offset")?;
                self.expect_rparen("bound")?;
                Ok(Bound::Off(x, n))
            }
            _ => Err(self.err("a bound: integer or (+ x N)")),
        }
    }

    pub fn word_type(&mut self) -> Result<WordType, ParseError> {
        match self.peek() {
            Some(Tok::Sym(s)) if s == "int" => {
                self.idx += 1;
                Ok(WordType::Int)
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                self.expect_sym("ptr")?;
                let omega = self.object_type()?;
                let mode = self.ptr_mode()?;
                self.expect_rparen("ptr type")?;
                Ok(WordType::ptr(omega, mode))
            }
            _ => Err(self.err("a word type: int or (ptr OMEGA MODE)")),
        }
    }

    pub fn object_type(&mut self) -> Result<ObjectType, ParseError> {
        match self.peek() {
            Some(Tok::Sym(s)) if s == "int" => {
                self.idx += 1;
                Ok(ObjectType::Word(WordType::Int))
            }
            Some(Tok::LParen) => {
                let save = self.idx;
                self.idx += 1;
                let head = self.ident("'ptr', 'array' or 'fun'")?;
                match head.as_str() {
                    "ptr" => {
                        self.idx = save;
                        Ok(ObjectType::Word(self.word_type()?))
                    }
                    "array" => {
                        let nt = matches!(self.peek(), Some(Tok::Sym(s)) if s == "nt");
                        if nt {
                            self.idx += 1;
                        }
                        self.expect_lparen("array bounds")?;
                        let lo = self.bound()?;
                        let hi = self.bound()?;
                        self.expect_rparen("array bounds")?;
                        let elem = self.word_type()?;
                        self.expect_rparen("array type")?;
                        Ok(ObjectType::Array { nt, bounds: BoundPair { lo, hi }, elem })
                    }
                    "fun" => {
                        self.expect_lparen("fun binders")?;
                        let mut binders = Vec::new();
                        while !matches!(self.peek(), Some(Tok::RParen)) {
                            binders.push(self.ident("a binder variable")?);
                        }
                        self.expect_rparen("fun binders")?;
                        self.expect_lparen("fun parameter types")?;
                        let mut params = Vec::new();
                        while !matches!(self.peek(), Some(Tok::RParen)) {
                            params.push(self.word_type()?);
                        }
                        self.expect_rparen("fun parameter types")?;
                        let ret = self.word_type()?;
                        self.expect_rparen("fun type")?;
                        Ok(ObjectType::Fun { binders, params, ret })
                    }
                    _ => {
                        self.idx = save;
                        Err(self.err("'ptr', 'array' or 'fun'"))
                    }
                }
            }
            _ => Err(self.err("a type")),
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.expect_lparen("a literal")?;
        self.expect_sym("lit")?;
        let n = self.int("a literal integer")?;
        let ty = self.word_type()?;
        self.expect_rparen("literal")?;
        Ok(Value::new(n, ty))
    }

    fn var_list(&mut self) -> Result<Vec<Var>, ParseError> {
        self.expect_lparen("a variable list")?;
        let mut xs = Vec::new();
        while !matches!(self.peek(), Some(Tok::RParen)) {
            xs.push(self.ident("a variable")?);
        }
        self.expect_rparen("variable list")?;
        Ok(xs)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.expect_lparen("an expression")?;
        let head_idx = self.idx;
        let head = self.ident("an expression head")?;
        let e = match head.as_str() {
            "lit" => {
                let n = self.int("a literal integer")?;
                let ty = self.word_type()?;
                Expr::lit(n, ty)
            }
            "var" => Expr::Var(self.ident("a variable")?),
            "add" => Expr::add(self.expr()?, self.expr()?),
            "cast" => {
                let t = self.word_type()?;
                Expr::cast(t, self.expr()?)
            }
            "dyncast" => {
                let t = self.word_type()?;
                Expr::dyncast(t, self.expr()?)
            }
            "ret" => {
                self.idx = head_idx;
                return Err(self.err("a source expression (ret is internal-only)"));
            }
            "strlen" => Expr::Strlen(self.ident("a variable")?),
            "malloc" => {
                let m = self.ptr_mode()?;
                let omega_idx = self.idx;
                let omega = self.object_type()?;
                if matches!(omega, ObjectType::Fun { .. }) {
                    self.idx = omega_idx;
                    return Err(self.err("a non-function malloc type"));
                }
                Expr::Malloc(m, omega)
            }
            "deref" => Expr::deref(self.expr()?),
            "assign" => Expr::assign(self.expr()?, self.expr()?),
            "let" => {
                let x = self.ident("a variable")?;
                Expr::let_(x, self.expr()?, self.expr()?)
            }
            "if" => Expr::if_(self.expr()?, self.expr()?, self.expr()?),
            "call" => {
                let callee = self.expr()?;
                let mut args = Vec::new();
                while !matches!(self.peek(), Some(Tok::RParen)) {
                    args.push(self.expr()?);
                }
                Expr::call(callee, args)
            }
            "unchecked" => {
                let xs = self.var_list()?;
                Expr::Unchecked(xs, Box::new(self.expr()?))
            }
            "checked" => {
                let xs = self.var_list()?;
                Expr::Checked(xs, Box::new(self.expr()?))
            }
            _ => {
                self.idx = head_idx;
                return Err(self.err("an expression head"));
            }
        };
        self.expect_rparen("expression")?;
        Ok(e)
    }

    pub fn program(&mut self) -> Result<Program, ParseError> {
        let mut prog = Program::default();
        let mut saw_main = false;
        while self.peek().is_some() {
            self.expect_lparen("a top-level form")?;
            let head_idx = self.idx;
            let head = self.ident("'fundef', 'heap' or 'main'")?;
            match head.as_str() {
                "fundef" => {
                    self.expect_lparen("(addr N)")?;
                    self.expect_sym("addr")?;
                    let addr = self.int("a function address")?;
                    self.expect_rparen("(addr N)")?;
                    self.expect_lparen("(region c|u)")?;
                    self.expect_sym("region")?;
                    let region = self.region()?;
                    self.expect_rparen("(region c|u)")?;
                    self.expect_lparen("(mode c|t|u)")?;
                    self.expect_sym("mode")?;
                    let mode = self.ptr_mode()?;
                    self.expect_rparen("(mode c|t|u)")?;
                    self.expect_lparen("(ret TYPE)")?;
                    self.expect_sym("ret")?;
                    let ret = self.word_type()?;
                    self.expect_rparen("(ret TYPE)")?;
                    self.expect_lparen("(params ...)")?;
                    self.expect_sym("params")?;
                    let mut params = Vec::new();
                    while !matches!(self.peek(), Some(Tok::RParen)) {
                        self.expect_lparen("(x TYPE)")?;
                        let x = self.ident("a parameter name")?;
                        let t = self.word_type()?;
                        self.expect_rparen("(x TYPE)")?;
                        params.push((x, t));
                    }
                    self.expect_rparen("(params ...)")?;
                    self.expect_lparen("(body EXPR)")?;
                    self.expect_sym("body")?;
                    let body = self.expr()?;
                    self.expect_rparen("(body EXPR)")?;
                    if addr == 0 {
                        self.idx = head_idx;
                        return Err(self.err("a nonzero function address"));
                    }
                    prog.funs.insert((region, addr), FunDef { ret, params, mode, body });
                }
                "heap" => {
                    while matches!(self.peek(), Some(Tok::LParen)) {
                        self.idx += 1;
                        let region = self.region()?;
                        while matches!(self.peek(), Some(Tok::LParen)) {
                            self.idx += 1;
                            let addr_idx = self.idx;
                            let addr = self.int("a heap address")?;
                            if addr == 0 {
                                self.idx = addr_idx;
                                return Err(self.err("a nonzero heap address"));
                            }
                            let v = self.value()?;
                            self.expect_rparen("heap cell")?;
                            prog.heap_init.insert((region, addr), v);
                        }
                        self.expect_rparen("heap region")?;
                    }
                }
                "main" => {
                    prog.main = self.expr()?;
                    saw_main = true;
                }
                _ => {
                    self.idx = head_idx;
                    return Err(self.err("'fundef', 'heap' or 'main'"));
                }
            }
            self.expect_rparen("top-level form")?;
        }
        if !saw_main {
            return Err(self.err("a (main EXPR) form"));
        }
        Ok(prog)
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(text)?;
    p.program()
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(_) => Err(p.err("end of input")),
    }
}

pub fn parse_word_type(text: &str) -> Result<WordType, ParseError> {
    let mut p = Parser::new(text)?;
    let t = p.word_type()?;
    match p.peek() {
        None => Ok(t),
        Some(_) => Err(p.err("end of input")),
    }
}
