//! Text format for specifications.
//!
//! ```text
//! @labelled                 # optional header, default @unlabelled
//! T  = Z * Set(T);          # plain definition
//! D' = 1 + D * D;           # derivative definition ...
//! D(0) = 0;                 # ... with its count of size-0 structures
//! ```
//!
//! `+` is disjoint union and `*` product; `*` binds tighter and both are
//! left-associative. `1` is the empty structure, `Z` the atom and `Z_a` an
//! atom of type `a`. `#` starts a comment.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::spec::{ClassBody, ClassDef, ClassExpr, Mode, Spec};

/// Position of a diagnostic in the source text. Line and column are 1-based,
/// length is in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub length: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Header(String),
    Name(String),
    Nat(u64),
    Eq,
    Semi,
    Plus,
    Star,
    LParen,
    RParen,
    Prime,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Header(h) => write!(f, "`@{h}`"),
            Tok::Name(n) => write!(f, "`{n}`"),
            Tok::Nat(n) => write!(f, "`{n}`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Star => f.write_str("`*`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Prime => f.write_str("`'`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut last = SourceSpan { line: 1, column: 1, length: 0 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        let start = (i, col);
        let tok = if c.is_ascii_alphabetic() || c == '_' || c == '@' {
            let begin = if c == '@' { i + 1 } else { i };
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[begin..i].iter().collect();
            if c == '@' {
                Tok::Header(word)
            } else {
                Tok::Name(word)
            }
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start.0..i].iter().collect();
            let n = digits.parse::<u64>().map_err(|_| ParseError {
                span: SourceSpan { line, column: start.1, length: i - start.0 },
                message: format!("number `{digits}` is too large"),
            })?;
            Tok::Nat(n)
        } else {
            i += 1;
            match c {
                '=' => Tok::Eq,
                ';' => Tok::Semi,
                '+' => Tok::Plus,
                '*' => Tok::Star,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '\'' => Tok::Prime,
                other => {
                    return Err(ParseError {
                        span: SourceSpan { line, column: col, length: 1 },
                        message: format!("unexpected character `{other}`"),
                    })
                }
            }
        };
        let len = i - start.0;
        col += len;
        last = SourceSpan { line, column: start.1, length: len };
        out.push(Token { tok, span: last });
    }
    // EOF diagnostics point at the last token so they stay inside the input
    let eof_span = SourceSpan { line: last.line, column: last.column + last.length.saturating_sub(1), length: 0 };
    out.push(Token { tok: Tok::Eof, span: eof_span });
    Ok(out)
}

const CONSTRUCTIONS: [&str; 4] = ["Seq", "Cycle", "Set", "MSet"];

fn is_atom_name(n: &str) -> bool {
    n == "Z" || (n.starts_with("Z_") && n.len() > 2)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { span: self.span(), message: message.into() })
    }

    fn expect(&mut self, want: Tok) -> Result<Token, ParseError> {
        if *self.peek() == want {
            Ok(self.bump())
        } else {
            self.error(format!("expected {want}, found {}", self.peek()))
        }
    }

    fn expr(&mut self) -> Result<ClassExpr, ParseError> {
        let mut lhs = self.term()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.term()?;
            lhs = ClassExpr::union(lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ClassExpr, ParseError> {
        let mut lhs = self.factor()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.factor()?;
            lhs = ClassExpr::product(lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<ClassExpr, ParseError> {
        match self.peek().clone() {
            Tok::Nat(1) => {
                self.bump();
                Ok(ClassExpr::Empty)
            }
            Tok::Nat(n) => self.error(format!("only `1` may appear as a constant, found `{n}`")),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Name(n) if CONSTRUCTIONS.contains(&n.as_str()) => {
                self.bump();
                self.expect(Tok::LParen)?;
                let arg = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(match n.as_str() {
                    "Seq" => ClassExpr::seq(arg),
                    "Cycle" => ClassExpr::cycle(arg),
                    "Set" => ClassExpr::set(arg),
                    _ => ClassExpr::mset(arg),
                })
            }
            Tok::Name(n) if is_atom_name(&n) => {
                self.bump();
                Ok(ClassExpr::Atom(n))
            }
            Tok::Name(n) => {
                self.bump();
                Ok(ClassExpr::Ref(n))
            }
            other => self.error(format!("expected an expression, found {other}")),
        }
    }
}

enum Decl {
    Plain(ClassExpr),
    Derivative(ClassExpr),
    Initial(u64),
}

/// Parses DSL text into a [`Spec`].
pub fn parse_spec(text: &str) -> Result<Spec, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut mode = Mode::Unlabelled;
    if let Tok::Header(h) = p.peek().clone() {
        mode = match h.as_str() {
            "labelled" => Mode::Labelled,
            "unlabelled" => Mode::Unlabelled,
            _ => return p.error(format!("unknown header `@{h}`")),
        };
        p.bump();
    }
    if *p.peek() == Tok::Eof {
        return p.error("expected at least one class definition");
    }

    // name -> (first span, plain/derivative, initial)
    struct Pending {
        span: SourceSpan,
        plain: Option<ClassExpr>,
        derivative: Option<(ClassExpr, SourceSpan)>,
        initial: Option<(u64, SourceSpan)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();

    while *p.peek() != Tok::Eof {
        let span = p.span();
        let name = match p.peek().clone() {
            Tok::Name(n) if !CONSTRUCTIONS.contains(&n.as_str()) && !is_atom_name(&n) => {
                p.bump();
                n
            }
            Tok::Header(h) => return p.error(format!("header `@{h}` must come first")),
            other => return p.error(format!("expected a class name, found {other}")),
        };
        let decl = match (p.peek().clone(), p.peek_at(1).clone(), p.peek_at(2).clone()) {
            (Tok::Prime, _, _) => {
                p.bump();
                p.expect(Tok::Eq)?;
                Decl::Derivative(p.expr()?)
            }
            (Tok::LParen, Tok::Nat(0), Tok::RParen) => {
                p.bump();
                p.bump();
                p.bump();
                p.expect(Tok::Eq)?;
                match p.peek().clone() {
                    Tok::Nat(n) => {
                        p.bump();
                        Decl::Initial(n)
                    }
                    other => return p.error(format!("expected a natural number, found {other}")),
                }
            }
            _ => {
                p.expect(Tok::Eq)?;
                Decl::Plain(p.expr()?)
            }
        };
        p.expect(Tok::Semi)?;

        let entry = pending.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            Pending { span, plain: None, derivative: None, initial: None }
        });
        let duplicate = ParseError { span, message: format!("duplicate definition of `{name}`") };
        match decl {
            Decl::Plain(e) => {
                if entry.plain.is_some() || entry.derivative.is_some() || entry.initial.is_some() {
                    return Err(duplicate);
                }
                entry.plain = Some(e);
            }
            Decl::Derivative(e) => {
                if entry.plain.is_some() || entry.derivative.is_some() {
                    return Err(duplicate);
                }
                entry.derivative = Some((e, span));
            }
            Decl::Initial(n) => {
                if entry.plain.is_some() || entry.initial.is_some() {
                    return Err(duplicate);
                }
                entry.initial = Some((n, span));
            }
        }
    }

    let mut defs = Vec::with_capacity(order.len());
    for name in order {
        let entry = pending.remove(&name).expect("recorded name");
        let body = match (entry.plain, entry.derivative, entry.initial) {
            (Some(e), None, None) => ClassBody::Plain(e),
            (None, Some((rhs, _)), Some((a0, _))) => ClassBody::Differential { rhs, initial_count: a0 },
            (None, Some((_, span)), None) => {
                return Err(ParseError { span, message: format!("`{name}'` has no `{name}(0) = ...` declaration") })
            }
            (None, None, Some((_, span))) => {
                return Err(ParseError { span, message: format!("`{name}(0)` has no `{name}' = ...` declaration") })
            }
            _ => return Err(ParseError { span: entry.span, message: format!("malformed definition of `{name}`") }),
        };
        defs.push(ClassDef { name, body });
    }
    Ok(Spec::new(mode, defs))
}

fn write_expr(out: &mut String, e: &ClassExpr) {
    match e {
        ClassExpr::Empty => out.push('1'),
        ClassExpr::Atom(a) | ClassExpr::Ref(a) => out.push_str(a),
        ClassExpr::Union(a, b) => {
            write_expr(out, a);
            out.push_str(" + ");
            if matches!(**b, ClassExpr::Union(..)) {
                out.push('(');
                write_expr(out, b);
                out.push(')');
            } else {
                write_expr(out, b);
            }
        }
        ClassExpr::Product(a, b) => {
            write_factor(out, a, false);
            out.push_str(" * ");
            write_factor(out, b, true);
        }
        ClassExpr::Seq(a) | ClassExpr::Cycle(a) | ClassExpr::Set(a) | ClassExpr::MSet(a) => {
            out.push_str(match e {
                ClassExpr::Seq(_) => "Seq(",
                ClassExpr::Cycle(_) => "Cycle(",
                ClassExpr::Set(_) => "Set(",
                _ => "MSet(",
            });
            write_expr(out, a);
            out.push(')');
        }
    }
}

fn write_factor(out: &mut String, e: &ClassExpr, right: bool) {
    let needs_parens = matches!(e, ClassExpr::Union(..)) || (right && matches!(e, ClassExpr::Product(..)));
    if needs_parens {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

/// Canonical text of a spec. Parsing the output gives back the same
/// definitions; atom weights are not part of the text format.
pub fn format_spec(spec: &Spec) -> String {
    let mut out = String::new();
    if spec.mode == Mode::Labelled {
        out.push_str("@labelled\n");
    }
    for d in &spec.defs {
        match &d.body {
            ClassBody::Plain(e) => {
                let _ = write!(out, "{} = ", d.name);
                write_expr(&mut out, e);
                out.push_str(";\n");
            }
            ClassBody::Differential { rhs, initial_count } => {
                let _ = write!(out, "{}' = ", d.name);
                write_expr(&mut out, rhs);
                let _ = writeln!(out, ";\n{}(0) = {};", d.name, initial_count);
            }
        }
    }
    out
}

/// Renders a single expression in DSL syntax.
pub fn format_expr(e: &ClassExpr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::ClassExpr as E;

    #[test]
    fn plane_trees() {
        let s = parse_spec("P = Z * Seq(P);").unwrap();
        assert_eq!(s.mode, Mode::Unlabelled);
        assert_eq!(s.defs, vec![ClassDef::plain("P", E::product(E::atom(), E::seq(E::reference("P"))))]);
    }

    #[test]
    fn differential_definition() {
        let s = parse_spec("@labelled T' = 1 + T*T; T(0) = 0;").unwrap();
        assert_eq!(s.mode, Mode::Labelled);
        assert_eq!(
            s.defs,
            vec![ClassDef::differential(
                "T",
                E::union(E::Empty, E::product(E::reference("T"), E::reference("T"))),
                0
            )]
        );
        // order of the two declarations does not matter
        let t = parse_spec("@labelled\nT(0) = 0;\nT' = 1 + T*T;").unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn dangling_plus() {
        let err = parse_spec("X = Z +;").unwrap_err();
        assert_eq!(err.span.line, 1);
        assert_eq!(err.span.column, 8);
    }

    #[test]
    fn declaration_errors() {
        assert!(parse_spec("A = Z; A = Z;").unwrap_err().message.contains("duplicate"));
        assert!(parse_spec("@labelled T' = 1;").unwrap_err().message.contains("(0)"));
        assert!(parse_spec("@labelled T(0) = 1;").unwrap_err().message.contains("T'"));
        assert!(parse_spec("").is_err());
        assert!(parse_spec("A = 2;").is_err());
        assert!(parse_spec("A = Z $ Z;").is_err());
        assert!(parse_spec("Seq = Z;").is_err());
    }

    #[test]
    fn atom_types_and_comments() {
        let s = parse_spec("# words\nW = Seq(Z_a + Z_b); # two letters\n").unwrap();
        assert_eq!(s.atom_types().into_iter().collect::<Vec<_>>(), vec!["Z_a".to_string(), "Z_b".to_string()]);
    }

    #[test]
    fn union_nesting_prints_flat() {
        let s = Spec::new(
            Mode::Unlabelled,
            vec![ClassDef::plain(
                "X",
                E::union(E::union(E::reference("A"), E::reference("B")), E::reference("C")),
            )],
        );
        assert_eq!(format_spec(&s), "X = A + B + C;\n");
        let s = Spec::new(
            Mode::Unlabelled,
            vec![ClassDef::plain(
                "X",
                E::union(E::reference("A"), E::union(E::reference("B"), E::reference("C"))),
            )],
        );
        assert_eq!(format_spec(&s), "X = A + (B + C);\n");
    }

    #[test]
    fn canonical_round_trips() {
        for text in [
            "P = Z * Seq(P);",
            "@labelled T = Z * Set(T);",
            "@labelled T' = 1 + T*T; T(0) = 0;",
            "M = Z * (1 + M + M * M);",
            "A = Z * (Z * Z) + (Z + Z) * Z;",
        ] {
            let once = format_spec(&parse_spec(text).unwrap());
            let twice = format_spec(&parse_spec(&once).unwrap());
            assert_eq!(once, twice);
            assert_eq!(parse_spec(&once).unwrap(), parse_spec(text).unwrap());
        }
        assert_eq!(format_spec(&parse_spec("@labelled T = Z * Set(T);").unwrap()), "@labelled\nT = Z * Set(T);\n");
    }
}
