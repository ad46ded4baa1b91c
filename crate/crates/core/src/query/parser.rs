//! Text syntax for queries.
//!
//! ```text
//! R(x,'a'), S(x,y)              conjunctive query
//! R('a',x) | R('b',x)           union
//! path 'a' 'b' : (A B | B A)    path atom, regex over binary relations
//! ```
//!
//! Variables are lowercase identifiers, constants are quoted. A regex runs
//! to the next top-level `,` or to a `|` that is followed by the start of a
//! new atom (`path`, or a name immediately followed by `(`).

use std::collections::HashMap;

use super::{query_from_cqs, query_from_crpqs, Cq, Crpq, PathAtom, Query, RegexNode};
use crate::relational::{Atom, Term, FRESH_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Quoted(String),
    LParen,
    RParen,
    Comma,
    Bar,
    Star,
    Colon,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    /// Byte offsets in the source.
    start: usize,
    end: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let (tline, tcol) = (line, col);
        let mut advance = |n: usize, i: &mut usize| {
            for _ in 0..n {
                if chars[*i].1 == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                *i += 1;
            }
        };
        if c.is_whitespace() {
            advance(1, &mut i);
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '|' => Some(Tok::Bar),
            '*' => Some(Tok::Star),
            ':' => Some(Tok::Colon),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: tline,
                col: tcol,
                start: pos,
                end: pos + 1,
            });
            advance(1, &mut i);
            continue;
        }
        if c == '\'' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1 != '\'' {
                j += 1;
            }
            if j == chars.len() {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    message: "unterminated constant".into(),
                });
            }
            let name: String = chars[i + 1..j].iter().map(|(_, c)| c).collect();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("invalid constant name '{name}'"),
                });
            }
            if name.starts_with(FRESH_PREFIX) {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("constant '{name}' uses the reserved prefix `{FRESH_PREFIX}`"),
                });
            }
            let end = chars[j].0 + 1;
            out.push(Token {
                tok: Tok::Quoted(name),
                line: tline,
                col: tcol,
                start: pos,
                end,
            });
            let n = j + 1 - i;
            advance(n, &mut i);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].1.is_ascii_alphanumeric() || chars[j].1 == '_') {
                j += 1;
            }
            let name: String = chars[i..j].iter().map(|(_, c)| c).collect();
            let end = if j < chars.len() { chars[j].0 } else { text.len() };
            out.push(Token {
                tok: Tok::Ident(name),
                line: tline,
                col: tcol,
                start: pos,
                end,
            });
            let n = j - i;
            advance(n, &mut i);
            continue;
        }
        return Err(ParseError {
            line: tline,
            col: tcol,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
        start: text.len(),
        end: text.len(),
    });
    Ok(out)
}

enum Item {
    Atom(Atom, (usize, usize)),
    Path(PathAtom),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(t: &Token, message: impl Into<String>) -> ParseError {
        ParseError {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.next();
        if t.tok != want {
            return Err(Self::error_at(&t, format!("expected {what}, found {}", describe(&t.tok))));
        }
        Ok(t)
    }

    fn query(&mut self) -> Result<Vec<Vec<Item>>, ParseError> {
        let mut disjuncts = vec![self.disjunct()?];
        while self.peek().tok == Tok::Bar {
            self.next();
            disjuncts.push(self.disjunct()?);
        }
        let t = self.peek();
        if t.tok != Tok::Eof {
            return Err(Self::error_at(t, format!("unexpected {}", describe(&t.tok))));
        }
        Ok(disjuncts)
    }

    fn disjunct(&mut self) -> Result<Vec<Item>, ParseError> {
        let mut items = vec![self.item()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            items.push(self.item()?);
        }
        Ok(items)
    }

    fn item(&mut self) -> Result<Item, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(kw) if kw == "path" => {
                let src = self.term()?;
                let dst = self.term()?;
                self.expect(Tok::Colon, "`:`")?;
                let regex = self.regex_alt(true)?;
                Ok(Item::Path(PathAtom::new(regex, src, dst)))
            }
            Tok::Ident(rel) => {
                self.expect(Tok::LParen, "`(`")?;
                let mut args = vec![self.term()?];
                while self.peek().tok == Tok::Comma {
                    self.next();
                    args.push(self.term()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Item::Atom(Atom::new(rel, args), (t.line, t.col)))
            }
            other => Err(Self::error_at(&t, format!("expected an atom, found {}", describe(other)))),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Quoted(c) => Ok(Term::constant(c)),
            Tok::Ident(v) if v.starts_with(|c: char| c.is_ascii_lowercase()) => Ok(Term::var(v)),
            Tok::Ident(v) => Err(Self::error_at(
                &t,
                format!("`{v}` is not a variable (lowercase) or a quoted constant"),
            )),
            other => Err(Self::error_at(&t, format!("expected a term, found {}", describe(other)))),
        }
    }

    /// True when the `|` at the cursor separates union disjuncts rather than regex branches.
    fn bar_starts_disjunct(&self) -> bool {
        let after = self.peek_at(1);
        match &after.tok {
            Tok::Ident(kw) if kw == "path" => true,
            Tok::Ident(_) => {
                let paren = self.peek_at(2);
                paren.tok == Tok::LParen && paren.start == after.end
            }
            _ => false,
        }
    }

    fn regex_alt(&mut self, top: bool) -> Result<RegexNode, ParseError> {
        let mut branches = vec![self.regex_concat()?];
        while self.peek().tok == Tok::Bar {
            if top && self.bar_starts_disjunct() {
                break;
            }
            self.next();
            branches.push(self.regex_concat()?);
        }
        Ok(if branches.len() == 1 {
            branches.pop().unwrap()
        } else {
            RegexNode::Alt(branches)
        })
    }

    fn regex_concat(&mut self) -> Result<RegexNode, ParseError> {
        let mut parts = Vec::new();
        while matches!(self.peek().tok, Tok::Ident(_) | Tok::LParen) {
            parts.push(self.regex_postfix()?);
        }
        if parts.is_empty() {
            let t = self.peek();
            return Err(Self::error_at(t, format!("expected a regular expression, found {}", describe(&t.tok))));
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            RegexNode::Concat(parts)
        })
    }

    fn regex_postfix(&mut self) -> Result<RegexNode, ParseError> {
        let t = self.next();
        let mut node = match &t.tok {
            Tok::Ident(s) if s == "eps" => RegexNode::Epsilon,
            Tok::Ident(s) => RegexNode::symbol(s),
            Tok::LParen => {
                let inner = self.regex_alt(false)?;
                self.expect(Tok::RParen, "`)`")?;
                inner
            }
            other => return Err(Self::error_at(&t, format!("unexpected {}", describe(other)))),
        };
        while self.peek().tok == Tok::Star {
            self.next();
            node = RegexNode::Star(Box::new(node));
        }
        Ok(node)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Quoted(s) => format!("'{s}'"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Bar => "`|`".into(),
        Tok::Star => "`*`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses the query syntax described in the module docs.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let disjuncts = p.query()?;

    // Arity check across every atom and path symbol, reporting the offending atom.
    let mut arity: HashMap<String, usize> = HashMap::new();
    for item in disjuncts.iter().flatten() {
        match item {
            Item::Atom(a, (line, col)) => {
                let prev = *arity.entry(a.relation.to_string()).or_insert(a.arity());
                if prev != a.arity() {
                    return Err(ParseError {
                        line: *line,
                        col: *col,
                        message: format!(
                            "arity mismatch: {} used with arities {prev} and {}",
                            a.relation,
                            a.arity()
                        ),
                    });
                }
            }
            Item::Path(_) => {}
        }
    }
    for item in disjuncts.iter().flatten() {
        if let Item::Path(pa) = item {
            for r in pa.regex.alphabet() {
                let prev = *arity.entry(r.to_string()).or_insert(2);
                if prev != 2 {
                    return Err(ParseError {
                        line: 1,
                        col: 1,
                        message: format!("relation {r} is used in a path expression but has arity {prev}"),
                    });
                }
            }
        }
    }

    let all_atoms = disjuncts
        .iter()
        .flatten()
        .all(|i| matches!(i, Item::Atom(..)));
    if all_atoms {
        let cqs = disjuncts
            .into_iter()
            .map(|d| {
                Cq::new(
                    d.into_iter()
                        .map(|i| match i {
                            Item::Atom(a, _) => a,
                            Item::Path(_) => unreachable!(),
                        })
                        .collect(),
                )
            })
            .collect();
        return Ok(query_from_cqs(cqs));
    }
    let mut crpqs = Vec::new();
    for d in disjuncts {
        let mut atoms = Vec::new();
        for item in d {
            match item {
                Item::Path(pa) => atoms.push(pa),
                Item::Atom(a, (line, col)) => {
                    if a.arity() != 2 {
                        return Err(ParseError {
                            line,
                            col,
                            message: format!(
                                "atom {a} mixed with path atoms must be binary"
                            ),
                        });
                    }
                    atoms.push(PathAtom::new(
                        RegexNode::Symbol(a.relation.clone()),
                        a.args[0].clone(),
                        a.args[1].clone(),
                    ));
                }
            }
        }
        crpqs.push(Crpq::new(atoms));
    }
    Ok(query_from_crpqs(crpqs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryKind;
    use crate::relational::Constant;

    #[test]
    fn parses_conjunctive_query() {
        let q = parse_query("R(x), S(x,y), T(y)").unwrap();
        assert_eq!(q.kind(), QueryKind::Cq);
        assert_eq!(q.as_cq().unwrap().atoms.len(), 3);
        assert!(q.constants().is_empty());
    }

    #[test]
    fn parses_rpq() {
        let q = parse_query("path 'a' 'b' : (A B | B A)").unwrap();
        assert_eq!(q.kind(), QueryKind::Rpq);
        let c: Vec<_> = q.constants().into_iter().collect();
        assert_eq!(c, vec![Constant::new("a"), Constant::new("b")]);
        let q = parse_query("path 'a' 'b' : A | B").unwrap();
        assert_eq!(q.kind(), QueryKind::Rpq);
    }

    #[test]
    fn parses_union() {
        let q = parse_query("R('a',x) | R('b',x)").unwrap();
        assert_eq!(q.kind(), QueryKind::Ucq);
        assert_eq!(q.constants().len(), 2);
    }

    #[test]
    fn path_regex_yields_to_union_before_atom() {
        let q = parse_query("path x 'a' : A B | R(x,y)").unwrap();
        assert_eq!(q.kind(), QueryKind::Ucrpq);
        let q = parse_query("path x 'a' : A B | B A").unwrap();
        assert_eq!(q.kind(), QueryKind::Crpq);
        let q = parse_query("path 'a' 'b' : A | path 'b' 'a' : B").unwrap();
        assert_eq!(q.kind(), QueryKind::Ucrpq);
    }

    #[test]
    fn reports_errors_with_position() {
        let e = parse_query("R(x), R(x,y)").unwrap_err();
        assert_eq!((e.line, e.col), (1, 7));
        assert!(e.message.contains("arity"));
        let e = parse_query("R(x,\n  S)").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_query("R(x) S(y)").is_err());
        assert!(parse_query("path 'a' 'b' :").is_err());
        assert!(parse_query("R('__f0')").is_err());
        assert!(parse_query("path 'a' 'b' : R, R('a')").is_err());
    }

    #[test]
    fn display_reparses() {
        for text in [
            "R(x), S(x,y), T(y)",
            "R('a',x) | R('b',x)",
            "path 'a' 'b' : (A B | B A)",
            "path x 'a' : A* B | R(x,y)",
            "path x y : A, path y z : B C*",
        ] {
            let q = parse_query(text).unwrap();
            let again = parse_query(&q.to_string()).unwrap();
            assert_eq!(q, again, "{text} -> {q}");
        }
    }
}
