//! Line-oriented database text format.
//!
//! ```text
//! # comment
//! R(a,b)            endogenous
//! !R(a,b)           exogenous
//! R(a,b) @ 1/2      probabilistic (probability 1 means exogenous)
//! ```

use std::collections::BTreeMap;

use num_traits::One;

use crate::rational::{parse_rational, Rational};
use crate::relational::{
    check_arities, DatabaseError, Fact, PartitionedDatabase, ProbabilisticDatabase, FRESH_PREFIX,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Database(#[from] DatabaseError),
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        message: message.into(),
    }
}

/// One parsed entry of a database file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub fact: Fact,
    pub exogenous: bool,
    pub probability: Option<Rational>,
}

/// Parsed database file, viewable as partitioned or probabilistic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatabaseFile {
    pub entries: Vec<Entry>,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn check_name(line: usize, name: &str, what: &str) -> Result<(), FormatError> {
    if name.is_empty() || !name.chars().all(is_name_char) {
        return Err(syntax(line, format!("invalid {what} name `{name}`")));
    }
    Ok(())
}

/// Parses a single fact such as `R(a,b)`. Constants may not use the reserved prefix.
pub fn parse_fact(text: &str) -> Result<Fact, FormatError> {
    parse_fact_at(1, text, false)
}

fn parse_fact_at(line: usize, text: &str, allow_reserved: bool) -> Result<Fact, FormatError> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| syntax(line, format!("expected `(` in `{text}`")))?;
    let rel = text[..open].trim();
    check_name(line, rel, "relation")?;
    let rest = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| syntax(line, format!("expected `)` at end of `{text}`")))?;
    let mut args = Vec::new();
    for arg in rest.split(',') {
        let arg = arg.trim();
        check_name(line, arg, "constant")?;
        if !allow_reserved && arg.starts_with(FRESH_PREFIX) {
            return Err(syntax(
                line,
                format!("constant `{arg}` uses the reserved prefix `{FRESH_PREFIX}`"),
            ));
        }
        args.push(arg);
    }
    Ok(Fact::new(rel, &args))
}

/// Parses a comma- or whitespace-free list of facts: `R(a), S(a,b)`.
pub fn parse_fact_list(text: &str) -> Result<Vec<Fact>, FormatError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                let piece = text[start..i].trim();
                if !piece.is_empty() {
                    out.push(parse_fact(piece)?);
                }
                start = i + 1;
            }
            _ => {}
        }
    }
    let piece = text[start..].trim();
    if !piece.is_empty() {
        out.push(parse_fact(piece)?);
    }
    Ok(out)
}

impl DatabaseFile {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        Self::parse_inner(text, false)
    }

    /// Like [`DatabaseFile::parse`] but accepts reserved fresh constants, for
    /// re-reading databases written by reduction traces.
    pub fn parse_trace(text: &str) -> Result<Self, FormatError> {
        Self::parse_inner(text, true)
    }

    fn parse_inner(text: &str, allow_reserved: bool) -> Result<Self, FormatError> {
        let mut entries = Vec::new();
        let mut seen: BTreeMap<Fact, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (body, exogenous) = match body.strip_prefix('!') {
                Some(rest) => (rest.trim_start(), true),
                None => (body, false),
            };
            let (fact_text, probability) = match body.split_once('@') {
                Some((f, p)) => {
                    let p = parse_rational(p).map_err(|e| syntax(line, e.to_string()))?;
                    (f, Some(p))
                }
                None => (body, None),
            };
            let fact = parse_fact_at(line, fact_text, allow_reserved)?;
            if exogenous && probability.as_ref().is_some_and(|p| !p.is_one()) {
                return Err(syntax(line, "exogenous facts cannot carry a probability below 1"));
            }
            if let Some(prev) = seen.insert(fact.clone(), line) {
                return Err(syntax(line, format!("duplicate fact {fact} (first on line {prev})")));
            }
            entries.push(Entry {
                fact,
                exogenous,
                probability,
            });
        }
        check_arities(entries.iter().map(|e| &e.fact))?;
        Ok(DatabaseFile { entries })
    }

    pub fn has_probabilities(&self) -> bool {
        self.entries.iter().any(|e| e.probability.is_some())
    }

    /// Partitioned view: `!` facts and probability-1 facts are exogenous.
    pub fn partitioned(&self) -> Result<PartitionedDatabase, FormatError> {
        let mut endo = Vec::new();
        let mut exo = Vec::new();
        for e in &self.entries {
            let certain = e.probability.as_ref().is_some_and(|p| p.is_one());
            if e.exogenous || certain {
                exo.push(e.fact.clone());
            } else {
                endo.push(e.fact.clone());
            }
        }
        Ok(PartitionedDatabase::new(endo, exo)?)
    }

    /// Probabilistic view. Unannotated endogenous facts take `default`, or are
    /// an error when no default is given.
    pub fn probabilistic(
        &self,
        default: Option<&Rational>,
    ) -> Result<ProbabilisticDatabase, FormatError> {
        let mut facts = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let p = if e.exogenous {
                Rational::one()
            } else if let Some(p) = &e.probability {
                p.clone()
            } else if let Some(d) = default {
                d.clone()
            } else {
                return Err(syntax(
                    i + 1,
                    format!("fact {} has no probability and no default was given", e.fact),
                ));
            };
            facts.push((e.fact.clone(), p));
        }
        Ok(ProbabilisticDatabase::new(facts)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    #[test]
    fn parses_all_line_kinds() {
        let text = "# star\nR(a)\n!S(a,b)\nT(b) @ 1/2\nU(c) @ 1\n";
        let file = DatabaseFile::parse(text).unwrap();
        let d = file.partitioned().unwrap();
        assert_eq!(d.endo().len(), 2);
        assert_eq!(d.exo().len(), 2);
        let pd = file.probabilistic(Some(&ratio(1, 3))).unwrap();
        assert_eq!(pd.facts()[&Fact::new("T", &["b"])], ratio(1, 2));
        assert_eq!(pd.facts()[&Fact::new("R", &["a"])], ratio(1, 3));
        assert!(file.probabilistic(None).is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(DatabaseFile::parse("R(a").is_err());
        assert!(DatabaseFile::parse("R(__f0)").is_err());
        assert!(DatabaseFile::parse("R(a)\nR(a,b)").is_err());
        assert!(DatabaseFile::parse("R(a) @ 3/2").unwrap().partitioned().is_ok());
        assert!(DatabaseFile::parse("R(a) @ 3/2").unwrap().probabilistic(None).is_err());
        assert!(DatabaseFile::parse("R(a)\nR(a)").is_err());
        assert!(DatabaseFile::parse_trace("R(__f0)").is_ok());
        match DatabaseFile::parse("R(a)\nS(b c)") {
            Err(FormatError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_text() {
        let d = PartitionedDatabase::new(
            [Fact::new("R", &["a"]), Fact::new("T", &["b"])],
            [Fact::new("S", &["a", "b"])],
        )
        .unwrap();
        let again = DatabaseFile::parse(&d.to_text()).unwrap().partitioned().unwrap();
        assert_eq!(d, again);
        assert_eq!(parse_fact_list("R(a), S(a,b)").unwrap().len(), 2);
    }
}
