//! Boolean queries: CQ, UCQ, RPQ, CRPQ and UCRPQ.

mod eval;
mod parser;
pub mod regex;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

pub use eval::evaluate;
pub use parser::{parse_query, ParseError};
pub use regex::{Nfa, RegexNode};

use crate::relational::{atom_constants, Atom, ConstantSet, Relation, Term, Variable};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Cq {
    pub atoms: Vec<Atom>,
}

impl Cq {
    pub fn new(atoms: Vec<Atom>) -> Self {
        assert!(!atoms.is_empty(), "a CQ has at least one atom");
        Cq { atoms }
    }

    pub fn constants(&self) -> ConstantSet {
        atom_constants(&self.atoms)
    }

    pub fn variables(&self) -> BTreeSet<Variable> {
        self.atoms.iter().flat_map(|a| a.variables().cloned()).collect()
    }

    pub fn relations(&self) -> BTreeSet<Relation> {
        self.atoms.iter().map(|a| a.relation.clone()).collect()
    }
}

impl fmt::Display for Cq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Cq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// `L(src, dst)`: some path from `src` to `dst` is labelled by a word of `L`.
#[derive(Clone)]
pub struct PathAtom {
    pub regex: RegexNode,
    pub src: Term,
    pub dst: Term,
    nfa: Arc<Nfa>,
}

impl PathAtom {
    pub fn new(regex: RegexNode, src: Term, dst: Term) -> Self {
        let nfa = Arc::new(Nfa::new(&regex));
        PathAtom {
            regex,
            src,
            dst,
            nfa,
        }
    }

    pub fn nfa(&self) -> &Nfa {
        &self.nfa
    }
}

impl PartialEq for PathAtom {
    fn eq(&self, other: &Self) -> bool {
        self.regex == other.regex && self.src == other.src && self.dst == other.dst
    }
}

impl Eq for PathAtom {}

impl std::hash::Hash for PathAtom {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.regex.hash(state);
        self.src.hash(state);
        self.dst.hash(state);
    }
}

impl fmt::Display for PathAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "path {} {} : {}", self.src, self.dst, self.regex)
    }
}

impl fmt::Debug for PathAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Crpq {
    pub path_atoms: Vec<PathAtom>,
}

impl Crpq {
    pub fn new(path_atoms: Vec<PathAtom>) -> Self {
        assert!(!path_atoms.is_empty(), "a CRPQ has at least one path atom");
        Crpq { path_atoms }
    }

    pub fn constants(&self) -> ConstantSet {
        self.path_atoms
            .iter()
            .flat_map(|p| [&p.src, &p.dst])
            .filter_map(Term::as_const)
            .cloned()
            .collect()
    }

    pub fn relations(&self) -> BTreeSet<Relation> {
        self.path_atoms.iter().flat_map(|p| p.regex.alphabet()).collect()
    }
}

impl fmt::Display for Crpq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.path_atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Crpq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Cq(Cq),
    Ucq(Vec<Cq>),
    Rpq {
        path: PathAtom,
    },
    Crpq(Crpq),
    Ucrpq(Vec<Crpq>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Cq,
    Ucq,
    Rpq,
    Crpq,
    Ucrpq,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::Cq => "CQ",
            QueryKind::Ucq => "UCQ",
            QueryKind::Rpq => "RPQ",
            QueryKind::Crpq => "CRPQ",
            QueryKind::Ucrpq => "UCRPQ",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("relation {relation} used with arities {first} and {second}")]
    ArityMismatch {
        relation: String,
        first: usize,
        second: usize,
    },
    #[error("relation {0} has arity other than 2 and cannot be used in a path expression")]
    NotBinary(String),
    #[error("cannot combine a {0} with a {1}")]
    Unsupported(QueryKind, QueryKind),
}

impl Query {
    pub fn cq(atoms: Vec<Atom>) -> Self {
        Query::Cq(Cq::new(atoms))
    }

    pub fn rpq(regex: RegexNode, src: &str, dst: &str) -> Self {
        Query::Rpq {
            path: PathAtom::new(regex, Term::constant(src), Term::constant(dst)),
        }
    }

    pub fn kind(&self) -> QueryKind {
        match self {
            Query::Cq(_) => QueryKind::Cq,
            Query::Ucq(_) => QueryKind::Ucq,
            Query::Rpq { .. } => QueryKind::Rpq,
            Query::Crpq(_) => QueryKind::Crpq,
            Query::Ucrpq(_) => QueryKind::Ucrpq,
        }
    }

    /// `C = const(q)`.
    pub fn constants(&self) -> ConstantSet {
        match self {
            Query::Cq(q) => q.constants(),
            Query::Ucq(ds) => ds.iter().flat_map(Cq::constants).collect(),
            Query::Rpq { path } => [&path.src, &path.dst]
                .into_iter()
                .filter_map(Term::as_const)
                .cloned()
                .collect(),
            Query::Crpq(q) => q.constants(),
            Query::Ucrpq(ds) => ds.iter().flat_map(Crpq::constants).collect(),
        }
    }

    /// Relation names the query can use.
    pub fn relations(&self) -> BTreeSet<Relation> {
        match self {
            Query::Cq(q) => q.relations(),
            Query::Ucq(ds) => ds.iter().flat_map(Cq::relations).collect(),
            Query::Rpq { path } => path.regex.alphabet(),
            Query::Crpq(q) => q.relations(),
            Query::Ucrpq(ds) => ds.iter().flat_map(Crpq::relations).collect(),
        }
    }

    pub fn is_regex_query(&self) -> bool {
        matches!(self, Query::Rpq { .. } | Query::Crpq(_) | Query::Ucrpq(_))
    }

    /// Disjuncts of a CQ or UCQ.
    pub fn cq_disjuncts(&self) -> Option<&[Cq]> {
        match self {
            Query::Cq(q) => Some(std::slice::from_ref(q)),
            Query::Ucq(ds) => Some(ds),
            _ => None,
        }
    }

    pub fn as_cq(&self) -> Option<&Cq> {
        match self {
            Query::Cq(q) => Some(q),
            Query::Ucq(ds) if ds.len() == 1 => Some(&ds[0]),
            _ => None,
        }
    }

    /// Path atoms of each disjunct of a regex query.
    pub fn crpq_disjuncts(&self) -> Option<Vec<Vec<PathAtom>>> {
        match self {
            Query::Rpq { path } => Some(vec![vec![path.clone()]]),
            Query::Crpq(q) => Some(vec![q.path_atoms.clone()]),
            Query::Ucrpq(ds) => Some(ds.iter().map(|d| d.path_atoms.clone()).collect()),
            _ => None,
        }
    }

    /// Default word-length bound: `max(2 * symbol occurrences, 4)`.
    pub fn default_length_bound(&self) -> usize {
        let occurrences: usize = self
            .crpq_disjuncts()
            .map(|ds| {
                ds.iter()
                    .flatten()
                    .map(|p| p.regex.symbol_occurrences())
                    .sum()
            })
            .unwrap_or(0);
        (2 * occurrences).max(4)
    }

    /// Checks arity consistency (one arity per relation, path symbols binary).
    pub fn validate(&self) -> Result<(), QueryError> {
        let mut arity: HashMap<Relation, usize> = HashMap::new();
        let mut note = |r: &Relation, k: usize| -> Result<(), QueryError> {
            let prev = *arity.entry(r.clone()).or_insert(k);
            if prev != k {
                return Err(if prev == 2 || k == 2 {
                    QueryError::NotBinary(r.to_string())
                } else {
                    QueryError::ArityMismatch {
                        relation: r.to_string(),
                        first: prev,
                        second: k,
                    }
                });
            }
            Ok(())
        };
        if let Some(ds) = self.cq_disjuncts() {
            for a in ds.iter().flat_map(|d| &d.atoms) {
                note(&a.relation, a.arity())?;
            }
        }
        if let Some(ds) = self.crpq_disjuncts() {
            for p in ds.iter().flatten() {
                for r in p.regex.alphabet() {
                    note(&r, 2)?;
                }
            }
        }
        Ok(())
    }

    /// Conjunction `self ∧ other`, with the variables of `other` renamed apart.
    /// Unions distribute over the conjunction.
    pub fn and(&self, other: &Query) -> Result<Query, QueryError> {
        let taken: BTreeSet<String> = self.variable_names();
        let other = other.rename_variables_apart(&taken);
        let out = match (self.cq_disjuncts(), other.cq_disjuncts()) {
            (Some(l), Some(r)) => {
                let mut ds = Vec::new();
                for a in l {
                    for b in r {
                        let mut atoms = a.atoms.clone();
                        atoms.extend(b.atoms.iter().cloned());
                        ds.push(Cq::new(atoms));
                    }
                }
                query_from_cqs(ds)
            }
            _ => {
                let l = self.as_crpq_disjuncts()?;
                let r = other.as_crpq_disjuncts()?;
                let mut ds = Vec::new();
                for a in &l {
                    for b in &r {
                        let mut atoms = a.clone();
                        atoms.extend(b.iter().cloned());
                        ds.push(Crpq::new(atoms));
                    }
                }
                query_from_crpqs(ds)
            }
        };
        out.validate()?;
        Ok(out)
    }

    fn as_crpq_disjuncts(&self) -> Result<Vec<Vec<PathAtom>>, QueryError> {
        if let Some(ds) = self.crpq_disjuncts() {
            return Ok(ds);
        }
        let ds = self.cq_disjuncts().expect("every query is CQ- or regex-shaped");
        ds.iter()
            .map(|d| {
                d.atoms
                    .iter()
                    .map(|a| {
                        if a.arity() != 2 {
                            return Err(QueryError::NotBinary(a.relation.to_string()));
                        }
                        Ok(PathAtom::new(
                            RegexNode::Symbol(a.relation.clone()),
                            a.args[0].clone(),
                            a.args[1].clone(),
                        ))
                    })
                    .collect()
            })
            .collect()
    }

    fn variable_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(ds) = self.cq_disjuncts() {
            for d in ds {
                out.extend(d.variables().iter().map(|v| v.name().to_string()));
            }
        }
        if let Some(ds) = self.crpq_disjuncts() {
            for p in ds.iter().flatten() {
                for t in [&p.src, &p.dst] {
                    if let Term::Var(v) = t {
                        out.insert(v.name().to_string());
                    }
                }
            }
        }
        out
    }

    fn rename_variables_apart(&self, taken: &BTreeSet<String>) -> Query {
        let mut map: BTreeMap<Variable, Variable> = BTreeMap::new();
        let mut rename = |t: &Term| -> Term {
            match t {
                Term::Var(v) if taken.contains(v.name()) => {
                    let next = map.len();
                    map.entry(v.clone())
                        .or_insert_with(|| {
                            let mut k = next;
                            loop {
                                let cand = format!("{}_{k}", v.name());
                                if !taken.contains(&cand) {
                                    break Variable::new(cand);
                                }
                                k += 1;
                            }
                        })
                        .clone()
                        .into()
                }
                other => other.clone(),
            }
        };
        let mut rename_atom = |a: &Atom| Atom {
            relation: a.relation.clone(),
            args: a.args.iter().map(&mut rename).collect(),
        };
        match self {
            Query::Cq(q) => Query::Cq(Cq::new(q.atoms.iter().map(&mut rename_atom).collect())),
            Query::Ucq(ds) => Query::Ucq(
                ds.iter()
                    .map(|d| Cq::new(d.atoms.iter().map(&mut rename_atom).collect()))
                    .collect(),
            ),
            Query::Rpq { .. } => self.clone(),
            Query::Crpq(_) | Query::Ucrpq(_) => {
                let mut ds = Vec::new();
                for d in self.crpq_disjuncts().unwrap_or_default() {
                    let atoms = d
                        .iter()
                        .map(|p| {
                            let src = rename_atom(&Atom::new("_", vec![p.src.clone()])).args[0].clone();
                            let dst = rename_atom(&Atom::new("_", vec![p.dst.clone()])).args[0].clone();
                            PathAtom::new(p.regex.clone(), src, dst)
                        })
                        .collect();
                    ds.push(Crpq::new(atoms));
                }
                query_from_crpqs(ds)
            }
        }
    }
}

pub(crate) fn query_from_cqs(mut ds: Vec<Cq>) -> Query {
    if ds.len() == 1 {
        Query::Cq(ds.pop().unwrap())
    } else {
        Query::Ucq(ds)
    }
}

pub(crate) fn query_from_crpqs(mut ds: Vec<Crpq>) -> Query {
    if ds.len() == 1 {
        let d = ds.pop().unwrap();
        if d.path_atoms.len() == 1
            && d.path_atoms[0].src.as_const().is_some()
            && d.path_atoms[0].dst.as_const().is_some()
        {
            return Query::Rpq {
                path: d.path_atoms[0].clone(),
            };
        }
        Query::Crpq(d)
    } else {
        Query::Ucrpq(ds)
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Cq(q) => write!(f, "{q}"),
            Query::Rpq { path } => write!(f, "{path}"),
            Query::Crpq(q) => write!(f, "{q}"),
            Query::Ucq(ds) => {
                for (i, d) in ds.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{d}")?;
                }
                Ok(())
            }
            Query::Ucrpq(ds) => {
                for (i, d) in ds.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{d}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind(), self)
    }
}

impl std::str::FromStr for Query {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}
