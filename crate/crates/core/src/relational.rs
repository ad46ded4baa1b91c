//! Relational vocabulary with homomorphism search and connectivity over sets
//! of atoms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};

use crate::rational::{format_rational, Rational};

/// Prefix reserved for constants invented by the library. User input may not use it.
pub const FRESH_PREFIX: &str = "__f";

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Constant(Arc<str>);

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variable(Arc<str>);

impl Constant {
    pub fn new(name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        assert!(!name.is_empty(), "constant names are non-empty");
        Constant(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_fresh(&self) -> bool {
        self.0.starts_with(FRESH_PREFIX)
    }
}

impl Variable {
    pub fn new(name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        assert!(!name.is_empty(), "variable names are non-empty");
        Variable(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}'", self.0)
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A term is a constant or a variable; the two namespaces never mix.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Const(Constant),
    Var(Variable),
}

impl Term {
    pub fn constant(name: impl AsRef<str>) -> Self {
        Term::Const(Constant::new(name))
    }

    pub fn var(name: impl AsRef<str>) -> Self {
        Term::Var(Variable::new(name))
    }

    pub fn as_const(&self) -> Option<&Constant> {
        match self {
            Term::Const(c) => Some(c),
            Term::Var(_) => None,
        }
    }

    pub fn as_var(&self) -> Option<&Variable> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(c) => write!(f, "{c:?}"),
            Term::Var(v) => write!(f, "{v:?}"),
        }
    }
}

/// Query-syntax rendering: variables bare, constants quoted.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<Constant> for Term {
    fn from(c: Constant) -> Self {
        Term::Const(c)
    }
}

impl From<Variable> for Term {
    fn from(v: Variable) -> Self {
        Term::Var(v)
    }
}

pub type Relation = Arc<str>;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub relation: Relation,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(relation: impl AsRef<str>, args: Vec<Term>) -> Self {
        assert!(!args.is_empty(), "atoms have positive arity");
        Atom {
            relation: Arc::from(relation.as_ref()),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn constants(&self) -> impl Iterator<Item = &Constant> + '_ {
        self.args.iter().filter_map(Term::as_const)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Variable> + '_ {
        self.args.iter().filter_map(Term::as_var)
    }

    /// The fact this atom denotes, if it is ground.
    pub fn to_fact(&self) -> Option<Fact> {
        let args = self
            .args
            .iter()
            .map(|t| t.as_const().cloned())
            .collect::<Option<Vec<_>>>()?;
        Some(Fact {
            relation: self.relation.clone(),
            args,
        })
    }
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t:?}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A ground atom. Ordering (relation name, then arguments) is the canonical
/// fact order used for every deterministic choice in the crate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub relation: Relation,
    pub args: Vec<Constant>,
}

impl Fact {
    pub fn new<S: AsRef<str>>(relation: impl AsRef<str>, args: &[S]) -> Self {
        assert!(!args.is_empty(), "facts have positive arity");
        Fact {
            relation: Arc::from(relation.as_ref()),
            args: args.iter().map(Constant::new).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn to_atom(&self) -> Atom {
        Atom {
            relation: self.relation.clone(),
            args: self.args.iter().cloned().map(Term::Const).collect(),
        }
    }

    pub fn constants(&self) -> impl Iterator<Item = &Constant> + '_ {
        self.args.iter()
    }

    pub fn mentions(&self, c: &Constant) -> bool {
        self.args.iter().any(|a| a == c)
    }
}

/// Database-format rendering: `R(a,b)`.
impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, c) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

pub type FactSet = BTreeSet<Fact>;
pub type ConstantSet = BTreeSet<Constant>;

pub fn constants_of<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> ConstantSet {
    facts
        .into_iter()
        .flat_map(|f| f.args.iter().cloned())
        .collect()
}

pub fn atom_constants<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> ConstantSet {
    atoms
        .into_iter()
        .flat_map(|a| a.constants().cloned())
        .collect()
}

/// Renders a fact set as `{R(a), S(a,b)}`.
pub fn format_fact_set<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> String {
    let items: Vec<String> = facts.into_iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatabaseError {
    #[error("fact {0} is both endogenous and exogenous")]
    Overlap(Fact),
    #[error("relation {relation} used with arities {first} and {second}")]
    ArityMismatch {
        relation: String,
        first: usize,
        second: usize,
    },
    #[error("probability {prob} of {fact} is outside (0,1]")]
    BadProbability { fact: Fact, prob: String },
}

/// Checks that every relation is used with a single arity.
pub fn check_arities<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> Result<(), DatabaseError> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for f in facts {
        let prev = *seen.entry(&f.relation).or_insert(f.arity());
        if prev != f.arity() {
            return Err(DatabaseError::ArityMismatch {
                relation: f.relation.to_string(),
                first: prev,
                second: f.arity(),
            });
        }
    }
    Ok(())
}

/// A database split into endogenous facts (the players) and exogenous facts
/// (always present).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionedDatabase {
    endo: FactSet,
    exo: FactSet,
}

impl PartitionedDatabase {
    pub fn new(
        endo: impl IntoIterator<Item = Fact>,
        exo: impl IntoIterator<Item = Fact>,
    ) -> Result<Self, DatabaseError> {
        let endo: FactSet = endo.into_iter().collect();
        let exo: FactSet = exo.into_iter().collect();
        if let Some(f) = endo.intersection(&exo).next() {
            return Err(DatabaseError::Overlap(f.clone()));
        }
        check_arities(endo.iter().chain(exo.iter()))?;
        Ok(PartitionedDatabase { endo, exo })
    }

    /// A database in which every fact is endogenous.
    pub fn endogenous(facts: impl IntoIterator<Item = Fact>) -> Result<Self, DatabaseError> {
        Self::new(facts, std::iter::empty())
    }

    pub fn endo(&self) -> &FactSet {
        &self.endo
    }

    pub fn exo(&self) -> &FactSet {
        &self.exo
    }

    pub fn all_facts(&self) -> FactSet {
        self.endo.union(&self.exo).cloned().collect()
    }

    pub fn constants(&self) -> ConstantSet {
        constants_of(self.endo.iter().chain(self.exo.iter()))
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.endo.contains(fact) || self.exo.contains(fact)
    }

    /// The same database with `fact` moved from the endogenous to the exogenous side.
    pub fn with_exogenous(&self, fact: &Fact) -> PartitionedDatabase {
        let mut out = self.clone();
        if out.endo.remove(fact) {
            out.exo.insert(fact.clone());
        }
        out
    }

    /// The same database with `fact` removed entirely.
    pub fn without(&self, fact: &Fact) -> PartitionedDatabase {
        let mut out = self.clone();
        out.endo.remove(fact);
        out.exo.remove(fact);
        out
    }

    /// Probabilistic version with every endogenous fact at `p` and exogenous at 1.
    pub fn with_uniform_probability(&self, p: &Rational) -> ProbabilisticDatabase {
        let mut facts = BTreeMap::new();
        for f in &self.endo {
            facts.insert(f.clone(), p.clone());
        }
        for f in &self.exo {
            facts.insert(f.clone(), Rational::one());
        }
        ProbabilisticDatabase { facts }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.endo {
            out.push_str(&format!("{f}\n"));
        }
        for f in &self.exo {
            out.push_str(&format!("!{f}\n"));
        }
        out
    }
}

/// Tuple-independent probabilistic database with exact probabilities in (0,1].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProbabilisticDatabase {
    facts: BTreeMap<Fact, Rational>,
}

impl ProbabilisticDatabase {
    pub fn new(facts: impl IntoIterator<Item = (Fact, Rational)>) -> Result<Self, DatabaseError> {
        let facts: BTreeMap<Fact, Rational> = facts.into_iter().collect();
        for (f, p) in &facts {
            if p <= &Rational::zero() || p > &Rational::one() {
                return Err(DatabaseError::BadProbability {
                    fact: f.clone(),
                    prob: format_rational(p),
                });
            }
        }
        check_arities(facts.keys())?;
        Ok(ProbabilisticDatabase { facts })
    }

    pub fn facts(&self) -> &BTreeMap<Fact, Rational> {
        &self.facts
    }

    /// Facts with probability below 1.
    pub fn uncertain(&self) -> impl Iterator<Item = (&Fact, &Rational)> + '_ {
        self.facts.iter().filter(|(_, p)| !p.is_one())
    }

    /// The derived partition: probability-1 facts are exogenous.
    pub fn partition(&self) -> PartitionedDatabase {
        let (exo, endo): (Vec<_>, Vec<_>) = self.facts.iter().partition(|(_, p)| p.is_one());
        PartitionedDatabase {
            endo: endo.into_iter().map(|(f, _)| f.clone()).collect(),
            exo: exo.into_iter().map(|(f, _)| f.clone()).collect(),
        }
    }
}

/// Mapping produced by a homomorphism search.
pub type TermMapping = BTreeMap<Term, Constant>;

struct HomSearch<'a> {
    atoms: Vec<&'a Atom>,
    by_relation: HashMap<&'a str, Vec<&'a Fact>>,
    fixed: &'a ConstantSet,
}

impl<'a> HomSearch<'a> {
    fn new(source: &'a [Atom], target: &'a FactSet, fixed: &'a ConstantSet) -> Self {
        let mut atoms: Vec<&Atom> = source.iter().collect();
        atoms.sort();
        atoms.dedup();
        let mut by_relation: HashMap<&str, Vec<&Fact>> = HashMap::new();
        for f in target {
            by_relation.entry(&f.relation).or_default().push(f);
        }
        HomSearch {
            atoms,
            by_relation,
            fixed,
        }
    }

    /// Tries to extend `mapping` so that `atom` lands on `fact`; returns the newly bound terms.
    fn bind(&self, atom: &Atom, fact: &Fact, mapping: &mut TermMapping) -> Option<Vec<Term>> {
        if atom.arity() != fact.arity() {
            return None;
        }
        let mut added = Vec::new();
        for (t, c) in atom.args.iter().zip(&fact.args) {
            if let Term::Const(k) = t {
                if self.fixed.contains(k) {
                    if k != c {
                        undo(mapping, &added);
                        return None;
                    }
                    continue;
                }
            }
            match mapping.get(t) {
                Some(prev) if prev != c => {
                    undo(mapping, &added);
                    return None;
                }
                Some(_) => {}
                None => {
                    mapping.insert(t.clone(), c.clone());
                    added.push(t.clone());
                }
            }
        }
        Some(added)
    }

    /// Most-constrained-first atom choice, ties broken by canonical order.
    fn pick(&self, done: &[bool], mapping: &TermMapping) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (i, a) in self.atoms.iter().enumerate() {
            if done[i] {
                continue;
            }
            let unbound = a
                .args
                .iter()
                .filter(|t| match t {
                    Term::Const(c) if self.fixed.contains(c) => false,
                    _ => !mapping.contains_key(*t),
                })
                .count();
            if best.is_none_or(|(_, u)| unbound < u) {
                best = Some((i, unbound));
            }
        }
        best.map(|(i, _)| i)
    }

    fn run<F: FnMut(&TermMapping) -> bool>(
        &self,
        done: &mut Vec<bool>,
        mapping: &mut TermMapping,
        visit: &mut F,
    ) -> bool {
        let Some(i) = self.pick(done, mapping) else {
            return visit(mapping);
        };
        let atom = self.atoms[i];
        let Some(candidates) = self.by_relation.get(&*atom.relation) else {
            return false;
        };
        done[i] = true;
        for fact in candidates {
            if let Some(added) = self.bind(atom, fact, mapping) {
                let stop = self.run(done, mapping, visit);
                undo(mapping, &added);
                if stop {
                    done[i] = false;
                    return true;
                }
            }
        }
        done[i] = false;
        false
    }
}

fn undo(mapping: &mut TermMapping, added: &[Term]) {
    for t in added {
        mapping.remove(t);
    }
}

/// Finds a `fixed`-homomorphism from `source` into `target`: every constant of
/// `fixed` maps to itself, every other term (variables and non-fixed
/// constants) maps to some constant, and every atom lands on a fact of
/// `target`. Fixed constants are left out of the returned mapping.
pub fn find_c_homomorphism(
    source: &[Atom],
    target: &FactSet,
    fixed: &ConstantSet,
) -> Option<TermMapping> {
    let mut found = None;
    for_each_c_homomorphism(source, target, fixed, |m| {
        found = Some(m.clone());
        true
    });
    found
}

/// Visits every homomorphism (see [`find_c_homomorphism`]) in a deterministic
/// order. The visitor returns `true` to stop the search.
pub fn for_each_c_homomorphism<F: FnMut(&TermMapping) -> bool>(
    source: &[Atom],
    target: &FactSet,
    fixed: &ConstantSet,
    mut visit: F,
) {
    let search = HomSearch::new(source, target, fixed);
    let mut done = vec![false; search.atoms.len()];
    let mut mapping = TermMapping::new();
    search.run(&mut done, &mut mapping, &mut visit);
}

/// Applies a mapping (identity on unmapped constants) to produce a fact.
pub fn apply_mapping(atom: &Atom, mapping: &TermMapping) -> Option<Fact> {
    let args = atom
        .args
        .iter()
        .map(|t| match mapping.get(t) {
            Some(c) => Some(c.clone()),
            None => t.as_const().cloned(),
        })
        .collect::<Option<Vec<_>>>()?;
    Some(Fact {
        relation: atom.relation.clone(),
        args,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups atoms into the connected components of their incidence graph,
/// where only terms accepted by `links` act as connecting nodes. Components
/// are returned as sorted index lists, ordered by smallest index.
pub fn components_by<F: Fn(&Term) -> bool>(atoms: &[Atom], links: F) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(atoms.len());
    let mut owner: HashMap<&Term, usize> = HashMap::new();
    for (i, a) in atoms.iter().enumerate() {
        for t in a.args.iter().filter(|t| links(t)) {
            match owner.get(t) {
                Some(&j) => uf.union(i, j),
                None => {
                    owner.insert(t, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..atoms.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// True iff the incidence graph (atoms and their terms) is connected. The
/// empty set counts as connected.
pub fn is_connected_set(atoms: &[Atom]) -> bool {
    components_by(atoms, |_| true).len() <= 1
}

pub fn is_connected_facts(facts: &FactSet) -> bool {
    let atoms: Vec<Atom> = facts.iter().map(Fact::to_atom).collect();
    is_connected_set(&atoms)
}

/// Deterministic source of constants outside user namespace: `__f0`, `__f1`, ...
/// skipping any name listed in the avoid set.
#[derive(Debug, Clone)]
pub struct FreshConstants {
    next: usize,
    avoid: ConstantSet,
}

impl FreshConstants {
    pub fn new() -> Self {
        FreshConstants {
            next: 0,
            avoid: ConstantSet::new(),
        }
    }

    pub fn avoiding<'a>(avoid: impl IntoIterator<Item = &'a Constant>) -> Self {
        FreshConstants {
            next: 0,
            avoid: avoid.into_iter().cloned().collect(),
        }
    }

    pub fn also_avoid<'a>(&mut self, more: impl IntoIterator<Item = &'a Constant>) {
        self.avoid.extend(more.into_iter().cloned());
    }

    pub fn fresh(&mut self) -> Constant {
        loop {
            let c = Constant::new(format!("{FRESH_PREFIX}{}", self.next));
            self.next += 1;
            if !self.avoid.contains(&c) {
                self.avoid.insert(c.clone());
                return c;
            }
        }
    }
}

impl Default for FreshConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// Renaming chosen by [`rename_avoiding`].
pub type Renaming = BTreeMap<Constant, Constant>;

pub fn rename_facts(facts: &FactSet, renaming: &Renaming) -> FactSet {
    facts
        .iter()
        .map(|f| Fact {
            relation: f.relation.clone(),
            args: f
                .args
                .iter()
                .map(|c| renaming.get(c).unwrap_or(c).clone())
                .collect(),
        })
        .collect()
}

/// Builds the renaming used by [`rename_avoiding`], drawing names from `fresh`.
/// Constants are renamed in canonical order of first occurrence.
pub fn renaming_avoiding(
    facts: &FactSet,
    keep: &ConstantSet,
    avoid: &ConstantSet,
    fresh: &mut FreshConstants,
) -> Renaming {
    fresh.also_avoid(avoid.iter().chain(keep.iter()));
    fresh.also_avoid(constants_of(facts).iter());
    let mut renaming = Renaming::new();
    for f in facts {
        for c in &f.args {
            if !keep.contains(c) && !renaming.contains_key(c) {
                renaming.insert(c.clone(), fresh.fresh());
            }
        }
    }
    renaming
}

/// Returns a `keep`-isomorphic copy of `facts` where every constant outside
/// `keep` is replaced injectively by a fresh constant outside
/// `avoid ∪ keep ∪ const(facts)`.
pub fn rename_avoiding(facts: &FactSet, keep: &ConstantSet, avoid: &ConstantSet) -> FactSet {
    let renaming = renaming_avoiding(facts, keep, avoid, &mut FreshConstants::new());
    rename_facts(facts, &renaming)
}
