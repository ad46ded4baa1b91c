//! Structural properties of queries (hierarchy, connectivity, leaks, island
//! supports, decompositions) and the complexity verdicts they imply.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::{json, Value};

use crate::error::Result;
use crate::query::{query_from_cqs, query_from_crpqs, Cq, Crpq, PathAtom, Query};
use crate::relational::{
    components_by, find_c_homomorphism, is_connected_facts, Atom, Constant, ConstantSet, Fact,
    FactSet, FreshConstants, Relation, Term, Variable,
};
use crate::supports::{canonical_supports, core_atoms, expansions, is_minimal_support};

pub fn is_self_join_free(cq: &Cq) -> bool {
    let mut seen = BTreeSet::new();
    cq.atoms.iter().all(|a| seen.insert(a.relation.clone()))
}

fn vars(a: &Atom) -> BTreeSet<&Variable> {
    a.variables().collect()
}

/// Fails iff three atoms have `vars(a1) ∩ vars(a2) ⊄ vars(a3)` and
/// `vars(a3) ∩ vars(a2) ⊄ vars(a1)`.
pub fn is_hierarchical(cq: &Cq) -> bool {
    let vs: Vec<BTreeSet<&Variable>> = cq.atoms.iter().map(vars).collect();
    for a1 in &vs {
        for a2 in &vs {
            for a3 in &vs {
                let left = a1.intersection(a2).any(|v| !a3.contains(v));
                let right = a3.intersection(a2).any(|v| !a1.contains(v));
                if left && right {
                    return false;
                }
            }
        }
    }
    true
}

/// The incidence graph stays connected once the constant nodes are removed.
pub fn is_variable_connected(cq: &Cq) -> bool {
    components_by(&cq.atoms, |t| matches!(t, Term::Var(_))).len() <= 1
}

/// Every conjunctive expansion, reduced to its core, is variable-connected.
/// Exact for CQs and UCQs up to redundant disjuncts; regex queries are
/// checked on words up to `bound`.
pub fn is_variable_connected_query(q: &Query, bound: usize) -> Result<bool> {
    let fixed = q.constants();
    for e in expansions(q, bound)? {
        let core = core_atoms(&e.atoms, &fixed);
        if !is_variable_connected(&Cq { atoms: core }) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Every canonical support is connected.
pub fn is_connected_query(q: &Query, bound: usize) -> Result<bool> {
    Ok(canonical_supports(q, bound)?.iter().all(|s| is_connected_facts(&s.facts)))
}

/// A fact of `S` onto which a fact of a minimal support maps while sending a
/// constant outside `C` into `C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakWitness {
    pub leak_fact: Fact,
    pub source_fact: Fact,
    pub mapping: BTreeMap<Constant, Constant>,
}

impl LeakWitness {
    pub fn to_json(&self) -> Value {
        json!({
            "leak_fact": self.leak_fact.to_string(),
            "source_fact": self.source_fact.to_string(),
            "mapping": self.mapping.iter().map(|(k, v)| (k.to_string(), Value::String(v.to_string()))).collect::<serde_json::Map<_, _>>(),
        })
    }
}

impl fmt::Display for LeakWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m: Vec<String> = self.mapping.iter().map(|(k, v)| format!("{k}->{v}")).collect();
        write!(f, "{} leaks via {} with {{{}}}", self.leak_fact, self.source_fact, m.join(", "))
    }
}

fn leak_between(source: &Fact, target: &Fact, fixed: &ConstantSet) -> Option<LeakWitness> {
    if source.relation != target.relation || source.arity() != target.arity() {
        return None;
    }
    let t: FactSet = [target.clone()].into_iter().collect();
    let h = find_c_homomorphism(&[source.to_atom()], &t, fixed)?;
    let mapping: BTreeMap<Constant, Constant> = source
        .args
        .iter()
        .map(|c| (c.clone(), h[&Term::Const(c.clone())].clone()))
        .collect();
    let leaks = mapping.iter().any(|(c, d)| !fixed.contains(c) && fixed.contains(d));
    if !leaks {
        return None;
    }
    // The mapping must fix C and carry the source onto the target.
    debug_assert!(mapping.iter().all(|(c, d)| !fixed.contains(c) || c == d));
    debug_assert_eq!(
        source.args.iter().map(|c| mapping[c].clone()).collect::<Vec<_>>(),
        target.args
    );
    Some(LeakWitness {
        leak_fact: target.clone(),
        source_fact: source.clone(),
        mapping,
    })
}

/// First q-leak in `s`, scanning canonical supports in order.
pub fn find_q_leak(q: &Query, s: &FactSet, bound: usize) -> Result<Option<LeakWitness>> {
    let fixed = q.constants();
    if fixed.is_empty() {
        return Ok(None);
    }
    for sup in canonical_supports(q, bound)? {
        for src in &sup.facts {
            for tgt in s {
                if let Some(w) = leak_between(src, tgt, &fixed) {
                    return Ok(Some(w));
                }
            }
        }
    }
    Ok(None)
}

/// Which sufficient condition certified an island support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandRule {
    ConnectedConstantFree,
    RpqPath,
    DuplicableSingleton,
}

impl IslandRule {
    pub fn as_str(self) -> &'static str {
        match self {
            IslandRule::ConnectedConstantFree => "connected-constant-free",
            IslandRule::RpqPath => "rpq-path",
            IslandRule::DuplicableSingleton => "duplicable-singleton",
        }
    }
}

/// A minimal support `S` with `const(S) ⊄ C` that one of the sufficient
/// conditions proves to be an island. `None` means no condition applied.
pub fn find_island_support(q: &Query, bound: usize) -> Result<Option<(FactSet, IslandRule)>> {
    let fixed = q.constants();
    if fixed.is_empty() && is_connected_query(q, bound)? {
        let s = canonical_supports(q, bound)?;
        if let Some(sup) = s.into_iter().find(|s| !s.facts.is_empty()) {
            return Ok(Some((sup.facts, IslandRule::ConnectedConstantFree)));
        }
    }
    if let Query::Rpq { path } = q {
        if let Some(word) = path.nfa().shortest_word_at_least(2) {
            let (Term::Const(a), Term::Const(b)) = (&path.src, &path.dst) else {
                unreachable!("RPQ endpoints are constants");
            };
            let s = simple_path(a, b, &word, &fixed);
            if is_minimal_support(q, &s)? {
                return Ok(Some((s, IslandRule::RpqPath)));
            }
        }
    }
    if let Some(s) = has_duplicable_singleton_support(q, bound)? {
        return Ok(Some((s, IslandRule::DuplicableSingleton)));
    }
    Ok(None)
}

/// `a -R1-> f0 -R2-> ... -Rl-> b` with fresh intermediate nodes.
pub fn simple_path(a: &Constant, b: &Constant, word: &[Relation], avoid: &ConstantSet) -> FactSet {
    let mut fresh = FreshConstants::avoiding(avoid.iter().chain([a, b]));
    let mut prev = a.clone();
    let mut out = FactSet::new();
    for (k, r) in word.iter().enumerate() {
        let next = if k + 1 == word.len() { b.clone() } else { fresh.fresh() };
        out.insert(Fact {
            relation: r.clone(),
            args: vec![prev, next.clone()],
        });
        prev = next;
    }
    out
}

/// Unifies all atoms positionally; `None` on a relation or constant clash.
fn unify_all(atoms: &[Atom]) -> Option<Atom> {
    let first = atoms.first()?;
    if atoms.iter().any(|a| a.relation != first.relation || a.arity() != first.arity()) {
        return None;
    }
    let mut subst: BTreeMap<Term, Term> = BTreeMap::new();
    fn root(s: &BTreeMap<Term, Term>, t: &Term) -> Term {
        let mut cur = t.clone();
        while let Some(n) = s.get(&cur) {
            cur = n.clone();
        }
        cur
    }
    for a in &atoms[1..] {
        for (x, y) in first.args.iter().zip(&a.args) {
            let (x, y) = (root(&subst, x), root(&subst, y));
            if x == y {
                continue;
            }
            match (&x, &y) {
                (Term::Const(_), Term::Const(_)) => return None,
                (Term::Var(_), _) => {
                    subst.insert(x, y);
                }
                _ => {
                    subst.insert(y, x);
                }
            }
        }
    }
    Some(Atom {
        relation: first.relation.clone(),
        args: first.args.iter().map(|t| root(&subst, t)).collect(),
    })
}

/// A minimal support of size one with a constant outside `C`, obtained by
/// collapsing all atoms of one expansion onto a single atom.
pub fn has_duplicable_singleton_support(q: &Query, bound: usize) -> Result<Option<FactSet>> {
    let fixed = q.constants();
    for e in expansions(q, bound)? {
        let Some(atom) = unify_all(&e.atoms) else {
            continue;
        };
        if atom.variables().next().is_none() {
            continue;
        }
        let s = crate::supports::instantiate(&[atom], &mut FreshConstants::avoiding(&fixed));
        if is_minimal_support(q, &s)? {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

/// Two atoms admit a common instance.
fn unifiable(a: &Atom, b: &Atom) -> bool {
    // Rename `b` apart so shared variable names do not interfere.
    let b = Atom {
        relation: b.relation.clone(),
        args: b
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => Term::var(format!("{}'", v.name())),
                c => c.clone(),
            })
            .collect(),
    };
    unify_all(&[a.clone(), b]).is_some()
}

fn merge_groups(mut groups: Vec<Vec<usize>>, linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    'again: loop {
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if groups[i].iter().any(|&x| groups[j].iter().any(|&y| linked(x, y))) {
                    let g = groups.remove(j);
                    groups[i].extend(g);
                    groups[i].sort_unstable();
                    continue 'again;
                }
            }
        }
        return groups;
    }
}

/// Splits `q` as `q1 ∧ q2` with variable-disjoint parts whose minimal supports
/// never share a fact. Constant-free CQs and CRPQs split along connected
/// components with disjoint vocabularies. Queries with constants are split
/// only when `experimental` is set, and then only by the pattern of atoms that
/// no common fact can instantiate.
pub fn decompose(q: &Query, experimental: bool) -> Result<Option<(Query, Query)>> {
    let fixed = q.constants();
    if !fixed.is_empty() && !experimental {
        return Ok(None);
    }
    let (q1, q2) = match q {
        Query::Cq(cq) => {
            let atoms = core_atoms(&cq.atoms, &fixed);
            let groups = merge_groups(components_by(&atoms, |t| matches!(t, Term::Var(_))), |x, y| {
                unifiable(&atoms[x], &atoms[y])
            });
            if groups.len() < 2 {
                return Ok(None);
            }
            let part = |gs: &[Vec<usize>]| {
                query_from_cqs(vec![Cq::new(gs.iter().flatten().map(|&i| atoms[i].clone()).collect())])
            };
            (part(&groups[..1]), part(&groups[1..]))
        }
        Query::Crpq(c) if fixed.is_empty() => {
            let as_atoms: Vec<Atom> = c
                .path_atoms
                .iter()
                .map(|p| Atom::new("_", vec![p.src.clone(), p.dst.clone()]))
                .collect();
            let alpha: Vec<BTreeSet<Relation>> = c.path_atoms.iter().map(|p| p.regex.alphabet()).collect();
            let groups = merge_groups(components_by(&as_atoms, |t| matches!(t, Term::Var(_))), |x, y| {
                !alpha[x].is_disjoint(&alpha[y])
            });
            if groups.len() < 2 {
                return Ok(None);
            }
            let part = |gs: &[Vec<usize>]| {
                let atoms: Vec<PathAtom> = gs.iter().flatten().map(|&i| c.path_atoms[i].clone()).collect();
                query_from_crpqs(vec![Crpq::new(atoms)])
            };
            (part(&groups[..1]), part(&groups[1..]))
        }
        _ => return Ok(None),
    };
    // Each side needs a minimal support with a constant outside C.
    for part in [&q1, &q2] {
        let bound = part.default_length_bound();
        let ok = match canonical_supports(part, bound) {
            Ok(s) => s
                .iter()
                .any(|s| s.facts.iter().flat_map(|f| f.args.iter()).any(|c| !fixed.contains(c))),
            Err(_) => false,
        };
        if !ok {
            return Ok(None);
        }
    }
    Ok(Some((q1, q2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    InFP,
    SharpPHard,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::InFP => "FP",
            Verdict::SharpPHard => "#P-hard",
            Verdict::Unknown => "unknown",
        }
    }
}

/// The rule behind a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    HierarchicalSjfCq,
    NonHierarchicalSjfCq,
    RpqWordLength,
    NonHierarchicalConstantFreeCq,
    ConnectedUcqUnsafe,
    CcDisjoint,
    DuplicableSingleton,
    NoneApplicable,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::HierarchicalSjfCq => "hierarchical-sjf-CQ",
            Rule::NonHierarchicalSjfCq => "non-hierarchical-sjf-CQ",
            Rule::RpqWordLength => "rpq-word-length",
            Rule::NonHierarchicalConstantFreeCq => "non-hierarchical-constant-free-CQ",
            Rule::ConnectedUcqUnsafe => "connected-ucq-unsafe",
            Rule::CcDisjoint => "cc-disjoint",
            Rule::DuplicableSingleton => "duplicable-singleton",
            Rule::NoneApplicable => "none-applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    /// Atoms of the query violating hierarchy.
    Atoms(Vec<Atom>),
    /// A word of the RPQ language.
    Word(Vec<Relation>),
    Support(FactSet),
    Leak(LeakWitness),
    Decomposition(Query, Query),
}

impl Witness {
    pub fn to_json(&self) -> Value {
        match self {
            Witness::Atoms(a) => json!({"atoms": a.iter().map(|a| a.to_string()).collect::<Vec<_>>()}),
            Witness::Word(w) => json!({"word": w.iter().map(|r| r.to_string()).collect::<Vec<_>>()}),
            Witness::Support(s) => json!({"support": s.iter().map(|f| f.to_string()).collect::<Vec<_>>()}),
            Witness::Leak(l) => json!({"leak": l.to_json()}),
            Witness::Decomposition(a, b) => json!({"decomposition": [a.to_string(), b.to_string()]}),
        }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Atoms(a) => {
                let a: Vec<String> = a.iter().map(|a| a.to_string()).collect();
                write!(f, "atoms {}", a.join(", "))
            }
            Witness::Word(w) => {
                let w: Vec<&str> = w.iter().map(|r| &**r).collect();
                write!(f, "word {}", w.join(" "))
            }
            Witness::Support(s) => write!(f, "support {}", crate::relational::format_fact_set(s)),
            Witness::Leak(l) => write!(f, "leak {l}"),
            Witness::Decomposition(a, b) => write!(f, "decomposition ({a}) and ({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationVerdict {
    pub verdict: Verdict,
    pub rule: Rule,
    pub witness: Option<Witness>,
    /// Reductions known to make FGMC and Shapley equivalent for this query.
    pub equivalences: Vec<&'static str>,
}

impl ClassificationVerdict {
    pub fn to_json(&self) -> Value {
        json!({
            "verdict": self.verdict.as_str(),
            "rule": self.rule.as_str(),
            "witness": self.witness.as_ref().map(Witness::to_json),
            "equivalences": self.equivalences,
        })
    }
}

impl fmt::Display for ClassificationVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let why = match self.rule {
            Rule::HierarchicalSjfCq => "hierarchical sjf-CQ",
            Rule::NonHierarchicalSjfCq => "non-hierarchical sjf-CQ",
            Rule::RpqWordLength if self.verdict == Verdict::SharpPHard => "RPQ with a word of length at least 3",
            Rule::RpqWordLength => "RPQ without words of length 3 or more",
            Rule::NonHierarchicalConstantFreeCq => "non-hierarchical constant-free CQ",
            Rule::ConnectedUcqUnsafe => "connected unsafe UCQ",
            Rule::CcDisjoint => "cc-disjoint CRPQ",
            Rule::DuplicableSingleton => "duplicable singleton support",
            Rule::NoneApplicable => "no applicable rule",
        };
        write!(f, "{} ({why})", self.verdict.as_str())
    }
}

/// A triple of atoms violating hierarchy, if any.
fn hierarchy_violation(cq: &Cq) -> Option<Vec<Atom>> {
    let vs: Vec<BTreeSet<&Variable>> = cq.atoms.iter().map(vars).collect();
    for (i, a1) in vs.iter().enumerate() {
        for (j, a2) in vs.iter().enumerate() {
            for (k, a3) in vs.iter().enumerate() {
                if a1.intersection(a2).any(|v| !a3.contains(v)) && a3.intersection(a2).any(|v| !a1.contains(v)) {
                    return Some(vec![cq.atoms[i].clone(), cq.atoms[j].clone(), cq.atoms[k].clone()]);
                }
            }
        }
    }
    None
}

/// Applies the decision rules in a fixed order: self-join-free CQs, RPQs,
/// constant-free non-hierarchical CQs. Anything else is `Unknown`, listing the
/// reductions that still apply.
pub fn classify(q: &Query) -> Result<ClassificationVerdict> {
    let verdict = |verdict, rule, witness| ClassificationVerdict {
        verdict,
        rule,
        witness,
        equivalences: Vec::new(),
    };
    if let Some(cq) = q.as_cq() {
        if is_self_join_free(cq) {
            return Ok(match hierarchy_violation(cq) {
                None => verdict(Verdict::InFP, Rule::HierarchicalSjfCq, None),
                Some(w) => verdict(Verdict::SharpPHard, Rule::NonHierarchicalSjfCq, Some(Witness::Atoms(w))),
            });
        }
    }
    if let Query::Rpq { path } = q {
        return Ok(match path.nfa().shortest_word_at_least(3) {
            Some(w) => verdict(Verdict::SharpPHard, Rule::RpqWordLength, Some(Witness::Word(w))),
            None => verdict(Verdict::InFP, Rule::RpqWordLength, None),
        });
    }
    if let Some(cq) = q.as_cq() {
        if cq.constants().is_empty() {
            let core = Cq::new(core_atoms(&cq.atoms, &ConstantSet::new()));
            if let Some(w) = hierarchy_violation(&core) {
                return Ok(verdict(
                    Verdict::SharpPHard,
                    Rule::NonHierarchicalConstantFreeCq,
                    Some(Witness::Atoms(w)),
                ));
            }
        }
    }
    let bound = q.default_length_bound();
    let mut out = verdict(Verdict::Unknown, Rule::NoneApplicable, None);
    if let Some((s, rule)) = find_island_support(q, bound)? {
        out.equivalences.push("pseudo-connected");
        if rule == IslandRule::DuplicableSingleton {
            out.equivalences.push("duplicable-singleton");
        }
        out.witness = Some(Witness::Support(s));
    }
    if let Some((a, b)) = decompose(q, false)? {
        out.equivalences.push(if q.is_regex_query() { "cc-disjoint" } else { "decomposable" });
        out.witness.get_or_insert(Witness::Decomposition(a, b));
    }
    Ok(out)
}
