//! Minimal supports: cores, canonical supports of a query, supports inside a
//! database, and fact relevance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::lineage::Lineage;
use crate::query::{Query, RegexNode};
use crate::relational::{
    apply_mapping, find_c_homomorphism, Atom, Constant, ConstantSet, Fact, FactSet,
    FreshConstants, PartitionedDatabase, Relation, Term, TermMapping, Variable,
};

/// Cap on the number of CQ expansions of a regex query.
pub const MAX_EXPANSIONS: usize = 4096;

/// Budget used for the small subset enumerations done on single supports.
const LOCAL_BUDGET: u64 = 1 << 22;

/// Where a canonical support came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupportOrigin {
    /// Core of the given CQ disjunct.
    Disjunct(usize),
    /// One word per path atom of the given regex disjunct.
    Words {
        disjunct: usize,
        words: Vec<Vec<Relation>>,
    },
}

impl fmt::Display for SupportOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportOrigin::Disjunct(i) => write!(f, "disjunct {i}"),
            SupportOrigin::Words { disjunct, words } => {
                write!(f, "disjunct {disjunct}, words")?;
                for w in words {
                    if w.is_empty() {
                        f.write_str(" eps")?;
                    } else {
                        let w: Vec<&str> = w.iter().map(|r| &**r).collect();
                        write!(f, " {}", w.join(""))?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub facts: FactSet,
    pub origin: SupportOrigin,
}

/// A conjunctive query obtained from one disjunct, with one word chosen for each
/// path atom when the query has regular expressions.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub atoms: Vec<Atom>,
    pub origin: SupportOrigin,
}

/// Core of a fact set relative to `fixed`: repeatedly retract onto a proper
/// subset while some `fixed`-endomorphism avoids a fact.
pub fn core_facts(facts: &FactSet, fixed: &ConstantSet) -> FactSet {
    let mut cur = facts.clone();
    'outer: loop {
        let atoms: Vec<Atom> = cur.iter().map(Fact::to_atom).collect();
        for f in cur.iter() {
            let mut smaller = cur.clone();
            smaller.remove(f);
            if let Some(h) = find_c_homomorphism(&atoms, &smaller, fixed) {
                cur = atoms
                    .iter()
                    .map(|a| apply_mapping(a, &h).expect("total mapping"))
                    .collect();
                continue 'outer;
            }
        }
        return cur;
    }
}

/// Core of a conjunctive query relative to its constants, as atoms.
pub fn core_atoms(atoms: &[Atom], fixed: &ConstantSet) -> Vec<Atom> {
    let mut avoid = fixed.clone();
    avoid.extend(atoms.iter().flat_map(|a| a.constants().cloned()));
    let mut fresh = FreshConstants::avoiding(&avoid);
    let mut back: BTreeMap<Constant, Variable> = BTreeMap::new();
    let mut frozen: BTreeMap<Variable, Constant> = BTreeMap::new();
    for a in atoms {
        for v in a.variables() {
            frozen.entry(v.clone()).or_insert_with(|| {
                let c = fresh.fresh();
                back.insert(c.clone(), v.clone());
                c
            });
        }
    }
    let facts: FactSet = atoms
        .iter()
        .map(|a| freeze(a, &frozen))
        .collect();
    let mut fixed_all = fixed.clone();
    fixed_all.extend(atoms.iter().flat_map(|a| a.constants().cloned()));
    core_facts(&facts, &fixed_all)
        .iter()
        .map(|f| Atom {
            relation: f.relation.clone(),
            args: f
                .args
                .iter()
                .map(|c| match back.get(c) {
                    Some(v) => Term::Var(v.clone()),
                    None => Term::Const(c.clone()),
                })
                .collect(),
        })
        .collect()
}

fn freeze(a: &Atom, frozen: &BTreeMap<Variable, Constant>) -> Fact {
    Fact {
        relation: a.relation.clone(),
        args: a
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => c.clone(),
                Term::Var(v) => frozen[v].clone(),
            })
            .collect(),
    }
}

/// Maps every variable to a distinct fresh constant, in order of first occurrence.
pub fn instantiate(atoms: &[Atom], fresh: &mut FreshConstants) -> FactSet {
    let mut frozen: BTreeMap<Variable, Constant> = BTreeMap::new();
    for a in atoms {
        for v in a.variables() {
            frozen.entry(v.clone()).or_insert_with(|| fresh.fresh());
        }
    }
    atoms.iter().map(|a| freeze(a, &frozen)).collect()
}

/// Conjunctive expansions of `q`: the disjuncts of a CQ or UCQ, or, for a regex
/// query, every choice of one word of length at most `bound` per path atom.
pub fn expansions(q: &Query, bound: usize) -> Result<Vec<Expansion>> {
    if let Some(ds) = q.cq_disjuncts() {
        return Ok(ds
            .iter()
            .enumerate()
            .map(|(i, d)| Expansion {
                atoms: d.atoms.clone(),
                origin: SupportOrigin::Disjunct(i),
            })
            .collect());
    }
    let mut out = Vec::new();
    for (di, d) in q.crpq_disjuncts().unwrap_or_default().iter().enumerate() {
        let word_sets: Vec<Vec<Vec<Relation>>> = d.iter().map(|p| p.nfa().words_up_to(bound)).collect();
        let total = word_sets
            .iter()
            .try_fold(1usize, |acc, w| acc.checked_mul(w.len()))
            .unwrap_or(usize::MAX);
        if out.len().saturating_add(total) > MAX_EXPANSIONS {
            return Err(Error::TooManyExpansions(MAX_EXPANSIONS));
        }
        if word_sets.iter().any(Vec::is_empty) {
            continue;
        }
        let mut choice = vec![0usize; d.len()];
        'odometer: loop {
            let words: Vec<Vec<Relation>> = choice
                .iter()
                .zip(&word_sets)
                .map(|(&c, ws)| ws[c].clone())
                .collect();
            if let Some(atoms) = path_atoms_for(d, &words, di) {
                out.push(Expansion {
                    atoms,
                    origin: SupportOrigin::Words { disjunct: di, words },
                });
            }
            for k in 0..choice.len() {
                choice[k] += 1;
                if choice[k] < word_sets[k].len() {
                    continue 'odometer;
                }
                choice[k] = 0;
            }
            break;
        }
    }
    Ok(out)
}

/// Atoms for one word per path atom; intermediate nodes get fresh variables
/// and empty words identify their endpoints. `None` if two distinct constants
/// would have to be identified.
fn path_atoms_for(
    paths: &[crate::query::PathAtom],
    words: &[Vec<Relation>],
    disjunct: usize,
) -> Option<Vec<Atom>> {
    let mut atoms = Vec::new();
    let mut equal: Vec<(Term, Term)> = Vec::new();
    for (pi, (p, w)) in paths.iter().zip(words).enumerate() {
        if w.is_empty() {
            equal.push((p.src.clone(), p.dst.clone()));
            continue;
        }
        let mut prev = p.src.clone();
        for (k, r) in w.iter().enumerate() {
            let next = if k + 1 == w.len() {
                p.dst.clone()
            } else {
                Term::var(format!("__v{disjunct}_{pi}_{k}"))
            };
            atoms.push(Atom {
                relation: r.clone(),
                args: vec![prev, next.clone()],
            });
            prev = next;
        }
    }
    let mut subst: BTreeMap<Term, Term> = BTreeMap::new();
    fn resolve(subst: &BTreeMap<Term, Term>, t: &Term) -> Term {
        let mut cur = t.clone();
        while let Some(n) = subst.get(&cur) {
            cur = n.clone();
        }
        cur
    }
    for (a, b) in equal {
        let (a, b) = (resolve(&subst, &a), resolve(&subst, &b));
        if a == b {
            continue;
        }
        match (&a, &b) {
            (Term::Const(_), Term::Const(_)) => return None,
            (Term::Var(_), _) => {
                subst.insert(a, b);
            }
            (_, Term::Var(_)) => {
                subst.insert(b, a);
            }
        }
    }
    Some(
        atoms
            .into_iter()
            .map(|a| Atom {
                relation: a.relation,
                args: a.args.iter().map(|t| resolve(&subst, t)).collect(),
            })
            .collect(),
    )
}

/// Renames the fresh constants of `facts` to `__f0, __f1, ...` following the
/// order in which `order` lists them, so equal shapes get equal names.
fn renumber(facts: &FactSet, order: &[Constant], fixed: &ConstantSet) -> FactSet {
    let present: BTreeSet<&Constant> = facts.iter().flat_map(|f| f.args.iter()).collect();
    let mut fresh = FreshConstants::avoiding(fixed);
    let renaming: BTreeMap<Constant, Constant> = order
        .iter()
        .filter(|c| present.contains(c) && !fixed.contains(c))
        .map(|c| (c.clone(), fresh.fresh()))
        .collect();
    crate::relational::rename_facts(facts, &renaming)
}

/// Instantiates and minimizes the atoms of one expansion.
fn support_of_atoms(atoms: &[Atom], fixed: &ConstantSet) -> FactSet {
    let mut fresh = FreshConstants::avoiding(fixed);
    let mut order = Vec::new();
    let mut frozen: BTreeMap<Variable, Constant> = BTreeMap::new();
    for a in atoms {
        for v in a.variables() {
            frozen.entry(v.clone()).or_insert_with(|| {
                let c = fresh.fresh();
                order.push(c.clone());
                c
            });
        }
    }
    let facts: FactSet = atoms.iter().map(|a| freeze(a, &frozen)).collect();
    let core = core_facts(&facts, fixed);
    renumber(&core, &order, fixed)
}

/// True iff `s` satisfies `q` and no proper subset does.
pub fn is_minimal_support(q: &Query, s: &FactSet) -> Result<bool> {
    let ms = minimal_supports_in(q, s)?;
    Ok(ms.len() == 1 && &ms[0] == s)
}

fn c_isomorphic(a: &FactSet, b: &FactSet, fixed: &ConstantSet) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let aa: Vec<Atom> = a.iter().map(Fact::to_atom).collect();
    let ba: Vec<Atom> = b.iter().map(Fact::to_atom).collect();
    find_c_homomorphism(&aa, b, fixed).is_some() && find_c_homomorphism(&ba, a, fixed).is_some()
}

/// One minimal support per homomorphically distinct expansion, with fresh
/// constants for variables and path intermediates.
pub fn canonical_supports(q: &Query, bound: usize) -> Result<Vec<Support>> {
    let fixed = q.constants();
    let mut out: Vec<Support> = Vec::new();
    for e in expansions(q, bound)? {
        let s = support_of_atoms(&e.atoms, &fixed);
        if out.iter().any(|o| c_isomorphic(&o.facts, &s, &fixed)) {
            continue;
        }
        if !is_minimal_support(q, &s)? {
            continue;
        }
        out.push(Support {
            facts: s,
            origin: e.origin,
        });
    }
    if out.is_empty() {
        return Err(Error::NoSupport { bound });
    }
    Ok(out)
}

/// The inclusion-minimal subsets of `facts` that satisfy `q`, in canonical order.
pub fn minimal_supports_in(q: &Query, facts: &FactSet) -> Result<Vec<FactSet>> {
    let db = PartitionedDatabase::endogenous(facts.iter().cloned())?;
    let lineage = Lineage::build(q, &db, LOCAL_BUDGET)?;
    let mut out = lineage.minimal_supports();
    out.sort();
    Ok(out)
}

/// Whether `alpha` belongs to some minimal support of `q`. Exact for CQs and
/// UCQs; regex queries are expanded up to words of length `bound`.
pub fn is_relevant_fact(q: &Query, alpha: &Fact, bound: usize) -> Result<bool> {
    if !q.relations().contains(&alpha.relation) {
        return Ok(false);
    }
    let fixed = q.constants();
    for e in expansions(q, bound)? {
        if relevant_in_expansion(q, &e.atoms, alpha, &fixed)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Maps one atom onto `alpha`, then tries every assignment of the remaining
/// variables over `const(alpha) ∪ C` plus one fresh constant per variable.
/// Any minimal support containing `alpha` is isomorphic to one of these images.
fn relevant_in_expansion(q: &Query, atoms: &[Atom], alpha: &Fact, fixed: &ConstantSet) -> Result<bool> {
    let target: FactSet = [alpha.clone()].into_iter().collect();
    let mut avoid = fixed.clone();
    avoid.extend(alpha.args.iter().cloned());
    for a in atoms.iter().filter(|a| a.relation == alpha.relation && a.arity() == alpha.arity()) {
        let Some(h) = find_c_homomorphism(std::slice::from_ref(a), &target, fixed) else {
            continue;
        };
        let rest: Vec<Variable> = atoms
            .iter()
            .flat_map(|b| b.variables().cloned())
            .filter(|v| !h.contains_key(&Term::Var(v.clone())))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut domain: Vec<Constant> = avoid.iter().cloned().collect();
        let mut fresh = FreshConstants::avoiding(&avoid);
        domain.extend((0..rest.len()).map(|_| fresh.fresh()));
        let mut assign = vec![0usize; rest.len()];
        loop {
            let mut m: TermMapping = h.clone();
            for (v, &i) in rest.iter().zip(&assign) {
                m.insert(Term::Var(v.clone()), domain[i].clone());
            }
            let image: FactSet = atoms
                .iter()
                .map(|b| apply_mapping(b, &m).expect("total mapping"))
                .collect();
            if minimal_supports_in(q, &image)?
                .iter()
                .any(|s| s.contains(alpha))
            {
                return Ok(true);
            }
            let mut k = 0;
            loop {
                if k == assign.len() {
                    break;
                }
                assign[k] += 1;
                if assign[k] < domain.len() {
                    break;
                }
                assign[k] = 0;
                k += 1;
            }
            if k == assign.len() {
                break;
            }
        }
    }
    Ok(false)
}

/// The regular expression of a single-word path, used when building paths.
pub fn word_regex(word: &[Relation]) -> RegexNode {
    match word.len() {
        0 => RegexNode::Epsilon,
        1 => RegexNode::Symbol(word[0].clone()),
        _ => RegexNode::Concat(word.iter().cloned().map(RegexNode::Symbol).collect()),
    }
}
