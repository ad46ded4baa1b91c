//! Satisfaction of a query by a finite set of facts.

use std::collections::BTreeSet;

use super::{PathAtom, Query};
use crate::relational::{
    constants_of, find_c_homomorphism, Atom, Constant, ConstantSet, Fact, FactSet, Term,
};
use super::regex::EdgeIndex;

/// Reserved relation prefix for materialized path relations.
const PATH_PREFIX: &str = "__p";

/// `facts ⊨ q`.
pub fn evaluate(q: &Query, facts: &FactSet) -> bool {
    let fixed = q.constants();
    match q {
        Query::Cq(cq) => find_c_homomorphism(&cq.atoms, facts, &fixed).is_some(),
        Query::Ucq(ds) => ds
            .iter()
            .any(|d| find_c_homomorphism(&d.atoms, facts, &fixed).is_some()),
        Query::Rpq { path } => {
            let (Some(src), Some(dst)) = (path.src.as_const(), path.dst.as_const()) else {
                return evaluate_crpq(std::slice::from_ref(path), facts, &fixed);
            };
            let edges = EdgeIndex::new(facts);
            path.nfa().connects(src, dst, &edges)
        }
        Query::Crpq(c) => evaluate_crpq(&c.path_atoms, facts, &fixed),
        Query::Ucrpq(ds) => ds
            .iter()
            .any(|d| evaluate_crpq(&d.path_atoms, facts, &fixed)),
    }
}

/// Materializes each path atom as a binary relation over the active domain
/// and then looks for a homomorphism of the resulting conjunctive query.
fn evaluate_crpq(atoms: &[PathAtom], facts: &FactSet, fixed: &ConstantSet) -> bool {
    let mut domain: BTreeSet<Constant> = constants_of(facts);
    domain.extend(fixed.iter().cloned());
    let edges = EdgeIndex::new(facts);
    let mut target = FactSet::new();
    let mut source = Vec::with_capacity(atoms.len());
    for (i, p) in atoms.iter().enumerate() {
        let rel = format!("{PATH_PREFIX}{i}");
        let nfa = p.nfa();
        let sources: Vec<&Constant> = match &p.src {
            Term::Const(c) => vec![c],
            Term::Var(_) => domain.iter().collect(),
        };
        for u in sources {
            let mut reach = nfa.reachable_from(u, &edges);
            if nfa.accepts_empty() {
                reach.insert(u.clone());
            }
            for v in reach {
                target.insert(Fact {
                    relation: rel.as_str().into(),
                    args: vec![u.clone(), v],
                });
            }
        }
        source.push(Atom::new(&rel, vec![p.src.clone(), p.dst.clone()]));
    }
    find_c_homomorphism(&source, &target, fixed).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;

    fn db(facts: &[(&str, &[&str])]) -> FactSet {
        facts.iter().map(|(r, a)| Fact::new(r, a)).collect()
    }

    #[test]
    fn conjunctive_query_join() {
        let q = parse_query("R(x), S(x,y), T(y)").unwrap();
        assert!(evaluate(&q, &db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])])));
        assert!(!evaluate(&q, &db(&[("R", &["a"]), ("S", &["c", "b"]), ("T", &["b"])])));
    }

    #[test]
    fn constants_are_fixed() {
        let q = parse_query("R('a',x)").unwrap();
        assert!(!evaluate(&q, &db(&[("R", &["b", "c"])])));
        assert!(evaluate(&q, &db(&[("R", &["a", "c"])])));
    }

    #[test]
    fn star_accepts_empty_path() {
        let q = parse_query("path 'a' 'a' : A*").unwrap();
        assert!(evaluate(&q, &FactSet::new()));
        let q = parse_query("path 'a' 'b' : A*").unwrap();
        assert!(!evaluate(&q, &FactSet::new()));
        assert!(evaluate(&q, &db(&[("A", &["a", "c"]), ("A", &["c", "b"])])));
    }

    #[test]
    fn rpq_alternation() {
        let q = parse_query("path 'a' 'b' : (A B | B A)").unwrap();
        assert!(evaluate(&q, &db(&[("A", &["a", "m"]), ("B", &["m", "b"])])));
        assert!(evaluate(&q, &db(&[("B", &["a", "m"]), ("A", &["m", "b"])])));
        assert!(!evaluate(&q, &db(&[("A", &["a", "m"]), ("A", &["m", "b"])])));
    }

    #[test]
    fn crpq_with_variables() {
        let q = parse_query("path x 'a' : (A B | B A)").unwrap();
        assert!(evaluate(&q, &db(&[("A", &["b", "d"]), ("B", &["d", "a"])])));
        assert!(!evaluate(&q, &db(&[("A", &["b", "d"]), ("B", &["d", "c"])])));
        let q = parse_query("path x y : A, path y z : B").unwrap();
        assert!(evaluate(&q, &db(&[("A", &["1", "2"]), ("B", &["2", "3"])])));
        assert!(!evaluate(&q, &db(&[("A", &["1", "2"]), ("B", &["3", "4"])])));
        // Variables range over the active domain, so an empty path needs a constant.
        let q = parse_query("path x x : A*").unwrap();
        assert!(!evaluate(&q, &FactSet::new()));
        assert!(evaluate(&q, &db(&[("B", &["c", "d"])])));
    }

    #[test]
    fn unions() {
        let q = parse_query("R('a',x) | R('b',x)").unwrap();
        assert!(evaluate(&q, &db(&[("R", &["b", "z"])])));
        assert!(!evaluate(&q, &db(&[("R", &["c", "z"])])));
    }
}
