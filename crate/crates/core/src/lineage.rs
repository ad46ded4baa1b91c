//! Why-provenance of a query over the endogenous facts of a database: the
//! minimal generalized supports, as bitmasks over a canonical fact order.

use crate::error::{Error, Result};
use crate::query::{evaluate, Query};
use crate::relational::{apply_mapping, for_each_c_homomorphism, Fact, FactSet, PartitionedDatabase};

/// Largest number of players a bitmask can index.
pub const MAX_PLAYERS: usize = 63;

fn is_subset(s: u64, of: u64) -> bool {
    s & of == s
}

/// Fails unless `2^n` subsets fit in `budget`.
pub fn check_budget(n: usize, budget: u64) -> Result<()> {
    if n > MAX_PLAYERS || (1u128 << n) > budget as u128 {
        return Err(Error::BudgetExceeded {
            exponent: n,
            budget,
        });
    }
    Ok(())
}

/// Monotone DNF over the endogenous facts: `B ∪ Dx ⊨ q` iff some minimal mask is
/// contained in `B`.
#[derive(Debug, Clone)]
pub struct Lineage {
    facts: Vec<Fact>,
    minimal: Vec<u64>,
}

impl Lineage {
    pub fn build(q: &Query, db: &PartitionedDatabase, budget: u64) -> Result<Self> {
        let facts: Vec<Fact> = db.endo().iter().cloned().collect();
        if facts.len() > MAX_PLAYERS {
            return Err(Error::TooManyPlayers {
                what: "lineage",
                n: facts.len(),
                limit: MAX_PLAYERS,
            });
        }
        let masks = match q.cq_disjuncts() {
            Some(ds) => {
                let all = db.all_facts();
                let fixed = q.constants();
                let mut masks = Vec::new();
                for d in ds {
                    for_each_c_homomorphism(&d.atoms, &all, &fixed, |h| {
                        let mut mask = 0u64;
                        for a in &d.atoms {
                            let f = apply_mapping(a, h).expect("homomorphisms are total");
                            if let Ok(i) = facts.binary_search(&f) {
                                mask |= 1 << i;
                            }
                        }
                        masks.push(mask);
                        false
                    });
                }
                minimize(masks)
            }
            None => Self::enumerate(q, db, &facts, budget)?,
        };
        Ok(Lineage {
            facts,
            minimal: masks,
        })
    }

    /// Regex queries: scan subsets of the facts that use the query's alphabet,
    /// in numeric order. Every proper subset of a mask is numerically smaller,
    /// so a satisfying mask with no earlier support inside it is minimal.
    fn enumerate(q: &Query, db: &PartitionedDatabase, facts: &[Fact], budget: u64) -> Result<Vec<u64>> {
        let alphabet = q.relations();
        let candidates: Vec<usize> = (0..facts.len())
            .filter(|&i| alphabet.contains(&facts[i].relation))
            .collect();
        check_budget(candidates.len(), budget)?;
        let mut found: Vec<u64> = Vec::new();
        for local in 0u64..(1u64 << candidates.len()) {
            if found.iter().any(|&s| is_subset(s, local)) {
                continue;
            }
            let mut world: FactSet = db.exo().clone();
            for (k, &i) in candidates.iter().enumerate() {
                if local >> k & 1 == 1 {
                    world.insert(facts[i].clone());
                }
            }
            if evaluate(q, &world) {
                found.push(local);
            }
        }
        Ok(found
            .into_iter()
            .map(|local| {
                candidates
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| local >> k & 1 == 1)
                    .fold(0u64, |m, (_, &i)| m | 1 << i)
            })
            .collect())
    }

    /// Endogenous facts in canonical order; bit `i` of a mask is `facts()[i]`.
    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn index_of(&self, fact: &Fact) -> Option<usize> {
        self.facts.binary_search(fact).ok()
    }

    /// Minimal generalized supports as masks, in increasing numeric order.
    pub fn minimal_masks(&self) -> &[u64] {
        &self.minimal
    }

    /// `Dx ⊨ q`.
    pub fn exogenous_satisfies(&self) -> bool {
        self.minimal.first() == Some(&0)
    }

    /// `B ∪ Dx ⊨ q` for the subset `B` encoded by `mask`.
    pub fn satisfied(&self, mask: u64) -> bool {
        self.minimal.iter().any(|&s| is_subset(s, mask))
    }

    pub fn mask_of<'a>(&self, facts: impl IntoIterator<Item = &'a Fact>) -> Option<u64> {
        facts
            .into_iter()
            .try_fold(0u64, |m, f| self.index_of(f).map(|i| m | 1 << i))
    }

    pub fn facts_of(&self, mask: u64) -> FactSet {
        (0..self.facts.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| self.facts[i].clone())
            .collect()
    }

    /// The minimal generalized supports as fact sets.
    pub fn minimal_supports(&self) -> Vec<FactSet> {
        self.minimal.iter().map(|&m| self.facts_of(m)).collect()
    }
}

/// Keeps the inclusion-minimal masks in sorted order.
pub fn minimize(mut masks: Vec<u64>) -> Vec<u64> {
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks.dedup();
    let mut out: Vec<u64> = Vec::new();
    for m in masks {
        if !out.iter().any(|&s| is_subset(s, m)) {
            out.push(m);
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;

    fn db(endo: &[(&str, &[&str])], exo: &[(&str, &[&str])]) -> PartitionedDatabase {
        PartitionedDatabase::new(
            endo.iter().map(|(r, a)| Fact::new(r, a)),
            exo.iter().map(|(r, a)| Fact::new(r, a)),
        )
        .unwrap()
    }

    #[test]
    fn star_has_one_support() {
        let q = parse_query("R(x), S(x,y), T(y)").unwrap();
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"]), ("R", &["c"])], &[]);
        let l = Lineage::build(&q, &d, 1 << 20).unwrap();
        assert_eq!(l.minimal_supports().len(), 1);
        assert!(!l.satisfied(l.mask_of([&Fact::new("R", &["a"])]).unwrap()));
        assert!(l.satisfied((1 << l.len()) - 1));
    }

    #[test]
    fn exogenous_support_gives_empty_mask() {
        let q = parse_query("R(x)").unwrap();
        let d = db(&[("T", &["a"])], &[("R", &["z"])]);
        let l = Lineage::build(&q, &d, 1 << 20).unwrap();
        assert!(l.exogenous_satisfies());
        assert_eq!(l.minimal_masks(), &[0]);
    }

    #[test]
    fn regex_lineage_matches_cq_lineage() {
        let rpq = parse_query("path x y : A B").unwrap();
        let cq = parse_query("A(x,z), B(z,y)").unwrap();
        let d = db(
            &[("A", &["1", "2"]), ("B", &["2", "3"]), ("A", &["3", "2"]), ("B", &["1", "1"]), ("C", &["1", "2"])],
            &[("A", &["1", "1"])],
        );
        let a = Lineage::build(&rpq, &d, 1 << 20).unwrap();
        let b = Lineage::build(&cq, &d, 1 << 20).unwrap();
        assert_eq!(a.minimal_masks(), b.minimal_masks());
    }

    #[test]
    fn minimize_drops_supersets() {
        assert_eq!(minimize(vec![0b111, 0b011, 0b100, 0b011]), vec![0b011, 0b100]);
    }

    #[test]
    fn budget() {
        assert!(check_budget(10, 1024).is_ok());
        assert!(check_budget(11, 1024).is_err());
    }
}
