//! Shapley values in the query game over endogenous facts, plus the variant
//! in which the players are constants.

use num_bigint::BigUint;
use num_traits::Zero;
use rayon::prelude::*;

use crate::counting::{CountVector, Config};
use crate::error::{Error, Result};
use crate::lineage::{check_budget, Lineage};
use crate::query::{evaluate, Query};
use crate::rational::{factorial, ratio, shapley_weight, Rational};
use crate::relational::{Constant, ConstantSet, Fact, FactSet, PartitionedDatabase};

/// Largest player count for the permutation form.
pub const MAX_PERMUTATION_PLAYERS: usize = 9;

/// Shapley value of player `p` among `n` players, for the game whose wealth is
/// `sat(B) - sat(∅)` with `sat` monotone. Coalitions are bitmasks.
pub fn shapley_of_monotone_game<F>(n: usize, p: usize, sat: F) -> Rational
where
    F: Fn(u64) -> bool + Sync,
{
    assert!(p < n);
    let low = (1u64 << p) - 1;
    let others = 1u64 << (n - 1);
    const CHUNK: u64 = 1 << 12;
    let hist: Vec<u64> = (0..others.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut h = vec![0u64; n];
            for m in c * CHUNK..((c + 1) * CHUNK).min(others) {
                let b = (m & low) | ((m & !low) << 1);
                if !sat(b) && sat(b | 1 << p) {
                    h[m.count_ones() as usize] += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    hist.iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(m, &c)| shapley_weight(m, n) * Rational::from_integer(c.into()))
        .sum()
}

/// The cooperative game whose players are the endogenous facts and whose
/// wealth is `v(B) = [B ∪ Dx ⊨ q] - [Dx ⊨ q]`.
#[derive(Debug, Clone)]
pub struct QueryGame {
    pub q: Query,
    pub db: PartitionedDatabase,
}

impl QueryGame {
    pub fn new(q: Query, db: PartitionedDatabase) -> Self {
        QueryGame { q, db }
    }

    pub fn players(&self) -> &FactSet {
        self.db.endo()
    }

    /// `v(B)`, which is 0 or 1 for monotone queries.
    pub fn wealth(&self, coalition: &FactSet) -> Result<u8> {
        if let Some(f) = coalition.iter().find(|f| !self.db.endo().contains(*f)) {
            return Err(Error::NotEndogenous(f.clone()));
        }
        if evaluate(&self.q, self.db.exo()) {
            return Ok(0);
        }
        let mut w = self.db.exo().clone();
        w.extend(coalition.iter().cloned());
        Ok(evaluate(&self.q, &w) as u8)
    }

    fn index_of(&self, alpha: &Fact) -> Result<usize> {
        self.db
            .endo()
            .iter()
            .position(|f| f == alpha)
            .ok_or_else(|| Error::NotEndogenous(alpha.clone()))
    }

    fn lineage(&self, cfg: &Config) -> Result<Lineage> {
        let n = self.db.endo().len();
        check_budget(n.saturating_sub(1), cfg.budget)?;
        Lineage::build(&self.q, &self.db, cfg.budget)
    }
}

/// Average marginal contribution of `alpha` over all orderings of the players.
/// Exponential in a factorial; meant as a reference implementation.
pub fn shapley_permutations(g: &QueryGame, alpha: &Fact) -> Result<Rational> {
    let p = g.index_of(alpha)?;
    let facts: Vec<&Fact> = g.db.endo().iter().collect();
    let n = facts.len();
    if n > MAX_PERMUTATION_PLAYERS {
        return Err(Error::TooManyPlayers {
            what: "the permutation form",
            n,
            limit: MAX_PERMUTATION_PLAYERS,
        });
    }
    let sat: Vec<bool> = (0u64..1 << n)
        .map(|mask| {
            let mut w = g.db.exo().clone();
            w.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| facts[i].clone()));
            evaluate(&g.q, &w)
        })
        .collect();
    // Heap's algorithm over orderings of the player indices.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut hits: u64 = 0;
    let mut visit = |perm: &[usize]| {
        let mut prefix = 0u64;
        for &i in perm {
            if i == p {
                if !sat[prefix as usize] && sat[(prefix | 1 << p) as usize] {
                    hits += 1;
                }
                return;
            }
            prefix |= 1 << i;
        }
    };
    visit(&perm);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(ratio(BigUint::from(hits), factorial(n)))
}

/// Weighted sum over coalitions not containing `alpha`.
pub fn shapley_subsets(g: &QueryGame, alpha: &Fact, cfg: &Config) -> Result<Rational> {
    let l = g.lineage(cfg)?;
    let p = l.index_of(alpha).ok_or_else(|| Error::NotEndogenous(alpha.clone()))?;
    Ok(shapley_of_monotone_game(l.len(), p, |m| l.satisfied(m)))
}

/// Shapley values of every endogenous fact, in canonical order.
pub fn shapley_all(g: &QueryGame, cfg: &Config) -> Result<Vec<(Fact, Rational)>> {
    let l = g.lineage(cfg)?;
    Ok(l.facts()
        .iter()
        .enumerate()
        .map(|(p, f)| (f.clone(), shapley_of_monotone_game(l.len(), p, |m| l.satisfied(m))))
        .collect())
}

/// Shapley value from two count vectors: the game with `alpha` made exogenous
/// and the game with `alpha` deleted.
pub fn shapley_via_fgmc<F>(g: &QueryGame, alpha: &Fact, mut oracle: F) -> Result<Rational>
where
    F: FnMut(&PartitionedDatabase) -> Result<CountVector>,
{
    if !g.db.endo().contains(alpha) {
        return Err(Error::NotEndogenous(alpha.clone()));
    }
    let n = g.db.endo().len();
    let with = oracle(&g.db.with_exogenous(alpha))?;
    let without = oracle(&g.db.without(alpha))?;
    let mut sh = Rational::zero();
    for j in 0..n {
        let (a, b) = (with.get(j), without.get(j));
        let diff = Rational::from_integer(a.into()) - Rational::from_integer(b.into());
        if !diff.is_zero() {
            sh += shapley_weight(j, n) * diff;
        }
    }
    Ok(sh)
}

/// A fact of maximum Shapley value, the first one in canonical order on ties.
pub fn max_shapley(g: &QueryGame, cfg: &Config) -> Result<(Fact, Rational)> {
    let all = shapley_all(g, cfg)?;
    let mut best: Option<(Fact, Rational)> = None;
    for (f, v) in all {
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((f, v));
        }
    }
    best.ok_or(Error::NoPlayers)
}

/// Like `max_shapley`, but returns at once a fact `s` with `v({s}) = 1` when
/// there is one, since such a fact always attains the maximum.
pub fn max_shapley_fast(g: &QueryGame, cfg: &Config) -> Result<(Fact, Rational)> {
    let l = g.lineage(cfg)?;
    if l.is_empty() {
        return Err(Error::NoPlayers);
    }
    if !l.exogenous_satisfies() {
        if let Some(p) = (0..l.len()).find(|&p| l.satisfied(1 << p)) {
            let v = shapley_of_monotone_game(l.len(), p, |m| l.satisfied(m));
            return Ok((l.facts()[p].clone(), v));
        }
    }
    max_shapley(g, cfg)
}

/// Split of the constants into players `endo` and always-present `exo`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstantPartition {
    pub endo: ConstantSet,
    pub exo: ConstantSet,
}

impl ConstantPartition {
    pub fn new(endo: ConstantSet, exo: ConstantSet) -> Result<Self> {
        if let Some(c) = endo.intersection(&exo).next() {
            return Err(Error::Hypothesis(format!("constant {c} is both endogenous and exogenous")));
        }
        Ok(ConstantPartition { endo, exo })
    }

    /// Players `endo`; every other constant of `facts` is exogenous.
    pub fn for_database(facts: &FactSet, endo: ConstantSet) -> Self {
        let exo = crate::relational::constants_of(facts)
            .into_iter()
            .filter(|c| !endo.contains(c))
            .collect();
        ConstantPartition { endo, exo }
    }
}

/// `D|_C`: facts all of whose constants lie in `keep`.
pub fn induced(facts: &FactSet, keep: &ConstantSet) -> FactSet {
    facts
        .iter()
        .filter(|f| f.args.iter().all(|c| keep.contains(c)))
        .cloned()
        .collect()
}

/// Satisfaction of `D|_{C ∪ Cx}` for every `C ⊆ Cn`, indexed by bitmask over
/// the endogenous constants in canonical order. Constants outside `Cn ∪ Cx`
/// are never present.
fn constant_table(q: &Query, facts: &FactSet, cp: &ConstantPartition, cfg: &Config) -> Result<(Vec<Constant>, Vec<bool>)> {
    let players: Vec<Constant> = cp.endo.iter().cloned().collect();
    let n = players.len();
    check_budget(n, cfg.budget)?;
    let table = (0u64..1 << n)
        .into_par_iter()
        .map(|mask| {
            let mut keep = cp.exo.clone();
            keep.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| players[i].clone()));
            evaluate(q, &induced(facts, &keep))
        })
        .collect();
    Ok((players, table))
}

/// Shapley value of the constant `c` in the game over `Cn` with wealth
/// `[D|_{C ∪ Cx} ⊨ q] - [D|_{Cx} ⊨ q]`.
pub fn shapley_constants(q: &Query, facts: &FactSet, cp: &ConstantPartition, c: &Constant, cfg: &Config) -> Result<Rational> {
    let (players, table) = constant_table(q, facts, cp, cfg)?;
    let p = players
        .iter()
        .position(|x| x == c)
        .ok_or_else(|| Error::NotEndogenousConstant(c.clone()))?;
    Ok(shapley_of_monotone_game(players.len(), p, |m| table[m as usize]))
}

/// Number of `C ⊆ Cn` of each size with `D|_{C ∪ Cx} ⊨ q`.
pub fn fgmc_constants_vector(q: &Query, facts: &FactSet, cp: &ConstantPartition, cfg: &Config) -> Result<CountVector> {
    let (players, table) = constant_table(q, facts, cp, cfg)?;
    let mut out = CountVector::zeros(players.len());
    for (mask, &sat) in table.iter().enumerate() {
        if sat {
            out.0[(mask as u64).count_ones() as usize] += 1u32;
        }
    }
    Ok(out)
}

/// Entry `k` of `fgmc_constants_vector`; zero beyond `|Cn|`.
pub fn fgmc_constants(q: &Query, facts: &FactSet, cp: &ConstantPartition, k: usize, cfg: &Config) -> Result<BigUint> {
    Ok(fgmc_constants_vector(q, facts, cp, cfg)?.get(k))
}

/// Shapley value of a constant from two constant-count vectors: `c` made
/// exogenous, and `c` removed from the game.
pub fn shapley_constants_via_fgmc<F>(facts: &FactSet, cp: &ConstantPartition, c: &Constant, mut oracle: F) -> Result<Rational>
where
    F: FnMut(&FactSet, &ConstantPartition) -> Result<CountVector>,
{
    if !cp.endo.contains(c) {
        return Err(Error::NotEndogenousConstant(c.clone()));
    }
    let n = cp.endo.len();
    let mut rest = cp.endo.clone();
    rest.remove(c);
    let mut exo_with = cp.exo.clone();
    exo_with.insert(c.clone());
    let with = oracle(facts, &ConstantPartition::new(rest.clone(), exo_with)?)?;
    let dropped: FactSet = facts.iter().filter(|f| !f.mentions(c)).cloned().collect();
    let without = oracle(&dropped, &ConstantPartition::new(rest, cp.exo.clone())?)?;
    let mut sh = Rational::zero();
    for j in 0..n {
        let diff = Rational::from_integer(with.get(j).into()) - Rational::from_integer(without.get(j).into());
        if !diff.is_zero() {
            sh += shapley_weight(j, n) * diff;
        }
    }
    Ok(sh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::rational::{from_int, ratio};

    fn db(endo: &[(&str, &[&str])], exo: &[(&str, &[&str])]) -> PartitionedDatabase {
        PartitionedDatabase::new(
            endo.iter().map(|(r, a)| Fact::new(r, a)),
            exo.iter().map(|(r, a)| Fact::new(r, a)),
        )
        .unwrap()
    }

    fn three_ways(g: &QueryGame, f: &Fact) -> Rational {
        let cfg = Config::default();
        let a = shapley_permutations(g, f).unwrap();
        let b = shapley_subsets(g, f, &cfg).unwrap();
        let c = shapley_via_fgmc(g, f, |d| crate::counting::fgmc_vector(&g.q, d, &cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        a
    }

    #[test]
    fn star_and_branching() {
        let g = QueryGame::new(
            parse_query("R(x), S(x,y), T(y)").unwrap(),
            db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[]),
        );
        for f in g.players().clone() {
            assert_eq!(three_ways(&g, &f), ratio(1, 3));
        }
        let g = QueryGame::new(
            parse_query("R(x), S(x,y)").unwrap(),
            db(&[("R", &["a"]), ("S", &["a", "b"]), ("S", &["a", "c"])], &[]),
        );
        assert_eq!(three_ways(&g, &Fact::new("R", &["a"])), ratio(2, 3));
        assert_eq!(three_ways(&g, &Fact::new("S", &["a", "b"])), ratio(1, 6));
        assert_eq!(max_shapley(&g, &Config::default()).unwrap(), (Fact::new("R", &["a"]), ratio(2, 3)));
    }

    #[test]
    fn wealth_examples() {
        let g = QueryGame::new(
            parse_query("R(x), S(x,y), T(y)").unwrap(),
            db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[]),
        );
        assert_eq!(g.wealth(&g.db.endo().clone()).unwrap(), 1);
        assert_eq!(g.wealth(&FactSet::new()).unwrap(), 0);
        assert!(g.wealth(&[Fact::new("U", &["a"])].into_iter().collect()).is_err());
        let g = QueryGame::new(parse_query("R(x)").unwrap(), db(&[("R", &["b"])], &[("R", &["a"])]));
        assert_eq!(g.wealth(&g.db.endo().clone()).unwrap(), 0);
        assert_eq!(three_ways(&g, &Fact::new("R", &["b"])), from_int(0));
    }

    #[test]
    fn max_shapley_ties_and_singletons() {
        let cfg = Config::default();
        let g = QueryGame::new(
            parse_query("R(x), S(x,y), T(y)").unwrap(),
            db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[]),
        );
        assert_eq!(max_shapley(&g, &cfg).unwrap(), (Fact::new("R", &["a"]), ratio(1, 3)));
        let g = QueryGame::new(parse_query("R(x)").unwrap(), db(&[("R", &["a"]), ("T", &["b"])], &[]));
        assert_eq!(max_shapley(&g, &cfg).unwrap(), (Fact::new("R", &["a"]), ratio(1, 1)));
        assert_eq!(max_shapley_fast(&g, &cfg).unwrap(), (Fact::new("R", &["a"]), ratio(1, 1)));
        let g = QueryGame::new(parse_query("R(x)").unwrap(), db(&[], &[]));
        assert!(matches!(max_shapley(&g, &cfg), Err(Error::NoPlayers)));
    }

    #[test]
    fn constants_game() {
        let cfg = Config::default();
        let q = parse_query("Pub(x,y), Kw(y,'s')").unwrap();
        let d: FactSet = [Fact::new("Pub", &["a", "p"]), Fact::new("Kw", &["p", "s"])].into_iter().collect();
        let cp = ConstantPartition::for_database(&d, [Constant::new("a")].into_iter().collect());
        assert_eq!(shapley_constants(&q, &d, &cp, &Constant::new("a"), &cfg).unwrap(), from_int(1));
        let d: FactSet = [Fact::new("Pub", &["a", "p"]), Fact::new("Pub", &["b", "p"]), Fact::new("Kw", &["p", "s"])]
            .into_iter()
            .collect();
        let cp = ConstantPartition::for_database(&d, ["a", "b"].iter().map(Constant::new).collect());
        for c in ["a", "b"] {
            let c = Constant::new(c);
            assert_eq!(shapley_constants(&q, &d, &cp, &c, &cfg).unwrap(), ratio(1, 2));
            let via = shapley_constants_via_fgmc(&d, &cp, &c, |f, p| fgmc_constants_vector(&q, f, p, &cfg)).unwrap();
            assert_eq!(via, ratio(1, 2));
        }
        assert_eq!(fgmc_constants(&q, &d, &cp, 1, &cfg).unwrap(), BigUint::from(2u8));
        assert_eq!(fgmc_constants(&q, &d, &cp, 0, &cfg).unwrap(), BigUint::from(0u8));
        assert_eq!(fgmc_constants(&q, &d, &cp, 5, &cfg).unwrap(), BigUint::from(0u8));
        let d2: FactSet = d.iter().cloned().chain([Fact::new("Pub", &["z", "w"])]).collect();
        let cp = ConstantPartition::for_database(&d2, ["a", "b", "z"].iter().map(Constant::new).collect());
        assert_eq!(shapley_constants(&q, &d2, &cp, &Constant::new("z"), &cfg).unwrap(), from_int(0));
    }
}
