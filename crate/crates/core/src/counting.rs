//! Model counting (MC, GMC, FMC, FGMC), probabilistic evaluation (PQE and its
//! uniform restriction), and the interpolation reductions between them.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{to_naturals, vandermonde_solve};
use crate::lineage::{check_budget, Lineage};
use crate::query::{evaluate, Query};
use crate::rational::{binomial, format_rational, from_int, Rational};
use crate::relational::{
    apply_mapping, find_c_homomorphism, Fact, FactSet, PartitionedDatabase, ProbabilisticDatabase,
};

/// Default enumeration budget: `2^22` subsets.
pub const DEFAULT_BUDGET: u64 = 1 << 22;

/// `counts[j]` = number of generalized supports of size exactly `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountVector(pub Vec<BigUint>);

impl CountVector {
    pub fn zeros(n: usize) -> Self {
        CountVector(vec![BigUint::zero(); n + 1])
    }

    /// `[C(n,0), ..., C(n,n)]`: every subset counts.
    pub fn binomials(n: usize) -> Self {
        CountVector((0..=n).map(|j| binomial(n, j)).collect())
    }

    /// Number of players `n` (the vector has `n + 1` entries).
    pub fn n(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Entry `j`, zero out of range.
    pub fn get(&self, j: usize) -> BigUint {
        self.0.get(j).cloned().unwrap_or_default()
    }

    pub fn total(&self) -> BigUint {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[BigUint] {
        &self.0
    }

    /// Polynomial product of the generating functions.
    pub fn convolve(&self, other: &CountVector) -> CountVector {
        let mut out = CountVector::zeros(self.n() + other.n());
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.0.iter().enumerate() {
                out.0[i + j] += a * b;
            }
        }
        out
    }
}

impl fmt::Display for CountVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

/// How subsets are checked during enumeration. All strategies agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Test masks against the precomputed minimal supports.
    #[default]
    Lineage,
    /// Evaluate the query on every subset from scratch.
    Direct,
    /// Gray-code order with cached satisfaction and witness.
    GrayCode,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub budget: u64,
    pub strategy: Strategy,
}

impl Config {
    pub fn with_budget(budget: u64) -> Self {
        Config {
            budget,
            strategy: Strategy::default(),
        }
    }

    pub fn strategy(mut self, s: Strategy) -> Self {
        self.strategy = s;
        self
    }
}

impl Default for Config {
    /// Budget from `SHAPVAL_BUDGET` when set and valid.
    fn default() -> Self {
        let budget = std::env::var("SHAPVAL_BUDGET")
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .filter(|&b| b > 0)
            .unwrap_or(DEFAULT_BUDGET);
        Config::with_budget(budget)
    }
}

fn world(db: &PartitionedDatabase, facts: &[Fact], mask: u64) -> FactSet {
    let mut w = db.exo().clone();
    w.extend((0..facts.len()).filter(|i| mask >> i & 1 == 1).map(|i| facts[i].clone()));
    w
}

/// Parallel histogram of satisfying masks by popcount.
fn histogram<F: Fn(u64) -> bool + Sync>(n: usize, sat: F) -> CountVector {
    const CHUNK: u64 = 1 << 12;
    let total = 1u64 << n;
    let chunks = total.div_ceil(CHUNK);
    let hist: Vec<u64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut h = vec![0u64; n + 1];
            for mask in c * CHUNK..((c + 1) * CHUNK).min(total) {
                if sat(mask) {
                    h[mask.count_ones() as usize] += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0u64; n + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    CountVector(hist.into_iter().map(BigUint::from).collect())
}

/// Satisfaction witness for incremental checks: endogenous facts used by one
/// homomorphism. Regex queries carry no witness.
fn witness_mask(q: &Query, w: &FactSet, facts: &[Fact]) -> Option<u64> {
    let fixed = q.constants();
    for d in q.cq_disjuncts()? {
        if let Some(h) = find_c_homomorphism(&d.atoms, w, &fixed) {
            let mut m = 0u64;
            for a in &d.atoms {
                let f = apply_mapping(a, &h).expect("total mapping");
                if let Ok(i) = facts.binary_search(&f) {
                    m |= 1 << i;
                }
            }
            return Some(m);
        }
    }
    None
}

fn gray_code_counts(q: &Query, db: &PartitionedDatabase, facts: &[Fact]) -> CountVector {
    let n = facts.len();
    let mut counts = vec![0u64; n + 1];
    let mut mask = 0u64;
    let mut cur = world(db, facts, 0);
    let mut sat = evaluate(q, &cur);
    let mut wit = if sat { witness_mask(q, &cur, facts) } else { None };
    if sat {
        counts[0] += 1;
    }
    for step in 1u64..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        let adding = mask >> bit & 1 == 0;
        mask ^= 1 << bit;
        if adding {
            cur.insert(facts[bit].clone());
            if !sat {
                sat = evaluate(q, &cur);
                wit = if sat { witness_mask(q, &cur, facts) } else { None };
            }
        } else {
            cur.remove(&facts[bit]);
            if sat {
                let kept = matches!(wit, Some(w) if w >> bit & 1 == 0);
                if !kept {
                    sat = evaluate(q, &cur);
                    wit = if sat { witness_mask(q, &cur, facts) } else { None };
                }
            }
        }
        if sat {
            counts[mask.count_ones() as usize] += 1;
        }
    }
    CountVector(counts.into_iter().map(BigUint::from).collect())
}

/// `FGMC_j(q)(Dn, Dx)` for `j = 0..|Dn|`.
pub fn fgmc_vector(q: &Query, db: &PartitionedDatabase, cfg: &Config) -> Result<CountVector> {
    let n = db.endo().len();
    check_budget(n, cfg.budget)?;
    let facts: Vec<Fact> = db.endo().iter().cloned().collect();
    Ok(match cfg.strategy {
        Strategy::Lineage => {
            let l = Lineage::build(q, db, cfg.budget)?;
            if l.exogenous_satisfies() {
                return Ok(CountVector::binomials(n));
            }
            histogram(n, |m| l.satisfied(m))
        }
        Strategy::Direct => histogram(n, |m| evaluate(q, &world(db, &facts, m))),
        Strategy::GrayCode => gray_code_counts(q, db, &facts),
    })
}

/// `GMC(q)(Dn, Dx)`.
pub fn gmc(q: &Query, db: &PartitionedDatabase, cfg: &Config) -> Result<BigUint> {
    Ok(fgmc_vector(q, db, cfg)?.total())
}

/// `FGMC_j(q)(Dn, Dx)`; zero for `j > |Dn|`.
pub fn fgmc(q: &Query, db: &PartitionedDatabase, j: usize, cfg: &Config) -> Result<BigUint> {
    Ok(fgmc_vector(q, db, cfg)?.get(j))
}

/// `FMC_j(q)(D)` for every `j`: every fact is a player.
pub fn fmc_vector(q: &Query, facts: &FactSet, cfg: &Config) -> Result<CountVector> {
    let db = PartitionedDatabase::endogenous(facts.iter().cloned())?;
    fgmc_vector(q, &db, cfg)
}

/// `MC(q)(D)`: number of subsets of `D` satisfying `q`.
pub fn mc(q: &Query, facts: &FactSet, cfg: &Config) -> Result<BigUint> {
    Ok(fmc_vector(q, facts, cfg)?.total())
}

/// `Pr(q)` on a tuple-independent database. Worlds are explored depth first,
/// adding the mass of a whole subtree once the partial world satisfies `q`
/// and dropping it once even all remaining facts cannot.
pub fn pqe(q: &Query, pd: &ProbabilisticDatabase, cfg: &Config) -> Result<Rational> {
    let db = pd.partition();
    let n = db.endo().len();
    check_budget(n, cfg.budget)?;
    let l = Lineage::build(q, &db, cfg.budget)?;
    let probs: Vec<Rational> = l.facts().iter().map(|f| pd.facts()[f].clone()).collect();
    let full = if n == 0 { 0 } else { u64::MAX >> (64 - n) };
    fn go(l: &Lineage, probs: &[Rational], full: u64, i: usize, mask: u64, weight: Rational, acc: &mut Rational) {
        if l.satisfied(mask) {
            *acc += weight;
            return;
        }
        let remaining = full & !((1u64 << i) - 1);
        if i == probs.len() || !l.satisfied(mask | remaining) {
            return;
        }
        let p = &probs[i];
        go(l, probs, full, i + 1, mask | 1 << i, &weight * p, acc);
        go(l, probs, full, i + 1, mask, &weight * (Rational::one() - p), acc);
    }
    let mut acc = Rational::zero();
    go(&l, &probs, full, 0, 0, Rational::one(), &mut acc);
    Ok(acc)
}

fn check_open_unit(p: &Rational) -> Result<()> {
    if p <= &Rational::zero() || p >= &Rational::one() {
        return Err(Error::ProbabilityOutOfRange(format!(
            "{} is outside (0, 1); with p = 1 evaluate the query on Dn ∪ Dx instead",
            format_rational(p)
        )));
    }
    Ok(())
}

/// `Pr(D ⊨ q)` when every endogenous fact has probability `p` and every
/// exogenous fact probability 1: `Σ_j z^j counts[j] / (1+z)^n`, `z = p/(1-p)`.
pub fn sppqe_from_fgmc_vector(counts: &CountVector, p: &Rational) -> Result<Rational> {
    check_open_unit(p)?;
    let z = p / (Rational::one() - p);
    let mut num = Rational::zero();
    for c in counts.0.iter().rev() {
        num = num * &z + Rational::from_integer(c.clone().into());
    }
    let den = num_traits::pow(Rational::one() + &z, counts.n());
    Ok(num / den)
}

/// Recovers the count vector from `n + 1` calls to a probability oracle on
/// `D` with all endogenous facts at `p = z/(1+z)`, `z = 1..n+1`.
pub fn fgmc_vector_from_pqe<F>(db: &PartitionedDatabase, mut oracle: F) -> Result<CountVector>
where
    F: FnMut(&ProbabilisticDatabase) -> Result<Rational>,
{
    let n = db.endo().len();
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    for z in 1..=(n as i64 + 1) {
        let z = from_int(z);
        let p = &z / (Rational::one() + &z);
        let prob = oracle(&db.with_uniform_probability(&p))?;
        ys.push(prob * num_traits::pow(Rational::one() + &z, n));
        xs.push(z);
    }
    let coeffs = vandermonde_solve(&xs, &ys)?;
    Ok(CountVector(to_naturals(&coeffs, "interpolated count vector")?))
}

/// Count vector computed only through an oracle for databases without
/// exogenous facts, one exogenous fact at a time. Returns the vector and the
/// number of oracle calls, which is `2^|Dx|`.
pub fn fgmc_via_fmc<F>(db: &PartitionedDatabase, mut oracle: F) -> Result<(CountVector, usize)>
where
    F: FnMut(&FactSet) -> Result<CountVector>,
{
    let mut calls = 0usize;
    fn rec<F: FnMut(&FactSet) -> Result<CountVector>>(
        endo: &FactSet,
        exo: &FactSet,
        oracle: &mut F,
        calls: &mut usize,
    ) -> Result<CountVector> {
        let Some(alpha) = exo.iter().next().cloned() else {
            *calls += 1;
            let v = oracle(endo)?;
            if v.n() != endo.len() {
                return Err(Error::Oracle(format!(
                    "oracle returned {} entries for {} facts",
                    v.0.len(),
                    endo.len()
                )));
            }
            return Ok(v);
        };
        let mut rest = exo.clone();
        rest.remove(&alpha);
        let mut with = endo.clone();
        with.insert(alpha);
        let a = rec(&with, &rest, oracle, calls)?;
        let b = rec(endo, &rest, oracle, calls)?;
        let n = endo.len();
        let mut out = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let (x, y) = (a.get(j + 1), b.get(j + 1));
            if x < y {
                return Err(Error::Oracle("oracle counts are not monotone".into()));
            }
            out.push(x - y);
        }
        Ok(CountVector(out))
    }
    let v = rec(db.endo(), db.exo(), &mut oracle, &mut calls)?;
    Ok((v, calls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::rational::ratio;

    fn db(endo: &[(&str, &[&str])], exo: &[(&str, &[&str])]) -> PartitionedDatabase {
        PartitionedDatabase::new(
            endo.iter().map(|(r, a)| Fact::new(r, a)),
            exo.iter().map(|(r, a)| Fact::new(r, a)),
        )
        .unwrap()
    }

    fn cv(v: &[u32]) -> CountVector {
        CountVector(v.iter().map(|&x| BigUint::from(x)).collect())
    }

    fn all_strategies(q: &Query, d: &PartitionedDatabase) -> CountVector {
        let base = Config::with_budget(1 << 20);
        let a = fgmc_vector(q, d, &base).unwrap();
        let b = fgmc_vector(q, d, &base.clone().strategy(Strategy::Direct)).unwrap();
        let c = fgmc_vector(q, d, &base.strategy(Strategy::GrayCode)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        a
    }

    #[test]
    fn count_vectors() {
        let r = parse_query("R(x)").unwrap();
        let rst = parse_query("R(x), S(x,y), T(y)").unwrap();
        assert_eq!(all_strategies(&r, &db(&[("R", &["a"]), ("R", &["b"])], &[])), cv(&[0, 2, 1]));
        assert_eq!(
            all_strategies(&rst, &db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[])),
            cv(&[0, 0, 0, 1])
        );
        assert_eq!(
            all_strategies(&rst, &db(&[("R", &["a"]), ("T", &["b"])], &[("S", &["a", "b"])])).total(),
            BigUint::from(1u8)
        );
        assert_eq!(all_strategies(&r, &db(&[("T", &["a"])], &[("R", &["z0"])])), cv(&[1, 1]));
        assert_eq!(all_strategies(&r, &db(&[], &[])), cv(&[0]));
        let rpq = parse_query("path 'a' 'b' : A A*").unwrap();
        all_strategies(
            &rpq,
            &db(&[("A", &["a", "b"]), ("A", &["a", "c"]), ("A", &["c", "b"]), ("A", &["b", "a"])], &[]),
        );
    }

    #[test]
    fn pqe_examples() {
        let cfg = Config::default();
        let r = parse_query("R(x)").unwrap();
        let pd = ProbabilisticDatabase::new([(Fact::new("R", &["a"]), ratio(1, 2)), (Fact::new("R", &["b"]), ratio(1, 2))]).unwrap();
        assert_eq!(pqe(&r, &pd, &cfg).unwrap(), ratio(3, 4));
        let rst = parse_query("R(x), S(x,y), T(y)").unwrap();
        let pd = ProbabilisticDatabase::new([
            (Fact::new("R", &["a"]), ratio(1, 2)),
            (Fact::new("T", &["b"]), ratio(1, 2)),
            (Fact::new("S", &["a", "b"]), ratio(1, 1)),
        ])
        .unwrap();
        assert_eq!(pqe(&rst, &pd, &cfg).unwrap(), ratio(1, 4));
        let pd = ProbabilisticDatabase::new([(Fact::new("R", &["a"]), ratio(1, 1))]).unwrap();
        assert_eq!(pqe(&r, &pd, &cfg).unwrap(), ratio(1, 1));
    }

    #[test]
    fn sppqe_examples() {
        assert_eq!(sppqe_from_fgmc_vector(&cv(&[0, 2, 1]), &ratio(1, 2)).unwrap(), ratio(3, 4));
        assert_eq!(sppqe_from_fgmc_vector(&CountVector::binomials(5), &ratio(1, 3)).unwrap(), ratio(1, 1));
        assert_eq!(sppqe_from_fgmc_vector(&cv(&[0, 0]), &ratio(1, 3)).unwrap(), ratio(0, 1));
        assert!(sppqe_from_fgmc_vector(&cv(&[0, 1]), &ratio(1, 1)).is_err());
        assert!(sppqe_from_fgmc_vector(&cv(&[0, 1]), &ratio(0, 1)).is_err());
    }

    #[test]
    fn interpolation_from_pqe() {
        let cfg = Config::default();
        let q = parse_query("R(x), S(x,y)").unwrap();
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("S", &["a", "c"]), ("R", &["d"])], &[("S", &["d", "d"])]);
        let v = fgmc_vector_from_pqe(&d, |pd| pqe(&q, pd, &cfg)).unwrap();
        assert_eq!(v, fgmc_vector(&q, &d, &cfg).unwrap());
    }

    #[test]
    fn recursion_through_fmc() {
        let cfg = Config::default();
        let q = parse_query("R(x), S(x,y)").unwrap();
        let d = db(&[("R", &["a"])], &[("S", &["a", "b"])]);
        let (v, calls) = fgmc_via_fmc(&d, |f| fmc_vector(&q, f, &cfg)).unwrap();
        assert_eq!((v, calls), (cv(&[0, 1]), 2));
        let r = parse_query("R(x)").unwrap();
        let d = db(&[("R", &["a"])], &[("T", &["b"])]);
        assert_eq!(fgmc_via_fmc(&d, |f| fmc_vector(&r, f, &cfg)).unwrap().0, cv(&[0, 1]));
        let d = db(&[("R", &["a"]), ("R", &["b"])], &[]);
        assert_eq!(fgmc_via_fmc(&d, |f| fmc_vector(&r, f, &cfg)).unwrap(), (cv(&[0, 2, 1]), 1));
    }

    #[test]
    fn budget_is_enforced() {
        let q = parse_query("R(x)").unwrap();
        let facts: Vec<Fact> = (0..12).map(|i| Fact::new("R", &[format!("c{i}")])).collect();
        let d = PartitionedDatabase::endogenous(facts).unwrap();
        assert!(matches!(
            fgmc_vector(&q, &d, &Config::with_budget(1 << 10)),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn convolution() {
        assert_eq!(cv(&[1, 1]).convolve(&cv(&[1, 1])), cv(&[1, 2, 1]));
        assert_eq!(cv(&[0, 2, 1]).to_string(), "[0, 2, 1]");
    }
}
