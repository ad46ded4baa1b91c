//! Reductions from fixed-size generalized model counting to Shapley values.
//! A support of the query is copied into gadget databases `A^i`, and the
//! oracle answers on them determine the counts through a factorial system.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use num_traits::{One, Zero};

use crate::analyzer::{decompose, find_island_support, find_q_leak, is_variable_connected_query};
use crate::counting::{sppqe_from_fgmc_vector, CountVector};
use crate::error::{Error, Result};
use crate::linalg::{solve, to_naturals, vandermonde_solve};
use crate::query::{evaluate, Query};
use crate::rational::{binomial, factorial, format_rational, from_int, ratio, shapley_weight, Rational};
use crate::relational::{
    components_by, constants_of, rename_facts, Atom, Constant, ConstantSet, Fact, FactSet,
    FreshConstants, PartitionedDatabase, Renaming, Term,
};
use crate::shapley::{induced, ConstantPartition};
use crate::supports::{canonical_supports, is_minimal_support, is_relevant_fact};

/// Which hypotheses the reduction relies on.
#[derive(Debug, Clone)]
pub enum Mode {
    /// `q` has a certified island minimal support.
    PseudoConnected,
    /// Shapley values are asked for `q ∧ q'`; `s_prime` is a minimal support of `q'`.
    Leak { q_prime: Query, s_prime: FactSet },
    /// `q` splits as `q1 ∧ q2` with fact-disjoint minimal supports.
    Decomposable,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::PseudoConnected => f.write_str("pseudo-connected"),
            Mode::Leak { q_prime, .. } => write!(f, "leak with q' = {q_prime}"),
            Mode::Decomposable => f.write_str("decomposable"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Word-length bound for regex queries; defaults per query.
    pub bound: Option<usize>,
    /// Duplicate a constant that occurs in a single fact, so that no
    /// exogenous fact is added beyond those of `S'`.
    pub endogenous_only: bool,
    /// Allow query constants where only a sketch of the argument exists.
    pub experimental: bool,
}

/// Closed form of the Case 1 and Case 2 mass: with `N = n + i + 1 + t`
/// players, exactly `C(N-1, m) - C(n, m-t)` coalitions of size `m` avoid
/// Case 3 and the contributing cases.
pub fn compute_z(i: usize, n_endo: usize, tail: usize) -> Rational {
    let big_n = n_endo + i + 1 + tail;
    let mut z = Rational::zero();
    for m in 0..big_n {
        let all = binomial(big_n - 1, m);
        let full_tail = if m >= tail { binomial(n_endo, m - tail) } else { Default::default() };
        let count = all - full_tail;
        if !count.is_zero() {
            z += shapley_weight(m, big_n) * Rational::from_integer(count.into());
        }
    }
    z
}

/// Same quantity by enumerating coalitions over `n` database facts, `i` pivot
/// copies and `t` tail facts.
fn z_by_enumeration(i: usize, n_endo: usize, tail: usize) -> Rational {
    let others = n_endo + i + tail;
    let big_n = others + 1;
    let copies = ((1u64 << i) - 1) << n_endo;
    let tail_mask = ((1u64 << tail) - 1) << (n_endo + i);
    let mut z = Rational::zero();
    for b in 0u64..(1 << others) {
        let case1 = b & copies != 0;
        let case2 = !case1 && b & tail_mask != tail_mask;
        if case1 || case2 {
            z += shapley_weight(b.count_ones() as usize, big_n);
        }
    }
    z
}

/// Checks the closed form of `Z` against enumeration for every `N ≤ 12`.
/// Runs once per process.
pub fn z_self_test() -> Result<()> {
    static CHECK: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    CHECK
        .get_or_init(|| {
            for big_n in 1..=12usize {
                for i in 0..big_n {
                    for t in 0..big_n - i {
                        let n = big_n - 1 - i - t;
                        if compute_z(i, n, t) != z_by_enumeration(i, n, t) {
                            return Err(format!("closed form of Z disagrees at i={i}, n={n}, t={t}"));
                        }
                    }
                }
            }
            Ok(())
        })
        .clone()
        .map_err(Error::Construction)
}

/// The values `Sh^0..Sh^n` of a reduction run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShSeries {
    pub values: Vec<Rational>,
    pub n_endo: usize,
    pub tail_size: usize,
}

/// `(j+t)!(n+i-j)!/(n+i+t+1)!`.
pub fn factorial_coefficient(i: usize, j: usize, n: usize, t: usize) -> Rational {
    ratio(factorial(j + t) * factorial(n + i - j), factorial(n + i + t + 1))
}

fn factorial_matrix(n: usize, t: usize) -> Vec<Vec<Rational>> {
    (0..=n)
        .map(|i| (0..=n).map(|j| factorial_coefficient(i, j, n, t)).collect())
        .collect()
}

/// `Sh^i = Σ_j (j+t)!(n+i-j)!/(n+i+t+1)! · counts[j]` for `i = 0..n`.
pub fn forward_encode(counts: &CountVector, tail_size: usize) -> ShSeries {
    let n = counts.n();
    let m = factorial_matrix(n, tail_size);
    let values = m
        .iter()
        .map(|row| {
            row.iter()
                .zip(&counts.0)
                .map(|(c, x)| c * Rational::from_integer(x.clone().into()))
                .sum()
        })
        .collect();
    ShSeries {
        values,
        n_endo: n,
        tail_size,
    }
}

/// Inverts `forward_encode`. The solution must consist of natural numbers.
pub fn solve_factorial_system(series: &ShSeries) -> Result<CountVector> {
    let n = series.n_endo;
    if series.values.len() != n + 1 {
        return Err(Error::Construction(format!(
            "expected {} values of Sh^i, got {}",
            n + 1,
            series.values.len()
        )));
    }
    let x = solve(factorial_matrix(n, series.tail_size), series.values.clone())?;
    Ok(CountVector(to_naturals(&x, "factorial system solution")?))
}

/// Result of normalizing an input database.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub db: PartitionedDatabase,
    /// Set when `Dx ⊨ q`: every subset counts.
    pub shortcut: Option<CountVector>,
    /// Endogenous facts dropped because they also belong to `S'`.
    pub removed_endogenous: usize,
    pub renaming: Renaming,
}

/// Ensures `Dx ⊭ q`, `const(D) ∩ const(S') ⊆ C` and `D ∩ S' = ∅`.
pub fn normalize_instance(q: &Query, q_prime: Option<&Query>, s_prime: &FactSet, db: &PartitionedDatabase) -> Normalized {
    if evaluate(q, db.exo()) {
        return Normalized {
            db: db.clone(),
            shortcut: Some(CountVector::binomials(db.endo().len())),
            removed_endogenous: 0,
            renaming: Renaming::new(),
        };
    }
    let c = q.constants();
    let sp_consts = constants_of(s_prime);
    let mut avoid = db.constants();
    avoid.extend(sp_consts.iter().cloned());
    avoid.extend(c.iter().cloned());
    if let Some(qp) = q_prime {
        avoid.extend(qp.constants());
    }
    let mut fresh = FreshConstants::avoiding(&avoid);
    let renaming: Renaming = db
        .constants()
        .into_iter()
        .filter(|k| sp_consts.contains(k) && !c.contains(k))
        .map(|k| (k, fresh.fresh()))
        .collect();
    let endo = rename_facts(db.endo(), &renaming);
    let exo = rename_facts(db.exo(), &renaming);
    let removed_endogenous = endo.intersection(s_prime).count();
    let db = PartitionedDatabase::new(
        endo.difference(s_prime).cloned(),
        exo.difference(s_prime).cloned(),
    )
    .expect("renaming preserves the partition");
    Normalized {
        db,
        shortcut: None,
        removed_endogenous,
        renaming,
    }
}

/// `D' = (Dn, Dx ∪ S')`.
pub fn complete_with_support(db: &PartitionedDatabase, s_prime: &FactSet) -> Result<PartitionedDatabase> {
    if let Some(f) = s_prime.iter().find(|f| db.contains(f)) {
        return Err(Error::Construction(format!("{f} is already in the database; normalize first")));
    }
    Ok(PartitionedDatabase::new(
        db.endo().iter().cloned(),
        db.exo().iter().chain(s_prime).cloned(),
    )?)
}

/// The support split used by the construction: `S^0` (facts with `a`), the
/// pivot `μ ∈ S^0`, the tail `S^-`, and copies of `S^0` with `a` replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub a: Constant,
    /// `S^0, S^1, ..., S^i`.
    pub copies: Vec<FactSet>,
    pub tail: FactSet,
    pub pivot: Fact,
    /// `μ^1..μ^i`.
    pub pivot_copies: Vec<Fact>,
}

fn replace_constant(f: &Fact, from: &Constant, to: &Constant) -> Fact {
    Fact {
        relation: f.relation.clone(),
        args: f.args.iter().map(|c| if c == from { to.clone() } else { c.clone() }).collect(),
    }
}

/// Splits `S` on a constant `a ∉ C ∪ C'` and makes `i` copies of `S^0`.
/// With `endogenous_only`, `a` must occur in exactly one fact. Fresh names
/// avoid `avoid` and `const(S)`.
pub fn duplicate_support(
    s: &FactSet,
    fixed: &ConstantSet,
    i: usize,
    endogenous_only: bool,
    avoid: &ConstantSet,
) -> Result<Fragment> {
    let consts = constants_of(s);
    let occurrences = |c: &Constant| s.iter().filter(|f| f.mentions(c)).count();
    let eligible: Vec<&Constant> = consts.iter().filter(|c| !fixed.contains(*c)).collect();
    let a = if endogenous_only {
        eligible.iter().find(|c| occurrences(c) == 1).copied()
    } else {
        eligible.first().copied()
    };
    let Some(a) = a.cloned() else {
        let counts: Vec<String> = eligible.iter().map(|c| format!("{c} in {} facts", occurrences(c))).collect();
        return Err(Error::Hypothesis(if eligible.is_empty() {
            "every constant of the support is a query constant".into()
        } else {
            format!("no constant occurs in exactly one fact of the support ({})", counts.join(", "))
        }));
    };
    let s0: FactSet = s.iter().filter(|f| f.mentions(&a)).cloned().collect();
    let tail: FactSet = s.iter().filter(|f| !f.mentions(&a)).cloned().collect();
    let pivot = s0.iter().next().expect("a occurs in S").clone();
    let mut fresh = FreshConstants::avoiding(avoid.iter().chain(consts.iter()).chain(fixed.iter()));
    let mut copies = vec![s0.clone()];
    let mut pivot_copies = Vec::with_capacity(i);
    for _ in 0..i {
        let b = fresh.fresh();
        copies.push(s0.iter().map(|f| replace_constant(f, &a, &b)).collect());
        pivot_copies.push(replace_constant(&pivot, &a, &b));
    }
    Ok(Fragment {
        a,
        copies,
        tail,
        pivot,
        pivot_copies,
    })
}

/// The third case of the marginal analysis: `q` holds on the database part
/// (or fails, for decompositions).
#[derive(Debug, Clone)]
pub struct CaseTest {
    pub query: Query,
    pub contributes_when_satisfied: bool,
}

/// One gadget database `A^i` together with the pieces it was built from.
#[derive(Debug, Clone)]
pub struct ReductionInstance {
    /// `D'`: the normalized database with `S'` added as exogenous facts.
    pub base: PartitionedDatabase,
    /// Original exogenous facts, used by the case analysis.
    pub exo_original: FactSet,
    pub fragment: Fragment,
    pub i: usize,
    pub fixed: ConstantSet,
    pub case3: CaseTest,
}

/// `A^i`: endogenous `Dn ∪ {μ, μ^1..μ^i} ∪ S^-`, everything else exogenous.
pub fn assemble_ai(base: &PartitionedDatabase, fragment: &Fragment, fixed: &ConstantSet) -> Result<PartitionedDatabase> {
    let i = fragment.pivot_copies.len();
    let base_consts = base.constants();
    for (k, copy) in fragment.copies.iter().enumerate() {
        let part: ConstantSet = constants_of(copy.iter().chain(&fragment.tail));
        if let Some(c) = part.intersection(&base_consts).find(|c| !fixed.contains(*c)) {
            return Err(Error::Construction(format!("copy {k} of the support shares constant {c} with the database")));
        }
    }
    let mut endo: FactSet = base.endo().clone();
    endo.insert(fragment.pivot.clone());
    endo.extend(fragment.pivot_copies.iter().cloned());
    endo.extend(fragment.tail.iter().cloned());
    let mut exo: FactSet = base.exo().clone();
    for k in 0..=i {
        let mu = if k == 0 { &fragment.pivot } else { &fragment.pivot_copies[k - 1] };
        exo.extend(fragment.copies[k].iter().filter(|f| *f != mu).cloned());
    }
    let expected = base.endo().len() + 1 + i + fragment.tail.len();
    let db = PartitionedDatabase::new(endo, exo).map_err(|e| Error::Construction(e.to_string()))?;
    if db.endo().len() != expected {
        return Err(Error::Construction("gadget facts collide with database facts".into()));
    }
    Ok(db)
}

impl ReductionInstance {
    pub fn assemble(&self) -> Result<PartitionedDatabase> {
        assemble_ai(&self.base, &self.fragment, &self.fixed)
    }

    pub fn pivot(&self) -> &Fact {
        &self.fragment.pivot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalCase {
    /// Some pivot copy is present.
    Case1,
    /// No pivot copy, and some tail fact is missing.
    Case2,
    /// The database part already decides the query.
    Case3,
    /// Adding the pivot changes the outcome.
    Contributes,
}

/// Classifies a coalition `B ⊆ A^i_n ∖ {μ}` by the case analysis.
pub fn marginal_case(inst: &ReductionInstance, b: &FactSet) -> MarginalCase {
    if inst.fragment.pivot_copies.iter().any(|m| b.contains(m)) {
        return MarginalCase::Case1;
    }
    if !inst.fragment.tail.is_subset(b) {
        return MarginalCase::Case2;
    }
    let mut w: FactSet = b.intersection(inst.base.endo()).cloned().collect();
    w.extend(inst.exo_original.iter().cloned());
    if evaluate(&inst.case3.query, &w) != inst.case3.contributes_when_satisfied {
        return MarginalCase::Case3;
    }
    MarginalCase::Contributes
}

/// Enumerates every coalition `B ⊆ A^i_n ∖ {μ}` and compares the case
/// analysis with the actual marginal contribution of `μ` for `q_eval`.
/// Returns the first coalition where they disagree.
pub fn validate_marginal_cases(q_eval: &Query, inst: &ReductionInstance) -> Result<Option<(FactSet, MarginalCase, u8)>> {
    let a = inst.assemble()?;
    let mu = inst.pivot();
    let others: Vec<&Fact> = a.endo().iter().filter(|f| *f != mu).collect();
    if others.len() >= 20 {
        return Err(Error::TooManyPlayers {
            what: "exhaustive case validation",
            n: others.len(),
            limit: 19,
        });
    }
    for mask in 0u64..(1 << others.len()) {
        let b: FactSet = others.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, f)| (*f).clone()).collect();
        let mut with = b.clone();
        with.extend(a.exo().iter().cloned());
        let before = evaluate(q_eval, &with);
        with.insert(mu.clone());
        let after = evaluate(q_eval, &with);
        let marginal = u8::from(after) - u8::from(before);
        let case = marginal_case(inst, &b);
        if (case == MarginalCase::Contributes) != (marginal == 1) {
            return Ok(Some((b, case, marginal)));
        }
    }
    Ok(None)
}

/// `Σ |B|!(N-|B|-1)!/N!` over coalitions in Case 3, by enumeration.
pub fn case3_mass(inst: &ReductionInstance) -> Result<Rational> {
    let a = inst.assemble()?;
    let mu = inst.pivot();
    let others: Vec<&Fact> = a.endo().iter().filter(|f| *f != mu).collect();
    if others.len() >= 20 {
        return Err(Error::TooManyPlayers {
            what: "exhaustive case validation",
            n: others.len(),
            limit: 19,
        });
    }
    let big_n = others.len() + 1;
    let mut total = Rational::zero();
    for mask in 0u64..(1 << others.len()) {
        let b: FactSet = others.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, f)| (*f).clone()).collect();
        if marginal_case(inst, &b) == MarginalCase::Case3 {
            total += shapley_weight(b.len(), big_n);
        }
    }
    Ok(total)
}

/// One oracle round of a reduction.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub label: String,
    pub i: usize,
    pub database: PartitionedDatabase,
    pub pivot: Fact,
    pub oracle: Rational,
    pub z: Rational,
    pub sh: Rational,
    /// Query handed to the oracle.
    pub query: Query,
    pub instance: ReductionInstance,
}

#[derive(Debug, Clone)]
pub struct ReductionReport {
    pub vector: CountVector,
    pub oracle_calls: usize,
    pub notes: Vec<String>,
    pub steps: Vec<TraceStep>,
}

impl ReductionReport {
    /// Every gadget database in the text format with the numbers derived from it.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        for s in &self.steps {
            out.push_str(&format!("# {} i={} pivot={}\n", s.label, s.i, s.pivot));
            out.push_str(&s.database.to_text());
            out.push_str(&format!(
                "# oracle={} Z={} Sh^i={}\n",
                format_rational(&s.oracle),
                format_rational(&s.z),
                format_rational(&s.sh)
            ));
        }
        out
    }
}

struct Run<'a, F> {
    oracle: &'a mut F,
    calls: usize,
    notes: Vec<String>,
    steps: Vec<TraceStep>,
}

impl<F> Run<'_, F>
where
    F: FnMut(&Query, &PartitionedDatabase, &Fact) -> Result<Rational>,
{
    /// Builds `A^0..A^n`, queries the oracle on the pivot, and solves for the
    /// counts of coalitions falling in Case 3.
    #[allow(clippy::too_many_arguments)]
    fn gadget_counts(
        &mut self,
        label: &str,
        q_eval: &Query,
        base: &PartitionedDatabase,
        exo_original: &FactSet,
        support: &FactSet,
        fixed: &ConstantSet,
        case3: CaseTest,
        endogenous_only: bool,
    ) -> Result<CountVector> {
        let n = base.endo().len();
        let mut avoid = base.constants();
        avoid.extend(fixed.iter().cloned());
        avoid.extend(q_eval.constants());
        // Rename S apart from D' while keeping C.
        let mut fresh = FreshConstants::avoiding(&avoid);
        let renaming: Renaming = constants_of(support)
            .into_iter()
            .filter(|c| !fixed.contains(c))
            .map(|c| (c, fresh.fresh()))
            .collect();
        let s = rename_facts(support, &renaming);
        avoid.extend(constants_of(&s));
        let mut values = Vec::with_capacity(n + 1);
        let mut tail = 0;
        for i in 0..=n {
            let fragment = duplicate_support(&s, fixed, i, endogenous_only, &avoid)?;
            if i == 0 {
                tail = fragment.tail.len();
                self.notes.push(format!(
                    "{label}: support {} split on {} with pivot {} and tail of {} facts",
                    crate::relational::format_fact_set(&s),
                    fragment.a,
                    fragment.pivot,
                    tail
                ));
            }
            let inst = ReductionInstance {
                base: base.clone(),
                exo_original: exo_original.clone(),
                fragment,
                i,
                fixed: fixed.clone(),
                case3: case3.clone(),
            };
            let db = inst.assemble()?;
            self.calls += 1;
            let answer = (self.oracle)(q_eval, &db, inst.pivot())?;
            let z = compute_z(i, n, tail);
            let sh = Rational::one() - &answer - &z;
            values.push(sh.clone());
            self.steps.push(TraceStep {
                label: label.to_string(),
                i,
                database: db,
                pivot: inst.pivot().clone(),
                oracle: answer,
                z,
                sh,
                query: q_eval.clone(),
                instance: inst,
            });
        }
        solve_factorial_system(&ShSeries {
            values,
            n_endo: n,
            tail_size: tail,
        })
    }
}

fn bound_for(q: &Query, opts: &Options) -> usize {
    opts.bound.unwrap_or_else(|| q.default_length_bound())
}

/// Support `S` of `q` whose facts are linked through constants outside `C`.
fn variable_linked(s: &FactSet, fixed: &ConstantSet) -> bool {
    let atoms: Vec<Atom> = s.iter().map(Fact::to_atom).collect();
    components_by(&atoms, |t| matches!(t, Term::Const(c) if !fixed.contains(c))).len() <= 1
}

/// Checks the hypotheses of the leak construction and returns the support
/// `S` of `q` to duplicate.
pub fn check_leak_hypotheses(q: &Query, q_prime: &Query, s_prime: &FactSet, bound: usize) -> Result<FactSet> {
    let c = q.constants();
    if !is_variable_connected_query(q, bound)? {
        return Err(Error::Hypothesis("q is not variable-connected".into()));
    }
    if !is_minimal_support(q_prime, s_prime)? {
        return Err(Error::Hypothesis("S' is not a minimal support of q'".into()));
    }
    if evaluate(q, s_prime) {
        return Err(Error::Hypothesis("S' satisfies q".into()));
    }
    if let Some(w) = find_q_leak(q, s_prime, bound)? {
        return Err(Error::Hypothesis(format!("S' has a q-leak: {w}")));
    }
    for f in s_prime {
        if f.args.iter().all(|k| c.contains(k)) && is_relevant_fact(q, f, bound)? {
            return Err(Error::Hypothesis(format!("{f} in S' is relevant to q and uses only query constants")));
        }
    }
    for sup in canonical_supports(q, bound)? {
        let outside = sup.facts.iter().flat_map(|f| f.args.iter()).any(|k| !c.contains(k));
        if outside && variable_linked(&sup.facts, &c) && find_q_leak(q, &sup.facts, bound)?.is_none() {
            return Ok(sup.facts);
        }
    }
    Err(Error::Hypothesis("no minimal support of q is free of q-leaks with a constant outside C".into()))
}

/// FGMC of `q` on `db`, computed only from Shapley values returned by
/// `oracle(query, database, fact)`.
pub fn fgmc_via_shapley<F>(q: &Query, mode: &Mode, db: &PartitionedDatabase, opts: &Options, mut oracle: F) -> Result<ReductionReport>
where
    F: FnMut(&Query, &PartitionedDatabase, &Fact) -> Result<Rational>,
{
    z_self_test()?;
    let bound = bound_for(q, opts);
    let mut run = Run {
        oracle: &mut oracle,
        calls: 0,
        notes: Vec::new(),
        steps: Vec::new(),
    };
    let vector = match mode {
        Mode::PseudoConnected => {
            let Some((support, rule)) = find_island_support(q, bound)? else {
                return Err(Error::Hypothesis("no sufficient condition certifies an island support".into()));
            };
            run.notes.push(format!("island support certified by rule {}", rule.as_str()));
            let norm = normalize_instance(q, None, &FactSet::new(), db);
            match norm.shortcut {
                Some(v) => {
                    run.notes.push("exogenous facts satisfy q: every subset counts".into());
                    v
                }
                None => run.gadget_counts(
                    "main",
                    q,
                    &norm.db,
                    norm.db.exo(),
                    &support,
                    &q.constants(),
                    CaseTest {
                        query: q.clone(),
                        contributes_when_satisfied: false,
                    },
                    opts.endogenous_only,
                )?,
            }
        }
        Mode::Leak { q_prime, s_prime } => {
            let support = check_leak_hypotheses(q, q_prime, s_prime, bound)?;
            let q_eval = q.and(q_prime)?;
            let norm = normalize_instance(q, Some(q_prime), s_prime, db);
            match norm.shortcut {
                Some(v) => {
                    run.notes.push("exogenous facts satisfy q: every subset counts".into());
                    v
                }
                None => {
                    if !norm.renaming.is_empty() {
                        run.notes.push(format!("renamed {} constants shared with S'", norm.renaming.len()));
                    }
                    let completed = complete_with_support(&norm.db, s_prime)?;
                    let mut fixed = q.constants();
                    fixed.extend(q_prime.constants());
                    let v = run.gadget_counts(
                        "main",
                        &q_eval,
                        &completed,
                        norm.db.exo(),
                        &support,
                        &fixed,
                        CaseTest {
                            query: q.clone(),
                            contributes_when_satisfied: false,
                        },
                        opts.endogenous_only,
                    )?;
                    if norm.removed_endogenous > 0 {
                        run.notes.push(format!(
                            "{} endogenous facts of S' removed and restored by convolution",
                            norm.removed_endogenous
                        ));
                    }
                    v.convolve(&CountVector::binomials(norm.removed_endogenous))
                }
            }
        }
        Mode::Decomposable => decomposable(q, db, opts, &mut run)?,
    };
    if vector.n() != db.endo().len() {
        return Err(Error::Construction("result has the wrong length".into()));
    }
    Ok(ReductionReport {
        vector,
        oracle_calls: run.calls,
        notes: run.notes,
        steps: run.steps,
    })
}

fn decomposable<F>(q: &Query, db: &PartitionedDatabase, opts: &Options, run: &mut Run<'_, F>) -> Result<CountVector>
where
    F: FnMut(&Query, &PartitionedDatabase, &Fact) -> Result<Rational>,
{
    let Some((q1, q2)) = decompose(q, opts.experimental)? else {
        return Err(Error::Hypothesis("q has no certified decomposition".into()));
    };
    run.notes.push(format!("decomposed into ({q1}) and ({q2})"));
    let fixed = q.constants();
    let parts = [&q1, &q2];
    let mut split: [(FactSet, FactSet); 2] = Default::default();
    for (f, endo) in db.endo().iter().map(|f| (f, true)).chain(db.exo().iter().map(|f| (f, false))) {
        let r1 = is_relevant_fact(&q1, f, bound_for(&q1, opts))?;
        let r2 = is_relevant_fact(&q2, f, bound_for(&q2, opts))?;
        if r1 && r2 {
            return Err(Error::Hypothesis(format!("{f} is relevant to both parts")));
        }
        let side = &mut split[usize::from(r2)];
        if endo { side.0.insert(f.clone()) } else { side.1.insert(f.clone()) };
    }
    let mut vectors = Vec::with_capacity(2);
    for k in 0..2 {
        let (own, other) = (parts[k], parts[1 - k]);
        let part = PartitionedDatabase::new(split[k].0.iter().cloned(), split[k].1.iter().cloned())?;
        let n = part.endo().len();
        let support = canonical_supports(other, bound_for(other, opts))?
            .into_iter()
            .map(|s| s.facts)
            .find(|s| s.iter().flat_map(|f| f.args.iter()).any(|c| !fixed.contains(c)))
            .ok_or_else(|| Error::Hypothesis(format!("{other} has no support with a constant outside C")))?;
        // Coalitions in Case 3 are the non-supports of the own part.
        let non_supports = run.gadget_counts(
            &format!("part {}", k + 1),
            q,
            &part,
            part.exo(),
            &support,
            &fixed,
            CaseTest {
                query: own.clone(),
                contributes_when_satisfied: true,
            },
            opts.endogenous_only,
        )?;
        let all = CountVector::binomials(n);
        let mut v = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let (a, b) = (all.get(j), non_supports.get(j));
            if b > a {
                return Err(Error::Construction("more non-supports than subsets".into()));
            }
            v.push(a - b);
        }
        vectors.push(CountVector(v));
    }
    combine_by_interpolation(&vectors[0], &vectors[1])
}

/// The vector whose uniform probabilities are the products of those of `a`
/// and `b`, recovered by interpolation at `z = 1..n+1`.
pub fn combine_by_interpolation(a: &CountVector, b: &CountVector) -> Result<CountVector> {
    let n = a.n() + b.n();
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    for z in 1..=(n as i64 + 1) {
        let z = from_int(z);
        let p = &z / (Rational::one() + &z);
        let prob = sppqe_from_fgmc_vector(a, &p)? * sppqe_from_fgmc_vector(b, &p)?;
        ys.push(prob * num_traits::pow(Rational::one() + &z, n));
        xs.push(z);
    }
    let out = CountVector(to_naturals(&vandermonde_solve(&xs, &ys)?, "combined vector")?);
    debug_assert_eq!(out, a.convolve(b));
    Ok(out)
}

/// Constant-count vector of `q` on `facts` from a Shapley oracle for
/// constants: the support of `q` is collapsed onto one fresh constant, which
/// then behaves like a duplicable singleton support.
pub fn fgmc_constants_via_shapley<F>(
    q: &Query,
    facts: &FactSet,
    cp: &ConstantPartition,
    opts: &Options,
    mut oracle: F,
) -> Result<(CountVector, usize)>
where
    F: FnMut(&FactSet, &ConstantPartition, &Constant) -> Result<Rational>,
{
    z_self_test()?;
    let c = q.constants();
    if !c.is_empty() && !opts.experimental {
        return Err(Error::Hypothesis(
            "queries with constants need the experimental flag".into(),
        ));
    }
    if let Some(k) = c.intersection(&cp.endo).next() {
        return Err(Error::Hypothesis(format!("query constant {k} must be exogenous")));
    }
    let n = cp.endo.len();
    let mut exo = cp.exo.clone();
    exo.extend(c.iter().cloned());
    if evaluate(q, &induced(facts, &exo)) {
        return Ok((CountVector::binomials(n), 0));
    }
    let supports = canonical_supports(q, bound_for(q, opts))?;
    let Some(s) = supports
        .iter()
        .map(|s| &s.facts)
        .find(|s| s.iter().flat_map(|f| f.args.iter()).any(|k| !c.contains(k)))
    else {
        // Every support lies over C, which is always present.
        return Ok((CountVector::zeros(n), 0));
    };
    let mut avoid = constants_of(facts);
    avoid.extend(cp.endo.iter().cloned());
    avoid.extend(exo.iter().cloned());
    let mut fresh = FreshConstants::avoiding(&avoid);
    let a_mu = fresh.fresh();
    let collapse: Renaming = constants_of(s)
        .into_iter()
        .filter(|k| !c.contains(k))
        .map(|k| (k, a_mu.clone()))
        .collect();
    let s_mu = rename_facts(s, &collapse);
    if !evaluate(q, &s_mu) || s_mu.iter().any(|f| !f.mentions(&a_mu)) {
        return Err(Error::Hypothesis(
            "collapsing the support onto one constant does not give a usable support".into(),
        ));
    }
    let copies: Vec<Constant> = (0..n).map(|_| fresh.fresh()).collect();
    let mut values = Vec::with_capacity(n + 1);
    let mut calls = 0;
    for i in 0..=n {
        let mut db = facts.clone();
        db.extend(s_mu.iter().cloned());
        let mut endo = cp.endo.clone();
        endo.insert(a_mu.clone());
        for b in &copies[..i] {
            db.extend(s_mu.iter().map(|f| replace_constant(f, &a_mu, b)));
            endo.insert(b.clone());
        }
        let part = ConstantPartition::new(endo, exo.clone())?;
        calls += 1;
        let answer = oracle(&db, &part, &a_mu)?;
        values.push(Rational::one() - answer - compute_z(i, n, 0));
    }
    let v = solve_factorial_system(&ShSeries {
        values,
        n_endo: n,
        tail_size: 0,
    })?;
    Ok((v, calls))
}

/// Number of exogenous facts each gadget database adds, keyed by `i`.
pub fn added_exogenous(original: &PartitionedDatabase, steps: &[TraceStep]) -> BTreeMap<usize, usize> {
    steps
        .iter()
        .map(|s| (s.i, s.database.exo().difference(original.exo()).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{fgmc_vector, Config};
    use crate::query::parse_query;
    use crate::shapley::{shapley_subsets, QueryGame};
    use num_bigint::BigUint;
    use proptest::prelude::*;

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

    fn brute(q: &Query, d: &PartitionedDatabase, f: &Fact) -> Result<Rational> {
        shapley_subsets(&QueryGame::new(q.clone(), d.clone()), f, &Config::default())
    }

    #[test]
    fn z_examples() {
        assert_eq!(compute_z(0, 3, 0), Rational::zero());
        assert_eq!(compute_z(1, 0, 0), ratio(1, 2));
        assert_eq!(compute_z(0, 1, 1), z_by_enumeration(0, 1, 1));
        z_self_test().unwrap();
    }

    #[test]
    fn factorial_system_examples() {
        let m = factorial_matrix(1, 0);
        assert_eq!(m, vec![vec![ratio(1, 2), ratio(1, 2)], vec![ratio(1, 3), ratio(1, 6)]]);
        let det = &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0];
        assert_eq!(det, ratio(-1, 12));
        assert_eq!(factorial_matrix(0, 0), vec![vec![from_int(1)]]);
        assert!(solve_factorial_system(&ShSeries { values: vec![ratio(1, 2)], n_endo: 0, tail_size: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn encode_then_solve(v in proptest::collection::vec(0u32..1000, 1..=10), t in 0usize..4) {
            let counts = cv(&v);
            prop_assert_eq!(solve_factorial_system(&forward_encode(&counts, t)).unwrap(), counts);
        }
    }

    #[test]
    fn normalization() {
        let q = parse_query("R(x)").unwrap();
        let d = db(&[("T", &["a"]), ("T", &["b"])], &[("R", &["z"])]);
        assert_eq!(normalize_instance(&q, None, &FactSet::new(), &d).shortcut, Some(cv(&[1, 2, 1])));
        let d = db(&[("R", &["a"])], &[]);
        let sp: FactSet = [Fact::new("U", &["b", "c"])].into_iter().collect();
        let n = normalize_instance(&q, None, &sp, &d);
        assert_eq!(n.db, d);
        let d = db(&[("R", &["b"]), ("U", &["b", "c"])], &[]);
        let n = normalize_instance(&q, None, &sp, &d);
        assert!(!n.db.constants().contains(&Constant::new("b")));
        assert_eq!(n.removed_endogenous, 0);
        let cfg = Config::default();
        assert_eq!(fgmc_vector(&q, &n.db, &cfg).unwrap(), fgmc_vector(&q, &d, &cfg).unwrap());
    }

    #[test]
    fn duplication_examples() {
        let fixed: ConstantSet = ["a", "b"].iter().map(Constant::new).collect();
        let s: FactSet = [Fact::new("A", &["a", "m"]), Fact::new("A", &["m", "b"])].into_iter().collect();
        let f = duplicate_support(&s, &fixed, 1, false, &ConstantSet::new()).unwrap();
        assert_eq!(f.a, Constant::new("m"));
        assert_eq!(f.copies[0], s);
        assert!(f.tail.is_empty());
        assert_eq!(f.copies[1].len(), 2);
        let s: FactSet = [Fact::new("R", &["__f0"]), Fact::new("S", &["__f0", "__f1"]), Fact::new("T", &["__f1"])]
            .into_iter()
            .collect();
        let f = duplicate_support(&s, &ConstantSet::new(), 2, false, &ConstantSet::new()).unwrap();
        assert_eq!(f.a, Constant::new("__f0"));
        assert_eq!(f.tail, [Fact::new("T", &["__f1"])].into_iter().collect());
        assert_eq!(f.copies.len(), 3);
        let s: FactSet = [Fact::new("R", &["__f0"])].into_iter().collect();
        let f = duplicate_support(&s, &ConstantSet::new(), 1, true, &ConstantSet::new()).unwrap();
        assert_eq!(f.copies[0].len(), 1);
        let s: FactSet = [Fact::new("R", &["a", "a"])].into_iter().collect();
        assert!(duplicate_support(&s, &[Constant::new("a")].into_iter().collect(), 1, false, &ConstantSet::new()).is_err());
    }

    #[test]
    fn assembly_layout() {
        let base = db(&[("R", &["a"])], &[("R", &["z"])]);
        let s: FactSet = [Fact::new("R", &["__f0"]), Fact::new("S", &["__f0", "__f1"]), Fact::new("T", &["__f1"])]
            .into_iter()
            .collect();
        let f = duplicate_support(&s, &ConstantSet::new(), 2, false, &base.constants()).unwrap();
        let a = assemble_ai(&base, &f, &ConstantSet::new()).unwrap();
        assert_eq!(a.endo().len(), 1 + 1 + 2 + 1);
        assert_eq!(a.exo().len(), 1 + 3);
        let f0 = duplicate_support(&s, &ConstantSet::new(), 0, false, &base.constants()).unwrap();
        let a0 = assemble_ai(&base, &f0, &ConstantSet::new()).unwrap();
        assert_eq!(a0.endo().len(), 3);
        let clash = db(&[("R", &["__f1"])], &[]);
        assert!(assemble_ai(&clash, &f0, &ConstantSet::new()).is_err());
    }

    #[test]
    fn end_to_end_examples() {
        let cfg = Config::default();
        let opts = Options::default();
        let rst = parse_query("R(x), S(x,y), T(y)").unwrap();
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[]);
        let r = fgmc_via_shapley(&rst, &Mode::PseudoConnected, &d, &opts, brute).unwrap();
        assert_eq!(r.vector, cv(&[0, 0, 0, 1]));
        assert_eq!(r.oracle_calls, 4);
        let q = parse_query("R(x)").unwrap();
        let d = db(&[("R", &["a"]), ("R", &["b"])], &[]);
        assert_eq!(fgmc_via_shapley(&q, &Mode::PseudoConnected, &d, &opts, brute).unwrap().vector, cv(&[0, 2, 1]));
        let q = parse_query("R(x,y), S(u,v)").unwrap();
        let d = db(
            &[("R", &["a", "b"]), ("S", &["a", "b"]), ("S", &["c", "c"]), ("T", &["a"])],
            &[("R", &["c", "d"])],
        );
        let r = fgmc_via_shapley(&q, &Mode::Decomposable, &d, &opts, brute).unwrap();
        assert_eq!(r.vector, fgmc_vector(&q, &d, &cfg).unwrap());
        let mode = Mode::Leak {
            q_prime: parse_query("U(x,y)").unwrap(),
            s_prime: [Fact::new("U", &["__f0", "__f1"])].into_iter().collect(),
        };
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"]), ("U", &["__f0", "__f1"])], &[("S", &["a", "c"])]);
        let r = fgmc_via_shapley(&rst, &mode, &d, &opts, brute).unwrap();
        assert_eq!(r.vector, fgmc_vector(&rst, &d, &cfg).unwrap());
    }

    #[test]
    fn endogenous_only_adds_no_exogenous_facts() {
        let q = parse_query("R(x)").unwrap();
        let d = db(&[("R", &["a"]), ("T", &["b"]), ("R", &["c"])], &[]);
        let opts = Options {
            endogenous_only: true,
            ..Options::default()
        };
        let r = fgmc_via_shapley(&q, &Mode::PseudoConnected, &d, &opts, brute).unwrap();
        assert!(r.steps.iter().all(|s| s.database.exo().is_empty()));
        assert_eq!(r.vector, fgmc_vector(&q, &d, &Config::default()).unwrap());
    }

    #[test]
    fn hypothesis_failures() {
        let opts = Options::default();
        let q = parse_query("R('a','b')").unwrap();
        let d = db(&[("R", &["a", "b"])], &[]);
        assert!(matches!(fgmc_via_shapley(&q, &Mode::PseudoConnected, &d, &opts, brute), Err(Error::Hypothesis(_))));
        let rst = parse_query("R(x), S(x,y), T(y)").unwrap();
        let mode = Mode::Leak {
            q_prime: parse_query("R(x)").unwrap(),
            s_prime: [Fact::new("R", &["__f0"])].into_iter().collect(),
        };
        // Without query constants there are no leaks, and a shared vocabulary is allowed.
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["b"])], &[]);
        let r = fgmc_via_shapley(&rst, &mode, &d, &opts, brute).unwrap();
        assert_eq!(r.vector, cv(&[0, 0, 0, 1]));
        let q = parse_query("R(x,y), S(y,'a')").unwrap();
        let mode = Mode::Leak {
            q_prime: parse_query("R(x,y)").unwrap(),
            s_prime: [Fact::new("R", &["a", "c"])].into_iter().collect(),
        };
        let d = db(&[("S", &["b", "a"])], &[]);
        let err = fgmc_via_shapley(&q, &mode, &d, &opts, brute).unwrap_err();
        assert!(err.to_string().contains("leak"), "{err}");
        assert!(matches!(
            fgmc_via_shapley(&rst, &Mode::Decomposable, &d, &opts, brute),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn constants_via_shapley() {
        let cfg = Config::default();
        let q = parse_query("Pub(x,y), Kw(y,z)").unwrap();
        let d: FactSet = [
            Fact::new("Pub", &["a", "p"]),
            Fact::new("Pub", &["b", "p"]),
            Fact::new("Kw", &["p", "s"]),
            Fact::new("Pub", &["c", "r"]),
        ]
        .into_iter()
        .collect();
        let cp = ConstantPartition::for_database(&d, ["a", "b", "c", "r"].iter().map(Constant::new).collect());
        let (v, calls) = fgmc_constants_via_shapley(&q, &d, &cp, &Options::default(), |f, p, c| {
            crate::shapley::shapley_constants(&q, f, p, c, &cfg)
        })
        .unwrap();
        assert_eq!(v, crate::shapley::fgmc_constants_vector(&q, &d, &cp, &cfg).unwrap());
        assert_eq!(calls, 5);
        let qc = parse_query("Pub(x,y), Kw(y,'s')").unwrap();
        assert!(fgmc_constants_via_shapley(&qc, &d, &cp, &Options::default(), |_, _, _| Ok(Rational::zero())).is_err());
        let cp2 = ConstantPartition::for_database(&d, ["a", "b"].iter().map(Constant::new).collect());
        let opts = Options {
            experimental: true,
            ..Options::default()
        };
        let (v, _) = fgmc_constants_via_shapley(&qc, &d, &cp2, &opts, |f, p, c| {
            crate::shapley::shapley_constants(&qc, f, p, c, &cfg)
        })
        .unwrap();
        assert_eq!(v, cv(&[0, 2, 1]));
    }

    #[test]
    fn case_analysis_is_exact() {
        let rst = parse_query("R(x), S(x,y), T(y)").unwrap();
        let d = db(&[("R", &["a"]), ("S", &["a", "b"]), ("T", &["c"])], &[("S", &["c", "c"])]);
        let r = fgmc_via_shapley(&rst, &Mode::PseudoConnected, &d, &Options::default(), brute).unwrap();
        for s in &r.steps {
            assert_eq!(validate_marginal_cases(&s.query, &s.instance).unwrap(), None);
            assert_eq!(Rational::one() - &s.oracle - &s.z, case3_mass(&s.instance).unwrap());
        }
    }
}
