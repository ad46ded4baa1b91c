//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails at the
//! end if any criterion failed. Every comparison is exact; only the wall-clock
//! limits below are tolerances.

mod common;

use std::time::{Duration, Instant};

use common::{corpus, query, random_db, random_sizes, rst_support, with_planted, RST};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapval_core::analyzer::{classify, find_q_leak, Verdict};
use shapval_core::counting::{fgmc_vector, fgmc_vector_from_pqe, fgmc_via_fmc, fmc_vector, pqe, sppqe_from_fgmc_vector, Config, CountVector};
use shapval_core::query::Query;
use shapval_core::rational::{ratio, Rational};
use shapval_core::reduction::{fgmc_constants_via_shapley, fgmc_via_shapley, validate_marginal_cases, MarginalCase, Mode, Options};
use shapval_core::relational::{Constant, Fact, FactSet, PartitionedDatabase};
use shapval_core::shapley::{
    fgmc_constants_vector, max_shapley, shapley_constants, shapley_constants_via_fgmc, shapley_permutations, shapley_subsets,
    shapley_via_fgmc, ConstantPartition, QueryGame,
};

const SEED: u64 = 0x5eed_0001;
const INSTANCES: usize = 200;
const MAX_ENDO: usize = 8;
const MAX_EXO: usize = 3;
const AGREEMENT_LIMIT: Duration = Duration::from_secs(60);
const CASES_LIMIT: Duration = Duration::from_secs(30);
const REDUCTION_LIMIT: Duration = Duration::from_secs(300);
const REDUCTION_DBS: usize = 50;
const REDUCTION_MAX_ENDO: usize = 6;
const FMC_INSTANCES: usize = 100;
const FMC_MAX_EXO: usize = 4;

struct Outcome {
    failures: Vec<String>,
    detail: String,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            failures: Vec::new(),
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok && self.failures.len() < 5 {
            self.failures.push(msg());
        }
    }

    fn time(&mut self, start: Instant, limit: Duration) {
        let took = start.elapsed();
        self.detail = format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs());
        self.check(took <= limit, || format!("took {took:?}, limit {limit:?}"));
    }
}

fn report(results: &mut Vec<bool>, n: usize, title: &str, out: Outcome) {
    let ok = out.failures.is_empty();
    let tag = if ok { "PASS" } else { "FAIL" };
    let detail = if out.detail.is_empty() { String::new() } else { format!(" ({})", out.detail) };
    println!("criterion {n:>2}: {tag} {title}{detail}");
    for f in &out.failures {
        println!("    {f}");
    }
    results.push(ok);
}

struct Instance {
    text: &'static str,
    q: Query,
    db: PartitionedDatabase,
}

fn criterion_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let corpus = corpus();
    (0..INSTANCES)
        .map(|k| {
            let (text, rels) = &corpus[k % corpus.len()];
            let (n, x) = random_sizes(&mut rng, MAX_ENDO, MAX_EXO);
            Instance {
                text,
                q: query(text),
                db: random_db(&mut rng, rels, 3, n, x),
            }
        })
        .collect()
}

fn brute(cfg: &Config) -> impl FnMut(&Query, &PartitionedDatabase, &Fact) -> shapval_core::error::Result<Rational> + '_ {
    move |q, d, f| shapley_subsets(&QueryGame::new(q.clone(), d.clone()), f, cfg)
}

#[test]
fn acceptance() {
    let cfg = Config::default();
    let instances = criterion_instances();
    let mut results = Vec::new();

    // 1 and 2
    let start = Instant::now();
    let mut agree = Outcome::new();
    let mut efficiency = Outcome::new();
    let mut values = Vec::with_capacity(instances.len());
    for (k, inst) in instances.iter().enumerate() {
        let g = QueryGame::new(inst.q.clone(), inst.db.clone());
        let mut sum = Rational::default();
        let mut row = Vec::new();
        for f in inst.db.endo() {
            let a = shapley_permutations(&g, f).unwrap();
            let b = shapley_subsets(&g, f, &cfg).unwrap();
            let c = shapley_via_fgmc(&g, f, |d| fgmc_vector(&inst.q, d, &cfg)).unwrap();
            agree.check(a == b && b == c, || format!("instance {k} ({}), {f}: {a} {b} {c}", inst.text));
            sum += &b;
            row.push((f.clone(), b));
        }
        let wealth = Rational::from_integer(g.wealth(inst.db.endo()).unwrap().into());
        efficiency.check(sum == wealth, || format!("instance {k}: sum {sum} wealth {wealth}"));
        values.push(row);
    }
    agree.time(start, AGREEMENT_LIMIT);
    report(&mut results, 1, "permutations = subsets = via FGMC on 200 instances", agree);
    report(&mut results, 2, "efficiency: values sum to the wealth of Dn", efficiency);

    // 3
    let mut interp = Outcome::new();
    let half = ratio(1, 2);
    for (k, inst) in instances.iter().enumerate() {
        let v = fgmc_vector(&inst.q, &inst.db, &cfg).unwrap();
        let back = fgmc_vector_from_pqe(&inst.db, |pd| pqe(&inst.q, pd, &cfg)).unwrap();
        interp.check(back == v, || format!("instance {k}: {back} vs {v}"));
        let p = pqe(&inst.q, &inst.db.with_uniform_probability(&half), &cfg).unwrap();
        let s = sppqe_from_fgmc_vector(&v, &half).unwrap();
        interp.check(p == s, || format!("instance {k}: Pr {p} vs {s}"));
    }
    report(&mut results, 3, "interpolation round-trips through PQE", interp);

    // 4
    let mut star = Outcome::new();
    let q = query(RST);
    let (r, s, t) = (Fact::new("R", &["a"]), Fact::new("S", &["a", "b"]), Fact::new("T", &["b"]));
    let all_endo = QueryGame::new(q.clone(), PartitionedDatabase::new([r.clone(), s.clone(), t.clone()], []).unwrap());
    for f in [&r, &s, &t] {
        let v = shapley_subsets(&all_endo, f, &cfg).unwrap();
        star.check(v == ratio(1, 3), || format!("Sh({f}) = {v}"));
    }
    let s_exo = QueryGame::new(q.clone(), PartitionedDatabase::new([r.clone(), t.clone()], [s.clone()]).unwrap());
    for f in [&r, &t] {
        let v = shapley_subsets(&s_exo, f, &cfg).unwrap();
        star.check(v == ratio(1, 2), || format!("Sh({f}) with S exogenous = {v}"));
    }
    report(&mut results, 4, "star example values 1/3 and 1/2", star);

    // 5
    let start = Instant::now();
    let mut cases = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    let mut checked = 0usize;
    let mut contributing = 0usize;
    for (text, rels) in [(RST, vec![("R", 1), ("S", 2), ("T", 1)]), ("R(x)", vec![("R", 1), ("T", 1)])] {
        let q = query(text);
        for _ in 0..20 {
            let n = rng.gen_range(0..=4);
            let x = rng.gen_range(0..=1);
            let db = random_db(&mut rng, &rels, 3, n, x);
            let rep = match fgmc_via_shapley(&q, &Mode::PseudoConnected, &db, &Options::default(), brute(&cfg)) {
                Ok(r) => r,
                Err(e) => {
                    cases.check(false, || format!("{text} on {}: {e}", db.to_text()));
                    continue;
                }
            };
            for step in rep.steps.iter().filter(|s| s.i <= 2) {
                let bad = validate_marginal_cases(&step.query, &step.instance).unwrap();
                cases.check(bad.is_none(), || format!("{text} i={}: {bad:?}", step.i));
                checked += 1;
                let a = step.instance.assemble().unwrap();
                let others: Vec<&Fact> = a.endo().iter().filter(|f| *f != step.instance.pivot()).collect();
                for mask in 0u32..(1 << others.len()) {
                    let b: FactSet = others.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, f)| (*f).clone()).collect();
                    contributing += usize::from(shapval_core::reduction::marginal_case(&step.instance, &b) == MarginalCase::Contributes);
                }
            }
        }
    }
    cases.check(contributing > 0, || "no contributing coalition was ever exercised".into());
    cases.time(start, CASES_LIMIT);
    cases.detail = format!("{checked} gadgets, {}", cases.detail);
    report(&mut results, 5, "case analysis matches marginal contributions exhaustively", cases);

    // 6
    let start = Instant::now();
    let mut e2e = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 6);
    let leak = Mode::Leak {
        q_prime: query("U(x,y)"),
        s_prime: [Fact::new("U", &["a", "c"])].into_iter().collect(),
    };
    // A support of q_RST is planted in most databases so that counts are not all zero.
    type Run<'a> = (&'a str, &'a str, Mode, Vec<(&'a str, usize)>, usize);
    let runs: [Run; 3] = [
        ("pseudo-connected", RST, Mode::PseudoConnected, vec![("R", 1), ("S", 2), ("T", 1)], 3),
        ("leak", RST, leak, vec![("R", 1), ("S", 2), ("T", 1), ("U", 2)], 3),
        ("decomposable", "R(x,y), S(u,v)", Mode::Decomposable, vec![("R", 2), ("S", 2), ("T", 1)], 4),
    ];
    let mut counts = Vec::new();
    for (name, text, mode, rels, domain) in &runs {
        let q = query(text);
        let mut ok = 0;
        let mut nontrivial = 0;
        for _ in 0..REDUCTION_DBS {
            let n = rng.gen_range(1..=REDUCTION_MAX_ENDO);
            let x = rng.gen_range(0..=2);
            let mut db = random_db(&mut rng, rels, *domain, n, x);
            if *text == RST && n >= 3 && rng.gen_bool(0.8) {
                let plant = rst_support(&mut rng, *domain);
                db = with_planted(&db, &plant, n);
            }
            if *name == "leak" && rng.gen_bool(0.3) {
                // A fact of S' inside D is removed and restored by convolution.
                db = with_planted(&db, &[Fact::new("U", &["a", "c"])], db.endo().len() + 1);
            }
            let want = fgmc_vector(&q, &db, &cfg).unwrap();
            match fgmc_via_shapley(&q, mode, &db, &Options::default(), brute(&cfg)) {
                Ok(r) if r.vector == want => {
                    ok += 1;
                    nontrivial += usize::from(r.oracle_calls > 1 && want.total() > 0u8.into());
                }
                Ok(r) => e2e.check(false, || format!("{name} on {}: {} vs {want}", db.to_text().replace('\n', " "), r.vector)),
                Err(e) => e2e.check(false, || format!("{name} on {}: {e}", db.to_text().replace('\n', " "))),
            }
        }
        counts.push(format!("{name} {ok}/{REDUCTION_DBS}, {nontrivial} nontrivial"));
        e2e.check(nontrivial * 5 >= REDUCTION_DBS * 2, || format!("{name}: only {nontrivial} nontrivial databases"));
    }
    e2e.time(start, REDUCTION_LIMIT);
    e2e.detail = format!("{}; {}", counts.join(", "), e2e.detail);
    report(&mut results, 6, "reductions return the exact count vector in every mode", e2e);

    // 7
    let mut endo_only = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let q = query("R(x)");
    let opts = Options {
        endogenous_only: true,
        ..Options::default()
    };
    for _ in 0..20 {
        let n = rng.gen_range(0..=5);
        let db = random_db(&mut rng, &[("R", 1), ("T", 1)], 4, n, 0);
        let r = fgmc_via_shapley(&q, &Mode::PseudoConnected, &db, &opts, brute(&cfg)).unwrap();
        let added: usize = r.steps.iter().map(|s| s.database.exo().len()).sum();
        endo_only.check(added == 0, || format!("{added} exogenous facts added"));
        let want = fgmc_vector(&q, &db, &cfg).unwrap();
        endo_only.check(r.vector == want, || format!("{} vs {want}", r.vector));
    }
    report(&mut results, 7, "endogenous-only construction adds no exogenous facts", endo_only);

    // 8
    let mut fmc = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    let corpus = corpus();
    for k in 0..FMC_INSTANCES {
        let (text, rels) = &corpus[k % corpus.len()];
        let q = query(text);
        let (n, x) = random_sizes(&mut rng, MAX_ENDO, FMC_MAX_EXO);
        let db = random_db(&mut rng, rels, 3, n, x);
        let (v, calls) = fgmc_via_fmc(&db, |f| fmc_vector(&q, f, &cfg)).unwrap();
        let want = fgmc_vector(&q, &db, &cfg).unwrap();
        fmc.check(v == want, || format!("instance {k}: {v} vs {want}"));
        fmc.check(calls == 1 << db.exo().len(), || format!("instance {k}: {calls} calls for {} exogenous facts", db.exo().len()));
    }
    report(&mut results, 8, "recursion through databases without exogenous facts", fmc);

    // 9
    let mut golden = Outcome::new();
    for (text, want) in [
        (RST, Verdict::SharpPHard),
        ("R(x), S(x,y)", Verdict::InFP),
        ("path 'a' 'b' : A B C", Verdict::SharpPHard),
        ("path 'a' 'b' : (A | B)", Verdict::InFP),
    ] {
        let got = classify(&query(text)).unwrap();
        golden.check(got.verdict == want, || format!("{text}: {got}"));
    }
    let q = query("path x 'a' : (A B | B A)");
    let leak_set: FactSet = [Fact::new("A", &["b", "a"])].into_iter().collect();
    let w = find_q_leak(&q, &leak_set, 4).unwrap();
    golden.check(w.as_ref().is_some_and(|w| w.leak_fact == Fact::new("A", &["b", "a"])), || format!("leak not found: {w:?}"));
    report(&mut results, 9, "classifier golden set and leak detection", golden);

    // 10
    let mut maxsh = Outcome::new();
    let mut with_singleton = 0;
    for (k, (inst, row)) in instances.iter().zip(&values).enumerate() {
        let g = QueryGame::new(inst.q.clone(), inst.db.clone());
        let singleton = row.iter().find(|(f, _)| g.wealth(&[f.clone()].into_iter().collect()).unwrap() == 1);
        if let Some((s, sh)) = singleton {
            with_singleton += 1;
            let (_, best) = max_shapley(&g, &cfg).unwrap();
            maxsh.check(&best == sh, || format!("instance {k}: max {best} but Sh({s}) = {sh}"));
        }
    }
    let q = query("Pub(x,y), Kw(y,'s')");
    let facts: FactSet = [Fact::new("Pub", &["a", "p"]), Fact::new("Pub", &["b", "p"]), Fact::new("Kw", &["p", "s"])]
        .into_iter()
        .collect();
    let cp = ConstantPartition::for_database(&facts, [Constant::new("a"), Constant::new("b")].into_iter().collect());
    for author in ["a", "b"] {
        let c = Constant::new(author);
        let direct = shapley_constants(&q, &facts, &cp, &c, &cfg).unwrap();
        let via = shapley_constants_via_fgmc(&facts, &cp, &c, |f, p| fgmc_constants_vector(&q, f, p, &cfg)).unwrap();
        maxsh.check(direct == ratio(1, 2) && via == direct, || format!("author {author}: {direct} and {via}"));
    }
    let opts = Options {
        experimental: true,
        ..Options::default()
    };
    let (v, _) = fgmc_constants_via_shapley(&q, &facts, &cp, &opts, |f, p, c| shapley_constants(&q, f, p, c, &cfg)).unwrap();
    let want = fgmc_constants_vector(&q, &facts, &cp, &cfg).unwrap();
    maxsh.check(v == want && want == CountVector(vec![0u8.into(), 2u8.into(), 1u8.into()]), || format!("{v} vs {want}"));
    maxsh.check(with_singleton > 0, || "no instance had a singleton support".into());
    maxsh.detail = format!("{with_singleton} instances with a singleton support");
    report(&mut results, 10, "max Shapley value and the two-author constants example", maxsh);

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(k, _)| k + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
