#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shapval_core::query::{parse_query, Query};
use shapval_core::relational::{Fact, PartitionedDatabase};

pub const RST: &str = "R(x), S(x,y), T(y)";

/// Queries of the randomized corpus with the relations (and arities) their
/// databases are drawn from.
pub fn corpus() -> Vec<(&'static str, Vec<(&'static str, usize)>)> {
    vec![
        (RST, vec![("R", 1), ("S", 2), ("T", 1)]),
        ("R(x)", vec![("R", 1), ("T", 1)]),
        ("R(x), S(x,y)", vec![("R", 1), ("S", 2)]),
        ("path 'a' 'c' : A B", vec![("A", 2), ("B", 2)]),
        ("R(x,y), S(u,v)", vec![("R", 2), ("S", 2), ("T", 1)]),
    ]
}

pub fn query(text: &str) -> Query {
    parse_query(text).unwrap_or_else(|e| panic!("{text}: {e}"))
}

/// Every fact over `relations` with constants from the first `domain` letters.
pub fn candidate_facts(relations: &[(&str, usize)], domain: usize) -> Vec<Fact> {
    let names: Vec<String> = (0..domain).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    let mut out = Vec::new();
    for (r, arity) in relations {
        let mut idx = vec![0usize; *arity];
        loop {
            out.push(Fact::new(r, &idx.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>()));
            let mut k = 0;
            while k < *arity {
                idx[k] += 1;
                if idx[k] < domain {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == *arity {
                break;
            }
        }
    }
    out
}

/// Distinct random facts, the first `n_endo` endogenous and the next `n_exo`
/// exogenous.
pub fn random_db(rng: &mut ChaCha8Rng, relations: &[(&str, usize)], domain: usize, n_endo: usize, n_exo: usize) -> PartitionedDatabase {
    let mut pool = candidate_facts(relations, domain);
    pool.shuffle(rng);
    let n_endo = n_endo.min(pool.len());
    let n_exo = n_exo.min(pool.len() - n_endo);
    PartitionedDatabase::new(pool[..n_endo].iter().cloned(), pool[n_endo..n_endo + n_exo].iter().cloned()).unwrap()
}

pub fn random_sizes(rng: &mut ChaCha8Rng, max_endo: usize, max_exo: usize) -> (usize, usize) {
    (rng.gen_range(0..=max_endo), rng.gen_range(0..=max_exo))
}

/// Adds `plant` as endogenous facts (dropping exogenous copies), then trims
/// other endogenous facts so that at most `max_endo` remain.
pub fn with_planted(db: &PartitionedDatabase, plant: &[Fact], max_endo: usize) -> PartitionedDatabase {
    let mut endo: Vec<Fact> = plant.to_vec();
    for f in db.endo() {
        if endo.len() < max_endo && !endo.contains(f) {
            endo.push(f.clone());
        }
    }
    let exo: Vec<Fact> = db.exo().iter().filter(|f| !endo.contains(f)).cloned().collect();
    PartitionedDatabase::new(endo, exo).unwrap()
}

/// `R(u), S(u,v), T(v)` for random `u, v` among the first `domain` letters.
pub fn rst_support(rng: &mut ChaCha8Rng, domain: usize) -> Vec<Fact> {
    let mut pick = || ((b'a' + rng.gen_range(0..domain) as u8) as char).to_string();
    let (u, v) = (pick(), pick());
    vec![Fact::new("R", &[&u]), Fact::new("S", &[&u, &v]), Fact::new("T", &[&v])]
}
