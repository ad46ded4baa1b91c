//! Regular expressions over binary relation names and their Thompson automata.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::relational::{Constant, Fact, Relation};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegexNode {
    Symbol(Relation),
    Concat(Vec<RegexNode>),
    Alt(Vec<RegexNode>),
    Star(Box<RegexNode>),
    Epsilon,
}

impl RegexNode {
    pub fn symbol(name: &str) -> Self {
        RegexNode::Symbol(Relation::from(name))
    }

    /// Word `R1 R2 ... Rk` as a concatenation of symbols.
    pub fn word(symbols: &[&str]) -> Self {
        match symbols {
            [] => RegexNode::Epsilon,
            [one] => RegexNode::symbol(one),
            _ => RegexNode::Concat(symbols.iter().map(|s| RegexNode::symbol(s)).collect()),
        }
    }

    /// Distinct relation names, sorted.
    pub fn alphabet(&self) -> BTreeSet<Relation> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<Relation>) {
        match self {
            RegexNode::Symbol(s) => {
                out.insert(s.clone());
            }
            RegexNode::Concat(xs) | RegexNode::Alt(xs) => {
                xs.iter().for_each(|x| x.collect_symbols(out))
            }
            RegexNode::Star(x) => x.collect_symbols(out),
            RegexNode::Epsilon => {}
        }
    }

    /// Number of symbol occurrences.
    pub fn symbol_occurrences(&self) -> usize {
        match self {
            RegexNode::Symbol(_) => 1,
            RegexNode::Concat(xs) | RegexNode::Alt(xs) => {
                xs.iter().map(RegexNode::symbol_occurrences).sum()
            }
            RegexNode::Star(x) => x.symbol_occurrences(),
            RegexNode::Epsilon => 0,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            RegexNode::Alt(xs) if xs.len() > 1 => 0,
            RegexNode::Concat(xs) if xs.len() > 1 => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for RegexNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let child = |f: &mut fmt::Formatter<'_>, x: &RegexNode, min: u8| {
            if x.precedence() < min {
                write!(f, "({x})")
            } else {
                write!(f, "{x}")
            }
        };
        match self {
            RegexNode::Symbol(s) => f.write_str(s),
            RegexNode::Epsilon => f.write_str("eps"),
            RegexNode::Concat(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    child(f, x, 2)?;
                }
                Ok(())
            }
            RegexNode::Alt(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    child(f, x, 1)?;
                }
                Ok(())
            }
            RegexNode::Star(x) => {
                child(f, x, 2)?;
                f.write_str("*")
            }
        }
    }
}

impl fmt::Debug for RegexNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Thompson automaton with precomputed epsilon closures.
#[derive(Debug, Clone)]
pub struct Nfa {
    start: usize,
    accept: usize,
    moves: Vec<Vec<(Relation, usize)>>,
    closure: Vec<Vec<usize>>,
}

struct Builder {
    moves: Vec<Vec<(Relation, usize)>>,
    eps: Vec<Vec<usize>>,
}

impl Builder {
    fn state(&mut self) -> usize {
        self.moves.push(Vec::new());
        self.eps.push(Vec::new());
        self.moves.len() - 1
    }

    /// Returns (entry, exit) of the fragment for `node`.
    fn build(&mut self, node: &RegexNode) -> (usize, usize) {
        match node {
            RegexNode::Symbol(s) => {
                let (a, b) = (self.state(), self.state());
                self.moves[a].push((s.clone(), b));
                (a, b)
            }
            RegexNode::Epsilon => {
                let (a, b) = (self.state(), self.state());
                self.eps[a].push(b);
                (a, b)
            }
            RegexNode::Concat(xs) => {
                let entry = self.state();
                let mut cur = entry;
                for x in xs {
                    let (s, e) = self.build(x);
                    self.eps[cur].push(s);
                    cur = e;
                }
                (entry, cur)
            }
            RegexNode::Alt(xs) => {
                let (a, b) = (self.state(), self.state());
                for x in xs {
                    let (s, e) = self.build(x);
                    self.eps[a].push(s);
                    self.eps[e].push(b);
                }
                (a, b)
            }
            RegexNode::Star(x) => {
                let (a, b) = (self.state(), self.state());
                let (s, e) = self.build(x);
                self.eps[a].push(s);
                self.eps[a].push(b);
                self.eps[e].push(s);
                self.eps[e].push(b);
                (a, b)
            }
        }
    }
}

impl Nfa {
    pub fn new(regex: &RegexNode) -> Self {
        let mut b = Builder {
            moves: Vec::new(),
            eps: Vec::new(),
        };
        let (start, accept) = b.build(regex);
        let n = b.moves.len();
        let mut closure = Vec::with_capacity(n);
        for s in 0..n {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(x) = stack.pop() {
                for &y in &b.eps[x] {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            closure.push((0..n).filter(|&i| seen[i]).collect());
        }
        Nfa {
            start,
            accept,
            moves: b.moves,
            closure,
        }
    }

    pub fn state_count(&self) -> usize {
        self.moves.len()
    }

    fn start_set(&self) -> BTreeSet<usize> {
        self.closure[self.start].iter().copied().collect()
    }

    fn step(&self, set: &BTreeSet<usize>, symbol: &str) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &s in set {
            for (r, t) in &self.moves[s] {
                if &**r == symbol {
                    out.extend(self.closure[*t].iter().copied());
                }
            }
        }
        out
    }

    pub fn accepts<S: AsRef<str>>(&self, word: &[S]) -> bool {
        let mut set = self.start_set();
        for w in word {
            set = self.step(&set, w.as_ref());
            if set.is_empty() {
                return false;
            }
        }
        set.contains(&self.accept)
    }

    pub fn accepts_empty(&self) -> bool {
        self.closure[self.start].contains(&self.accept)
    }

    /// All accepted words of length at most `bound`, shortest first then
    /// lexicographic.
    pub fn words_up_to(&self, bound: usize) -> Vec<Vec<Relation>> {
        let alphabet: BTreeSet<Relation> = self
            .moves
            .iter()
            .flat_map(|m| m.iter().map(|(r, _)| r.clone()))
            .collect();
        let mut out = Vec::new();
        let mut layer: Vec<(Vec<Relation>, BTreeSet<usize>)> = vec![(Vec::new(), self.start_set())];
        for len in 0..=bound {
            for (w, set) in &layer {
                if set.contains(&self.accept) {
                    out.push(w.clone());
                }
            }
            if len == bound {
                break;
            }
            let mut next = Vec::new();
            for (w, set) in &layer {
                for a in &alphabet {
                    let s2 = self.step(set, a);
                    if !s2.is_empty() {
                        let mut w2 = w.clone();
                        w2.push(a.clone());
                        next.push((w2, s2));
                    }
                }
            }
            layer = next;
        }
        out
    }

    /// A shortest accepted word of length at least `k`, if any exists.
    /// Breadth-first search over (state, min(length, k)); epsilon moves are
    /// folded into the precomputed closures so every edge has unit cost.
    pub fn shortest_word_at_least(&self, k: usize) -> Option<Vec<Relation>> {
        let n = self.state_count();
        let idx = |s: usize, l: usize| l * n + s;
        let mut parent: Vec<Option<(usize, Relation)>> = vec![None; n * (k + 1)];
        let mut seen = vec![false; n * (k + 1)];
        let mut queue = VecDeque::new();
        for &s in &self.closure[self.start] {
            seen[idx(s, 0)] = true;
            queue.push_back((s, 0usize));
        }
        while let Some((s, l)) = queue.pop_front() {
            if s == self.accept && l == k {
                let mut word = Vec::new();
                let mut cur = idx(s, l);
                while let Some((prev, sym)) = &parent[cur] {
                    word.push(sym.clone());
                    cur = *prev;
                }
                word.reverse();
                return Some(word);
            }
            for (r, t) in &self.moves[s] {
                let l2 = (l + 1).min(k);
                for &t2 in &self.closure[*t] {
                    if !seen[idx(t2, l2)] {
                        seen[idx(t2, l2)] = true;
                        parent[idx(t2, l2)] = Some((idx(s, l), r.clone()));
                        queue.push_back((t2, l2));
                    }
                }
            }
        }
        None
    }

    pub fn has_word_at_least(&self, k: usize) -> bool {
        self.shortest_word_at_least(k).is_some()
    }

    /// Constants reachable from `from` along a path whose label is accepted.
    pub fn reachable_from(&self, from: &Constant, edges: &EdgeIndex<'_>) -> BTreeSet<Constant> {
        let mut out = BTreeSet::new();
        let mut seen: BTreeSet<(Constant, usize)> = BTreeSet::new();
        let mut stack: Vec<(Constant, usize)> = Vec::new();
        for &s in &self.closure[self.start] {
            if seen.insert((from.clone(), s)) {
                stack.push((from.clone(), s));
            }
        }
        while let Some((node, s)) = stack.pop() {
            if s == self.accept {
                out.insert(node.clone());
            }
            for (r, t) in &self.moves[s] {
                for next in edges.successors(r, &node) {
                    for &t2 in &self.closure[*t] {
                        if seen.insert((next.clone(), t2)) {
                            stack.push((next.clone(), t2));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn connects(&self, from: &Constant, to: &Constant, edges: &EdgeIndex<'_>) -> bool {
        if from == to && self.accepts_empty() {
            return true;
        }
        self.reachable_from(from, edges).contains(to)
    }
}

/// Adjacency of binary facts by relation name.
pub struct EdgeIndex<'a> {
    adj: HashMap<Relation, HashMap<Constant, Vec<&'a Constant>>>,
}

impl<'a> EdgeIndex<'a> {
    pub fn new(facts: impl IntoIterator<Item = &'a Fact>) -> Self {
        let mut adj: HashMap<Relation, HashMap<Constant, Vec<&'a Constant>>> = HashMap::new();
        for f in facts {
            if f.arity() == 2 {
                adj.entry(f.relation.clone())
                    .or_default()
                    .entry(f.args[0].clone())
                    .or_default()
                    .push(&f.args[1]);
            }
        }
        EdgeIndex { adj }
    }

    pub fn successors(&self, relation: &str, node: &Constant) -> impl Iterator<Item = &'a Constant> + '_ {
        self.adj
            .get(relation)
            .and_then(|m| m.get(node))
            .into_iter()
            .flat_map(|v| v.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_or_ba() -> RegexNode {
        RegexNode::Alt(vec![RegexNode::word(&["A", "B"]), RegexNode::word(&["B", "A"])])
    }

    #[test]
    fn acceptance_basics() {
        let nfa = Nfa::new(&ab_or_ba());
        assert!(nfa.accepts(&["A", "B"]));
        assert!(nfa.accepts(&["B", "A"]));
        assert!(!nfa.accepts(&["A", "A"]));
        assert!(!nfa.accepts_empty());
        let star = Nfa::new(&RegexNode::Star(Box::new(RegexNode::symbol("A"))));
        assert!(star.accepts_empty());
        assert!(star.accepts(&["A", "A", "A"]));
    }

    #[test]
    fn word_enumeration() {
        let nfa = Nfa::new(&ab_or_ba());
        let words = nfa.words_up_to(3);
        assert_eq!(words.len(), 2);
        let star = Nfa::new(&RegexNode::Concat(vec![
            RegexNode::Star(Box::new(RegexNode::symbol("A"))),
            RegexNode::symbol("B"),
        ]));
        let words = star.words_up_to(3);
        assert_eq!(words.len(), 3);
        assert_eq!(words[0].len(), 1);
    }

    #[test]
    fn length_thresholds() {
        let abc = Nfa::new(&RegexNode::word(&["A", "B", "C"]));
        assert!(abc.has_word_at_least(3));
        assert!(!abc.has_word_at_least(4));
        let a_or_b = Nfa::new(&RegexNode::Alt(vec![RegexNode::symbol("A"), RegexNode::symbol("B")]));
        assert!(!a_or_b.has_word_at_least(2));
        let star = Nfa::new(&RegexNode::Star(Box::new(RegexNode::symbol("A"))));
        assert_eq!(star.shortest_word_at_least(3).unwrap().len(), 3);
    }

    #[test]
    fn display_round_trip_shape() {
        assert_eq!(ab_or_ba().to_string(), "A B | B A");
        let r = RegexNode::Concat(vec![
            RegexNode::Star(Box::new(ab_or_ba())),
            RegexNode::symbol("C"),
        ]);
        assert_eq!(r.to_string(), "(A B | B A)* C");
    }
}
