//! A compact CDCL SAT solver with DIMACS import and export.
//!
//! Literals use the DIMACS convention externally (`v` or `-v`, `v >= 1`).
//! Internally literal `2v` is positive and `2v + 1` negative over zero-based
//! variables. Two watched literals per clause, first-UIP learning, VSIDS
//! branching with phase saving, Luby restarts.

use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cnf {
    pub n_vars: usize,
    pub clauses: Vec<Vec<i32>>,
}

impl Cnf {
    pub fn new(n_vars: usize) -> Self {
        Cnf { n_vars, clauses: Vec::new() }
    }

    /// Allocates a fresh variable and returns its DIMACS index.
    pub fn new_var(&mut self) -> i32 {
        self.n_vars += 1;
        self.n_vars as i32
    }

    /// Appends a clause; literals must be non-zero and reference declared variables.
    pub fn add_clause(&mut self, lits: impl IntoIterator<Item = i32>) -> Result<()> {
        let clause: Vec<i32> = lits.into_iter().collect();
        if clause.is_empty() {
            return Err(Error::Domain("empty clause".into()));
        }
        for &l in &clause {
            if l == 0 || l.unsigned_abs() as usize > self.n_vars {
                return Err(Error::Domain(format!("literal {l} out of range 1..={}", self.n_vars)));
            }
        }
        self.clauses.push(clause);
        Ok(())
    }

    /// Whether `model` (indexed by variable - 1) satisfies every clause.
    pub fn satisfied_by(&self, model: &[bool]) -> bool {
        self.clauses.iter().all(|c| {
            c.iter().any(|&l| {
                let v = model[l.unsigned_abs() as usize - 1];
                if l > 0 {
                    v
                } else {
                    !v
                }
            })
        })
    }

    pub fn to_dimacs(&self) -> String {
        let mut s = String::new();
        writeln!(s, "p cnf {} {}", self.n_vars, self.clauses.len()).unwrap();
        for c in &self.clauses {
            for l in c {
                write!(s, "{l} ").unwrap();
            }
            s.push_str("0\n");
        }
        s
    }

    pub fn from_dimacs(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse(format!("dimacs: {m}"));
        let mut header: Option<(usize, usize)> = None;
        let mut cnf = Cnf::new(0);
        let mut current = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            if line.starts_with('%') {
                break;
            }
            if line.starts_with('p') {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" {
                    return Err(bad(format!("bad problem line `{line}`")));
                }
                let n = parts[2].parse().map_err(|_| bad("bad variable count".into()))?;
                let m = parts[3].parse().map_err(|_| bad("bad clause count".into()))?;
                header = Some((n, m));
                cnf.n_vars = n;
                continue;
            }
            if header.is_none() {
                return Err(bad("clause before problem line".into()));
            }
            for tok in line.split_whitespace() {
                let l: i32 = tok.parse().map_err(|_| bad(format!("bad literal `{tok}`")))?;
                if l == 0 {
                    cnf.add_clause(std::mem::take(&mut current))?;
                } else {
                    current.push(l);
                }
            }
        }
        if !current.is_empty() {
            cnf.add_clause(current)?;
        }
        let (_, m) = header.ok_or_else(|| bad("missing problem line".into()))?;
        if cnf.clauses.len() != m {
            return Err(bad(format!("header declares {m} clauses, found {}", cnf.clauses.len())));
        }
        Ok(cnf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    /// Model indexed by variable - 1.
    Sat(Vec<bool>),
    Unsat,
}

pub const DEFAULT_CONFLICT_LIMIT: u64 = 5_000_000;

pub fn solve(cnf: &Cnf) -> Result<SatResult> {
    solve_with_limit(cnf, DEFAULT_CONFLICT_LIMIT)
}

pub fn solve_with_limit(cnf: &Cnf, max_conflicts: u64) -> Result<SatResult> {
    let mut s = Solver::new(cnf.n_vars);
    for c in &cnf.clauses {
        if c.is_empty() {
            return Ok(SatResult::Unsat);
        }
        let lits: Vec<usize> = c.iter().map(|&l| to_internal(l)).collect();
        if !s.add_input_clause(lits) {
            return Ok(SatResult::Unsat);
        }
    }
    let out = s.run(max_conflicts)?;
    if let SatResult::Sat(m) = &out {
        debug_assert!(cnf.satisfied_by(m));
    }
    Ok(out)
}

fn to_internal(l: i32) -> usize {
    let v = l.unsigned_abs() as usize - 1;
    2 * v + usize::from(l < 0)
}

#[inline]
fn var(l: usize) -> usize {
    l >> 1
}

const UNDEF: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Act(f64);
impl Eq for Act {}
impl PartialOrd for Act {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Act {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

struct Solver {
    n: usize,
    clauses: Vec<Vec<usize>>,
    watches: Vec<Vec<usize>>,
    /// 0 false, 1 true, 2 unassigned.
    assign: Vec<u8>,
    level: Vec<usize>,
    reason: Vec<Option<usize>>,
    trail: Vec<usize>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    heap: BinaryHeap<(Act, std::cmp::Reverse<usize>)>,
    phase: Vec<bool>,
    seen: Vec<bool>,
}

impl Solver {
    fn new(n: usize) -> Self {
        let heap = (0..n).map(|v| (Act(0.0), std::cmp::Reverse(v))).collect();
        Solver {
            n,
            clauses: Vec::new(),
            watches: vec![Vec::new(); 2 * n],
            assign: vec![UNDEF; n],
            level: vec![0; n],
            reason: vec![None; n],
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: vec![0.0; n],
            var_inc: 1.0,
            heap,
            phase: vec![false; n],
            seen: vec![false; n],
        }
    }

    /// 1 true, 0 false, 2 unassigned.
    #[inline]
    fn value(&self, l: usize) -> u8 {
        let a = self.assign[var(l)];
        if a == UNDEF {
            UNDEF
        } else {
            a ^ (l as u8 & 1)
        }
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn enqueue(&mut self, l: usize, reason: Option<usize>) {
        let v = var(l);
        self.assign[v] = 1 ^ (l as u8 & 1);
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Returns `false` if the formula became trivially unsatisfiable.
    fn add_input_clause(&mut self, mut lits: Vec<usize>) -> bool {
        lits.sort_unstable();
        lits.dedup();
        if lits.windows(2).any(|w| w[0] ^ 1 == w[1]) {
            return true; // tautology
        }
        lits.retain(|&l| self.value(l) != 0);
        if lits.iter().any(|&l| self.value(l) == 1) {
            return true;
        }
        match lits.len() {
            0 => false,
            1 => {
                self.enqueue(lits[0], None);
                self.propagate().is_none()
            }
            _ => {
                self.attach(lits);
                true
            }
        }
    }

    fn attach(&mut self, lits: Vec<usize>) -> usize {
        let ci = self.clauses.len();
        self.watches[lits[0]].push(ci);
        self.watches[lits[1]].push(ci);
        self.clauses.push(lits);
        ci
    }

    /// Unit propagation; returns a conflicting clause index.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = p ^ 1;
            let mut ws = std::mem::take(&mut self.watches[false_lit]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let ci = ws[i];
                i += 1;
                let c = &mut self.clauses[ci];
                if c[0] == false_lit {
                    c.swap(0, 1);
                }
                let first = c[0];
                let first_val = {
                    let a = self.assign[var(first)];
                    if a == UNDEF {
                        UNDEF
                    } else {
                        a ^ (first as u8 & 1)
                    }
                };
                if first_val == 1 {
                    ws[j] = ci;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..c.len() {
                    let l = c[k];
                    let a = self.assign[var(l)];
                    let val = if a == UNDEF { UNDEF } else { a ^ (l as u8 & 1) };
                    if val != 0 {
                        c.swap(1, k);
                        self.watches[c[1]].push(ci);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = ci;
                j += 1;
                if first_val == 0 {
                    conflict = Some(ci);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    self.enqueue(first, Some(ci));
                }
            }
            ws.truncate(j);
            self.watches[false_lit] = ws;
            if conflict.is_some() {
                self.qhead = self.trail.len();
                return conflict;
            }
        }
        None
    }

    fn bump(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
            self.heap = (0..self.n)
                .filter(|&v| self.assign[v] == UNDEF)
                .map(|v| (Act(self.activity[v]), std::cmp::Reverse(v)))
                .collect();
        } else if self.assign[v] == UNDEF {
            self.heap.push((Act(self.activity[v]), std::cmp::Reverse(v)));
        }
    }

    /// First-UIP learning; returns the learnt clause (asserting literal first)
    /// and the backjump level.
    fn analyze(&mut self, conflict: usize) -> (Vec<usize>, usize) {
        let mut learnt = vec![0usize];
        let mut counter = 0usize;
        let mut p: Option<usize> = None;
        let mut idx = self.trail.len();
        let mut ci = conflict;
        let current = self.decision_level();
        loop {
            let lits = self.clauses[ci].clone();
            for q in lits {
                if let Some(p) = p {
                    if var(q) == var(p) {
                        continue;
                    }
                }
                let v = var(q);
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump(v);
                    if self.level[v] >= current {
                        counter += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[var(self.trail[idx])] {
                    break;
                }
            }
            let lit = self.trail[idx];
            p = Some(lit);
            self.seen[var(lit)] = false;
            counter -= 1;
            if counter == 0 {
                break;
            }
            ci = self.reason[var(lit)].expect("implied literal has a reason");
        }
        learnt[0] = p.unwrap() ^ 1;
        for &l in &learnt[1..] {
            self.seen[var(l)] = false;
        }
        let mut bt = 0;
        if learnt.len() > 1 {
            let (mut best, mut best_lvl) = (1, self.level[var(learnt[1])]);
            for (k, &l) in learnt.iter().enumerate().skip(2) {
                if self.level[var(l)] > best_lvl {
                    best = k;
                    best_lvl = self.level[var(l)];
                }
            }
            learnt.swap(1, best);
            bt = best_lvl;
        }
        (learnt, bt)
    }

    fn cancel_until(&mut self, lvl: usize) {
        if self.decision_level() <= lvl {
            return;
        }
        let start = self.trail_lim[lvl];
        for k in (start..self.trail.len()).rev() {
            let l = self.trail[k];
            let v = var(l);
            self.phase[v] = l & 1 == 0;
            self.assign[v] = UNDEF;
            self.reason[v] = None;
            self.heap.push((Act(self.activity[v]), std::cmp::Reverse(v)));
        }
        self.trail.truncate(start);
        self.trail_lim.truncate(lvl);
        self.qhead = self.trail.len();
    }

    fn pick_branch(&mut self) -> Option<usize> {
        while let Some((Act(a), std::cmp::Reverse(v))) = self.heap.pop() {
            if self.assign[v] == UNDEF && a == self.activity[v] {
                return Some(2 * v + usize::from(!self.phase[v]));
            }
        }
        // stale heap entries can hide variables whose entry was superseded
        (0..self.n).find(|&v| self.assign[v] == UNDEF).map(|v| 2 * v + usize::from(!self.phase[v]))
    }

    fn run(&mut self, max_conflicts: u64) -> Result<SatResult> {
        if self.propagate().is_some() {
            return Ok(SatResult::Unsat);
        }
        let mut conflicts = 0u64;
        let mut restart_idx = 1u64;
        let mut until_restart = 100 * luby(restart_idx);
        loop {
            if let Some(conflict) = self.propagate() {
                conflicts += 1;
                if conflicts > max_conflicts {
                    return Err(Error::Resource(format!("SAT conflict limit {max_conflicts} reached")));
                }
                if self.decision_level() == 0 {
                    return Ok(SatResult::Unsat);
                }
                let (learnt, bt) = self.analyze(conflict);
                self.cancel_until(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let asserting = learnt[0];
                    let ci = self.attach(learnt);
                    self.enqueue(asserting, Some(ci));
                }
                self.var_inc /= 0.95;
                until_restart = until_restart.saturating_sub(1);
                if until_restart == 0 {
                    restart_idx += 1;
                    until_restart = 100 * luby(restart_idx);
                    self.cancel_until(0);
                }
            } else {
                match self.pick_branch() {
                    None => {
                        let model = self.assign.iter().map(|&a| a == 1).collect();
                        return Ok(SatResult::Sat(model));
                    }
                    Some(l) => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(l, None);
                    }
                }
            }
        }
    }
}

/// Luby restart sequence 1 1 2 1 1 2 4 ... (1-based).
fn luby(mut i: u64) -> u64 {
    loop {
        let mut k = 1u32;
        while (1u64 << k) - 1 < i {
            k += 1;
        }
        if (1u64 << k) - 1 == i {
            return 1u64 << (k - 1);
        }
        i -= (1u64 << (k - 1)) - 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth_table(cnf: &Cnf) -> bool {
        assert!(cnf.n_vars <= 20);
        (0u32..1 << cnf.n_vars).any(|bits| {
            let m: Vec<bool> = (0..cnf.n_vars).map(|v| bits >> v & 1 == 1).collect();
            cnf.satisfied_by(&m)
        })
    }

    #[test]
    fn small_examples() {
        let mut cnf = Cnf::new(2);
        cnf.add_clause([1, 2]).unwrap();
        cnf.add_clause([-1]).unwrap();
        match solve(&cnf).unwrap() {
            SatResult::Sat(m) => assert!(!m[0] && m[1]),
            SatResult::Unsat => panic!(),
        }
        let mut cnf = Cnf::new(1);
        cnf.add_clause([1]).unwrap();
        cnf.add_clause([-1]).unwrap();
        assert_eq!(solve(&cnf).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn bad_clauses_rejected() {
        let mut cnf = Cnf::new(2);
        assert!(cnf.add_clause([]).is_err());
        assert!(cnf.add_clause([3]).is_err());
        assert!(cnf.add_clause([0]).is_err());
    }

    #[test]
    fn luby_prefix() {
        let s: Vec<u64> = (1..=15).map(luby).collect();
        assert_eq!(s, vec![1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]);
    }

    #[test]
    fn random_3cnf_matches_truth_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let n = rng.gen_range(3..=16);
            let m = 3 * n;
            let mut cnf = Cnf::new(n);
            for _ in 0..m {
                let c: Vec<i32> = (0..3)
                    .map(|_| {
                        let v = rng.gen_range(1..=n as i32);
                        if rng.gen_bool(0.5) {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect();
                cnf.add_clause(c).unwrap();
            }
            let expect = truth_table(&cnf);
            match solve(&cnf).unwrap() {
                SatResult::Sat(model) => {
                    assert!(expect);
                    assert!(cnf.satisfied_by(&model));
                }
                SatResult::Unsat => assert!(!expect),
            }
        }
    }

    #[test]
    fn pigeonhole_unsat() {
        // 6 pigeons, 5 holes
        let (p, h) = (6, 5);
        let var = |i: usize, j: usize| (i * h + j + 1) as i32;
        let mut cnf = Cnf::new(p * h);
        for i in 0..p {
            cnf.add_clause((0..h).map(|j| var(i, j))).unwrap();
        }
        for j in 0..h {
            for a in 0..p {
                for b in a + 1..p {
                    cnf.add_clause([-var(a, j), -var(b, j)]).unwrap();
                }
            }
        }
        assert_eq!(solve(&cnf).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn conflict_limit_is_resource_error() {
        let (p, h) = (8, 7);
        let var = |i: usize, j: usize| (i * h + j + 1) as i32;
        let mut cnf = Cnf::new(p * h);
        for i in 0..p {
            cnf.add_clause((0..h).map(|j| var(i, j))).unwrap();
        }
        for j in 0..h {
            for a in 0..p {
                for b in a + 1..p {
                    cnf.add_clause([-var(a, j), -var(b, j)]).unwrap();
                }
            }
        }
        assert!(matches!(solve_with_limit(&cnf, 10), Err(Error::Resource(_))));
    }

    #[test]
    fn dimacs_roundtrip() {
        let mut cnf = Cnf::new(3);
        cnf.add_clause([1, -2]).unwrap();
        cnf.add_clause([2, 3, -1]).unwrap();
        let text = cnf.to_dimacs();
        assert_eq!(Cnf::from_dimacs(&text).unwrap(), cnf);
        let messy = "c comment\np cnf 3 2\n1 -2\n0 2 3 -1 0\n";
        assert_eq!(Cnf::from_dimacs(messy).unwrap(), cnf);
        assert!(Cnf::from_dimacs("p cnf 2 1\n1 3 0\n").is_err());
        assert!(Cnf::from_dimacs("p cnf 2 2\n1 0\n").is_err());
    }
}
