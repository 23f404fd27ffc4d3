//! Seeded instance generators shared by the benchmarks.

use modbot_core::lp::{LinearProgram, Relation};
use modbot_core::sat::Cnf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random 3-CNF; near `m / n = 4.26` instances are hardest.
pub fn random_3cnf(n: usize, m: usize, seed: u64) -> Cnf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cnf = Cnf::new(n);
    for _ in 0..m {
        let clause: Vec<i32> = (0..3)
            .map(|_| {
                let v = rng.gen_range(1..=n as i32);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        cnf.add_clause(clause).expect("literals are in range");
    }
    cnf
}

/// Bounded, feasible maximization: `A x <= b` with `b > 0`, `x <= 10`.
pub fn random_lp(n: usize, m: usize, seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lp = LinearProgram::maximize((0..n).map(|_| rng.gen_range(-1.0..2.0)).collect());
    for _ in 0..m {
        let row = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
        lp.add(row, Relation::Le, rng.gen_range(1.0..10.0));
    }
    for j in 0..n {
        lp.add_sparse(&[(j, 1.0)], Relation::Le, 10.0);
    }
    lp
}
