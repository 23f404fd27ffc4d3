//! Dense two-phase simplex for small and medium linear programs.
//!
//! Problems are stated over non-negative variables with `<=`, `>=` and `=`
//! rows. Pricing is Dantzig's most-negative reduced cost; after a run of
//! degenerate pivots the solver falls back to Bland's rule until the
//! objective moves again, which rules out cycling.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `optimize c·x  s.t.  rows, x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

pub const TOL_LP: f64 = 1e-6;
const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 40;

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        LinearProgram { sense, objective, constraints: Vec::new() }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Minimize, objective)
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Maximize, objective)
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars(), "row width must match variable count");
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Adds a row given as `(column, coefficient)` pairs; repeated columns add up.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or sign constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &f64| v.is_finite();
        if !self.objective.iter().all(finite) {
            return Err(Error::Numeric("non-finite objective coefficient".into()));
        }
        for c in &self.constraints {
            if c.coeffs.len() != self.n_vars() {
                return Err(Error::Numeric("row width mismatch".into()));
            }
            if !c.coeffs.iter().all(finite) || !c.rhs.is_finite() {
                return Err(Error::Numeric("non-finite constraint coefficient".into()));
            }
        }
        Ok(())
    }

    /// Plain-text export: a header line, the objective, then one row per line
    /// as `<relation> <rhs> <coefficients...>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        writeln!(s, "lp {} {} {}", self.n_vars(), self.constraints.len(), sense).unwrap();
        write!(s, "obj").unwrap();
        for c in &self.objective {
            write!(s, " {c:e}").unwrap();
        }
        s.push('\n');
        for c in &self.constraints {
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            write!(s, "{rel} {:e}", c.rhs).unwrap();
            for a in &c.coeffs {
                write!(s, " {a:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("lp text: {m}"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad(&format!("bad number `{t}`")));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "lp" {
            return Err(bad("bad header"));
        }
        let n: usize = header[1].parse().map_err(|_| bad("bad variable count"))?;
        let m: usize = header[2].parse().map_err(|_| bad("bad row count"))?;
        let sense = match header[3] {
            "min" => Sense::Minimize,
            "max" => Sense::Maximize,
            _ => return Err(bad("bad sense")),
        };
        let obj: Vec<&str> = lines.next().ok_or_else(|| bad("missing objective"))?.split_whitespace().collect();
        if obj.first() != Some(&"obj") || obj.len() != n + 1 {
            return Err(bad("bad objective line"));
        }
        let objective = obj[1..].iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
        let mut lp = LinearProgram::new(sense, objective);
        for _ in 0..m {
            let row: Vec<&str> = lines.next().ok_or_else(|| bad("missing row"))?.split_whitespace().collect();
            if row.len() != n + 2 {
                return Err(bad("bad row width"));
            }
            let relation = match row[0] {
                "<=" => Relation::Le,
                ">=" => Relation::Ge,
                "=" => Relation::Eq,
                _ => return Err(bad("bad relation")),
            };
            let rhs = num(row[1])?;
            let coeffs = row[2..].iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
            lp.add(coeffs, relation, rhs);
        }
        Ok(lp)
    }
}

/// Row-major simplex tableau. The last row is the objective (reduced costs),
/// the last column the right-hand side.
struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn stride(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride() + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.stride() + self.cols]
    }

    fn row(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let s = self.stride();
        let p = self.at(r, c);
        {
            let row = &mut self.data[r * s..(r + 1) * s];
            let inv = 1.0 / p;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[c] = 1.0;
        }
        let (before, rest) = self.data.split_at_mut(r * s);
        let (pivot_row, after) = rest.split_at_mut(s);
        let eliminate = |chunk: &mut [f64]| {
            for row in chunk.chunks_exact_mut(s) {
                let f = row[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                        *v -= f * pv;
                    }
                    row[c] = 0.0;
                }
            }
        };
        eliminate(before);
        eliminate(after);
        self.basis[r] = c;
    }

    /// Runs simplex iterations on the objective row over columns where
    /// `allowed[j]` holds. Returns `false` when unbounded.
    fn optimize(&mut self, allowed: &[bool], budget: &mut usize) -> Result<bool> {
        let obj = self.rows;
        let mut degenerate = 0usize;
        loop {
            if *budget == 0 {
                return Err(Error::Resource("simplex iteration limit reached".into()));
            }
            *budget -= 1;
            let bland = degenerate >= DEGENERATE_RUN;
            let cost = self.row(obj);
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..self.cols {
                if !allowed[j] {
                    continue;
                }
                if cost[j] < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = cost[j];
                }
            }
            let Some(c) = enter else {
                return Ok(true);
            };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Ok(false);
            };
            if best_ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

/// Solves `lp` with the two-phase method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.constraints.len();

    // Normalize to non-negative right-hand sides.
    let rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|a| -a).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = Tableau { rows: m, cols, data: vec![0.0; (m + 1) * (cols + 1)], basis: vec![0; m] };
    let s = cols + 1;
    let mut slack = n;
    let mut art = n + n_slack;
    let mut is_art = vec![false; cols];
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        t.data[i * s..i * s + n].copy_from_slice(coeffs);
        t.data[i * s + cols] = *rhs;
        match rel {
            Relation::Le => {
                t.data[i * s + slack] = 1.0;
                t.basis[i] = slack;
                slack += 1;
            }
            Relation::Ge => {
                t.data[i * s + slack] = -1.0;
                slack += 1;
                t.data[i * s + art] = 1.0;
                is_art[art] = true;
                t.basis[i] = art;
                art += 1;
            }
            Relation::Eq => {
                t.data[i * s + art] = 1.0;
                is_art[art] = true;
                t.basis[i] = art;
                art += 1;
            }
        }
    }

    let mut budget = 50_000 + 50 * (m + cols);

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        let obj = m * s;
        for i in 0..m {
            if is_art[t.basis[i]] {
                for j in 0..=cols {
                    t.data[obj + j] -= t.data[i * s + j];
                }
            }
        }
        for j in 0..cols {
            if is_art[j] {
                t.data[obj + j] = 0.0;
            }
        }
        let allowed = vec![true; cols];
        t.optimize(&allowed, &mut budget)?;
        let scale = 1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max);
        if -t.data[obj + cols] > 1e-9 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis.
        let mut keep = vec![true; m];
        for i in 0..m {
            if is_art[t.basis[i]] {
                let j = (0..n + n_slack)
                    .filter(|&j| t.at(i, j).abs() > 1e-7)
                    .max_by(|&a, &b| t.at(i, a).abs().total_cmp(&t.at(i, b).abs()));
                match j {
                    Some(j) => t.pivot(i, j),
                    None => keep[i] = false,
                }
            }
        }
        if keep.iter().any(|k| !k) {
            let mut data = Vec::with_capacity(t.data.len());
            let mut basis = Vec::new();
            for i in 0..m {
                if keep[i] {
                    data.extend_from_slice(t.row(i));
                    basis.push(t.basis[i]);
                }
            }
            data.extend(std::iter::repeat_n(0.0, s));
            t = Tableau { rows: basis.len(), cols, data, basis };
        }
    }

    // Phase 2 objective in minimization form.
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let obj = t.rows * s;
    for v in &mut t.data[obj..obj + s] {
        *v = 0.0;
    }
    for j in 0..n {
        t.data[obj + j] = sign * lp.objective[j];
    }
    for i in 0..t.rows {
        let b = t.basis[i];
        let cb = t.data[obj + b];
        if cb != 0.0 {
            for j in 0..=cols {
                t.data[obj + j] -= cb * t.data[i * s + j];
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art[j]).collect();
    if !t.optimize(&allowed, &mut budget)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for i in 0..t.rows {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    let value = lp.objective_value(&x);
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Vertex enumeration for tiny LPs: every basic solution is the unique
    //! solution of some `n` tight rows out of the constraint rows and the
    //! sign bounds.
    use super::*;

    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[p][col].abs() < 1e-11 {
                return None;
            }
            a.swap(col, p);
            b.swap(col, p);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    if f != 0.0 {
                        for k in col..n {
                            a[i][k] -= f * a[col][k];
                        }
                        b[i] -= f * b[col];
                    }
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Best objective over all feasible vertices; `None` if there are none.
    /// Only meaningful when the LP is known to be bounded.
    pub(crate) fn best_vertex_value(lp: &LinearProgram) -> Option<f64> {
        let n = lp.n_vars();
        let mut rows: Vec<(Vec<f64>, f64)> =
            lp.constraints.iter().map(|c| (c.coeffs.clone(), c.rhs)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e, 0.0));
        }
        let total = rows.len();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let a = idx.iter().map(|&i| rows[i].0.clone()).collect();
            let b = idx.iter().map(|&i| rows[i].1).collect();
            if let Some(x) = solve_square(a, b) {
                if lp.max_violation(&x) <= 1e-9 {
                    let v = lp.objective_value(&x);
                    best = Some(match (best, lp.sense) {
                        (None, _) => v,
                        (Some(b), Sense::Minimize) => b.min(v),
                        (Some(b), Sense::Maximize) => b.max(v),
                    });
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < total - n + k {
                    idx[k] += 1;
                    for l in k + 1..n {
                        idx[l] = idx[l - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
}
