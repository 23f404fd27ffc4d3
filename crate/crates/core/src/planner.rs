//! Reach-avoid region paths over the grid abstraction, found by SAT.
//!
//! A path of horizon `k` visits cells `κ_0 … κ_k`: it starts at the designated
//! start cell, stays on free cells until step `k - 1`, ends on a target cell
//! and only moves between adjacent cells (dwelling counts as adjacent).
//!
//! Encoding: one variable per (step, candidate cell). Candidates are pruned
//! with breadth-first distances, so step `i` only offers cells reachable from
//! the start in `i` moves that can still reach a target in `k - i` moves.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sat::{solve, Cnf, SatResult};
use crate::workspace::{AbstractWorkspace, Proposition};

/// Above this many candidates a step uses a sequential at-most-one ladder
/// instead of pairwise exclusion.
const PAIRWISE_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSpec {
    pub start: usize,
    pub target: Proposition,
    pub k_max: usize,
}

impl PathSpec {
    pub fn new(start: usize, k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Parameter("horizon bound must be at least 1".into()));
        }
        Ok(PathSpec { start, target: Proposition::Target, k_max })
    }

    fn check(&self, aw: &AbstractWorkspace) -> Result<()> {
        let cell = aw.cell(self.start).map_err(|_| Error::Spec(format!("start cell {} does not exist", self.start)))?;
        if cell.proposition == Proposition::Obstacle {
            return Err(Error::Spec(format!("start cell {} is an obstacle", self.start)));
        }
        if aw.ids_with(self.target).next().is_none() {
            return Err(Error::Spec("workspace has no target cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<usize>,
}

impl Path {
    pub fn new(cells: Vec<usize>) -> Self {
        Path { cells }
    }

    /// Number of moves `k`.
    pub fn horizon(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    /// Checks every path invariant without the solver.
    pub fn check(&self, aw: &AbstractWorkspace, spec: &PathSpec) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        let Some((&last, init)) = self.cells.split_last() else {
            return err("empty path".into());
        };
        if self.cells[0] != spec.start {
            return err(format!("path starts at {} not {}", self.cells[0], spec.start));
        }
        if self.cells.iter().any(|&c| c >= aw.len()) {
            return err("path references a missing cell".into());
        }
        if aw.proposition(last) != spec.target {
            return err(format!("final cell {last} is not a target"));
        }
        if let Some(&c) = init.iter().find(|&&c| aw.proposition(c) != Proposition::Free) {
            return err(format!("intermediate cell {c} is not free"));
        }
        if let Some(w) = self.cells.windows(2).find(|w| !aw.adjacent(w[0], w[1])) {
            return err(format!("cells {} and {} are not adjacent", w[0], w[1]));
        }
        Ok(())
    }
}

/// Forbids one exact path (at its own horizon).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockingClause {
    pub path: Path,
}

pub fn block(path: &Path) -> BlockingClause {
    BlockingClause { path: path.clone() }
}

pub type BlockSet = BTreeSet<BlockingClause>;

/// `(step, cell)` ↔ DIMACS variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarMap {
    pub horizon: usize,
    /// Per step, sorted `(cell, var)` pairs.
    pub steps: Vec<Vec<(usize, i32)>>,
}

impl VarMap {
    pub fn var(&self, step: usize, cell: usize) -> Option<i32> {
        let s = self.steps.get(step)?;
        s.binary_search_by_key(&cell, |p| p.0).ok().map(|i| s[i].1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub cnf: Cnf,
    pub map: VarMap,
    /// Pruning already showed there is no path at this horizon.
    pub trivially_unsat: bool,
}

/// Moves allowed from `c`: itself plus 4-neighbours. Only free cells move on.
fn successors(aw: &AbstractWorkspace, c: usize) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(c).chain(aw.neighbors(c))
}

/// Breadth-first distances from the start (leaving only free cells) and to
/// the nearest target (arriving through free cells).
fn distances(aw: &AbstractWorkspace, spec: &PathSpec) -> (Vec<usize>, Vec<usize>) {
    let n = aw.len();
    let mut from_start = vec![usize::MAX; n];
    let mut q = VecDeque::new();
    from_start[spec.start] = 0;
    q.push_back(spec.start);
    while let Some(c) = q.pop_front() {
        if aw.proposition(c) != Proposition::Free {
            continue;
        }
        for nb in aw.neighbors(c) {
            if aw.proposition(nb) != Proposition::Obstacle && from_start[nb] == usize::MAX {
                from_start[nb] = from_start[c] + 1;
                q.push_back(nb);
            }
        }
    }
    let mut to_target = vec![usize::MAX; n];
    for t in aw.ids_with(spec.target) {
        to_target[t] = 0;
        q.push_back(t);
    }
    while let Some(c) = q.pop_front() {
        for nb in aw.neighbors(c) {
            if aw.proposition(nb) == Proposition::Free && to_target[nb] == usize::MAX {
                to_target[nb] = to_target[c] + 1;
                q.push_back(nb);
            }
        }
    }
    (from_start, to_target)
}

fn unsat_encoding(k: usize) -> Encoding {
    let mut cnf = Cnf::new(1);
    cnf.add_clause([1]).unwrap();
    cnf.add_clause([-1]).unwrap();
    Encoding { cnf, map: VarMap { horizon: k, steps: vec![Vec::new(); k + 1] }, trivially_unsat: true }
}

fn at_most_one(cnf: &mut Cnf, vars: &[i32]) -> Result<()> {
    if vars.len() <= PAIRWISE_LIMIT {
        for a in 0..vars.len() {
            for b in a + 1..vars.len() {
                cnf.add_clause([-vars[a], -vars[b]])?;
            }
        }
        return Ok(());
    }
    // sequential counter: s_j means "some of vars[0..=j] is true"
    let s: Vec<i32> = (0..vars.len() - 1).map(|_| cnf.new_var()).collect();
    cnf.add_clause([-vars[0], s[0]])?;
    for j in 1..vars.len() - 1 {
        cnf.add_clause([-vars[j], s[j]])?;
        cnf.add_clause([-s[j - 1], s[j]])?;
        cnf.add_clause([-vars[j], -s[j - 1]])?;
    }
    cnf.add_clause([-vars[vars.len() - 1], -s[vars.len() - 2]])?;
    Ok(())
}

/// CNF whose models are exactly the horizon-`k` paths, minus blocked ones.
pub fn encode(aw: &AbstractWorkspace, spec: &PathSpec, k: usize, blocked: &BlockSet) -> Result<Encoding> {
    spec.check(aw)?;
    let (ds, dt) = distances(aw, spec);
    encode_with(aw, spec, k, blocked, &ds, &dt)
}

fn encode_with(
    aw: &AbstractWorkspace,
    spec: &PathSpec,
    k: usize,
    blocked: &BlockSet,
    ds: &[usize],
    dt: &[usize],
) -> Result<Encoding> {
    let mut cnf = Cnf::new(0);
    let mut steps: Vec<Vec<(usize, i32)>> = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let want = if i == k { spec.target } else { Proposition::Free };
        let mut cand = Vec::new();
        for c in 0..aw.len() {
            if aw.proposition(c) == want && ds[c] <= i && dt[c] <= k - i {
                cand.push((c, 0));
            }
        }
        if cand.is_empty() {
            return Ok(unsat_encoding(k));
        }
        for p in &mut cand {
            p.1 = cnf.new_var();
        }
        steps.push(cand);
    }
    let map = VarMap { horizon: k, steps };
    for i in 0..=k {
        let vars: Vec<i32> = map.steps[i].iter().map(|p| p.1).collect();
        cnf.add_clause(vars.iter().copied())?;
        at_most_one(&mut cnf, &vars)?;
        if i < k {
            for &(c, v) in &map.steps[i] {
                let mut clause = vec![-v];
                clause.extend(successors(aw, c).filter_map(|nb| map.var(i + 1, nb)));
                cnf.add_clause(clause)?;
            }
        }
    }
    for b in blocked {
        if b.path.cells.len() != k + 1 {
            continue;
        }
        let lits: Option<Vec<i32>> =
            b.path.cells.iter().enumerate().map(|(i, &c)| map.var(i, c).map(|v| -v)).collect();
        // a path using a pruned cell cannot appear anyway
        if let Some(lits) = lits {
            cnf.add_clause(lits)?;
        }
    }
    Ok(Encoding { cnf, map, trivially_unsat: false })
}

pub fn decode(enc: &Encoding, model: &[bool]) -> Result<Path> {
    let mut cells = Vec::with_capacity(enc.map.horizon + 1);
    for (i, step) in enc.map.steps.iter().enumerate() {
        let chosen: Vec<usize> = step.iter().filter(|p| model[p.1 as usize - 1]).map(|p| p.0).collect();
        match chosen.as_slice() {
            [c] => cells.push(*c),
            _ => return Err(Error::Numeric(format!("model selects {} cells at step {i}", chosen.len()))),
        }
    }
    Ok(Path { cells })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanOutcome {
    Found(Path),
    Infeasible,
}

/// Iterative deepening over `k = 0 … k_max`; horizons below the breadth-first
/// lower bound are skipped because their encodings are trivially unsatisfiable.
pub fn plan(aw: &AbstractWorkspace, spec: &PathSpec, blocked: &BlockSet) -> Result<PlanOutcome> {
    spec.check(aw)?;
    let (ds, dt) = distances(aw, spec);
    let lower = aw.ids_with(spec.target).map(|t| ds[t]).min().unwrap_or(usize::MAX);
    if lower == usize::MAX {
        return Ok(PlanOutcome::Infeasible);
    }
    for k in lower..=spec.k_max {
        let enc = encode_with(aw, spec, k, blocked, &ds, &dt)?;
        if enc.trivially_unsat {
            continue;
        }
        if let SatResult::Sat(model) = solve(&enc.cnf)? {
            let path = decode(&enc, &model)?;
            path.check(aw, spec)?;
            return Ok(PlanOutcome::Found(path));
        }
    }
    Ok(PlanOutcome::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workspace::{Polytope, Region, Workspace};

    fn strip(props: &[Proposition]) -> AbstractWorkspace {
        let n = props.len() as f64;
        let regions = props
            .iter()
            .enumerate()
            .map(|(i, p)| Region::new(Polytope::from_box(i as f64, i as f64 + 1.0, 0.0, 1.0), *p))
            .collect();
        Workspace::new([0.0, n, 0.0, 1.0], regions).unwrap().abstract_grid(1.0).unwrap()
    }

    fn all_models(cnf: &Cnf) -> Vec<Vec<bool>> {
        (0u32..1 << cnf.n_vars)
            .map(|bits| (0..cnf.n_vars).map(|v| bits >> v & 1 == 1).collect::<Vec<_>>())
            .filter(|m| cnf.satisfied_by(m))
            .collect()
    }

    use Proposition::{Free as F, Obstacle as O, Target as T};

    #[test]
    fn strip_has_unique_model() {
        let aw = strip(&[F, F, T]);
        let spec = PathSpec::new(0, 5).unwrap();
        let enc = encode(&aw, &spec, 2, &BlockSet::new()).unwrap();
        let models = all_models(&enc.cnf);
        assert_eq!(models.len(), 1);
        assert_eq!(decode(&enc, &models[0]).unwrap().cells, vec![0, 1, 2]);
    }

    #[test]
    fn models_are_exactly_paths_with_dwell() {
        // horizon 3 on F F T: one dwell somewhere in the first two cells
        let aw = strip(&[F, F, T]);
        let spec = PathSpec::new(0, 5).unwrap();
        let enc = encode(&aw, &spec, 3, &BlockSet::new()).unwrap();
        let paths: BTreeSet<Vec<usize>> =
            all_models(&enc.cnf).iter().map(|m| decode(&enc, m).unwrap().cells).collect();
        let want: BTreeSet<Vec<usize>> = [vec![0, 0, 1, 2], vec![0, 1, 1, 2]].into_iter().collect();
        assert_eq!(paths, want);
    }

    #[test]
    fn start_on_target_gives_empty_move_path() {
        let aw = strip(&[T, F]);
        let spec = PathSpec::new(0, 3).unwrap();
        let enc = encode(&aw, &spec, 0, &BlockSet::new()).unwrap();
        assert!(matches!(solve(&enc.cnf).unwrap(), SatResult::Sat(_)));
        assert_eq!(plan(&aw, &spec, &BlockSet::new()).unwrap(), PlanOutcome::Found(Path::new(vec![0])));
    }

    #[test]
    fn separating_wall_is_unsat_at_every_horizon() {
        let aw = strip(&[F, O, T]);
        let spec = PathSpec::new(0, 6).unwrap();
        for k in 0..=6 {
            let enc = encode(&aw, &spec, k, &BlockSet::new()).unwrap();
            assert_eq!(solve(&enc.cnf).unwrap(), SatResult::Unsat);
        }
        assert_eq!(plan(&aw, &spec, &BlockSet::new()).unwrap(), PlanOutcome::Infeasible);
    }

    #[test]
    fn spec_errors() {
        let aw = strip(&[F, F]);
        assert!(matches!(encode(&aw, &PathSpec::new(0, 2).unwrap(), 1, &BlockSet::new()), Err(Error::Spec(_))));
        let aw = strip(&[O, T]);
        assert!(matches!(plan(&aw, &PathSpec::new(0, 2).unwrap(), &BlockSet::new()), Err(Error::Spec(_))));
        let aw = strip(&[F, T]);
        assert!(matches!(plan(&aw, &PathSpec::new(7, 2).unwrap(), &BlockSet::new()), Err(Error::Spec(_))));
        assert!(PathSpec::new(0, 0).is_err());
    }

    #[test]
    fn blocking_unique_path_makes_strip_infeasible() {
        let aw = strip(&[F, F, T]);
        let spec = PathSpec::new(0, 2).unwrap();
        let PlanOutcome::Found(p) = plan(&aw, &spec, &BlockSet::new()).unwrap() else { panic!() };
        assert_eq!(p.cells, vec![0, 1, 2]);
        let mut blocked = BlockSet::new();
        blocked.insert(block(&p));
        blocked.insert(block(&p));
        assert_eq!(blocked.len(), 1);
        assert_eq!(plan(&aw, &spec, &blocked).unwrap(), PlanOutcome::Infeasible);
    }

    #[test]
    fn blocking_yields_a_different_path() {
        let aw = strip(&[F, F, T]);
        let spec = PathSpec::new(0, 4).unwrap();
        let mut blocked = BlockSet::new();
        let mut seen = BTreeSet::new();
        while let PlanOutcome::Found(p) = plan(&aw, &spec, &blocked).unwrap() {
            p.check(&aw, &spec).unwrap();
            assert!(seen.insert(p.clone()), "path returned twice");
            blocked.insert(block(&p));
        }
        // horizon 2: 012; 3: 0012 0112; 4: 00012 00112 01112 01012
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn corridor_exhaustion() {
        let aw = strip(&[F, T]);
        let spec = PathSpec::new(0, 3).unwrap();
        let mut blocked = BlockSet::new();
        let mut count = 0;
        while let PlanOutcome::Found(p) = plan(&aw, &spec, &blocked).unwrap() {
            blocked.insert(block(&p));
            count += 1;
        }
        // 01, 001, 0001
        assert_eq!(count, 3);
    }

    #[test]
    fn case_study_path_goes_around_obstacle() {
        let ws = Workspace::with_free_fill(
            [0.0, 5.0, 0.0, 5.0],
            vec![
                Region::new(Polytope::from_box(1.7, 3.0, 2.0, 3.0), Proposition::Obstacle),
                Region::new(Polytope::from_box(3.5, 4.2, 3.8, 4.5), Proposition::Target),
            ],
        )
        .unwrap();
        let aw = ws.abstract_grid(0.1).unwrap();
        let start = aw.cell_at(nalgebra::Vector2::new(1.55, 0.55)).unwrap();
        let spec = PathSpec::new(start, 200).unwrap();
        let PlanOutcome::Found(p) = plan(&aw, &spec, &BlockSet::new()).unwrap() else { panic!() };
        p.check(&aw, &spec).unwrap();
        assert!(p.cells.len() >= 41 && p.cells.len() <= 121, "{} cells", p.cells.len());
    }

    #[test]
    fn large_candidate_sets_use_ladder() {
        // wide open grid forces many candidates per step
        let ws = Workspace::with_free_fill(
            [0.0, 12.0, 0.0, 12.0],
            vec![Region::new(Polytope::from_box(11.0, 12.0, 11.0, 12.0), Proposition::Target)],
        )
        .unwrap();
        let aw = ws.abstract_grid(1.0).unwrap();
        let spec = PathSpec::new(0, 40).unwrap();
        let enc = encode(&aw, &spec, 30, &BlockSet::new()).unwrap();
        assert!(enc.map.steps.iter().any(|s| s.len() > PAIRWISE_LIMIT));
        let SatResult::Sat(m) = solve(&enc.cnf).unwrap() else { panic!() };
        decode(&enc, &m).unwrap().check(&aw, &spec).unwrap();
    }
}
