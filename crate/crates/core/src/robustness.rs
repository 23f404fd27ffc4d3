//! Configuration robustness of a design along a region path, as linear programs.
//!
//! States are `x = (Δq, q̇)` in model coordinates with `Δq` measured from the
//! start pose; the arm starts at rest with its tip at the start cell centre.
//! With `K` cells in the path there are controls `u_0 … u_{K-1}` and states
//! `x_1 … x_K`, and state `x_j` must lie in cell `κ_{j-1}`. The one-step lag
//! comes from forward Euler: position only responds to velocity one step late.
//!
//! States are eliminated, so every program is over inputs and slacks only.
//! Region membership is linearized about each cell's nominal pose and the
//! cells are shrunk by a margin to absorb the linearization error; the exact
//! condition is rechecked afterwards by [`validate_trajectory`].

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ik_point, reach_annulus, ParamAssignment, RobotModel};
use crate::error::{Error, Result};
use crate::grammar::{ConfigWord, Srg};
use crate::lp::{solve_lp, LinearProgram, LpOutcome, Relation, TOL_LP};
use crate::planner::Path;
use crate::workspace::{AbstractWorkspace, Proposition, Workspace};

/// Finite stand-in for `-∞` when ranking designs numerically.
pub const INFEASIBLE_SURROGATE: f64 = -1e3;
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    /// Control bound per actuator (N·m).
    pub u_bound: f64,
    /// Lower bound on slack growth relative to earlier slack.
    pub epsilon: f64,
    pub dt: f64,
    /// Cell shrink for the linearized membership test, as a fraction of the
    /// smaller cell side.
    pub margin_frac: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig { u_bound: 10.0, epsilon: 0.01, dt: 0.1, margin_frac: 0.1 }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_bound >= 0.0) || !self.u_bound.is_finite() {
            return Err(Error::Parameter(format!("control bound must be non-negative, got {}", self.u_bound)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Parameter(format!("time step must be positive, got {}", self.dt)));
        }
        if !(0.0..0.5).contains(&self.margin_frac) {
            return Err(Error::Parameter(format!("margin fraction must be in [0, 0.5), got {}", self.margin_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    InfeasibleLp,
    UnboundedGuard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    /// `-t*`; never positive, zero exactly when the hard problem is feasible.
    #[serde(with = "crate::float_serde")]
    pub rho: f64,
    pub status: LpStatus,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub s_u: Vec<f64>,
    pub s_v: Vec<f64>,
    /// Largest constraint residual of the returned witness.
    pub residual: f64,
}

impl RobustnessResult {
    fn infeasible() -> Self {
        RobustnessResult {
            rho: f64::NEG_INFINITY,
            status: LpStatus::InfeasibleLp,
            u: Vec::new(),
            v: Vec::new(),
            s_u: Vec::new(),
            s_v: Vec::new(),
            residual: 0.0,
        }
    }

    /// Value handed to the parameter learner.
    pub fn surrogate(&self) -> f64 {
        if self.rho.is_finite() {
            self.rho
        } else {
            INFEASIBLE_SURROGATE
        }
    }

    pub fn is_robust(&self) -> bool {
        self.status == LpStatus::Optimal && self.rho >= 0.0
    }
}

/// The augmentation channel: pushes directly on positions.
pub fn b_prime(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((0, 0), (n, n)).fill_with_identity();
    b
}

#[derive(Debug, Clone)]
pub enum NominalOutcome {
    Model(RobotModel),
    /// No pose puts the tip inside the (shrunk) cell `path.cells[index]`.
    Unreachable { index: usize, cell: usize },
}

fn margin(aw: &AbstractWorkspace, cfg: &RobustnessConfig) -> f64 {
    cfg.margin_frac * aw.hx.min(aw.hy)
}

/// Nominal poses at cell centres, pulled radially into the reach annulus when
/// needed, compiled into a model.
pub fn nominal_model(
    w: &ConfigWord,
    srg: &Srg,
    theta: &ParamAssignment,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
) -> Result<NominalOutcome> {
    cfg.validate()?;
    theta.validate_for(w, srg)?;
    let (lo, hi) = reach_annulus(&theta.lengths);
    let m = margin(aw, cfg);
    let pull = 0.25 * aw.hx.min(aw.hy);
    let mut poses: Vec<Vec<f64>> = Vec::with_capacity(path.cells.len());
    for (index, &cell_id) in path.cells.iter().enumerate() {
        let cell = aw.cell(cell_id)?;
        let c = cell.centre();
        let r = c.norm();
        let target = if r >= lo && r <= hi && (lo == hi || (r > lo + pull && r < hi - pull)) {
            c
        } else {
            let r_in = if hi - lo > 2.0 * pull { r.clamp(lo + pull, hi - pull) } else { 0.5 * (lo + hi) };
            let dir = if r > 1e-12 { c / r } else { Vector2::new(1.0, 0.0) };
            dir * r_in
        };
        if !cell.contains(target, -m) {
            return Ok(NominalOutcome::Unreachable { index, cell: cell_id });
        }
        match ik_point(&theta.lengths, target, poses.last().map(|v| v.as_slice())) {
            Ok(q) => poses.push(q),
            Err(Error::Reachability { .. }) => return Ok(NominalOutcome::Unreachable { index, cell: cell_id }),
            Err(e) => return Err(e),
        }
    }
    Ok(NominalOutcome::Model(RobotModel::compile(w, srg, theta, poses, cfg.dt)?))
}

/// Position rows of the eliminated dynamics: `Δq_j = Σ_i Pu[j][i] u_i + Pv[j][i] v_i + ph[j]`.
struct Condensed {
    n: usize,
    k: usize,
    /// Index `j - 1` for states `j = 1..=K`; inner index `i < j`.
    pu: Vec<Vec<DMatrix<f64>>>,
    pv: Vec<Vec<DMatrix<f64>>>,
    ph: Vec<DVector<f64>>,
}

impl Condensed {
    fn build(model: &RobotModel, k: usize) -> Self {
        let n = model.n_links();
        let bp = b_prime(n);
        let mut xu: Vec<DMatrix<f64>> = Vec::new();
        let mut xv: Vec<DMatrix<f64>> = Vec::new();
        let mut h = DVector::zeros(2 * n);
        let (mut pu, mut pv, mut ph) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
        for j in 0..k {
            let s = model.step(j);
            for m in xu.iter_mut().chain(xv.iter_mut()) {
                *m = &s.a * &*m;
            }
            xu.push(s.b.clone());
            xv.push(bp.clone());
            h = &s.a * h + &s.c;
            pu.push(xu.iter().map(|m| m.rows(0, n).into_owned()).collect());
            pv.push(xv.iter().map(|m| m.rows(0, n).into_owned()).collect());
            ph.push(h.rows(0, n).into_owned());
        }
        Condensed { n, k, pu, pv, ph }
    }
}

/// Column layout of the input/slack programs.
#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    with_v: bool,
    with_slack: bool,
    with_t: bool,
    k: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        2 * self.n + if self.with_v { 2 * self.n } else { 0 } + if self.with_slack { 2 } else { 0 }
    }
    fn up(&self, i: usize, r: usize) -> usize {
        i * self.stride() + r
    }
    fn um(&self, i: usize, r: usize) -> usize {
        i * self.stride() + self.n + r
    }
    fn vp(&self, i: usize, r: usize) -> usize {
        i * self.stride() + 2 * self.n + r
    }
    fn vm(&self, i: usize, r: usize) -> usize {
        i * self.stride() + 3 * self.n + r
    }
    fn su(&self, i: usize) -> usize {
        i * self.stride() + self.stride() - 2
    }
    fn sv(&self, i: usize) -> usize {
        i * self.stride() + self.stride() - 1
    }
    fn t(&self) -> usize {
        self.k * self.stride()
    }
    fn n_vars(&self) -> usize {
        self.k * self.stride() + usize::from(self.with_t)
    }
}

fn check_inputs(model: &RobotModel, aw: &AbstractWorkspace, path: &Path) -> Result<()> {
    if path.cells.is_empty() {
        return Err(Error::Spec("empty path".into()));
    }
    if model.horizon() != path.cells.len() {
        return Err(Error::Model(format!(
            "model has {} nominal steps but the path has {} cells",
            model.horizon(),
            path.cells.len()
        )));
    }
    for &c in &path.cells {
        aw.cell(c)?;
    }
    Ok(())
}

/// Adds the linearized cell-membership rows for every state.
fn add_region_rows(
    lp: &mut LinearProgram,
    lay: &Layout,
    cond: &Condensed,
    model: &RobotModel,
    aw: &AbstractWorkspace,
    path: &Path,
    m: f64,
) -> Result<()> {
    let n = cond.n;
    let q_start = model.from_absolute(&model.nominal_q[0]);
    for j in 1..=cond.k {
        let idx = j - 1;
        let cell = path.cells[idx];
        let (c_rows, b) = aw.region_constraints(cell)?;
        let q_nom = model.from_absolute(&model.nominal_q[idx]);
        let p_nom = model.fk(&q_nom);
        let jac = model.jacobian(&q_nom);
        let offset = DVector::from_iterator(n, q_start.iter().zip(&q_nom).map(|(s, q)| s - q));
        let p_base = p_nom + &jac * &offset;
        for (row, bb) in c_rows.iter().zip(&b) {
            let a = DVector::from_iterator(n, (0..n).map(|c| row[0] * jac[(0, c)] + row[1] * jac[(1, c)]));
            let mut terms = Vec::new();
            for i in 0..j {
                let cu = cond.pu[idx][i].transpose() * &a;
                for r in 0..n {
                    terms.push((lay.up(i, r), cu[r]));
                    terms.push((lay.um(i, r), -cu[r]));
                }
                if lay.with_v {
                    let cv = cond.pv[idx][i].transpose() * &a;
                    for r in 0..n {
                        terms.push((lay.vp(i, r), cv[r]));
                        terms.push((lay.vm(i, r), -cv[r]));
                    }
                }
            }
            let rhs = bb - m - (row[0] * p_base.x + row[1] * p_base.y) - a.dot(&cond.ph[idx]);
            lp.add_sparse(&terms, Relation::Le, rhs);
        }
    }
    Ok(())
}

fn add_bound_rows(lp: &mut LinearProgram, lay: &Layout, u_bound: f64) {
    for i in 0..lay.k {
        for r in 0..lay.n {
            let mut t = vec![(lay.up(i, r), 1.0), (lay.um(i, r), 1.0)];
            if lay.with_slack {
                t.push((lay.su(i), -1.0));
            }
            lp.add_sparse(&t, Relation::Le, u_bound);
            if lay.with_v {
                lp.add_sparse(&[(lay.vp(i, r), 1.0), (lay.vm(i, r), 1.0), (lay.sv(i), -1.0)], Relation::Le, 0.0);
            }
        }
    }
}

fn add_growth_rows(lp: &mut LinearProgram, lay: &Layout, eps: f64) {
    for i in 1..lay.k {
        let mut t: Vec<(usize, f64)> = (0..i).flat_map(|l| [(lay.su(l), eps), (lay.sv(l), eps)]).collect();
        t.push((lay.su(i), -1.0));
        t.push((lay.sv(i), -1.0));
        lp.add_sparse(&t, Relation::Le, 0.0);
    }
}

/// The epigraph program `min t` whose optimum is `-ρ`.
pub fn robustness_lp(
    model: &RobotModel,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
) -> Result<LinearProgram> {
    cfg.validate()?;
    check_inputs(model, aw, path)?;
    let k = path.cells.len();
    let cond = Condensed::build(model, k);
    let lay = Layout { n: cond.n, with_v: true, with_slack: true, with_t: true, k };
    let mut obj = vec![0.0; lay.n_vars()];
    obj[lay.t()] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    add_region_rows(&mut lp, &lay, &cond, model, aw, path, margin(aw, cfg))?;
    add_bound_rows(&mut lp, &lay, cfg.u_bound);
    for i in 0..k {
        lp.add_sparse(&[(lay.su(i), 1.0), (lay.sv(i), 1.0), (lay.t(), -1.0)], Relation::Le, 0.0);
    }
    add_growth_rows(&mut lp, &lay, cfg.epsilon);
    Ok(lp)
}

fn unpack(x: &[f64], lay: &Layout) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let u = (0..lay.k).map(|i| (0..lay.n).map(|r| x[lay.up(i, r)] - x[lay.um(i, r)]).collect()).collect();
    let v = if lay.with_v {
        (0..lay.k).map(|i| (0..lay.n).map(|r| x[lay.vp(i, r)] - x[lay.vm(i, r)]).collect()).collect()
    } else {
        vec![vec![0.0; lay.n]; lay.k]
    };
    (u, v)
}

/// Configuration robustness of a compiled model along `path`.
pub fn robustness(
    model: &RobotModel,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
) -> Result<RobustnessResult> {
    let lp = robustness_lp(model, aw, path, cfg)?;
    let k = path.cells.len();
    let lay = Layout { n: model.n_links(), with_v: true, with_slack: true, with_t: true, k };
    match solve_lp(&lp)? {
        LpOutcome::Optimal { x, value } => {
            let (u, v) = unpack(&x, &lay);
            let rho = if value.abs() <= SNAP { 0.0 } else { -value };
            Ok(RobustnessResult {
                rho,
                status: LpStatus::Optimal,
                u,
                v,
                s_u: (0..k).map(|i| x[lay.su(i)]).collect(),
                s_v: (0..k).map(|i| x[lay.sv(i)]).collect(),
                residual: lp.max_violation(&x),
            })
        }
        LpOutcome::Infeasible => Ok(RobustnessResult::infeasible()),
        LpOutcome::Unbounded => Ok(RobustnessResult { status: LpStatus::UnboundedGuard, ..RobustnessResult::infeasible() }),
    }
}

/// Nominal model plus robustness; unreachable cells give `ρ = -∞`.
pub fn evaluate(
    w: &ConfigWord,
    srg: &Srg,
    theta: &ParamAssignment,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
) -> Result<(Option<RobotModel>, RobustnessResult)> {
    match nominal_model(w, srg, theta, aw, path, cfg)? {
        NominalOutcome::Model(m) => {
            let r = robustness(&m, aw, path, cfg)?;
            Ok((Some(m), r))
        }
        NominalOutcome::Unreachable { .. } => Ok((None, RobustnessResult::infeasible())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { u: Vec<Vec<f64>>, states: Vec<DVector<f64>> },
    Infeasible,
}

/// Hard-constrained problem: no slacks, no augmentation. Among feasible
/// inputs the one with least total effort is returned.
pub fn feasibility(model: &RobotModel, aw: &AbstractWorkspace, path: &Path, u_bound: f64, margin_frac: f64) -> Result<Feasibility> {
    check_inputs(model, aw, path)?;
    let k = path.cells.len();
    let cond = Condensed::build(model, k);
    let lay = Layout { n: cond.n, with_v: false, with_slack: false, with_t: false, k };
    let mut lp = LinearProgram::minimize(vec![1.0; lay.n_vars()]);
    let cfg = RobustnessConfig { u_bound, margin_frac, ..Default::default() };
    add_region_rows(&mut lp, &lay, &cond, model, aw, path, margin(aw, &cfg))?;
    add_bound_rows(&mut lp, &lay, u_bound);
    match solve_lp(&lp)? {
        LpOutcome::Optimal { x, .. } => {
            let (u, _) = unpack(&x, &lay);
            let states = simulate(model, &u, None);
            Ok(Feasibility::Feasible { u, states })
        }
        _ => Ok(Feasibility::Infeasible),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackProfile {
    /// `Σ (g^u_i + g^v_i)`; `+∞` if even the slackened program is infeasible.
    #[serde(with = "crate::float_serde")]
    pub f_k: f64,
    pub g_u: Vec<f64>,
    pub g_v: Vec<f64>,
}

pub fn min_slack_lp(model: &RobotModel, aw: &AbstractWorkspace, path: &Path, cfg: &RobustnessConfig) -> Result<LinearProgram> {
    cfg.validate()?;
    check_inputs(model, aw, path)?;
    let k = path.cells.len();
    let cond = Condensed::build(model, k);
    let lay = Layout { n: cond.n, with_v: true, with_slack: true, with_t: false, k };
    let mut obj = vec![0.0; lay.n_vars()];
    for i in 0..k {
        obj[lay.su(i)] = 1.0;
        obj[lay.sv(i)] = 1.0;
    }
    let mut lp = LinearProgram::minimize(obj);
    add_region_rows(&mut lp, &lay, &cond, model, aw, path, margin(aw, cfg))?;
    add_bound_rows(&mut lp, &lay, cfg.u_bound);
    add_growth_rows(&mut lp, &lay, cfg.epsilon);
    Ok(lp)
}

/// Least total slack that makes the path trackable.
pub fn min_slack(model: &RobotModel, aw: &AbstractWorkspace, path: &Path, cfg: &RobustnessConfig) -> Result<SlackProfile> {
    let lp = min_slack_lp(model, aw, path, cfg)?;
    let k = path.cells.len();
    let lay = Layout { n: model.n_links(), with_v: true, with_slack: true, with_t: false, k };
    match solve_lp(&lp)? {
        LpOutcome::Optimal { x, value } => Ok(SlackProfile {
            f_k: value,
            g_u: (0..k).map(|i| x[lay.su(i)]).collect(),
            g_v: (0..k).map(|i| x[lay.sv(i)]).collect(),
        }),
        _ => Ok(SlackProfile { f_k: f64::INFINITY, g_u: Vec::new(), g_v: Vec::new() }),
    }
}

/// Smallest `m` with `Σ_{j<=m} g_j > ε` (zero-based), or `|g|` if none.
pub fn zero_prefix(g: &[f64], eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
    }
    if let Some(bad) = g.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("sequence entry {bad} is negative")));
    }
    let mut sum = 0.0;
    for (m, v) in g.iter().enumerate() {
        sum += v;
        if sum > eps {
            return Ok(m);
        }
    }
    Ok(g.len())
}

/// States `x_0 … x_K` of the linear model under `u` (and optional `v`).
pub fn simulate(model: &RobotModel, u: &[Vec<f64>], v: Option<&[Vec<f64>]>) -> Vec<DVector<f64>> {
    let n = model.n_links();
    let bp = b_prime(n);
    let mut x = DVector::zeros(2 * n);
    let mut out = vec![x.clone()];
    for (i, ui) in u.iter().enumerate() {
        let s = model.step(i);
        let mut next = &s.a * &x + &s.b * DVector::from_column_slice(ui) + &s.c;
        if let Some(v) = v {
            next += &bp * DVector::from_column_slice(&v[i]);
        }
        x = next;
        out.push(x.clone());
    }
    out
}

/// Absolute joint angles of a simulated state.
pub fn state_pose(model: &RobotModel, x: &DVector<f64>) -> Vec<f64> {
    let n = model.n_links();
    let q_start = model.from_absolute(&model.nominal_q[0]);
    let qm: Vec<f64> = (0..n).map(|r| q_start[r] + x[r]).collect();
    model.to_absolute(&qm)
}

/// Tip position of a simulated state under the exact kinematics.
pub fn state_position(model: &RobotModel, x: &DVector<f64>) -> Vector2<f64> {
    crate::dynamics::forward_kinematics(&model.params.lengths, &state_pose(model, x))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    Valid { positions: Vec<Vector2<f64>>, regions: Vec<usize> },
    /// `step` indexes the state `x_step` that first breaks the task.
    Violation { step: usize, reason: String },
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid { .. })
    }
}

/// Re-simulates without augmentation, maps states through the exact
/// kinematics and checks the reach-avoid conditions on the original regions.
pub fn validate_trajectory(
    model: &RobotModel,
    u: &[Vec<f64>],
    ws: &Workspace,
    aw: &AbstractWorkspace,
    path: &Path,
) -> Result<Validation> {
    check_inputs(model, aw, path)?;
    if u.len() != path.cells.len() || u.iter().any(|ui| ui.len() != model.n_links()) {
        return Err(Error::Model(format!("expected {} control vectors of size {}", path.cells.len(), model.n_links())));
    }
    let states = simulate(model, u, None);
    let mut positions = Vec::with_capacity(states.len());
    let mut regions = Vec::with_capacity(states.len());
    for (j, x) in states.iter().enumerate() {
        let p = state_position(model, x);
        let assigned = path.cells[j.saturating_sub(1)];
        let want = aw.proposition(assigned);
        let (region, prop) = match ws.classify_point(p) {
            Ok(r) => r,
            Err(e) => return Ok(Validation::Violation { step: j, reason: e.to_string() }),
        };
        if prop != want {
            return Ok(Validation::Violation {
                step: j,
                reason: format!("tip at ({:.4}, {:.4}) is {prop}, expected {want}", p.x, p.y),
            });
        }
        if let Some(&prev) = regions.last() {
            if !ws.adjacent(prev, region) {
                return Ok(Validation::Violation { step: j, reason: format!("jump from region {prev} to {region}") });
            }
        }
        positions.push(p);
        regions.push(region);
    }
    let last = *regions.last().expect("at least one state");
    if ws.regions[last].proposition != Proposition::Target {
        return Ok(Validation::Violation { step: states.len() - 1, reason: "final state is not on target".into() });
    }
    Ok(Validation::Valid { positions, regions })
}

/// Largest absolute control component.
pub fn max_control(u: &[Vec<f64>]) -> f64 {
    u.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub const TOL: f64 = TOL_LP;
