//! The outer synthesis loop: plan a region path, size the links, refine the
//! path on counterexamples and grow the structure when paths run out.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ParamAssignment, RobotModel};
use crate::error::{Error, Result};
use crate::grammar::{link_count, ConfigWord, Sra, Srg};
use crate::learner::{optimize_params, HistoryRow, Kernel, SearchOptions};
use crate::planner::{block, plan, BlockSet, Path, PathSpec, PlanOutcome};
use crate::robustness::{
    feasibility, max_control, nominal_model, robustness, simulate, state_pose, state_position, validate_trajectory,
    Feasibility, NominalOutcome, RobustnessConfig, RobustnessResult, Validation,
};
use crate::workspace::{AbstractWorkspace, Proposition, Workspace};

pub const INITIAL_WORD: &str = "B ε JO ε L ε EN";
/// Tokens inserted ahead of the final edge into the end effector.
pub const LINK_EXTENSION: [&str; 4] = ["ε", "JO", "ε", "L"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_links: usize,
    /// Robustness evaluations per (structure, path) pair.
    pub gp_budget: usize,
    pub k_max: usize,
    /// Counterexample paths tolerated per structure before adding a link.
    pub max_blocks_per_structure: usize,
    pub wall_clock_secs: Option<f64>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_links: 4, gp_budget: 80, k_max: 200, max_blocks_per_structure: 3, wall_clock_secs: None }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if self.max_links == 0 || self.gp_budget == 0 || self.k_max == 0 || self.max_blocks_per_structure == 0 {
            return Err(Error::Parameter(format!("limits must be positive: {self:?}")));
        }
        if let Some(s) = self.wall_clock_secs {
            if !(s > 0.0) {
                return Err(Error::Parameter(format!("wall-clock cap must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Abstraction cell size.
    pub cell: f64,
    pub robustness: RobustnessConfig,
    pub limits: Limits,
    pub seed: u64,
    pub grid_per_dim: usize,
    pub kernel: Kernel,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            cell: 0.1,
            robustness: RobustnessConfig::default(),
            limits: Limits::default(),
            seed: 0,
            grid_per_dim: 24,
            kernel: Kernel::default(),
        }
    }
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LogEvent {
    Abstracted { cells: usize, nx: usize, ny: usize, start_cell: usize },
    Planned { iteration: usize, word: String, path_len: usize },
    PlanExhausted { iteration: usize, word: String, blocks: usize },
    Optimized {
        iteration: usize,
        word: String,
        theta: Vec<f64>,
        #[serde(with = "crate::float_serde")]
        rho: f64,
        evaluations: usize,
    },
    Validated { iteration: usize, valid: bool, step: Option<usize>, reason: Option<String> },
    Blocked { iteration: usize, word: String, path_len: usize, blocks: usize, reason: String },
    Relaxed { iteration: usize, from: String, to: String },
    Succeeded { iteration: usize, word: String, rho: f64 },
    Failed { iteration: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisLog {
    pub events: Vec<LogEvent>,
    /// Parameter-search history of every (structure, path) attempt, in order.
    pub searches: Vec<SearchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub iteration: usize,
    pub word: String,
    pub history: Vec<HistoryRow>,
}

impl SynthesisLog {
    fn push(&mut self, e: LogEvent) {
        self.events.push(e);
    }

    /// Line-delimited JSON, one event per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("log events serialize") + "\n")
            .collect()
    }

    pub fn paths_tried(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, LogEvent::Planned { .. })).count()
    }

    pub fn blocks_added(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, LogEvent::Blocked { .. })).count()
    }

    pub fn structural_steps(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, LogEvent::Relaxed { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Absolute link angles.
    pub q: Vec<f64>,
    pub tip: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub word: String,
    pub theta: ParamAssignment,
    pub rho: f64,
    pub path: Path,
    /// One control vector per path step.
    pub u: Vec<Vec<f64>>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub config: SynthesisConfig,
    #[serde(skip)]
    pub log: SynthesisLog,
}

impl DesignResult {
    pub fn n_links(&self) -> usize {
        self.theta.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("designs serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("design file: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Success(Box<DesignResult>),
    Unsynthesizable { reason: String, log: SynthesisLog },
}

impl SynthesisOutcome {
    pub fn log(&self) -> &SynthesisLog {
        match self {
            SynthesisOutcome::Success(d) => &d.log,
            SynthesisOutcome::Unsynthesizable { log, .. } => log,
        }
    }
}

/// Adds one revolute link just before the end effector.
pub fn s_synthesis(w: &ConfigWord, srg: &Srg, max_links: usize) -> Result<ConfigWord> {
    let sra = Sra::from_srg(srg)?;
    if !sra.accepts(w)?.accepted {
        return Err(Error::Structure(format!("\"{w}\" is not an accepted configuration")));
    }
    if link_count(w, srg) >= max_links {
        return Err(Error::StructuralExhaustion(format!("\"{w}\" already has the maximum of {max_links} links")));
    }
    let tokens = w.tokens();
    let end = tokens
        .iter()
        .rposition(|t| t == "EN")
        .ok_or_else(|| Error::Structure(format!("\"{w}\" has no end effector")))?;
    // splice before the edge token that joins the end effector
    let at = if end > 0 && tokens[end - 1] == "ε" { end - 1 } else { end };
    let mut out: Vec<String> = tokens[..at].to_vec();
    out.extend(LINK_EXTENSION.iter().map(|s| s.to_string()));
    out.extend(tokens[at..].iter().cloned());
    let next = ConfigWord::from_tokens(out);
    if !sra.accepts(&next)?.accepted {
        return Err(Error::Structure(format!("extension of \"{w}\" is not accepted")));
    }
    Ok(next)
}

/// Maps validated states to a time-stamped trajectory.
pub fn trajectory(model: &RobotModel, u: &[Vec<f64>]) -> Vec<TrajectoryPoint> {
    simulate(model, u, None)
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let p = state_position(model, x);
            TrajectoryPoint { t: j as f64 * model.dt, q: state_pose(model, x), tip: [p.x, p.y] }
        })
        .collect()
}

/// Nearest distance from the base to any target cell.
fn target_distance(aw: &AbstractWorkspace) -> f64 {
    aw.ids_with(Proposition::Target)
        .map(|i| {
            let r = aw.cells[i].rect;
            let dx = 0.0f64.clamp(r[0], r[1]);
            let dy = 0.0f64.clamp(r[2], r[3]);
            dx.hypot(dy)
        })
        .fold(f64::INFINITY, f64::min)
}

fn max_link_length(srg: &Srg, w: &ConfigWord) -> f64 {
    w.links(srg).filter_map(|t| srg.link_bounds(t)).map(|b| b[1]).fold(0.0, f64::max)
}

/// Prefers the least-effort control when it also validates.
fn certify(
    model: &RobotModel,
    r: &RobustnessResult,
    ws: &Workspace,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
) -> Result<(Vec<Vec<f64>>, Validation)> {
    if let Feasibility::Feasible { u, .. } = feasibility(model, aw, path, cfg.u_bound, cfg.margin_frac)? {
        let v = validate_trajectory(model, &u, ws, aw, path)?;
        if v.is_valid() && max_control(&u) <= cfg.u_bound + 1e-9 {
            return Ok((u, v));
        }
    }
    let v = validate_trajectory(model, &r.u, ws, aw, path)?;
    Ok((r.u.clone(), v))
}

/// Searches structures in order of link count; returns the first design whose
/// robustness is non-negative and whose trajectory re-validates.
pub fn correct_by_construction(srg: &Srg, ws: &Workspace, cfg: &SynthesisConfig) -> Result<SynthesisOutcome> {
    let limits = &cfg.limits;
    limits.validate()?;
    cfg.robustness.validate()?;
    let started = Instant::now();
    let cap = limits.wall_clock_secs.map(Duration::from_secs_f64);
    let mut log = SynthesisLog::default();

    let aw = ws.abstract_grid(cfg.cell)?;
    let spec = PathSpec::new(aw.start_cell()?, limits.k_max)?;
    log.push(LogEvent::Abstracted { cells: aw.len(), nx: aw.nx, ny: aw.ny, start_cell: spec.start });

    let mut word = ConfigWord::parse(INITIAL_WORD, srg)?;
    let reach = limits.max_links as f64 * max_link_length(srg, &word);
    if target_distance(&aw) > reach {
        let reason = format!("target is beyond the reach {reach} of {} links", limits.max_links);
        log.push(LogEvent::Failed { iteration: 0, reason: reason.clone() });
        return Ok(SynthesisOutcome::Unsynthesizable { reason, log });
    }

    let mut blocked = BlockSet::new();
    let mut structure_index = 0u64;
    let mut iteration = 0usize;
    loop {
        iteration += 1;
        if cap.is_some_and(|c| started.elapsed() > c) {
            let reason = "wall-clock cap reached".to_string();
            log.push(LogEvent::Failed { iteration, reason: reason.clone() });
            return Ok(SynthesisOutcome::Unsynthesizable { reason, log });
        }
        let exhausted = blocked.len() >= limits.max_blocks_per_structure;
        let outcome = if exhausted { PlanOutcome::Infeasible } else { plan(&aw, &spec, &blocked)? };
        let path = match outcome {
            PlanOutcome::Found(p) => p,
            PlanOutcome::Infeasible => {
                log.push(LogEvent::PlanExhausted { iteration, word: word.to_string(), blocks: blocked.len() });
                match s_synthesis(&word, srg, limits.max_links) {
                    Ok(next) => {
                        log.push(LogEvent::Relaxed { iteration, from: word.to_string(), to: next.to_string() });
                        word = next;
                        blocked.clear();
                        structure_index += 1;
                        continue;
                    }
                    Err(Error::StructuralExhaustion(reason)) => {
                        log.push(LogEvent::Failed { iteration, reason: reason.clone() });
                        return Ok(SynthesisOutcome::Unsynthesizable { reason, log });
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        log.push(LogEvent::Planned { iteration, word: word.to_string(), path_len: path.cells.len() });

        let opts = SearchOptions {
            budget: limits.gp_budget,
            grid_per_dim: cfg.grid_per_dim,
            seed: cfg.seed.wrapping_add(structure_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(blocked.len() as u64),
            kernel: cfg.kernel,
            ..SearchOptions::default()
        };
        let search = optimize_params(&word, srg, &aw, &path, &cfg.robustness, &opts)?;
        log.push(LogEvent::Optimized {
            iteration,
            word: word.to_string(),
            theta: search.theta.lengths.clone(),
            rho: search.result.rho,
            evaluations: search.history.len(),
        });
        log.searches.push(SearchRecord { iteration, word: word.to_string(), history: search.history.clone() });

        let reason = match (&search.model, search.result.is_robust()) {
            (Some(model), true) => {
                let (u, v) = certify(model, &search.result, ws, &aw, &path, &cfg.robustness)?;
                match v {
                    Validation::Valid { .. } => {
                        log.push(LogEvent::Validated { iteration, valid: true, step: None, reason: None });
                        log.push(LogEvent::Succeeded { iteration, word: word.to_string(), rho: search.result.rho });
                        let design = DesignResult {
                            word: word.to_string(),
                            theta: search.theta,
                            rho: search.result.rho,
                            trajectory: trajectory(model, &u),
                            path,
                            u,
                            config: cfg.clone(),
                            log,
                        };
                        return Ok(SynthesisOutcome::Success(Box::new(design)));
                    }
                    Validation::Violation { step, reason } => {
                        log.push(LogEvent::Validated { iteration, valid: false, step: Some(step), reason: Some(reason.clone()) });
                        format!("trajectory violation at step {step}: {reason}")
                    }
                }
            }
            _ => format!("best robustness {} is negative", search.result.rho),
        };
        blocked.insert(block(&path));
        log.push(LogEvent::Blocked {
            iteration,
            word: word.to_string(),
            path_len: path.cells.len(),
            blocks: blocked.len(),
            reason,
        });
    }
}

/// Verdict of re-checking a stored design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum CheckOutcome {
    Verified {
        #[serde(with = "crate::float_serde")]
        rho: f64,
        /// Stored controls exceed the current bound, though a re-solve succeeds.
        stored_exceeds_bound: bool,
    },
    Rejected { step: Option<usize>, reason: String },
}

impl CheckOutcome {
    pub fn is_verified(&self) -> bool {
        matches!(self, CheckOutcome::Verified { .. })
    }
}

/// Re-validates a stored design against `ws` under `cfg`: the stored controls
/// must reproduce the stored trajectory and satisfy the task under the exact
/// kinematics, and the robustness program must still certify the design.
pub fn check_design(srg: &Srg, ws: &Workspace, design: &DesignResult, cfg: &SynthesisConfig) -> Result<CheckOutcome> {
    cfg.robustness.validate()?;
    let reject = |step: Option<usize>, reason: String| Ok(CheckOutcome::Rejected { step, reason });
    let word = ConfigWord::parse(&design.word, srg)?;
    if !Sra::from_srg(srg)?.accepts(&word)?.accepted {
        return reject(None, format!("\"{word}\" is not an accepted configuration"));
    }
    design.theta.validate_for(&word, srg)?;
    let aw = ws.abstract_grid(cfg.cell)?;
    let spec = PathSpec::new(aw.start_cell()?, cfg.limits.k_max.max(design.path.cells.len()))?;
    if let Err(e) = design.path.check(&aw, &spec) {
        return reject(None, format!("stored path: {e}"));
    }
    let model = match nominal_model(&word, srg, &design.theta, &aw, &design.path, &cfg.robustness)? {
        NominalOutcome::Model(m) => m,
        NominalOutcome::Unreachable { index, cell } => {
            return reject(Some(index), format!("cell {cell} is out of reach"));
        }
    };
    if design.u.len() != design.path.cells.len() || design.u.iter().any(|u| u.len() != model.n_links()) {
        return reject(None, "control sequence has the wrong shape".into());
    }
    let replay = trajectory(&model, &design.u);
    if replay.len() != design.trajectory.len() {
        return reject(None, "stored trajectory has the wrong length".into());
    }
    for (j, (a, b)) in replay.iter().zip(&design.trajectory).enumerate() {
        let dq = a.q.iter().zip(&b.q).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let dp = (a.tip[0] - b.tip[0]).abs().max((a.tip[1] - b.tip[1]).abs());
        if a.q.len() != b.q.len() || dq > 1e-6 || dp > 1e-6 {
            return reject(Some(j), "stored trajectory does not match the controls".into());
        }
    }
    if let Validation::Violation { step, reason } = validate_trajectory(&model, &design.u, ws, &aw, &design.path)? {
        return reject(Some(step), reason);
    }
    let r = robustness(&model, &aw, &design.path, &cfg.robustness)?;
    if !r.is_robust() {
        return reject(None, format!("robustness {} under bound {}", r.rho, cfg.robustness.u_bound));
    }
    Ok(CheckOutcome::Verified { rho: r.rho, stored_exceeds_bound: max_control(&design.u) > cfg.robustness.u_bound + 1e-9 })
}
