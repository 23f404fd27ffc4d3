//! Gaussian-process parameter search with the ACB acquisition rule.
//!
//! Inputs are normalized to the unit box before entering the kernel.
//! Observations are centred on their running mean, so the posterior mean of an
//! unexplored region is the average of what has been seen so far.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ParamAssignment, RobotModel};
use crate::error::{Error, Result};
use crate::grammar::{ConfigWord, Srg};
use crate::planner::Path;
use crate::robustness::{evaluate, RobustnessConfig, RobustnessResult};
use crate::workspace::AbstractWorkspace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    /// Length scale in normalized coordinates.
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel { length_scale: 0.5, signal_var: 1.0, noise_var: 1e-8 }
    }
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        self.signal_var * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpState {
    pub kernel: Kernel,
    pub bounds: Vec<[f64; 2]>,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    y_mean: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GpState {
    pub fn new(kernel: Kernel, bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() || bounds.iter().any(|b| !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite()) {
            return Err(Error::Parameter(format!("bad parameter box {bounds:?}")));
        }
        if !(kernel.length_scale > 0.0 && kernel.signal_var > 0.0 && kernel.noise_var >= 0.0) {
            return Err(Error::Parameter(format!("bad kernel {kernel:?}")));
        }
        Ok(GpState { kernel, bounds, xs: Vec::new(), ys: Vec::new(), y_mean: 0.0, chol: None, alpha: DVector::zeros(0) })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.bounds).map(|(v, b)| (v - b[0]) / (b[1] - b[0])).collect()
    }

    pub fn add(&mut self, theta: &[f64], y: f64) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Parameter(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        if !y.is_finite() {
            return Err(Error::Numeric(format!("observation {y} is not finite")));
        }
        self.xs.push(self.normalize(theta));
        self.ys.push(y);
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        let n = self.xs.len();
        self.y_mean = self.ys.iter().sum::<f64>() / n as f64;
        let gram = DMatrix::from_fn(n, n, |i, j| self.kernel.eval(&self.xs[i], &self.xs[j]));
        let mut jitter = self.kernel.noise_var;
        let mut extra = 1e-12 * self.kernel.signal_var;
        loop {
            let k = &gram + DMatrix::identity(n, n) * jitter;
            if let Some(ch) = k.cholesky() {
                let y = DVector::from_iterator(n, self.ys.iter().map(|v| v - self.y_mean));
                self.alpha = ch.solve(&y);
                self.chol = Some(ch);
                return Ok(());
            }
            if extra > 1e-4 * self.kernel.signal_var {
                return Err(Error::Numeric("Gram matrix not positive definite after jitter".into()));
            }
            jitter = self.kernel.noise_var + extra;
            extra *= 10.0;
        }
    }

    /// Posterior mean and variance at a parameter point.
    pub fn posterior(&self, theta: &[f64]) -> Result<(f64, f64)> {
        if theta.len() != self.dim() {
            return Err(Error::Parameter(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        let z = self.normalize(theta);
        let Some(ch) = &self.chol else {
            return Ok((0.0, self.kernel.signal_var));
        };
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| self.kernel.eval(x, &z)));
        let mean = self.y_mean + ks.dot(&self.alpha);
        let v = ch.l().solve_lower_triangular(&ks).expect("Cholesky factor is non-singular");
        let var = (self.kernel.signal_var - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// Posterior over many points at once.
    pub fn posterior_many(&self, thetas: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let Some(ch) = &self.chol else {
            return Ok(vec![(0.0, self.kernel.signal_var); thetas.len()]);
        };
        let zs: Vec<Vec<f64>> = thetas.iter().map(|t| self.normalize(t)).collect();
        let n = self.xs.len();
        let ks = DMatrix::from_fn(n, zs.len(), |i, j| self.kernel.eval(&self.xs[i], &zs[j]));
        let v = ch.l().solve_lower_triangular(&ks).expect("Cholesky factor is non-singular");
        Ok((0..zs.len())
            .map(|j| {
                let mean = self.y_mean + ks.column(j).dot(&self.alpha);
                let var = (self.kernel.signal_var - v.column(j).norm_squared()).max(0.0);
                (mean, var)
            })
            .collect())
    }
}

pub fn gp_posterior(gp: &GpState, theta: &[f64]) -> Result<(f64, f64)> {
    gp.posterior(theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub grid: Vec<Vec<f64>>,
    pub delta: f64,
}

impl AcquisitionConfig {
    /// Tensor grid with `per_dim` evenly spaced points per axis, endpoints included.
    pub fn grid(bounds: &[[f64; 2]], per_dim: usize) -> Result<Self> {
        if per_dim == 0 || bounds.is_empty() {
            return Err(Error::Parameter("grid needs at least one point per dimension".into()));
        }
        let total = per_dim.checked_pow(bounds.len() as u32).filter(|t| *t <= 2_000_000);
        let total = total.ok_or_else(|| Error::Resource("candidate grid too large".into()))?;
        let axis = |b: &[f64; 2]| -> Vec<f64> {
            if per_dim == 1 {
                vec![0.5 * (b[0] + b[1])]
            } else {
                (0..per_dim).map(|i| b[0] + (b[1] - b[0]) * i as f64 / (per_dim - 1) as f64).collect()
            }
        };
        let axes: Vec<Vec<f64>> = bounds.iter().map(axis).collect();
        let mut grid = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut p = vec![0.0; bounds.len()];
            // first coordinate varies slowest
            for d in (0..bounds.len()).rev() {
                p[d] = axes[d][idx % per_dim];
                idx /= per_dim;
            }
            grid.push(p);
        }
        Ok(AcquisitionConfig { grid, delta: 0.1 })
    }

    /// `β_t = 2 log(|grid| t² π² / (6 δ))`.
    pub fn beta(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        2.0 * (self.grid.len() as f64 * t * t * std::f64::consts::PI.powi(2) / (6.0 * self.delta)).ln()
    }
}

/// `argmax m + sqrt(η_m β_t) σ` over grid points not in `exclude`; lowest
/// index wins ties. Returns the index and the acquisition value.
pub fn acquire(gp: &GpState, cfg: &AcquisitionConfig, t: usize, exclude: &[bool]) -> Result<Option<(usize, f64)>> {
    if cfg.grid.is_empty() {
        return Err(Error::Parameter("empty candidate grid".into()));
    }
    let post = gp.posterior_many(&cfg.grid)?;
    let (lo, hi) = post.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let beta = cfg.beta(t);
    let mut best: Option<(usize, f64)> = None;
    for (i, &(m, var)) in post.iter().enumerate() {
        if exclude.get(i).copied().unwrap_or(false) {
            continue;
        }
        let eta = if hi - lo > 1e-12 * (1.0 + hi.abs()) { (m - lo) / (hi - lo) } else { 1.0 };
        let a = m + (eta * beta).sqrt() * var.sqrt();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub t: usize,
    pub theta: Vec<f64>,
    /// Raw oracle value; may be `-inf`.
    #[serde(with = "crate::float_serde")]
    pub rho: f64,
    /// `NaN` for seeded random probes.
    #[serde(with = "crate::float_serde")]
    pub acquisition: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.theta.len());
    let mut s = String::from("t");
    for d in 0..dim {
        write!(s, ",theta{}", d + 1).unwrap();
    }
    s.push_str(",rho,acquisition\n");
    for r in rows {
        write!(s, "{}", r.t).unwrap();
        for v in &r.theta {
            write!(s, ",{v}").unwrap();
        }
        writeln!(s, ",{},{}", r.rho, r.acquisition).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub budget: usize,
    pub grid_per_dim: usize,
    pub seed: u64,
    /// Random grid probes before the first acquisition.
    pub initial_random: usize,
    pub kernel: Kernel,
    /// Stop as soon as a value at or above this is seen.
    pub stop_at: Option<f64>,
    /// Replaces non-finite oracle values in the surrogate.
    pub surrogate_floor: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 80,
            grid_per_dim: 24,
            seed: 0,
            initial_random: 2,
            kernel: Kernel::default(),
            stop_at: None,
            surrogate_floor: crate::robustness::INFEASIBLE_SURROGATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_theta: Vec<f64>,
    #[serde(with = "crate::float_serde")]
    pub best_value: f64,
    pub history: Vec<HistoryRow>,
}

/// Maximizes `oracle` over the grid. Oracle errors are recorded as `-inf`
/// and enter the surrogate at the floor value.
pub fn maximize<F>(bounds: &[[f64; 2]], opts: &SearchOptions, mut oracle: F) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if opts.budget == 0 {
        return Err(Error::Parameter("evaluation budget must be at least 1".into()));
    }
    let cfg = AcquisitionConfig::grid(bounds, opts.grid_per_dim)?;
    let mut gp = GpState::new(opts.kernel, bounds.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut used = vec![false; cfg.grid.len()];
    let mut history = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for t in 1..=opts.budget.min(cfg.grid.len()) {
        let (idx, acq) = if t <= opts.initial_random {
            let free: Vec<usize> = (0..cfg.grid.len()).filter(|&i| !used[i]).collect();
            (free[rng.gen_range(0..free.len())], f64::NAN)
        } else {
            match acquire(&gp, &cfg, t, &used)? {
                Some(p) => p,
                None => break,
            }
        };
        used[idx] = true;
        let theta = cfg.grid[idx].clone();
        let value = oracle(&theta).unwrap_or(f64::NEG_INFINITY);
        let y = if value.is_finite() { value } else { opts.surrogate_floor };
        gp.add(&theta, y)?;
        history.push(HistoryRow { t, theta: theta.clone(), rho: value, acquisition: acq });
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((theta, value));
        }
        if let Some(stop) = opts.stop_at {
            if value >= stop {
                break;
            }
        }
    }
    let (best_theta, best_value) = best.expect("at least one evaluation");
    Ok(SearchResult { best_theta, best_value, history })
}

/// Best design found for one structure along one path.
#[derive(Debug, Clone)]
pub struct ParamSearch {
    pub theta: ParamAssignment,
    pub result: RobustnessResult,
    pub model: Option<RobotModel>,
    pub history: Vec<HistoryRow>,
}

/// Parameter box of a word from the catalog's link bounds.
pub fn param_bounds(w: &ConfigWord, srg: &Srg) -> Result<Vec<[f64; 2]>> {
    let b: Vec<[f64; 2]> = w
        .links(srg)
        .map(|tag| srg.link_bounds(tag).ok_or_else(|| Error::Parameter(format!("link {tag} has no length bounds"))))
        .collect::<Result<_>>()?;
    if b.is_empty() {
        return Err(Error::Parameter("word has no links to size".into()));
    }
    Ok(b)
}

/// GP-ACB over link lengths, stopping at the first certified design.
pub fn optimize_params(
    w: &ConfigWord,
    srg: &Srg,
    aw: &AbstractWorkspace,
    path: &Path,
    cfg: &RobustnessConfig,
    opts: &SearchOptions,
) -> Result<ParamSearch> {
    let bounds = param_bounds(w, srg)?;
    let mut best: Option<(ParamAssignment, RobustnessResult, Option<RobotModel>)> = None;
    let mut failure: Option<Error> = None;
    let opts = SearchOptions { stop_at: Some(0.0), ..*opts };
    let search = maximize(&bounds, &opts, |theta| {
        let params = ParamAssignment::new(theta.to_vec());
        match evaluate(w, srg, &params, aw, path, cfg) {
            Ok((model, r)) => {
                let rho = r.rho;
                if best.as_ref().is_none_or(|(_, b, _)| rho > b.rho) {
                    best = Some((params, r, model));
                }
                Ok(rho)
            }
            Err(e) => {
                failure.get_or_insert(e.clone());
                Err(e)
            }
        }
    })?;
    match best {
        Some((theta, result, model)) => Ok(ParamSearch { theta, result, model, history: search.history }),
        None => Err(failure.unwrap_or_else(|| Error::Numeric("no parameter evaluation succeeded".into()))),
    }
}
