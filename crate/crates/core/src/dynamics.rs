//! Link-chain dynamics compiled from a configuration word and link lengths.
//!
//! Poses are absolute link angles unless stated otherwise: `q[l]` is the angle
//! of link `l` measured from the x axis. The two-link inertia model uses a
//! relative elbow angle instead, and [`absolute_to_relative`] /
//! [`relative_to_absolute`] convert between the two.
//!
//! Each link is a rod of unit line density whose lumped mass sits at its tip,
//! which is what the recursive Gram products below encode: link `n` adds
//! `L_n * E_nkᵀ E_nl` to every product.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{link_count, ConfigWord, ModuleClass, NodeSymbol, Srg};

pub const TOL_IK: f64 = 1e-6;
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleRole {
    /// Adds one actuated angular coordinate.
    Actuated,
    /// Adds one length parameter.
    Parametric,
    Passive,
}

/// Per-module view of the parametric dynamics a catalog symbol carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleModel {
    pub symbol: NodeSymbol,
    pub state_dim: usize,
    pub control_dim: usize,
    pub param_bounds: Option<[f64; 2]>,
    pub role: ModuleRole,
}

impl ModuleModel {
    pub fn from_symbol(symbol: &NodeSymbol) -> Self {
        let (state_dim, control_dim, role) = match symbol.class {
            ModuleClass::Joint => (2, 1, ModuleRole::Actuated),
            ModuleClass::Link => (0, 0, ModuleRole::Parametric),
            ModuleClass::Base | ModuleClass::Effector => (0, 0, ModuleRole::Passive),
        };
        let param_bounds = match symbol.class {
            ModuleClass::Link => symbol.length_bounds,
            _ => None,
        };
        ModuleModel { symbol: symbol.clone(), state_dim, control_dim, param_bounds, role }
    }

    pub fn param_dim(&self) -> usize {
        usize::from(self.param_bounds.is_some())
    }
}

/// One length per link token of a word, in word order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAssignment {
    pub lengths: Vec<f64>,
}

impl ParamAssignment {
    pub fn new(lengths: Vec<f64>) -> Self {
        ParamAssignment { lengths }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Checks count and per-link bounds against the catalog.
    pub fn validate_for(&self, w: &ConfigWord, srg: &Srg) -> Result<()> {
        let n = link_count(w, srg);
        if n != self.lengths.len() {
            return Err(Error::Parameter(format!(
                "word has {n} links but {} lengths were given",
                self.lengths.len()
            )));
        }
        for (i, (tag, &l)) in w.links(srg).zip(&self.lengths).enumerate() {
            let [lo, hi] = srg.link_bounds(tag).unwrap_or([f64::MIN_POSITIVE, f64::INFINITY]);
            if !l.is_finite() || l < lo || l > hi {
                return Err(Error::Parameter(format!(
                    "length {l} of link {i} ({tag}) outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Inner and outer radius of the planar reach annulus.
    pub fn reach_annulus(&self) -> (f64, f64) {
        reach_annulus(&self.lengths)
    }
}

pub fn reach_annulus(lengths: &[f64]) -> (f64, f64) {
    let total: f64 = lengths.iter().sum();
    let longest = lengths.iter().cloned().fold(0.0, f64::max);
    ((2.0 * longest - total).max(0.0), total)
}

/// Blocks contributed by a single link, padded to the full chain width.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBlock {
    pub length: f64,
    pub e0: DVector<f64>,
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
}

impl LinkBlock {
    fn get(&self, k: usize) -> DMatrix<f64> {
        match k {
            0 => DMatrix::from_column_slice(2, 1, self.e0.as_slice()),
            1 => self.e1.clone(),
            _ => self.e2.clone(),
        }
    }
}

/// E matrices for a chain plus the Gram products accumulated link by link.
#[derive(Debug, Clone, PartialEq)]
pub struct EMatrices {
    pub blocks: Vec<LinkBlock>,
    width: usize,
    gram: Vec<DMatrix<f64>>,
}

impl EMatrices {
    fn empty(width: usize) -> Self {
        let mut gram = Vec::with_capacity(9);
        for k in 0..3 {
            for l in 0..3 {
                gram.push(DMatrix::zeros(cols_of(k, width), cols_of(l, width)));
            }
        }
        EMatrices { blocks: Vec::new(), width, gram }
    }

    fn push(&mut self, block: LinkBlock) {
        for k in 0..3 {
            let bk = block.get(k);
            for l in 0..3 {
                let bl = block.get(l);
                self.gram[3 * k + l] += block.length * bk.transpose() * bl;
            }
        }
        self.blocks.push(block);
    }

    pub fn n_links(&self) -> usize {
        self.blocks.len()
    }

    /// `E_0` of the outermost link: velocity of the chain tip.
    pub fn e0(&self) -> DVector<f64> {
        self.blocks.last().map(|b| b.e0.clone()).unwrap_or_else(|| DVector::zeros(2))
    }

    pub fn e1(&self) -> DMatrix<f64> {
        self.blocks.last().map(|b| b.e1.clone()).unwrap_or_else(|| DMatrix::zeros(2, self.width))
    }

    /// `E_2` of the outermost link: the tip position Jacobian.
    pub fn e2(&self) -> DMatrix<f64> {
        self.blocks.last().map(|b| b.e2.clone()).unwrap_or_else(|| DMatrix::zeros(2, self.width))
    }

    /// Accumulated `(E_kᵀ E_l)` for `k, l` in `0..3`.
    pub fn gram(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.gram[3 * k + l]
    }

    /// `sqrt(L_n) E_nk` stacked over links; the direct-product oracle.
    pub fn stacked(&self, k: usize) -> DMatrix<f64> {
        let c = cols_of(k, self.width);
        let mut s = DMatrix::zeros(2 * self.blocks.len(), c);
        for (n, b) in self.blocks.iter().enumerate() {
            s.view_mut((2 * n, 0), (2, c)).copy_from(&(b.get(k) * b.length.sqrt()));
        }
        s
    }

    /// `Σ L_n A_nkᵀ B_nl` where `A` is `self` and `B` is `other`.
    pub fn cross(&self, k: usize, other: &EMatrices, l: usize) -> Result<DMatrix<f64>> {
        if self.blocks.len() != other.blocks.len() || self.width != other.width {
            return Err(Error::Model("E matrices of different chains".into()));
        }
        let mut out = DMatrix::zeros(cols_of(k, self.width), cols_of(l, self.width));
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            out += a.length * a.get(k).transpose() * b.get(l);
        }
        Ok(out)
    }

    /// Blockwise `(after - before) / span`, used for time derivatives.
    pub fn difference(before: &EMatrices, after: &EMatrices, span: f64) -> Result<EMatrices> {
        if before.blocks.len() != after.blocks.len() || before.width != after.width {
            return Err(Error::Model("E matrices of different chains".into()));
        }
        if span <= 0.0 {
            return Err(Error::Parameter("difference span must be positive".into()));
        }
        let mut out = EMatrices::empty(before.width);
        for (a, b) in before.blocks.iter().zip(&after.blocks) {
            out.push(LinkBlock {
                length: a.length,
                e0: (&b.e0 - &a.e0) / span,
                e1: (&b.e1 - &a.e1) / span,
                e2: (&b.e2 - &a.e2) / span,
            });
        }
        Ok(out)
    }
}

fn cols_of(k: usize, width: usize) -> usize {
    if k == 0 {
        1
    } else {
        width
    }
}

/// E matrices of a bare chain given lengths, absolute poses and rates.
pub fn chain_e(lengths: &[f64], q0: &[f64], qd0: &[f64]) -> Result<EMatrices> {
    let n = lengths.len();
    if q0.len() != n || qd0.len() != n {
        return Err(Error::Model(format!(
            "expected {n} poses and rates, got {} and {}",
            q0.len(),
            qd0.len()
        )));
    }
    let mut e = EMatrices::empty(n);
    for i in 0..n {
        let mut e0 = DVector::zeros(2);
        let mut e1 = DMatrix::zeros(2, n);
        let mut e2 = DMatrix::zeros(2, n);
        for l in 0..=i {
            let (s, c) = q0[l].sin_cos();
            let (len, rate) = (lengths[l], qd0[l]);
            e0[0] -= len * rate * s;
            e0[1] += len * rate * c;
            e1[(0, l)] = -len * rate * c;
            e1[(1, l)] = -len * rate * s;
            e2[(0, l)] = -len * s;
            e2[(1, l)] = len * c;
        }
        e.push(LinkBlock { length: lengths[i], e0, e1, e2 });
    }
    Ok(e)
}

/// Walks the word; each link token appends a block and joints leave E as is.
#[allow(non_snake_case)]
pub fn assemble_E(
    w: &ConfigWord,
    srg: &Srg,
    theta: &ParamAssignment,
    q0: &[f64],
    qd0: &[f64],
) -> Result<EMatrices> {
    let n = link_count(w, srg);
    if theta.len() != n {
        return Err(Error::Model(format!("word has {n} links but {} lengths", theta.len())));
    }
    chain_e(&theta.lengths, q0, qd0)
}

/// `M q̈ + C q̇ + K q = T - F` around a nominal pose.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Maps perturbed torques onto the generalized coordinates.
    pub t: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl LinearizedModel {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// First-order form `ẋ = A x + B u + c` with `x = (Δq, Δq̇)`.
    pub fn state_space(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
        let n = self.dim();
        let chol = self
            .m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Model("mass matrix is not positive definite".into()))?;
        let minv = chol.inverse();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        a.view_mut((n, 0), (n, n)).copy_from(&(-&minv * &self.k));
        a.view_mut((n, n), (n, n)).copy_from(&(-&minv * &self.c));
        let mut b = DMatrix::zeros(2 * n, self.t.ncols());
        b.view_mut((n, 0), (n, self.t.ncols())).copy_from(&(&minv * &self.t));
        let mut off = DVector::zeros(2 * n);
        off.rows_mut(n, n).copy_from(&(-&minv * &self.f));
        Ok((a, b, off))
    }
}

/// Builds M, C, K, F from E and its time derivative `e_dot`.
pub fn assemble_linearized(e: &EMatrices, e_dot: &EMatrices) -> Result<LinearizedModel> {
    let m = e.gram(2, 2).clone();
    let c = e.gram(2, 1) + e_dot.cross(2, e, 2)? + e.cross(2, e_dot, 2)? - e.gram(1, 2);
    let k = e_dot.cross(2, e, 1)? + e.cross(2, e_dot, 1)? - e.gram(1, 1);
    let f = e_dot.cross(2, e, 0)? + e.cross(2, e_dot, 0)? - e.gram(1, 0);
    let n = m.nrows();
    Ok(LinearizedModel { m, c, k, t: DMatrix::identity(n, n), f: f.column(0).into_owned() })
}

/// Inertia matrix of the two-link arm; `theta2` is the relative elbow angle.
pub fn two_link_d(l1: f64, l2: f64, theta2: f64) -> Result<Matrix2<f64>> {
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(Error::Parameter(format!("link lengths must be positive, got {l1}, {l2}")));
    }
    let c = theta2.cos();
    let d11 = (l1.powi(3) + l2.powi(3) + 3.0 * l1 * l1 * l2) / 3.0 + l2 * l2 * l1 * c;
    // Off-diagonal uses the outer rod inertia (l2³/3); an l1³/3 term here
    // makes D indefinite for short outer links.
    let d12 = l2.powi(3) / 3.0 + l2 * l2 * l1 * c / 2.0;
    let d22 = l2.powi(3) / 3.0;
    Ok(Matrix2::new(d11, d12, d12, d22))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkModel {
    pub l1: f64,
    pub l2: f64,
}

impl TwoLinkModel {
    pub fn new(l1: f64, l2: f64) -> Result<Self> {
        two_link_d(l1, l2, 0.0)?;
        Ok(TwoLinkModel { l1, l2 })
    }

    pub fn d(&self, theta2: f64) -> Matrix2<f64> {
        two_link_d(self.l1, self.l2, theta2).expect("lengths checked at construction")
    }

    /// The velocity-coupling block, identically zero in this model.
    pub fn e(&self) -> Matrix2<f64> {
        Matrix2::zeros()
    }

    /// Continuous `(A, B)` over `(Δθ1, Δθ2, Δθ̇1, Δθ̇2)`.
    pub fn state_space(&self, theta2: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.d(theta2);
        let dinv = d
            .try_inverse()
            .ok_or_else(|| Error::Model(format!("singular inertia at elbow angle {theta2}")))?;
        let mut a = DMatrix::zeros(4, 4);
        a.view_mut((0, 2), (2, 2)).fill_with_identity();
        a.view_mut((2, 2), (2, 2)).copy_from(&(-dinv * self.e()));
        let mut b = DMatrix::zeros(4, 2);
        b.view_mut((2, 0), (2, 2)).copy_from(&dinv);
        Ok((a, b))
    }
}

/// Forward Euler: `A = I + dt A_c`, `B = dt B_c`.
pub fn discretize(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    if !a_c.is_square() || a_c.nrows() != b_c.nrows() {
        return Err(Error::Model("state matrix dimensions disagree".into()));
    }
    let n = a_c.nrows();
    Ok((DMatrix::identity(n, n) + a_c * dt, b_c * dt))
}

pub fn absolute_to_relative(q: &[f64]) -> Vec<f64> {
    (0..q.len()).map(|i| if i == 0 { q[0] } else { q[i] - q[i - 1] }).collect()
}

pub fn relative_to_absolute(r: &[f64]) -> Vec<f64> {
    r.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Tip position for absolute link angles.
pub fn forward_kinematics(lengths: &[f64], q: &[f64]) -> Vector2<f64> {
    debug_assert_eq!(lengths.len(), q.len());
    lengths.iter().zip(q).fold(Vector2::zeros(), |p, (l, a)| p + Vector2::new(l * a.cos(), l * a.sin()))
}

/// Tip Jacobian with respect to absolute angles (2 × n).
pub fn fk_jacobian(lengths: &[f64], q: &[f64]) -> DMatrix<f64> {
    let n = lengths.len();
    DMatrix::from_fn(2, n, |r, c| if r == 0 { -lengths[c] * q[c].sin() } else { lengths[c] * q[c].cos() })
}

fn wrap_near(angle: f64, reference: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    angle - ((angle - reference) / tau).round() * tau
}

fn angle_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_reach(lengths: &[f64], p: Vector2<f64>) -> Result<()> {
    let (lo, hi) = reach_annulus(lengths);
    let r = p.norm();
    if r > hi + TOL_IK * 0.1 || r < lo - TOL_IK * 0.1 {
        return Err(Error::Reachability { x: p.x, y: p.y });
    }
    Ok(())
}

fn two_link_ik(l1: f64, l2: f64, p: Vector2<f64>, prev: Option<&[f64]>) -> Vec<f64> {
    let r2 = p.norm_squared();
    let cos_phi = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let base = p.y.atan2(p.x);
    let branches = [1.0, -1.0].map(|sign: f64| {
        let phi = sign * cos_phi.acos();
        let q1 = base - (l2 * phi.sin()).atan2(l1 + l2 * phi.cos());
        vec![q1, q1 + phi]
    });
    match prev {
        None => branches[0].clone(),
        Some(prev) => {
            let fix = |b: &Vec<f64>| b.iter().zip(prev).map(|(a, r)| wrap_near(*a, *r)).collect::<Vec<_>>();
            let (a, b) = (fix(&branches[0]), fix(&branches[1]));
            if angle_distance(&b, prev) < angle_distance(&a, prev) - 1e-12 {
                b
            } else {
                a
            }
        }
    }
}

fn dls_ik(lengths: &[f64], p: Vector2<f64>, seed: &[f64]) -> Option<Vec<f64>> {
    let mut q = DVector::from_column_slice(seed);
    let lambda2 = 1e-4;
    for _ in 0..2000 {
        let err = p - forward_kinematics(lengths, q.as_slice());
        if err.norm() < TOL_IK * 1e-2 {
            return Some(q.as_slice().to_vec());
        }
        let j = fk_jacobian(lengths, q.as_slice());
        let jjt = &j * j.transpose() + DMatrix::identity(2, 2) * lambda2;
        let y = jjt.lu().solve(&DVector::from_column_slice(err.as_slice()))?;
        let step = j.transpose() * y;
        let norm = step.norm();
        q += if norm > 0.5 { step * (0.5 / norm) } else { step };
    }
    let err = p - forward_kinematics(lengths, q.as_slice());
    (err.norm() < TOL_IK).then(|| q.as_slice().to_vec())
}

/// Absolute-angle pose reaching `target`, continuous with `prev` when given.
pub fn ik_point(lengths: &[f64], target: Vector2<f64>, prev: Option<&[f64]>) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::Parameter("chain has no links".into()));
    }
    check_reach(lengths, target)?;
    if lengths.len() == 2 {
        return Ok(two_link_ik(lengths[0], lengths[1], target, prev));
    }
    let n = lengths.len();
    let heading = target.y.atan2(target.x);
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    if let Some(prev) = prev {
        seeds.push(prev.to_vec());
    }
    for bend in [0.3, -0.3, 0.9, -0.9, 1.6, -1.6] {
        // zig-zag seeds so folded poses are reachable too
        let rel: Vec<f64> =
            (0..n).map(|i| if i == 0 { heading - bend } else if i % 2 == 1 { 2.0 * bend } else { -2.0 * bend }).collect();
        seeds.push(relative_to_absolute(&rel));
    }
    seeds.push(vec![heading; n]);
    for seed in &seeds {
        if let Some(q) = dls_ik(lengths, target, seed) {
            return Ok(match prev {
                Some(prev) => q.iter().zip(prev).map(|(a, r)| wrap_near(*a, *r)).collect(),
                None => q,
            });
        }
    }
    Err(Error::Reachability { x: target.x, y: target.y })
}

/// Nominal poses for a sequence of targets, each seeded from the previous one.
pub fn ik_nominal(theta: &ParamAssignment, targets: &[Vector2<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
    for t in targets {
        let q = ik_point(&theta.lengths, *t, out.last().map(|v| v.as_slice()))?;
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    /// Absolute link angles.
    Absolute,
    /// First angle absolute, the rest relative to the previous link.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Discrete-time model `x_{i+1} = A_i x_i + B_i u_i + c_i` along a nominal
/// pose sequence. Two-link words use the closed-form inertia; longer chains
/// use the E-matrix linearization.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub word: ConfigWord,
    pub params: ParamAssignment,
    pub dt: f64,
    pub coords: Coordinates,
    /// Absolute nominal poses and their central-difference rates.
    pub nominal_q: Vec<Vec<f64>>,
    pub nominal_qd: Vec<Vec<f64>>,
    steps: Vec<StepMatrices>,
}

impl RobotModel {
    pub fn compile(
        w: &ConfigWord,
        srg: &Srg,
        params: &ParamAssignment,
        nominal_q: Vec<Vec<f64>>,
        dt: f64,
    ) -> Result<Self> {
        params.validate_for(w, srg)?;
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        let n = params.len();
        if n == 0 {
            return Err(Error::Model("a robot needs at least one link".into()));
        }
        if nominal_q.is_empty() || nominal_q.iter().any(|q| q.len() != n) {
            return Err(Error::Model("nominal poses must be non-empty with one angle per link".into()));
        }
        let nominal_qd = central_rates(&nominal_q, dt);
        let coords = if n == 2 { Coordinates::Relative } else { Coordinates::Absolute };
        let mut steps = Vec::with_capacity(nominal_q.len());
        let e_at: Vec<EMatrices> = if n == 2 {
            Vec::new()
        } else {
            nominal_q
                .iter()
                .zip(&nominal_qd)
                .map(|(q, qd)| chain_e(&params.lengths, q, qd))
                .collect::<Result<_>>()?
        };
        for i in 0..nominal_q.len() {
            let (a_c, b_c, c_c) = if n == 2 {
                let tl = TwoLinkModel::new(params.lengths[0], params.lengths[1])?;
                let (a, b) = tl.state_space(nominal_q[i][1] - nominal_q[i][0])?;
                (a, b, DVector::zeros(4))
            } else {
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(nominal_q.len() - 1));
                let e_dot = if hi > lo {
                    EMatrices::difference(&e_at[lo], &e_at[hi], (hi - lo) as f64 * dt)?
                } else {
                    EMatrices::difference(&e_at[i], &e_at[i], 1.0)?
                };
                assemble_linearized(&e_at[i], &e_dot)?.state_space()?
            };
            let (a, b) = discretize(&a_c, &b_c, dt)?;
            steps.push(StepMatrices { a, b, c: c_c * dt });
        }
        Ok(RobotModel { word: w.clone(), params: params.clone(), dt, coords, nominal_q, nominal_qd, steps })
    }

    pub fn n_links(&self) -> usize {
        self.params.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_links()
    }

    pub fn control_dim(&self) -> usize {
        self.n_links()
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Matrices for step `i`; indices past the nominal sequence reuse the last.
    pub fn step(&self, i: usize) -> &StepMatrices {
        &self.steps[i.min(self.steps.len() - 1)]
    }

    pub fn to_absolute(&self, qm: &[f64]) -> Vec<f64> {
        match self.coords {
            Coordinates::Absolute => qm.to_vec(),
            Coordinates::Relative => relative_to_absolute(qm),
        }
    }

    pub fn from_absolute(&self, q: &[f64]) -> Vec<f64> {
        match self.coords {
            Coordinates::Absolute => q.to_vec(),
            Coordinates::Relative => absolute_to_relative(q),
        }
    }

    /// Tip position for a pose in model coordinates.
    pub fn fk(&self, qm: &[f64]) -> Vector2<f64> {
        forward_kinematics(&self.params.lengths, &self.to_absolute(qm))
    }

    /// Tip Jacobian with respect to model coordinates.
    pub fn jacobian(&self, qm: &[f64]) -> DMatrix<f64> {
        let j = fk_jacobian(&self.params.lengths, &self.to_absolute(qm));
        match self.coords {
            Coordinates::Absolute => j,
            Coordinates::Relative => {
                let n = self.n_links();
                j * DMatrix::from_fn(n, n, |r, c| if r >= c { 1.0 } else { 0.0 })
            }
        }
    }
}

fn central_rates(q: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let k = q.len();
    (0..k)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(k - 1));
            if hi == lo {
                vec![0.0; q[i].len()]
            } else {
                let span = (hi - lo) as f64 * dt;
                q[hi].iter().zip(&q[lo]).map(|(a, b)| (a - b) / span).collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn resting_link_has_zero_rate_blocks() {
        let e = chain_e(&[1.3], &[0.7], &[0.0]).unwrap();
        assert_eq!(e.e0(), DVector::zeros(2));
        assert_eq!(e.e1(), DMatrix::zeros(2, 1));
    }

    #[test]
    fn unit_link_at_zero_angle() {
        let e = chain_e(&[1.0], &[0.0], &[0.0]).unwrap();
        assert!(close(e.e2()[(0, 0)], 0.0, 1e-15) && close(e.e2()[(1, 0)], 1.0, 1e-15));
        let lin = assemble_linearized(&e, &EMatrices::difference(&e, &e, 1.0).unwrap()).unwrap();
        assert!(close(lin.m[(0, 0)], 1.0, 1e-15));
        assert_eq!(lin.c, DMatrix::zeros(1, 1));
    }

    #[test]
    fn joint_tokens_leave_e_unchanged() {
        let srg = Srg::manipulator();
        let w = ConfigWord::parse("B ε JO ε L ε EN", &srg).unwrap();
        let theta = ParamAssignment::new(vec![1.0]);
        let e = assemble_E(&w, &srg, &theta, &[0.0], &[0.0]).unwrap();
        assert_eq!(e, chain_e(&[1.0], &[0.0], &[0.0]).unwrap());
        assert!(matches!(assemble_E(&w, &srg, &theta, &[0.0, 0.1], &[0.0]), Err(Error::Model(_))));
    }

    #[test]
    fn two_link_gram_matches_direct_product() {
        let e = chain_e(&[1.2, 0.7], &[0.3, -1.1], &[0.5, 2.0]).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let direct = e.stacked(k).transpose() * e.stacked(l);
                assert!((e.gram(k, l) - direct).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_matrix_symmetric_for_random_three_link_poses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-PI..PI)).collect();
            let e = chain_e(&[0.9, 1.4, 0.6], &q, &[0.0; 3]).unwrap();
            let m = e.gram(2, 2);
            assert!((m - m.transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn d_matrix_examples() {
        let d = two_link_d(1.0, 1.0, 0.0).unwrap();
        let want = Matrix2::new(8.0 / 3.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 3.0);
        assert!((d - want).amax() < 1e-14);
        let d = two_link_d(1.0, 1.0, FRAC_PI_2).unwrap();
        let want = Matrix2::new(5.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
        assert!((d - want).amax() < 1e-14);
        assert!(matches!(two_link_d(0.0, 1.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(two_link_d(1.0, -2.0, 0.0), Err(Error::Parameter(_))));
        assert_eq!(TwoLinkModel::new(1.0, 2.0).unwrap().e(), Matrix2::zeros());
    }

    #[test]
    fn d_determinant_positive_on_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (l1, l2) = (rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0));
            for s in 0..50 {
                let th = -PI + 2.0 * PI * s as f64 / 49.0;
                let d = two_link_d(l1, l2, th).unwrap();
                assert_eq!(d[(0, 1)], d[(1, 0)]);
                assert!(d.determinant() > 0.0, "{l1} {l2} {th}");
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let (a, b) = discretize(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 0.1).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert!((&b - DMatrix::identity(2, 2) * 0.1).amax() < 1e-15);
        assert!(matches!(discretize(&a, &b, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(discretize(&a, &b, -1.0), Err(Error::Parameter(_))));

        let (ac, bc) = TwoLinkModel::new(1.0, 1.0).unwrap().state_space(0.0).unwrap();
        let (_, b) = discretize(&ac, &bc, 0.1).unwrap();
        let dinv = Matrix2::new(8.0 / 3.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 3.0).try_inverse().unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!(close(b[(2 + r, c)], 0.1 * dinv[(r, c)], 1e-12));
                assert_eq!(b[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn discretize_recovers_continuous_matrix() {
        let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let dt = 1e-6;
        let (a, _) = discretize(&ac, &DMatrix::zeros(2, 1), dt).unwrap();
        let back = (a - DMatrix::identity(2, 2)) / dt;
        assert!((back - &ac).amax() <= 1e-8);
        let rho = |dt: f64| {
            let (a, _) = discretize(&ac, &DMatrix::zeros(2, 1), dt).unwrap();
            a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        };
        assert!((rho(1e-6) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn fk_examples() {
        let p = forward_kinematics(&[1.0, 1.0], &[0.0, 0.0]);
        assert!(close(p.x, 2.0, 1e-15) && close(p.y, 0.0, 1e-15));
        let p = forward_kinematics(&[1.0, 1.0], &[0.0, FRAC_PI_2]);
        assert!(close(p.x, 1.0, 1e-15) && close(p.y, 1.0, 1e-15));
        let p = forward_kinematics(&[2.23, 3.35], &[FRAC_PI_2, FRAC_PI_2]);
        assert!(close(p.x, 0.0, 1e-12) && close(p.y, 5.58, 1e-12));
    }

    #[test]
    fn ik_examples() {
        let th = ParamAssignment::new(vec![1.0, 1.0]);
        let q = ik_nominal(&th, &[Vector2::new(2.0, 0.0)]).unwrap();
        assert!(close(q[0][0], 0.0, 1e-7) && close(q[0][1], 0.0, 1e-7));
        let q = ik_nominal(&th, &[Vector2::new(0.0, 2.0)]).unwrap();
        assert!(close(q[0][0], FRAC_PI_2, 1e-7) && close(q[0][1], FRAC_PI_2, 1e-7));
        assert!(matches!(
            ik_nominal(&th, &[Vector2::new(3.0, 0.0)]),
            Err(Error::Reachability { .. })
        ));
    }

    #[test]
    fn two_link_branch_follows_previous_pose() {
        let th = ParamAssignment::new(vec![1.0, 0.8]);
        let pts: Vec<_> = (0..20).map(|i| Vector2::new(1.2, -0.5 + 0.05 * i as f64)).collect();
        let q = ik_nominal(&th, &pts).unwrap();
        for w in q.windows(2) {
            assert!(angle_distance(&w[0], &w[1]) < 0.05);
        }
    }

    #[test]
    fn angle_converters_roundtrip() {
        let q = [0.3, 1.2, -0.4, 2.0];
        let r = absolute_to_relative(&q);
        let back = relative_to_absolute(&r);
        for (a, b) in q.iter().zip(&back) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn model_jacobian_matches_finite_difference() {
        let srg = Srg::manipulator();
        for (word, lengths) in [
            ("B ε JO ε L ε JO ε L ε EN", vec![1.1, 0.8]),
            ("B ε JO ε L ε JO ε L ε JO ε L ε EN", vec![1.1, 0.8, 0.5]),
        ] {
            let w = ConfigWord::parse(word, &srg).unwrap();
            let th = ParamAssignment::new(lengths);
            let q0 = ik_nominal(&th, &[Vector2::new(1.0, 0.7)]).unwrap();
            let model = RobotModel::compile(&w, &srg, &th, q0.clone(), 0.1).unwrap();
            let qm = model.from_absolute(&q0[0]);
            let j = model.jacobian(&qm);
            let h = 1e-6;
            for c in 0..qm.len() {
                let mut plus = qm.clone();
                plus[c] += h;
                let fd = (model.fk(&plus) - model.fk(&qm)) / h;
                assert!(close(fd.x, j[(0, c)], 1e-5) && close(fd.y, j[(1, c)], 1e-5));
            }
            let s = model.step(0);
            assert_eq!(s.a.shape(), (2 * th.len(), 2 * th.len()));
            assert_eq!(s.b.shape(), (2 * th.len(), th.len()));
        }
    }

    #[test]
    fn resting_chain_model_has_position_velocity_structure() {
        let srg = Srg::manipulator();
        let w = ConfigWord::parse("B ε JO ε L ε JO ε L ε JO ε L ε EN", &srg).unwrap();
        let th = ParamAssignment::new(vec![1.0, 1.0, 1.0]);
        let model = RobotModel::compile(&w, &srg, &th, vec![vec![0.2, 0.5, 0.9]], 0.1).unwrap();
        let s = model.step(0);
        assert!(s.c.amax() < 1e-15);
        for i in 0..3 {
            assert!(close(s.a[(i, 3 + i)], 0.1, 1e-15));
        }
    }

    #[test]
    fn compile_rejects_bad_params() {
        let srg = Srg::manipulator();
        let w = ConfigWord::parse("B ε JO ε L ε JO ε L ε EN", &srg).unwrap();
        let bad = ParamAssignment::new(vec![1.0]);
        assert!(matches!(
            RobotModel::compile(&w, &srg, &bad, vec![vec![0.0]], 0.1),
            Err(Error::Parameter(_))
        ));
        let out = ParamAssignment::new(vec![1.0, 99.0]);
        assert!(matches!(
            RobotModel::compile(&w, &srg, &out, vec![vec![0.0, 0.0]], 0.1),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #[test]
        fn gram_recursion_equals_direct(
            lengths in prop::collection::vec(0.2f64..6.0, 1..=4),
            seed in prop::collection::vec(-PI..PI, 8),
        ) {
            let n = lengths.len();
            let q = &seed[..n];
            let qd = &seed[4..4 + n];
            let e = chain_e(&lengths, q, qd).unwrap();
            for k in 0..3 {
                for l in 0..3 {
                    let direct = e.stacked(k).transpose() * e.stacked(l);
                    prop_assert!((e.gram(k, l) - direct).amax() < 1e-10);
                }
            }
            let eig = e.gram(2, 2).clone().symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|v| *v >= -1e-10));
        }

        #[test]
        fn ik_inverts_fk(
            lengths in prop::collection::vec(0.3f64..3.0, 2..=4),
            frac in 0.0f64..1.0,
            ang in -PI..PI,
        ) {
            let (lo, hi) = reach_annulus(&lengths);
            let r = lo + (hi - lo) * (0.02 + 0.96 * frac);
            let target = Vector2::new(r * ang.cos(), r * ang.sin());
            let q = ik_point(&lengths, target, None).unwrap();
            prop_assert!((forward_kinematics(&lengths, &q) - target).norm() <= TOL_IK);
        }
    }
}
