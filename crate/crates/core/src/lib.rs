//! Correct-by-construction synthesis of reconfigurable planar manipulators.
//!
//! A robot design is a pair: a structural configuration (a word over a module
//! catalog, accepted by a reconfiguration grammar) and a functional
//! configuration (one length per link module). Given a labeled polytope
//! workspace and a reach-avoid task, [`synthesis::correct_by_construction`]
//! searches both, and every design it returns carries a non-negative
//! configuration-robustness certificate together with a control sequence that
//! re-validates against the exact forward kinematics.
//!
//! Layout:
//! - [`grammar`]: module catalog, configuration words, grammar and automaton.
//! - [`dynamics`]: link-chain models, linearized dynamics, kinematics.
//! - [`workspace`]: labeled polytopes, point classification, grid abstraction.
//! - [`sat`] and [`planner`]: reach-avoid path planning as satisfiability.
//! - [`lp`] and [`robustness`]: the robustness linear programs.
//! - [`learner`]: Gaussian-process parameter search.
//! - [`synthesis`]: the outer structural/functional synthesis loop.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case_study;
pub mod dynamics;
pub mod error;
mod float_serde;
pub mod grammar;
pub mod learner;
pub mod lp;
pub mod planner;
pub mod robustness;
pub mod sat;
pub mod synthesis;
pub mod workspace;

pub use error::{Error, Result};
pub use grammar::{Catalog, ConfigWord, LabeledGraph, Sra, Srg};
pub use dynamics::{ParamAssignment, RobotModel};
pub use planner::{Path, PathSpec};
pub use robustness::{RobustnessConfig, RobustnessResult};
pub use synthesis::{DesignResult, Limits, SynthesisOutcome};
pub use workspace::{AbstractWorkspace, Polytope, Proposition, Region, Workspace};
