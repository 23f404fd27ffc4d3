//! The planar pick-and-place scenario used throughout the tests and examples.
//!
//! A 5 m × 5 m workspace with the arm base at the origin, one box obstacle and
//! one box target. The tip starts at rest in the lower-left area and must go
//! around the obstacle into the target.

use nalgebra::Vector2;

use crate::error::Result;
use crate::robustness::RobustnessConfig;
use crate::workspace::{AbstractWorkspace, Polytope, Proposition, Region, Workspace};

pub const BBOX: [f64; 4] = [0.0, 5.0, 0.0, 5.0];
pub const OBSTACLE: [f64; 4] = [1.7, 3.0, 2.0, 3.0];
pub const TARGET: [f64; 4] = [3.5, 4.2, 3.8, 4.5];
pub const START: [f64; 2] = [1.55, 0.55];
pub const CELL: f64 = 0.1;
pub const U_BOUND: f64 = 10.0;
/// Coarser than the library default: with 0.1 s steps a 10 N·m bound cannot
/// accelerate the long arm across one cell per step.
pub const DT: f64 = 0.5;
/// A known-good two-link design for this scenario.
pub const REFERENCE_LENGTHS: [f64; 2] = [2.23, 3.35];

pub fn workspace() -> Workspace {
    let regions = vec![
        Region::new(Polytope::from_box(OBSTACLE[0], OBSTACLE[1], OBSTACLE[2], OBSTACLE[3]), Proposition::Obstacle),
        Region::new(Polytope::from_box(TARGET[0], TARGET[1], TARGET[2], TARGET[3]), Proposition::Target),
    ];
    Workspace::with_free_fill(BBOX, regions)
        .expect("scenario regions are valid boxes")
        .with_start(Vector2::new(START[0], START[1]))
}

pub fn abstract_workspace() -> Result<AbstractWorkspace> {
    workspace().abstract_grid(CELL)
}

pub fn robustness_config() -> RobustnessConfig {
    RobustnessConfig { u_bound: U_BOUND, dt: DT, ..RobustnessConfig::default() }
}

/// The scenario as a workspace file.
pub fn workspace_toml() -> String {
    format!(
        "bbox = {BBOX:?}\nstart = {START:?}\nfill_free = true\n\n\
         [[regions]]\nproposition = \"obstacle\"\nrect = {OBSTACLE:?}\n\n\
         [[regions]]\nproposition = \"target\"\nrect = {TARGET:?}\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_form_matches_builder() {
        assert_eq!(Workspace::from_toml_str(&workspace_toml()).unwrap(), workspace());
    }
}
