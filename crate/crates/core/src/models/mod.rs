//! Shipped case studies packaged as [`ProblemDefinition`]s.

pub mod building;
pub mod compressor;
pub mod constants;
pub mod example1;
pub mod saturation;

use crate::ocp::ProblemDefinition;

/// Problem size: the full-scale formulation or a reduced one that keeps the
/// same uncertainty structure at a fraction of the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Desk,
}

pub use building::building_problem;
pub use constants::CompressorDefaults;
pub use compressor::{
    compressor_initial_decision, compressor_problem, compressor_problem_custom,
    compressor_problem_with,
};
pub use example1::example1_problem;
pub use saturation::SmoothSaturation;

/// Model selector shared by the CLI and the presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    Building,
    Compressor,
    Example1,
}

impl Model {
    pub fn problem(self, scale: Scale) -> ProblemDefinition {
        match self {
            Model::Building => building_problem(scale),
            Model::Compressor => compressor_problem(scale),
            Model::Example1 => example1_problem(),
        }
    }
}
