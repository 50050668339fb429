//! Discounted optimal stopping problems and two-player stopping (Dynkin) games for
//! one-dimensional diffusions.
//!
//! The payoff is moved into the diffusion's natural scale, where the value function is a
//! concave envelope: the least concave majorant for one player, the taut string between
//! `G/psi` and `H/psi` for the game. Brute-force and Monte Carlo oracles ship alongside.
//!
//! Everything numeric is generic over [`scalar::Real`] (`f32`, `f64`); the aliases below fix
//! `f64`.

pub mod barrier;
pub mod diffusion;
pub mod envelope;
pub mod error;
pub mod mc;
pub mod payoff_expr;
pub mod scalar;
pub mod scale;
pub mod solver;
pub mod transform;

pub use barrier::{
    corridor, double_obstacle_fixpoint, line_probe, modified_differentials, supinf_bruteforce,
    taut_string, CorridorEnd, SlopeInterval, SupInfSide,
};
pub use diffusion::{
    exit_laplace, fundamental_solutions, fundamental_solutions_numeric, BoundaryKind, DiffusionKind,
};
pub use envelope::{
    biconjugate_from_conjugate, chord_majorant, concave_conjugate, least_concave_majorant, End,
};
pub use error::{Error, Result};
pub use mc::{
    first_passage_rule, laplace_check, saddle_check, simulate_R, simulate_rules, Perturbation,
    StoppingRule,
};
pub use payoff_expr::{PayoffExpr, PayoffSpec, Side};
pub use scalar::Real;
pub use scale::{build_scale, build_scale_on, Direction, Spacing};
pub use solver::{
    smooth_fit_report, solve_game, solve_stopping, solve_stopping_absorbed, Equilibrium, Region,
    SolveOptions,
};
pub use transform::{check_assumptions, transform_payoff, transform_payoff_with, TransformOptions};

pub type DiffusionSpec = diffusion::DiffusionSpec<f64>;
pub type FundamentalSolutions = diffusion::FundamentalSolutions<f64>;
pub type ScaleTransform = scale::ScaleTransform<f64>;
pub type TransformedObstacle = transform::TransformedObstacle<f64>;
pub type EnvelopeResult = envelope::EnvelopeResult<f64>;
pub type Corridor = barrier::Corridor<f64>;
pub type TautEnvelope = barrier::TautEnvelope<f64>;
pub type StoppingSolution = solver::StoppingSolution<f64>;
pub type GameSolution = solver::GameSolution<f64>;
pub type ValueProfile = solver::ValueProfile<f64>;
pub type SmoothFitReport = solver::SmoothFitReport<f64>;
pub type McConfig = mc::McConfig<f64>;
pub type McEstimate = mc::McEstimate<f64>;
