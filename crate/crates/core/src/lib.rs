//! Zero-sum linear-quadratic stochastic Volterra integral games, discretized
//! on a binary scenario tree so that every conditional expectation, Itô sum
//! and martingale representation is computed exactly.

pub mod bsvie;
pub mod delay;
pub mod error;
pub mod fbsvie;
pub mod forward;
pub mod fredholm;
pub mod game;
pub mod kernel;
pub mod profile;
pub mod sample;
pub mod tree;

pub use bsvie::{solve_linear_bsvie, FreeTerm, MSolution, TailSum};
pub use delay::{DelaySpec, TransitionTable};
pub use error::{Error, Result};
pub use fbsvie::{Beta, CoupledSpec, FixedPointOptions, FixedPointReport};
pub use fredholm::{DeterministicGameSpec, SigmaCoefficients};
pub use forward::{
    assemble_causal_operator, assemble_terminal_operator, cost_functional, evaluate_cost,
    resolvent_apply, solve_forward_svie, ForwardSolution, GameSpec, OperatorKind, OperatorMatrix,
};
pub use kernel::Kernel;
pub use profile::{Profile, Profile2};
pub use game::{SaddleOptions, SaddleReport, ThetaAssembly};
pub use tree::{
    conditional_expectation, inner_product_process, inner_product_terminal, m_decompose,
    martingale_representation, stochastic_integral, AdaptedProcess, ScenarioTree, TerminalVariable,
    TimeGrid, TwoTimeSurface,
};
