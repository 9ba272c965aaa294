//! Sequential truss-design environment.
//!
//! A design state is a set of nodes in the unit square `[-1, 1]^2` plus a set
//! of pin-jointed members between them. Supports and loads come from a
//! [`ProblemConfig`] and are present in every state. States evolve through
//! three generative actions (add a node, add a member, increase a member's
//! thickness); transitions are pure, so states can be shared freely across
//! threads.

mod action;
mod fea;
mod problem;
mod render;
mod state;

pub use action::{
    apply_action, enumerate_discrete_actions, feasibility_violation, is_feasible, ActionLabel,
    DesignAction,
};
pub use fea::{analyze, evaluate_structure, StructuralAnalysis, StructuralResult};
pub use problem::{LoadSpec, Material, ProblemConfig, SupportKind, SupportSpec};
pub use render::{render, DesignImage, IMAGE_SIZE};
pub use state::{Member, Node, NodeId, TrussState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("invalid problem config: {0}")]
    InvalidProblem(String),
}
