//! Tabular offline imitation learning via regularized state-occupancy
//! matching.
//!
//! The pipeline has three stages: estimate a reward from the density ratio
//! between expert and offline state distributions ([`discriminator`]), solve
//! a convex dual problem for a value function whose conjugate derivative
//! yields occupancy importance weights ([`solver`]), and extract a policy by
//! weighted behavior cloning. Everything operates on exact finite MDPs
//! ([`mdp`]), with gridworld environments ([`envs`]), dataset machinery
//! ([`datasets`]), and brute-force oracles ([`eval`]) for validation.

pub mod datasets;
pub mod discriminator;
pub mod envs;
pub mod error;
pub mod eval;
pub mod fdiv;
mod linalg;
pub mod mdp;
pub mod solver;
pub mod synth;

pub use datasets::{ExpertObservations, ObservationKind, TrajectoryDataset};
pub use discriminator::RewardVector;
pub use envs::{GridSpec, MoveSet};
pub use error::{Error, Result};
pub use fdiv::FDivergence;
pub use mdp::{OccupancyMeasure, TabularMdp, TabularPolicy};
pub use solver::SmodiceSolution;
