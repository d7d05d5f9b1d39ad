//! Scenario tooling around the solver: reference states, perturbations,
//! the synthetic feeder, the time-series simulation and the scaling
//! benchmark.

pub mod alloc;
pub mod bench;
pub mod feeder;
pub mod perturb;
pub mod reference;
pub mod sim;
pub mod verify;
