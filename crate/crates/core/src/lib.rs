//! Tensor-network simulation of a spin chain whose end site radiates into a
//! waveguide that loops back onto itself after a delay.

pub mod error;
pub mod evolution;
pub mod model;
pub mod observables;
pub mod mps;
pub mod oracles;
pub mod scan;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{contract, matrix_exponential, truncated_svd, ComplexTensor, SvdResult};
pub use mps::{Mps, SiteKind, SiteLabel, Truncation};
pub use model::{build_bin_operators, BinOperators, GateSet, SimulationConfig};
pub use evolution::{initial_state, run, Simulation, Trajectory};
