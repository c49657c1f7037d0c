//! Maximal entropy random walks on ℤ with self-loop environments.

pub mod checks;
pub mod eigen;
pub mod env;
pub mod error;
pub mod kernel;
pub mod oracle;
pub mod periodic;
pub mod sim;
pub mod speed;
pub mod stats;

pub use eigen::{Bracket, EigenVector};
pub use env::{EnvSpec, LoopEnvironment, NuSpec};
pub use error::{MerwError, Result};
pub use kernel::MerwKernel;
pub use oracle::ExcursionTable;
pub use periodic::PeriodicSolution;
pub use sim::{SpeedEstimate, Trajectory, WalkConfig};
