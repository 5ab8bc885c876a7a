//! Lookdown constructions for Ξ-Fleming–Viot genealogies: subset-system
//! algebra, reproduction measures, Poisson event streams, the marked and
//! plain distance-matrix processes, metric measure space distances, the
//! coalescent dual and Monte-Carlo verification tools.

pub mod coalescent;
pub mod error;
pub mod events;
mod flow;
pub mod lookdown;
pub mod matrix;
pub mod mmspace;
pub mod partition;
pub mod rng;
pub mod stats;
pub mod suites;
pub mod verify;
pub mod xi;

pub use error::{Error, Result};
pub use partition::{Partition, RestrictMode, SubsetSystem};
pub use rng::{SeedSpec, SimRng};
pub use xi::{Component, DustClass, LambdaFamily, Rate, Scope, SimplexPoint, XiMeasure};
pub use events::{generate, generate_two_sided, EventStream, ReproductionEvent, SamplerMode};
pub use lookdown::{MarkedState, PlainState};
pub use matrix::DistMatrix;
pub use mmspace::{DistanceValue, FiniteMMSpace};
pub use coalescent::{equilibrium_tree, CoalescentPath, CoalescentTree};
