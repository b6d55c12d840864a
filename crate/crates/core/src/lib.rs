//! Certification of Gaussian and linear-optical continuous-variable states
//! from homodyne moment estimates, with simulated provers and exact oracles.

pub mod certifier;
pub mod error;
pub mod estimation;
pub mod fock;
pub mod gaussian;
pub mod harness;
pub mod moments;
pub mod prover;
pub mod records;
pub mod state;
pub mod symplectic;
pub mod weyl;

pub use certifier::{SamplePlan, TestConfig, VarianceBounds, Verdict};
pub use error::{CertError, Result};
pub use estimation::{LinearFunctional, MomentEstimateStore, SettingPlan};
pub use fock::{BoundForm, FockState, PostSelection};
pub use gaussian::{GaussianState, NoiseChannel};
pub use harness::{BudgetMode, ExperimentConfig};
pub use moments::{MomentKey, Observable};
pub use prover::{ProverScenario, Recipe};
pub use records::SettingRecords;
pub use state::PreparedState;
pub use symplectic::{NetworkSpec, SymplecticTransform, TargetClass};
