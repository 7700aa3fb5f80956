//! Prototypical cross-attention for video: Gaussian-mixture prototypes fitted
//! by EM, attention reads through those prototypes, temporal aggregation over
//! a frame memory, and foreground/background instance prototypes with
//! momentum. Includes a dense non-local baseline, exact cost accounting and a
//! synthetic tracking pipeline.

pub mod bench;
pub mod cost;
pub mod error;
pub mod feature;
pub mod gmm;
pub mod instance;
pub mod io;
pub mod kernels;
pub mod nonlocal;
pub mod numeric;
pub mod pcam;
pub mod scalar;
pub mod synth;

pub use bench::{run_suite, BenchConfig};
pub use cost::{CostDims, CostReport, Mechanism};
pub use error::{Error, Result};
pub use feature::{encode_keys_values, FeatureMap, Matrix, ProjectionParams};
pub use gmm::{build_prototypes, fit_gmm, AssignmentMap, EmConfig, EmInit, PrototypeSet, ValueMode};
pub use instance::{AttentionPair, InstanceTrack, MaskMap};
pub use nonlocal::{nonlocal_attend, KernelSpec};
pub use numeric::RngStream;
pub use pcam::{aggregate, attend, reconstruct_all, MemoryBank};
