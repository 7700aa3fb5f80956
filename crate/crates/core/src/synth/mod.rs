//! Synthetic moving-shape videos, a handcrafted frame encoder, and an online
//! toy tracker with toy-scale metrics.

pub mod encode;
pub mod export;
pub mod metrics;
pub mod scene;
pub mod tracker;

pub use encode::{encode_frame, ENCODED_CHANNELS};
pub use export::export_sequence;
pub use metrics::{evaluate, Metrics, Prediction};
pub use scene::{generate_sequence, ObjectSpec, SceneConfig, Sequence, Shape};
pub use tracker::{run_tracker, run_tracker_on, Association, Corruption, TrackOutput, TrackerParams};
