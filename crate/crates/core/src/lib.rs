//! Continuous reference generation from a library of periodic gaits.
//!
//! A library holds Bézier gaits indexed by walking velocity. The engine
//! interpolates a gait for the commanded velocity, blends it smoothly into
//! the active curve and emits joint references tick by tick.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bezier;
pub mod engine;
pub mod gait;
pub mod library_io;
pub mod script;
pub mod service;
pub mod synthetic;
pub mod trace;
pub mod tracking;
pub mod transition;

pub use bezier::{BezierCurve, BezierError};
pub use engine::{
    tick_batch, CommandInput, EngineConfig, EngineError, EngineState, ReferenceSample, SampleFlags,
};
pub use gait::{
    Gait, GaitError, GaitLibrary, InterpolationMode, LibraryMetadata, MirrorMap, Stance, Velocity,
};
pub use library_io::{LibraryError, LibraryFile};
pub use script::CommandScript;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use transition::{PhaseClock, TransitionCurve};
