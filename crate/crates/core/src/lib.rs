//! Bandwidth-budgeted multi-agent cooperative perception.
//!
//! Agents share a bird's-eye-view grid. Each one estimates a scalar utility
//! per occupied cell of its sparse feature map, exchanges compact quantized
//! utility maps, and then every agent independently computes the same
//! transmission schedule: at most one sender per cell (the highest
//! utility), greedily admitted by utility-to-cost ratio until the per-frame
//! byte budget is spent. Selected features travel as FP8 payloads, are
//! max-fused at the receiver, and feed a small occupancy decoder.
//!
//! The crate provides the grid and sparse-map primitives ([`grid`]), a
//! seeded synthetic scene generator ([`scene`]), the sparsifying encoder
//! and utility head ([`encoder`]), the scheduler with its exhaustive and
//! dynamic-programming oracles ([`sched`]), the differentiable train-time
//! relaxation ([`relax`], [`train`]), the bit-exact wire format ([`wire`],
//! [`fp8`]), and a broadcast exchange simulator ([`sim`]).

pub mod config;
pub mod encoder;
pub mod error;
pub mod fp8;
pub mod grid;
pub mod relax;
pub mod scene;
pub mod sched;
pub mod seed;
pub mod sim;
pub mod train;
pub mod verify;
pub mod wire;

pub use config::RunConfig;
pub use encoder::{EncoderParams, FueParams};
pub use error::{Error, Result};
pub use grid::{GridSpec, MetaUtilityMap, SparseFeatureMap};
pub use relax::{GateField, NoiseField, TrainParams};
pub use scene::{AgentPose, ObjectBox, Scenario, VisibilityField};
pub use sched::{
    Candidate, RankedCandidate, ScheduleResult, SchedulerConfig, SelectionMask, TopK,
};
pub use sim::{CommBudget, FrameReport, SweepPoint, SweepResult, SweepRow};
pub use train::{EpochMetrics, ModelParams, ParamsFile, ToyHead, TrainOutcome};
