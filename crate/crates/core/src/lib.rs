// SPDX-License-Identifier: Apache-2.0

//! Cycle-approximate simulator of an event-driven spiking neural network
//! accelerator, with a dense golden reference for every layer kind.

pub mod batch;
pub mod config;
pub mod container;
pub mod engine;
pub mod epa;
pub mod error;
pub mod fifo;
pub mod fixed;
pub mod graph;
pub mod lif;
pub mod metrics;
pub mod pipesda;
pub mod qkformer;
pub mod reference;
pub mod report;
pub mod spike;
pub mod synth;
pub mod w2ttfs;
pub mod wtfc;

pub use batch::{process_image, run_batch, BatchReport, ImageReport, Mode};
pub use config::SimConfig;
pub use container::{load_model, save_model, ContainerError, InputBundle};
pub use engine::{compare, run_eventdriven, Comparison, EventRun, Verdict};
pub use epa::{CycleStats, EpaConfig};
pub use error::{CoreError, Result};
pub use fixed::{quantize, FixedPointFormat, FixedTensor, SumTensor};
pub use graph::{ConvSpec, FcSpec, LayerKind, LayerSpec, ModelGraph, SignalShape};
pub use lif::{lif_step, LifParams, LifState, ResetMode};
pub use metrics::{PowerModel, RunMetrics};
pub use qkformer::{MaskAxis, QkBlockSpec};
pub use reference::{run_reference, ExactScores, LayerOutput, ReferenceRun};
pub use report::{render_csv, render_text, RenderOptions};
pub use spike::{Shape3, SpikeTensor};
