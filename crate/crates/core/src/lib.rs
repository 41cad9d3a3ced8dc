//! Score-distillation editing objectives on analytically tractable worlds.
//!
//! Gaussian-mixture "worlds" stand in for a pretrained diffusion prior: the
//! exact conditional score, and hence the ideal noise prediction, is
//! available in closed form at every noise level. That makes every piece of
//! the editing stack checkable at desk scale — forward perturbation and DDIM
//! reverse steps, SDEdit with proximal single-step inversion, the SDS / DDS /
//! stochastic-latent (PDS) / DreamCatalyst gradient operators with their
//! `(Φ(t), Ψ(t))` weightings, dual image+text guidance, and a spectral FreeU
//! surrogate.
//!
//! Modules mirror the pipeline: [`schedule`] (noise tables, timestep plans),
//! [`world`] (mixtures, conditioning, scenes), [`denoiser`] (exact
//! predictions, guidance, FreeU), [`distill`] (gradient operators),
//! [`sdedit`] (reverse runners and the DDS ↔ SDEdit equivalence),
//! [`generator`] (toy generators, cameras, Adam, the edit loop), [`verify`]
//! (the self-check suite) and [`artifacts`] (CSV/pixmap emission).

pub mod artifacts;
pub mod denoiser;
pub mod distill;
pub mod error;
pub mod generator;
pub mod image;
pub mod schedule;
pub mod sdedit;
pub mod verify;
pub mod world;

pub use denoiser::{FreeUConfig, GuidanceWeights};
pub use error::{Error, Result};
pub use generator::{CameraOp, EditMethod, EditOptions, Generator, IterRecord, OptimizerState};
pub use image::ImageTensor;
pub use schedule::{NoiseSchedule, ScheduleKind, TimestepKind, TimestepPlan};
pub use world::{ConditionSet, ImageTether, MixtureWorld, Prompt, Scene, SceneSize, WorldBundle};
