//! Mixture-of-experts network optimization library.
//!
//! The crate bundles the pieces of an expert-ensemble decision pipeline:
//!
//! - [`wireless`] — closed-form wireless QoS math (outage probability, data
//!   rate, throughput) plus the service-market utility model and a
//!   brute-force optimizer used as ground truth.
//! - [`maze`] — a small grid-world with goal/prize/trap cells and
//!   mission-configurable episodes.
//! - [`experts`] — tabular Q-learning expert models for maze objectives and
//!   per-QoS-metric power selection, with JSON persistence.
//! - [`gating`] — the decision layer that formulates objectives from
//!   requirement text, selects experts, weighs them, and fuses their
//!   per-action scores (scripted, trained, and LLM-backed gates).
//! - [`llm`] — a minimal chat-completion client with a live HTTP backend and
//!   a deterministic record/replay backend.
//! - [`harness`] — experiment orchestration, metrics, and CSV/JSON exports.

pub mod experts;
pub mod gating;
pub mod llm;
pub mod maze;
pub mod numerics;
pub mod wireless;

pub use experts::ExpertError;
pub use gating::GateError;
pub use llm::LlmError;
pub use maze::MazeError;
pub use numerics::NumericsError;
pub use wireless::WirelessError;
