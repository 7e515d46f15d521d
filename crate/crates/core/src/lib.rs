//! Zero-shot GUI grounding toolkit.
//!
//! * [`overlay`] draws spatial scaffolds (grids, dot matrices, axes, labelled
//!   cells) onto screenshots.
//! * [`geometry`] holds the grid tiling, box algebra and crop transforms.
//! * [`pointing_game`] scores exported attention maps against ground truth.
//! * [`model_client`] talks to OpenAI-compatible vision endpoints and provides
//!   deterministic mock models.
//! * [`methods`] turns a screenshot + instruction into a click point for each
//!   grounding method.
//! * [`harness`] loads benchmarks, runs method x model matrices with a response
//!   cache, and writes accuracy reports.

pub mod geometry;
pub mod harness;
pub mod methods;
pub mod model_client;
pub mod overlay;
pub mod pointing_game;
