//! A differentiable no-reference metric for texture tileability.
//!
//! The crate scores how seamlessly a texture tiles when repeated: the input
//! is tiled 2x2, pushed through a small fully-convolutional network with
//! residual linear self-attention, and the resulting logit is squashed to a
//! calibrated score in (0, 1). Everything needed to reproduce that score
//! lives here:
//!
//! - [`img`]: channel-last float images and the differentiable ops they
//!   support (tiling, mirroring, circular shifts, rotation, cropping,
//!   resizing) plus PNG/JPEG I/O,
//! - [`augment`]: the label-aware augmentation engine that turns a corpus of
//!   tileable/non-tileable textures into training samples,
//! - [`net`]: the backbone, attention blocks, checkpointing and
//!   class-activation saliency,
//! - [`metric`]: the score itself and its loss/batch forms,
//! - [`trainer`]: manifest handling, synthetic corpus generation, the
//!   training loop and evaluation,
//! - [`apps`]: texture synthesis, outpainting, rotation alignment, repeat
//!   detection and benchmarking on top of any [`apps::Scorer`],
//! - [`plot`]: dependency-free PNG charts for curves and surfaces.

pub mod apps;
pub mod augment;
pub mod img;
pub mod metric;
pub mod net;
pub mod plot;
pub mod trainer;
