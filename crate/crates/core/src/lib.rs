//! Desk-scale simulator for XR-RF imaging with programmable wireless
//! environments.
//!
//! The crate computes the RF wavefront an object scatters onto a receive
//! array, copies that wavefront into a second room through metasurface
//! tiles driven by a graph-based controller, ships sampled wavefronts over
//! a byte-exact framing protocol, and produces the paired RF/photo corpus
//! and quality metrics used to evaluate learned RF-to-image reconstruction.
//!
//! Module map:
//!
//! - [`scene`]: rooms, reflector objects, sources, arrays, cameras,
//!   occlusion and reference photos.
//! - [`em`]: scalar field propagation with multi-bounce physical optics.
//! - [`sdm`]: metasurface tiles, codebooks and callback compilation.
//! - [`pwe`]: the environment controller (graph, routing, deployment,
//!   channel prediction, sensing-based replication, JSON command protocol).
//! - [`transport`]: wire frames and streaming sessions.
//! - [`dataset`]: training corpus generation and on-disk layout.
//! - [`metrics`]: PSNR, SSIM, field fidelity, boxplot stats, latency budget.
//! - [`scenario`]: canonical scenes and end-to-end runs.

pub mod dataset;
pub mod em;
pub mod geometry;
pub mod metrics;
pub mod pwe;
pub mod scenario;
pub mod scene;
pub mod sdm;
pub mod transport;

pub use geometry::{EulerAngles, Vec3};
pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
