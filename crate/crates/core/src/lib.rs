//! Point-map conditioned micro-diffusion laboratory.
//!
//! A desk-scale stack for geometry-conditioned novel view synthesis:
//!
//! - [`tensor`] — dense tensors with reverse-mode automatic differentiation,
//!   sized for a pixel-space micro diffusion model;
//! - [`geom`] — pinhole cameras, SE(3) poses, depth-to-point-map lifting,
//!   cross-frame transforms, LiDAR rasterization and point-map editing;
//! - [`encode`] — joint normalization and Fourier encoding of point maps,
//!   with the closed-form correspondence kernel;
//! - [`correspond`] — explicit nearest-neighbour matching (KD-tree and brute
//!   force), mutual matches, kernel-argmax matching and overlap filtering;
//! - [`warp`] — explicit forward warping baseline with z-buffering;
//! - [`diffusion`] — the micro denoiser: frozen base encoder–decoder,
//!   shared-weight control branches driven by encoded point maps,
//!   reference-guided cross-view attention, DDIM sampling and refinement;
//! - [`distill`] — loss composition and the augmentation schedule used when
//!   distilling generated views into a downstream scene representation;
//! - [`scene`] — procedural scenes, raycast rendering, trajectories,
//!   LiDAR simulation and crop augmentation;
//! - [`metrics`] — PSNR / SSIM / depth error metrics;
//! - [`dataset`] — scene-pair assembly from rendered datasets;
//! - [`io`] — PPM / PFM / PMLS / PMDK file formats.

pub mod correspond;
pub mod dataset;
pub mod diffusion;
pub mod distill;
pub mod encode;
pub mod error;
pub mod geom;
pub mod img;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod scene;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
