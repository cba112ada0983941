//! Sequence-level 3D box annotation and detection toolkit.
//!
//! * [`geometry`]: oriented boxes, exact 3D IoU, Chamfer distances, rasters
//!   and pinhole cameras.
//! * [`scene`]: deterministic synthetic rooms, camera walks and ray-cast
//!   depth / instance maps.
//! * [`annotate`]: per-frame filtering and visibility-driven box adaptation.
//! * [`io`]: on-disk dataset layout, manifests and prediction files.
//! * [`losses`]: differentiable detection, depth, pose and consistency losses.
//! * [`decoder`]: a causal token decoder with verification helpers.
//! * [`metrics`]: AP3D, F1 and temporal variance metrics.
//! * [`pipeline`]: the `generate` / `annotate` dataset runs.

pub mod annotate;
pub mod autodiff;
pub mod clip;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
