//! Optimal surface segmentation of knee bone and cartilage.
//!
//! The pipeline builds non-intersecting columns along electric lines of
//! force from a pre-segmented bone mesh, assigns per-node costs (gradient
//! based or learned from a neighborhood approximation forest plus clustered
//! random forests), and solves all coupled surfaces, objects and time-points
//! jointly as a single minimum s-t cut.

pub mod cli;
pub mod columns;
pub mod costs;
pub mod error;
pub mod features;
pub mod forest;
pub mod geom;
pub mod graph;
pub mod jei;
pub mod maxflow;
pub mod mesh;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod rng;
pub mod run;
pub mod session;
pub mod stats;
pub mod subplates;
pub mod volume;

pub use error::{Error, Result};
pub use geom::Vec3;
