//! Desk-scale workbench for RF-based 3D reconstruction with material-aware
//! spherical primitives inside a RIS-programmable room.
//!
//! Pipeline: [`scene`] draws ground-truth spheres, [`propagation`] traces the
//! room's multipath under each RIS codebook entry, [`features`] condenses the
//! arrivals into a per-antenna feature map, [`model`] is a small detection
//! transformer trained with the [`matching`] set loss, and [`eval`] scores
//! detections against ground truth.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod io;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod propagation;
pub mod scene;
pub mod vec3;

pub use error::{Error, FormatError, Result};
pub use geom::{GiouResult, Sphere};
pub use vec3::Vec3;
