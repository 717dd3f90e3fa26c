//! Moment-conserving splitting of 3D Gaussian splats along planes and
//! implicit boundaries, plus the error metrics, PLY I/O and densification
//! passes built on top of it.

pub mod densify;
pub mod edit;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ply;
pub mod scene;
pub mod split;

pub use edit::{apply_edit, EditOutcome, EditSpec};
pub use error::{Error, Result};
pub use metrics::{EditReport, SplitRecord};
pub use model::{covariance, decompose, Covariance, Gaussian, Moments, Plane, Side, SplatModel};
pub use split::{merge, split_at_plane, SplitOutcome};
