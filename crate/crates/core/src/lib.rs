//! Lidar domain adaptation at the data level: rebuild labeled sequences as
//! mesh worlds, resample them for other sensors, inject target instances and
//! fuse generated with real frames.

pub mod aggregate;
pub mod app;
pub mod error;
pub mod eval;
pub mod fuse;
pub mod ingest;
pub mod inject;
pub mod point;
pub mod pose;
pub mod range_image;
pub mod reconstruct;
pub mod sensor;
pub mod spatial;
pub mod synthworld;
pub mod trace;

pub use error::{Error, Result};
pub use point::{CloudFrame, PointCloud, SemanticPoint, SourceTag};
pub use pose::PoseSE3;
pub use range_image::{build_range_image, RangeImage};
pub use sensor::{SensorCatalog, SensorModel};
