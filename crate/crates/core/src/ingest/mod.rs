//! Dataset readers and writers.

pub mod cuboids;
pub mod kitti;
pub mod manifest;
pub mod poses;
pub mod pseudo;

pub use cuboids::{read_cuboids, Cuboid};
pub use kitti::{read_kitti_frame, write_kitti_frame};
pub use manifest::{DynamicSet, FrameEntry, Sequence, SequenceManifest};
pub use poses::read_poses;
pub use pseudo::{read_pseudo_labels, PseudoLabel};
