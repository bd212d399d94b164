//! Benchmark toolkit for image retrieval in visual localization.
//!
//! Three localization paradigms consume ranked retrieval lists: pose
//! approximation from the top-k database poses ([`pose_approx`]), pose
//! estimation against a local map triangulated on the fly and against a
//! pre-built global map ([`map_localize`]). Retrieval lists come either from
//! global descriptors or from one of three ground-truth relevance scores
//! ([`gt_ranking`]). [`metrics`] and [`correlation`] relate retrieval quality to
//! localization accuracy, [`challenge`] flags blurry and dynamic queries and
//! [`synth`] produces fully known desk-scale scenes.

pub mod bench;
pub mod challenge;
pub mod correlation;
pub mod data_io;
pub mod error;
pub mod geometry;
pub mod gt_ranking;
pub mod ids;
pub mod lp;
pub mod map_localize;
pub mod metrics;
pub mod pose_approx;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Frustum, Pose, PoseError};
pub use ids::{CameraId, ImageId, PointId};
pub use map_localize::SceneMap;
