//! Multi-view attention fusion, inverse-variance view weighting, attention
//! alignment and block-coordinate refinement of multi-view frame sequences,
//! with the synthetic scenes and numerical checks that exercise them.

pub mod attention;
pub mod error;
pub mod frame;
pub mod fusion;
pub mod mvopt;
pub mod pose;
pub mod rig;
pub mod rng;
pub mod scorecheck;
pub mod synth;

pub use error::{Error, Result};
pub use frame::{Frame, FrameSequence, Keypoint, KeypointSet};
pub use rig::{build_view_rig, ViewRig};
pub use rng::SeededRng;
