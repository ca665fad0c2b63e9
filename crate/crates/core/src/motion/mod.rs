//! Motion representation, BVH input/output, rotations, forward kinematics
//! and foot-contact labels.
//!
//! A motion is a tensor of dynamic features `D` with one row per frame. In
//! the default layout a row holds the root position, one 6D rotation per
//! non-end-site joint and one contact label per contact joint, so
//! `F = 3 + 6·J + C`.

pub mod bvh;
pub mod contact;
pub mod fk;
pub mod layout;
pub mod normalize;
pub mod rotation;
pub mod sequence;
pub mod skeleton;
pub mod synthetic;

pub use bvh::{parse_bvh, read_bvh_file, write_bvh, write_bvh_file, BvhData, ContactSpec};
pub use contact::{compute_contact_labels, default_contact_threshold, with_contact_labels, ContactLabels};
pub use fk::forward_kinematics;
pub use layout::{FeatureLayout, FeatureSlice, LayoutKind};
pub use normalize::Normalizer;
pub use sequence::MotionSequence;
pub use skeleton::{Channel, Joint, Skeleton};
pub use synthetic::{bundled_walk, synthetic_walk};
