//! Procedural test motion: an 8-joint biped walking a circle, built from
//! phase-shifted sinusoidal joint rotations.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use ndarray::Array2;

use crate::error::Result;
use crate::motion::contact::{default_contact_threshold, with_contact_labels};
use crate::motion::layout::FeatureLayout;
use crate::motion::rotation::{matrix_to_6d, EulerOrder};
use crate::motion::sequence::MotionSequence;
use crate::motion::skeleton::{Channel, Joint, Skeleton};

pub const WALK_FRAMES: usize = 300;
pub const WALK_FPS: f64 = 30.0;

const CIRCLE_SECONDS: f64 = 5.0;
const GAIT_SECONDS: f64 = 1.0;
const RADIUS: f64 = 100.0;
const HIP_HEIGHT: f64 = 94.0;

/// Skeleton in centimeters with ZYX rotation channels; contact joints are
/// the feet and their end sites.
pub fn biped_skeleton() -> Skeleton {
    let rot = || Channel::rotation_channels(EulerOrder::ZYX).to_vec();
    let mut root_channels = Channel::position_channels().to_vec();
    root_channels.extend(rot());
    let joints = vec![
        Joint::new("Hips", None, [0.0, 0.0, 0.0], root_channels),
        Joint::new("Spine", Some(0), [0.0, 10.0, 0.0], rot()),
        Joint::end_site("Spine_End", 1, [0.0, 45.0, 0.0]),
        Joint::new("LeftUpLeg", Some(0), [9.0, -5.0, 0.0], rot()),
        Joint::new("LeftLeg", Some(3), [0.0, -42.0, 0.0], rot()),
        Joint::new("LeftFoot", Some(4), [0.0, -42.0, 0.0], rot()),
        Joint::end_site("LeftFoot_End", 5, [0.0, -6.0, 14.0]),
        Joint::new("RightUpLeg", Some(0), [-9.0, -5.0, 0.0], rot()),
        Joint::new("RightLeg", Some(7), [0.0, -42.0, 0.0], rot()),
        Joint::new("RightFoot", Some(8), [0.0, -42.0, 0.0], rot()),
        Joint::end_site("RightFoot_End", 9, [0.0, -6.0, 14.0]),
    ];
    Skeleton::new(joints, vec![5, 6, 9, 10], 0.01).expect("static skeleton is valid")
}

/// `frames` frames of the circular walk at `fps`, contact labels included.
pub fn synthetic_walk(frames: usize, fps: f64) -> Result<MotionSequence> {
    let skeleton = biped_skeleton();
    let layout = FeatureLayout::ganimator(&skeleton);
    let mut d = Array2::zeros((frames, layout.features));
    let deg = |v: f64| v.to_radians();
    for n in 0..frames {
        let t = n as f64 / fps;
        let th = TAU * t / CIRCLE_SECONDS;
        let ph = TAU * t / GAIT_SECONDS;
        d[[n, 0]] = RADIUS * th.sin();
        d[[n, 1]] = HIP_HEIGHT + 2.0 * (2.0 * ph).cos();
        d[[n, 2]] = RADIUS * th.cos();
        let leg = |p: f64| {
            [
                [0.0, 0.0, deg(25.0 * p.sin())],
                [0.0, 0.0, deg(-30.0 * (0.5 + 0.5 * (p + 1.2).sin()))],
                [0.0, 0.0, deg(10.0 * (p + 2.0).sin())],
            ]
        };
        let l = leg(ph);
        let r = leg(ph + PI);
        // Angles in ZYX channel order.
        let angles = [
            [deg(3.0 * ph.sin()), th + FRAC_PI_2, deg(2.0 * (2.0 * ph).sin())],
            [0.0, deg(-8.0 * ph.sin()), deg(5.0 + 3.0 * (2.0 * ph).sin())],
            l[0],
            l[1],
            l[2],
            r[0],
            r[1],
            r[2],
        ];
        for (slot, a) in angles.iter().enumerate() {
            let r6 = matrix_to_6d(&EulerOrder::ZYX.to_matrix(a));
            for (k, col) in layout.rotation(slot).enumerate() {
                d[[n, col]] = r6[k];
            }
        }
    }
    let motion = MotionSequence::new(d, layout, skeleton, fps)?;
    if frames < 2 {
        return Ok(motion);
    }
    with_contact_labels(&motion, default_contact_threshold(motion.skeleton().units, fps))
}

/// The bundled 300-frame, 30 fps walk.
pub fn bundled_walk() -> MotionSequence {
    synthetic_walk(WALK_FRAMES, WALK_FPS).expect("bundled motion is valid")
}
