use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::fk::forward_kinematics;
use crate::motion::sequence::MotionSequence;

/// Per-frame ground contact of each contact joint, `N×C` of 0/1.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactLabels {
    pub labels: Array2<f64>,
    /// Velocity threshold in skeleton units per frame.
    pub threshold: f64,
}

/// 0.006 m per frame at 30 fps, in skeleton units per frame at `fps`.
pub fn default_contact_threshold(units: f64, fps: f64) -> f64 {
    0.006 / units * (30.0 / fps)
}

/// A contact joint is grounded when its frame-to-frame FK displacement is
/// below `threshold`. Frame 0 copies frame 1.
pub fn compute_contact_labels(motion: &MotionSequence, threshold: f64) -> Result<ContactLabels> {
    let contacts = motion.skeleton().contact_joints();
    if contacts.is_empty() {
        return Err(Error::invalid("skeleton has no contact joints"));
    }
    let n = motion.frames();
    if n < 2 {
        return Err(Error::invalid(format!(
            "contact labels need at least 2 frames, got {n}"
        )));
    }
    let pos = forward_kinematics(motion)?;
    let mut labels = Array2::zeros((n, contacts.len()));
    for f in 1..n {
        for (c, &j) in contacts.iter().enumerate() {
            let d2: f64 = (0..3).map(|a| (pos[[f, j, a]] - pos[[f - 1, j, a]]).powi(2)).sum();
            labels[[f, c]] = if d2.sqrt() < threshold { 1.0 } else { 0.0 };
        }
    }
    for c in 0..contacts.len() {
        labels[[0, c]] = labels[[1, c]];
    }
    Ok(ContactLabels { labels, threshold })
}

/// Writes freshly computed contact labels into the motion's contact slice.
pub fn with_contact_labels(motion: &MotionSequence, threshold: f64) -> Result<MotionSequence> {
    if motion.skeleton().contact_joints().is_empty() {
        return Ok(motion.clone());
    }
    let labels = compute_contact_labels(motion, threshold)?;
    let mut d = motion.dynamics().clone();
    let cr = motion.layout().contact_range();
    for f in 0..d.nrows() {
        for (c, col) in cr.clone().enumerate() {
            d[[f, col]] = labels.labels[[f, c]];
        }
    }
    motion.with_dynamics(d)
}
