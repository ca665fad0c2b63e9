use ndarray::Array3;

use crate::error::Result;
use crate::motion::rotation::{mat_mul, mat_vec, rotation_6d_to_matrix, Mat3, IDENTITY};
use crate::motion::sequence::MotionSequence;
use crate::motion::skeleton::Skeleton;

/// Global positions of every skeleton joint, end sites included, as
/// `N × joints × 3` in skeleton units.
pub fn forward_kinematics(motion: &MotionSequence) -> Result<Array3<f64>> {
    motion.require_ganimator("forward kinematics")?;
    let skeleton = motion.skeleton();
    let layout = motion.layout();
    let n = motion.frames();
    let mut out = Array3::zeros((n, skeleton.len(), 3));
    for (f, row) in motion.dynamics().rows().into_iter().enumerate() {
        let rp = layout.root_position();
        let root = [row[rp.start], row[rp.start + 1], row[rp.start + 2]];
        let mut rotations = Vec::with_capacity(layout.joints);
        for slot in 0..layout.joints {
            let r6: Vec<f64> = layout.rotation(slot).map(|c| row[c]).collect();
            rotations.push(rotation_6d_to_matrix(&r6)?);
        }
        let positions = fk_frame(skeleton, root, &rotations);
        for (j, p) in positions.iter().enumerate() {
            for a in 0..3 {
                out[[f, j, a]] = p[a];
            }
        }
    }
    Ok(out)
}

/// One frame of FK from a root translation and per-slot local rotations.
pub fn fk_frame(skeleton: &Skeleton, root: [f64; 3], rotations: &[Mat3]) -> Vec<[f64; 3]> {
    let joints = skeleton.joints();
    let mut global_rot: Vec<Mat3> = Vec::with_capacity(joints.len());
    let mut global_pos: Vec<[f64; 3]> = Vec::with_capacity(joints.len());
    for (i, j) in joints.iter().enumerate() {
        let local = skeleton.rotation_slot(i).map_or(IDENTITY, |s| rotations[s]);
        match j.parent {
            None => {
                global_pos.push([j.offset[0] + root[0], j.offset[1] + root[1], j.offset[2] + root[2]]);
                global_rot.push(local);
            }
            Some(p) => {
                let o = mat_vec(&global_rot[p], &j.offset);
                let pp = global_pos[p];
                global_pos.push([pp[0] + o[0], pp[1] + o[1], pp[2] + o[2]]);
                global_rot.push(mat_mul(&global_rot[p], &local));
            }
        }
    }
    global_pos
}
