use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::skeleton::Skeleton;

/// Size of one rotation feature.
pub const ROT_SIZE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutKind {
    /// Root position, one 6D rotation per joint, contact labels.
    GanimatorStyle,
    /// Redundant root-velocity layout; bookkeeping only, no pose recovery.
    HumanML3D,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl FeatureSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Named index ranges of a per-frame feature vector. The slices are
/// disjoint and cover `0..features`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub kind: LayoutKind,
    pub joints: usize,
    pub rot_size: usize,
    pub contacts: usize,
    pub features: usize,
    slices: Vec<FeatureSlice>,
}

impl FeatureLayout {
    pub fn ganimator(skeleton: &Skeleton) -> Self {
        let mut slices = vec![FeatureSlice {
            name: "root_position".into(),
            start: 0,
            len: 3,
        }];
        let mut at = 3;
        for (_, j) in skeleton.rotated_joints() {
            slices.push(FeatureSlice {
                name: format!("joint:{}", j.name),
                start: at,
                len: ROT_SIZE,
            });
            at += ROT_SIZE;
        }
        for &c in skeleton.contact_joints() {
            slices.push(FeatureSlice {
                name: format!("contact:{}", skeleton.joints()[c].name),
                start: at,
                len: 1,
            });
            at += 1;
        }
        let joints = skeleton.rotated_count();
        let contacts = skeleton.contact_joints().len();
        debug_assert_eq!(at, 3 + joints * ROT_SIZE + contacts);
        Self {
            kind: LayoutKind::GanimatorStyle,
            joints,
            rot_size: ROT_SIZE,
            contacts,
            features: at,
            slices,
        }
    }

    pub fn humanml3d(joints: usize) -> Self {
        let parts = [
            ("root_angular_velocity", 1),
            ("root_linear_velocity", 2),
            ("root_height", 1),
            ("joint_positions", 3 * joints),
            ("joint_velocities", 3 * joints),
            ("joint_rotations", 6 * joints),
            ("foot_contact", 4),
        ];
        let mut at = 0;
        let slices = parts
            .iter()
            .map(|&(name, len)| {
                let s = FeatureSlice {
                    name: name.into(),
                    start: at,
                    len,
                };
                at += len;
                s
            })
            .collect();
        Self {
            kind: LayoutKind::HumanML3D,
            joints,
            rot_size: ROT_SIZE,
            contacts: 4,
            features: at,
            slices,
        }
    }

    pub fn slices(&self) -> &[FeatureSlice] {
        &self.slices
    }

    pub fn slice(&self, name: &str) -> Option<Range<usize>> {
        self.slices.iter().find(|s| s.name == name).map(FeatureSlice::range)
    }

    pub fn root_position(&self) -> Range<usize> {
        0..3
    }

    /// Features of rotation slot `slot` (GanimatorStyle).
    pub fn rotation(&self, slot: usize) -> Range<usize> {
        let start = 3 + slot * self.rot_size;
        start..start + self.rot_size
    }

    /// Contact-label features.
    pub fn contact_range(&self) -> Range<usize> {
        match self.kind {
            LayoutKind::GanimatorStyle => self.features - self.contacts..self.features,
            LayoutKind::HumanML3D => self.slice("foot_contact").expect("layout has a contact slice"),
        }
    }

    /// Feature ranges named by `name`: an exact slice name, `joint:`/`contact:`
    /// forms, a bare joint name, or the groups `rotations` and `contacts`.
    pub fn resolve(&self, name: &str) -> Result<Vec<Range<usize>>> {
        if let Some(r) = self.slice(name) {
            return Ok(vec![r]);
        }
        let group = |prefix: &str| -> Vec<Range<usize>> {
            self.slices
                .iter()
                .filter(|s| s.name.starts_with(prefix))
                .map(FeatureSlice::range)
                .collect()
        };
        let found = match (self.kind, name) {
            (LayoutKind::GanimatorStyle, "rotations") => group("joint:"),
            (LayoutKind::GanimatorStyle, "contacts") => group("contact:"),
            (LayoutKind::HumanML3D, "rotations") => group("joint_rotations"),
            (LayoutKind::HumanML3D, "contacts") => group("foot_contact"),
            _ => self.slice(&format!("joint:{name}")).into_iter().collect(),
        };
        if found.is_empty() {
            return Err(Error::invalid(format!("layout has no feature slice named '{name}'")));
        }
        Ok(found)
    }
}
