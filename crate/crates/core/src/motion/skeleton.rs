use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::rotation::EulerOrder;

/// A BVH channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Channel::Xrotation | Channel::Yrotation | Channel::Zrotation)
    }

    pub fn position_channels() -> [Channel; 3] {
        [Channel::Xposition, Channel::Yposition, Channel::Zposition]
    }

    pub fn rotation_channels(order: EulerOrder) -> [Channel; 3] {
        let rot = [Channel::Xrotation, Channel::Yrotation, Channel::Zrotation];
        order.axes.map(|a| rot[a])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub channels: Vec<Channel>,
    /// BVH `End Site`: carries an offset but no channels and no rotation slot.
    pub end_site: bool,
}

impl Joint {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: [f64; 3], channels: Vec<Channel>) -> Self {
        Self {
            name: name.into(),
            parent,
            offset,
            channels,
            end_site: false,
        }
    }

    pub fn end_site(name: impl Into<String>, parent: usize, offset: [f64; 3]) -> Self {
        Self {
            name: name.into(),
            parent: Some(parent),
            offset,
            channels: Vec::new(),
            end_site: true,
        }
    }
}

/// Static skeleton: joint hierarchy in topological order, offsets in
/// skeleton units and the set of ground-contact joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSkeleton", into = "RawSkeleton")]
pub struct Skeleton {
    joints: Vec<Joint>,
    contact_joints: Vec<usize>,
    /// Meters per skeleton unit.
    pub units: f64,
    rotation_slots: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawSkeleton {
    joints: Vec<Joint>,
    contact_joints: Vec<usize>,
    units: f64,
}

impl TryFrom<RawSkeleton> for Skeleton {
    type Error = Error;

    fn try_from(raw: RawSkeleton) -> Result<Self> {
        Skeleton::new(raw.joints, raw.contact_joints, raw.units)
    }
}

impl From<Skeleton> for RawSkeleton {
    fn from(s: Skeleton) -> Self {
        RawSkeleton {
            joints: s.joints,
            contact_joints: s.contact_joints,
            units: s.units,
        }
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, contact_joints: Vec<usize>, units: f64) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("skeleton has no joints"));
        }
        if !(units > 0.0 && units.is_finite()) {
            return Err(Error::invalid(format!("skeleton units must be positive, got {units}")));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::invalid("joint 0 must be the root")),
                (_, None) => return Err(Error::invalid(format!("joint '{}' is a second root", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::invalid(format!(
                        "joint '{}' (index {i}) has parent index {p}; parents must precede children",
                        j.name
                    )))
                }
                (_, Some(p)) if joints[p].end_site => {
                    return Err(Error::invalid(format!("joint '{}' hangs below an end site", j.name)))
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("offset of joint '{}'", j.name)));
            }
            if j.end_site {
                if !j.channels.is_empty() {
                    return Err(Error::invalid(format!("end site '{}' has channels", j.name)));
                }
            } else {
                rotation_order(j)?;
            }
            if joints[..i].iter().any(|o| o.name == j.name) {
                return Err(Error::invalid(format!("duplicate joint name '{}'", j.name)));
            }
        }
        let mut seen = vec![false; joints.len()];
        for &c in &contact_joints {
            if c >= joints.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::invalid(format!(
                    "contact joint index {c} is out of range or repeated"
                )));
            }
        }
        let mut skeleton = Self {
            joints,
            contact_joints,
            units,
            rotation_slots: Vec::new(),
        };
        skeleton.index_slots();
        Ok(skeleton)
    }

    fn index_slots(&mut self) {
        let mut next = 0;
        self.rotation_slots = self
            .joints
            .iter()
            .map(|j| {
                (!j.end_site).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn contact_joints(&self) -> &[usize] {
        &self.contact_joints
    }

    pub fn with_contact_joints(self, contact_joints: Vec<usize>) -> Result<Self> {
        Skeleton::new(self.joints, contact_joints, self.units)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Number of joints that carry a rotation (all but end sites).
    pub fn rotated_count(&self) -> usize {
        self.joints.iter().filter(|j| !j.end_site).count()
    }

    pub fn rotated_joints(&self) -> impl Iterator<Item = (usize, &Joint)> {
        self.joints.iter().enumerate().filter(|(_, j)| !j.end_site)
    }

    /// Index of the joint's rotation among rotated joints.
    pub fn rotation_slot(&self, joint: usize) -> Option<usize> {
        self.rotation_slots.get(joint).copied().flatten()
    }

    pub fn euler_order(&self, joint: usize) -> Option<EulerOrder> {
        let j = &self.joints[joint];
        if j.end_site {
            None
        } else {
            rotation_order(j).ok()
        }
    }

    /// Joints whose name mentions a foot or toe.
    pub fn guess_contact_joints(&self) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| {
                let n = j.name.to_ascii_lowercase();
                n.contains("foot") || n.contains("toe")
            })
            .map(|(i, _)| i)
            .collect()
    }
}

fn rotation_order(j: &Joint) -> Result<EulerOrder> {
    let axes: Vec<usize> = j
        .channels
        .iter()
        .filter(|c| c.is_rotation())
        .map(|c| c.axis())
        .collect();
    if axes.len() != 3 {
        return Err(Error::invalid(format!(
            "joint '{}' has {} rotation channels; exactly 3 are supported",
            j.name,
            axes.len()
        )));
    }
    EulerOrder::new([axes[0], axes[1], axes[2]])
        .map_err(|_| Error::invalid(format!("joint '{}' repeats a rotation axis", j.name)))
}
