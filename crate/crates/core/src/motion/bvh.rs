//! BVH text import and export.
//!
//! Coordinates are right-handed with Y up. Rotation channels list an
//! intrinsic Euler order in degrees; a joint listing `Zrotation Yrotation
//! Xrotation` has local rotation `Rz·Ry·Rx`. Non-root position channels are
//! read but ignored: the joint offset is used, and written back.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::contact::{default_contact_threshold, with_contact_labels};
use crate::motion::layout::FeatureLayout;
use crate::motion::rotation::{matrix_to_6d, rotation_6d_to_matrix};
use crate::motion::sequence::MotionSequence;
use crate::motion::skeleton::{Channel, Joint, Skeleton};

/// Raw BVH content: skeleton plus per-frame channel values in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct BvhData {
    pub skeleton: Skeleton,
    pub frames: Vec<Vec<f64>>,
    pub frame_time: f64,
}

/// Which joints are labelled as ground contacts.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum ContactSpec {
    /// Joints whose names mention a foot or toe.
    #[default]
    Auto,
    Named(Vec<String>),
    None,
}

impl ContactSpec {
    pub fn resolve(&self, skeleton: &Skeleton) -> Result<Vec<usize>> {
        match self {
            ContactSpec::Auto => Ok(skeleton.guess_contact_joints()),
            ContactSpec::None => Ok(Vec::new()),
            ContactSpec::Named(names) => names
                .iter()
                .map(|n| {
                    skeleton
                        .joint_index(n)
                        .ok_or_else(|| Error::invalid(format!("contact joint '{n}' not in skeleton")))
                })
                .collect(),
        }
    }
}

/// Frame rate implied by a frame time; snapped to the nearest integer when
/// within 0.01 of it, so that `0.0333333` reads as 30.
pub fn fps_from_frame_time(frame_time: f64) -> f64 {
    let fps = 1.0 / frame_time;
    if (fps - fps.round()).abs() < 0.01 {
        fps.round()
    } else {
        fps
    }
}

impl BvhData {
    pub fn fps(&self) -> f64 {
        fps_from_frame_time(self.frame_time)
    }

    pub fn channel_count(&self) -> usize {
        self.skeleton.joints().iter().map(|j| j.channels.len()).sum()
    }

    /// Converts Euler channels to the 6D feature layout and labels contacts.
    /// `threshold` defaults to [`default_contact_threshold`].
    pub fn to_motion(&self, contacts: &ContactSpec, threshold: Option<f64>) -> Result<MotionSequence> {
        let indices = contacts.resolve(&self.skeleton)?;
        let skeleton = self.skeleton.clone().with_contact_joints(indices)?;
        let layout = FeatureLayout::ganimator(&skeleton);
        let n = self.frames.len();
        let mut d = Array2::zeros((n, layout.features));
        for (f, values) in self.frames.iter().enumerate() {
            let mut at = 0;
            for (ji, joint) in skeleton.joints().iter().enumerate() {
                let vals = &values[at..at + joint.channels.len()];
                at += joint.channels.len();
                let Some(slot) = skeleton.rotation_slot(ji) else {
                    continue;
                };
                let mut angles = [0.0; 3];
                let mut r = 0;
                for (c, &v) in joint.channels.iter().zip(vals) {
                    if c.is_rotation() {
                        angles[r] = v.to_radians();
                        r += 1;
                    } else if ji == 0 {
                        d[[f, c.axis()]] = v;
                    }
                }
                let order = skeleton.euler_order(ji).expect("validated joint has an Euler order");
                let r6 = matrix_to_6d(&order.to_matrix(&angles));
                for (k, col) in layout.rotation(slot).enumerate() {
                    d[[f, col]] = r6[k];
                }
            }
        }
        let fps = self.fps();
        let motion = MotionSequence::new(d, layout, skeleton, fps)?;
        if motion.skeleton().contact_joints().is_empty() || n < 2 {
            return Ok(motion);
        }
        let eps = threshold.unwrap_or_else(|| default_contact_threshold(motion.skeleton().units, fps));
        with_contact_labels(&motion, eps)
    }

    /// Euler channels of a GanimatorStyle motion, in each joint's order.
    pub fn from_motion(motion: &MotionSequence) -> Result<Self> {
        motion.require_ganimator("BVH export")?;
        if !motion.dynamics().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("motion dynamics".into()));
        }
        let skeleton = motion.skeleton();
        let layout = motion.layout();
        let mut frames = Vec::with_capacity(motion.frames());
        for row in motion.dynamics().rows() {
            let mut values = Vec::new();
            for (ji, joint) in skeleton.joints().iter().enumerate() {
                let angles = match skeleton.rotation_slot(ji) {
                    Some(slot) => {
                        let r6: Vec<f64> = layout.rotation(slot).map(|c| row[c]).collect();
                        let m = rotation_6d_to_matrix(&r6)?;
                        let order = skeleton.euler_order(ji).expect("validated joint has an Euler order");
                        order.from_matrix(&m)
                    }
                    None => [0.0; 3],
                };
                let mut r = 0;
                for c in &joint.channels {
                    if c.is_rotation() {
                        values.push(angles[r].to_degrees());
                        r += 1;
                    } else if ji == 0 {
                        values.push(row[c.axis()]);
                    } else {
                        values.push(joint.offset[c.axis()]);
                    }
                }
            }
            frames.push(values);
        }
        Ok(Self {
            skeleton: skeleton.clone(),
            frames,
            frame_time: 1.0 / motion.fps(),
        })
    }

    /// BVH text with channel values at 6 decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::from("HIERARCHY\n");
        let joints = self.skeleton.joints();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); joints.len()];
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(joints.len());
        write_joint(&mut out, joints, &children, 0, 0, &mut order);
        // Channel values follow the hierarchy as written, which differs from
        // storage order when siblings' subtrees are interleaved.
        let mut start = Vec::with_capacity(joints.len());
        let mut at = 0;
        for j in joints {
            start.push(at);
            at += j.channels.len();
        }
        let _ = writeln!(out, "MOTION");
        let _ = writeln!(out, "Frames: {}", self.frames.len());
        let _ = writeln!(out, "Frame Time: {}", self.frame_time);
        for values in &self.frames {
            let line: Vec<String> = order
                .iter()
                .flat_map(|&j| &values[start[j]..start[j] + joints[j].channels.len()])
                .map(|v| format!("{:.6}", v))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

fn write_joint(
    out: &mut String,
    joints: &[Joint],
    children: &[Vec<usize>],
    i: usize,
    depth: usize,
    order: &mut Vec<usize>,
) {
    order.push(i);
    let pad = "\t".repeat(depth);
    let j = &joints[i];
    let o = j.offset;
    if j.end_site {
        let _ = writeln!(out, "{pad}End Site");
    } else if j.parent.is_none() {
        let _ = writeln!(out, "{pad}ROOT {}", j.name);
    } else {
        let _ = writeln!(out, "{pad}JOINT {}", j.name);
    }
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}\tOFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
    if !j.end_site {
        let names: Vec<&str> = j.channels.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "{pad}\tCHANNELS {} {}", names.len(), names.join(" "));
    }
    for &c in &children[i] {
        write_joint(out, joints, children, c, depth + 1, order);
    }
    let _ = writeln!(out, "{pad}}}");
}

pub fn write_bvh(motion: &MotionSequence) -> Result<String> {
    Ok(BvhData::from_motion(motion)?.to_text())
}

pub fn write_bvh_file(motion: &MotionSequence, path: &Path) -> Result<()> {
    let text = write_bvh(motion)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_bvh_file(path: &Path) -> Result<BvhData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bvh(&text)
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<(&'a str, usize)> {
        let t = self.items.get(self.pos).copied().ok_or_else(|| Error::Bvh {
            line: self.last_line,
            message: "unexpected end of hierarchy".into(),
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<usize> {
        let (t, line) = self.next()?;
        if t != want {
            return Err(bvh_err(line, format!("expected '{want}', found '{t}'")));
        }
        Ok(line)
    }

    fn number(&mut self) -> Result<f64> {
        let (t, line) = self.next()?;
        t.parse()
            .map_err(|_| bvh_err(line, format!("expected a number, found '{t}'")))
    }
}

fn bvh_err(line: usize, message: impl Into<String>) -> Error {
    Error::Bvh {
        line,
        message: message.into(),
    }
}

/// Parses BVH text. End sites become channel-less joints named
/// `<parent>_End`. Units are taken as centimeters (Mixamo convention).
pub fn parse_bvh(text: &str) -> Result<BvhData> {
    let lines: Vec<&str> = text.lines().collect();
    let motion_line = lines
        .iter()
        .position(|l| l.trim() == "MOTION")
        .ok_or_else(|| bvh_err(lines.len(), "missing MOTION section"))?;
    let mut items = Vec::new();
    for (i, l) in lines[..motion_line].iter().enumerate() {
        items.extend(l.split_whitespace().map(|t| (t, i + 1)));
    }
    let mut tokens = Tokens {
        items,
        pos: 0,
        last_line: motion_line,
    };
    tokens.expect("HIERARCHY")?;
    tokens.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut tokens, &mut joints, None)?;
    if tokens.pos != tokens.items.len() {
        let (t, line) = tokens.items[tokens.pos];
        return Err(bvh_err(
            line,
            format!("unexpected '{t}' after the root joint (only one root is supported)"),
        ));
    }
    let skeleton = Skeleton::new(joints, Vec::new(), 0.01).map_err(|e| bvh_err(1, e.to_string()))?;
    let channels: usize = skeleton.joints().iter().map(|j| j.channels.len()).sum();

    let mut rest = lines[motion_line + 1..]
        .iter()
        .enumerate()
        .map(|(i, l)| (motion_line + 2 + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, frames_line) = rest
        .next()
        .ok_or_else(|| bvh_err(motion_line + 1, "missing 'Frames:' line"))?;
    let declared: usize = frames_line
        .strip_prefix("Frames:")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bvh_err(line, format!("expected 'Frames: <count>', found '{frames_line}'")))?;
    let (line, time_line) = rest.next().ok_or_else(|| bvh_err(line, "missing 'Frame Time:' line"))?;
    let frame_time: f64 = time_line
        .strip_prefix("Frame Time:")
        .and_then(|v| v.trim().parse().ok())
        .filter(|t: &f64| *t > 0.0 && t.is_finite())
        .ok_or_else(|| bvh_err(line, format!("expected 'Frame Time: <seconds>', found '{time_line}'")))?;
    let mut frames = Vec::with_capacity(declared);
    for (line, l) in rest {
        let values: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bvh_err(line, format!("bad channel value '{t}'"))))
            .collect::<Result<_>>()?;
        if values.len() != channels {
            return Err(bvh_err(
                line,
                format!(
                    "frame has {} values but the hierarchy declares {channels} channels",
                    values.len()
                ),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(bvh_err(line, "non-finite channel value"));
        }
        frames.push(values);
    }
    if frames.len() != declared {
        return Err(bvh_err(
            lines.len(),
            format!("header declares {declared} frames but {} are present", frames.len()),
        ));
    }
    if frames.is_empty() {
        return Err(bvh_err(line, "motion has no frames"));
    }
    Ok(BvhData {
        skeleton,
        frames,
        frame_time,
    })
}

fn parse_joint(tokens: &mut Tokens, joints: &mut Vec<Joint>, parent: Option<usize>) -> Result<()> {
    let (name, line) = tokens.next()?;
    if name == "{" {
        return Err(bvh_err(line, "joint is missing a name"));
    }
    tokens.expect("{")?;
    tokens.expect("OFFSET")?;
    let offset = [tokens.number()?, tokens.number()?, tokens.number()?];
    let line = tokens.expect("CHANNELS")?;
    let count = tokens.number()?;
    if count.fract() != 0.0 || !(0.0..=6.0).contains(&count) {
        return Err(bvh_err(line, format!("invalid channel count {count}")));
    }
    let mut channels = Vec::new();
    for _ in 0..count as usize {
        let (c, line) = tokens.next()?;
        channels.push(Channel::parse(c).ok_or_else(|| bvh_err(line, format!("unsupported channel '{c}'")))?);
    }
    let index = joints.len();
    joints.push(Joint::new(name, parent, offset, channels));
    let mut end_sites = 0;
    loop {
        let (t, line) = tokens.next()?;
        match t {
            "}" => return Ok(()),
            "JOINT" => parse_joint(tokens, joints, Some(index))?,
            "End" => {
                tokens.expect("Site")?;
                tokens.expect("{")?;
                tokens.expect("OFFSET")?;
                let offset = [tokens.number()?, tokens.number()?, tokens.number()?];
                tokens.expect("}")?;
                let suffix = if end_sites == 0 {
                    String::new()
                } else {
                    end_sites.to_string()
                };
                end_sites += 1;
                joints.push(Joint::end_site(format!("{name}_End{suffix}"), index, offset));
            }
            other => return Err(bvh_err(line, format!("unexpected '{other}' in joint '{name}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  JOINT Chest
  {
    OFFSET 0 10 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 5 0
    }
  }
}
MOTION
Frames: 1
Frame Time: 0.0333333
0 0 0 0 0 0 0 0 0
";

    #[test]
    fn parses_minimal_file() {
        let b = parse_bvh(TWO).unwrap();
        assert_eq!(b.skeleton.len(), 3);
        assert_eq!(b.skeleton.rotated_count(), 2);
        assert_eq!(b.frames, vec![vec![0.0; 9]]);
        assert_eq!(b.fps(), 30.0);
        assert_eq!(b.skeleton.joints()[2].name, "Chest_End");
    }

    #[test]
    fn frame_count_mismatch_names_both() {
        let text = TWO.replace("Frames: 1", "Frames: 3");
        let e = parse_bvh(&text).unwrap_err().to_string();
        assert!(e.contains('3') && e.contains('1'), "{e}");
    }

    #[test]
    fn channel_mismatch_has_line() {
        let text = TWO.replace("0 0 0 0 0 0 0 0 0", "0 0 0");
        match parse_bvh(&text) {
            Err(Error::Bvh { line, .. }) => assert_eq!(line, 19),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_channel() {
        let text = TWO.replace("Zrotation Xrotation Yrotation", "Zrotation Xrotation Wrotation");
        match parse_bvh(&text) {
            Err(Error::Bvh { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("Wrotation"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        assert!(parse_bvh("ROOT x\nMOTION\nFrames: 0\n").is_err());
        assert!(parse_bvh("HIERARCHY\nROOT x\n{\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let b = parse_bvh(TWO).unwrap();
        let again = parse_bvh(&b.to_text()).unwrap();
        assert_eq!(again, b);
    }
}
