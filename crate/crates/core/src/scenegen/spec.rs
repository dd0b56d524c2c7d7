//! Articulated scene descriptions built from rounded boxes.

use serde::{Deserialize, Serialize};

use crate::geom::{JointEstimate, JointType, Transform};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    HingedBox,
    Drawer,
    TwoDoorCabinet,
    Custom,
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinged_box" => Ok(Self::HingedBox),
            "drawer" => Ok(Self::Drawer),
            "two_door_cabinet" => Ok(Self::TwoDoorCabinet),
            other => Err(Error::invalid(format!(
                "unknown template {other:?} (expected hinged_box, drawer or two_door_cabinet)"
            ))),
        }
    }
}

/// Axis-aligned rounded box in its source pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartGeometry {
    pub name: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Edge rounding radius.
    pub rounding: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub template: Template,
    /// Part 0 is static.
    pub parts: Vec<PartGeometry>,
    /// Source→target joint of parts `1..k`, in order.
    pub joints: Vec<JointEstimate>,
    pub sigma_max: f64,
    /// Half-width of the density ramp across the surface.
    pub softness: f64,
    pub texture_seed: u64,
}

/// Smallest admissible joint motion.
pub const MIN_JOINT_ANGLE_DEG: f64 = 15.0;
pub const MIN_JOINT_DISTANCE: f64 = 0.15;

fn part(name: &str, center: [f64; 3], half_extents: [f64; 3], color: [f64; 3]) -> PartGeometry {
    PartGeometry {
        name: name.into(),
        center,
        half_extents,
        rounding: 0.02,
        color,
    }
}

impl SceneSpec {
    fn with(template: Template, parts: Vec<PartGeometry>, joints: Vec<JointEstimate>) -> Self {
        Self {
            template,
            parts,
            joints,
            sigma_max: 40.0,
            softness: 0.02,
            texture_seed: 7,
        }
    }

    /// Box with a lid hinged along its back top edge, opened 40°.
    pub fn hinged_box() -> Self {
        Self::with(
            Template::HingedBox,
            vec![
                part("base", [0.0, -0.15, 0.0], [0.45, 0.25, 0.35], [0.85, 0.35, 0.2]),
                part("lid", [0.0, 0.165, 0.0], [0.45, 0.04, 0.35], [0.2, 0.55, 0.85]),
            ],
            vec![JointEstimate::revolute([-1.0, 0.0, 0.0], [0.0, 0.125, -0.35], 40.0)],
        )
    }

    /// Cabinet body with a drawer in front, pulled out 0.3.
    pub fn drawer() -> Self {
        Self::with(
            Template::Drawer,
            vec![
                part("body", [0.0, 0.0, -0.1], [0.45, 0.4, 0.3], [0.75, 0.7, 0.3]),
                part("drawer", [0.0, -0.05, 0.285], [0.32, 0.18, 0.06], [0.3, 0.35, 0.8]),
            ],
            vec![JointEstimate::prismatic([0.0, 0.0, 1.0], 0.3)],
        )
    }

    /// Cabinet with two doors hinged at its outer edges, opened 30° and 50°.
    pub fn two_door_cabinet() -> Self {
        Self::with(
            Template::TwoDoorCabinet,
            vec![
                part("body", [0.0, 0.0, -0.15], [0.5, 0.45, 0.25], [0.8, 0.75, 0.35]),
                part("left_door", [-0.25, 0.0, 0.15], [0.23, 0.4, 0.025], [0.25, 0.45, 0.85]),
                part("right_door", [0.25, 0.0, 0.15], [0.23, 0.4, 0.025], [0.85, 0.25, 0.4]),
            ],
            vec![
                JointEstimate::revolute([0.0, -1.0, 0.0], [-0.48, 0.0, 0.125], 30.0),
                JointEstimate::revolute([0.0, 1.0, 0.0], [0.48, 0.0, 0.125], 50.0),
            ],
        )
    }

    pub fn from_template(t: Template) -> Result<Self> {
        match t {
            Template::HingedBox => Ok(Self::hinged_box()),
            Template::Drawer => Ok(Self::drawer()),
            Template::TwoDoorCabinet => Ok(Self::two_door_cabinet()),
            Template::Custom => Err(Error::invalid("custom scenes are built field by field, not from a template")),
        }
    }

    pub fn parts(&self) -> usize {
        self.parts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.parts.len();
        if k == 0 || k > crate::field::MAX_PARTS {
            return Err(Error::invalid(format!("scene needs 1..={} parts", crate::field::MAX_PARTS)));
        }
        if self.joints.len() + 1 != k {
            return Err(Error::invalid(format!("{} joints for {k} parts", self.joints.len())));
        }
        if !(self.sigma_max > 0.0 && self.softness > 0.0) {
            return Err(Error::invalid("sigma_max and softness must be positive"));
        }
        for p in &self.parts {
            if p.half_extents.iter().any(|h| *h <= p.rounding) || p.rounding < 0.0 {
                return Err(Error::invalid(format!("part {}: half extents must exceed rounding", p.name)));
            }
            if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("part {}: color outside [0, 1]", p.name)));
            }
        }
        for a in 0..k {
            for b in a + 1..k {
                let (pa, pb) = (&self.parts[a], &self.parts[b]);
                let gap = (0..3)
                    .map(|i| (pa.center[i] - pb.center[i]).abs() - pa.half_extents[i] - pb.half_extents[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                if gap < self.softness {
                    return Err(Error::invalid(format!("parts {} and {} overlap", pa.name, pb.name)));
                }
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            j.validate()?;
            let ok = match j.joint_type {
                JointType::Revolute => j.angle.unwrap_or(0.0).abs() >= MIN_JOINT_ANGLE_DEG,
                JointType::Prismatic => j.translation_distance.unwrap_or(0.0).abs() >= MIN_JOINT_DISTANCE,
            };
            if !ok {
                return Err(Error::invalid(format!("joint {} motion below the stated minimum", i + 1)));
            }
        }
        Ok(())
    }

    /// Source→target motion of every part; part 0 is the identity.
    pub fn motions(&self) -> Result<Vec<Transform<f64>>> {
        let mut out = vec![Transform::identity()];
        for j in &self.joints {
            out.push(j.to_transform()?);
        }
        Ok(out)
    }
}
