//! Joint parameters recovered from a part motion, and the pose-error metrics.

use serde::{Deserialize, Serialize};

use super::{rotation_angle, Mat3, Transform, Vec3};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// Default revolute/prismatic split on the recovered rotation angle.
pub const DEFAULT_ANGLE_THRESHOLD_DEG: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    pub joint_type: JointType,
    pub axis_direction: [f64; 3],
    /// Point on the axis closest to the origin; revolute only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<[f64; 3]>,
    /// Degrees; revolute only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    /// Scene units; prismatic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_distance: Option<f64>,
}

impl JointEstimate {
    pub fn revolute(axis: [f64; 3], pivot: [f64; 3], angle_deg: f64) -> Self {
        Self {
            joint_type: JointType::Revolute,
            axis_direction: axis,
            pivot: Some(pivot),
            angle: Some(angle_deg),
            translation_distance: None,
        }
    }

    pub fn prismatic(axis: [f64; 3], distance: f64) -> Self {
        Self {
            joint_type: JointType::Prismatic,
            axis_direction: axis,
            pivot: None,
            angle: None,
            translation_distance: Some(distance),
        }
    }

    fn axis(&self) -> Vec3<f64> {
        Vec3::from_f64(self.axis_direction)
    }

    /// Checks the one-of {angle, translation} invariant and unit axis.
    pub fn validate(&self) -> Result<()> {
        if (self.axis().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("joint axis must be a unit vector"));
        }
        let ok = match self.joint_type {
            JointType::Revolute => self.angle.is_some() && self.pivot.is_some() && self.translation_distance.is_none(),
            JointType::Prismatic => self.translation_distance.is_some() && self.angle.is_none() && self.pivot.is_none(),
        };
        if !ok {
            return Err(Error::invalid("joint fields do not match its type"));
        }
        Ok(())
    }

    /// The motion this joint describes.
    pub fn to_transform(&self) -> Result<Transform<f64>> {
        self.validate()?;
        match self.joint_type {
            JointType::Revolute => super::se3_from_axis_angle(
                self.axis(),
                self.angle.unwrap_or_default().to_radians(),
                Vec3::from_f64(self.pivot.unwrap_or_default()),
            ),
            JointType::Prismatic => Ok(Transform::from_translation(self.axis() * self.translation_distance.unwrap_or_default())),
        }
    }
}

/// Unit rotation axis of `r` (sign chosen so the angle is in `[0, π]`).
fn rotation_axis(r: &Mat3<f64>, angle: f64) -> Vec3<f64> {
    let m = &r.m;
    let v = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
    if angle.sin() > 1e-4 {
        return v.normalized();
    }
    // near π: R + I = 2 a aᵀ (up to the tiny antisymmetric part)
    let s = *r + Mat3::identity();
    let (mut best, mut col) = (0usize, -1.0);
    for j in 0..3 {
        let n = s.col(j).norm();
        if n > col {
            col = n;
            best = j;
        }
    }
    let mut a = s.col(best).normalized();
    if a.dot(v) < 0.0 {
        a = -a;
    }
    a
}

/// Recovers joint parameters from a part motion; the type follows the rotation
/// angle against `angle_threshold_deg`.
pub fn decompose_motion<T: Real>(m: &Transform<T>, angle_threshold_deg: f64) -> Result<JointEstimate> {
    let m = m.cast::<f64>();
    let angle = m.rotation_angle();
    if angle.to_degrees() >= angle_threshold_deg {
        decompose_as(&m, JointType::Revolute)
    } else {
        decompose_as(&m, JointType::Prismatic)
    }
}

/// Decomposes with a known joint type.
pub fn decompose_as<T: Real>(m: &Transform<T>, joint_type: JointType) -> Result<JointEstimate> {
    let m = m.cast::<f64>();
    let angle = m.rotation_angle();
    let t = m.translation;
    if angle < 1e-12 && t.norm() < 1e-9 {
        return Err(Error::NoMotion);
    }
    match joint_type {
        JointType::Revolute => {
            if angle < 1e-9 {
                return Err(Error::invalid("revolute decomposition of a pure translation"));
            }
            let a = rotation_axis(&m.rotation, angle);
            let t_perp = t - a * a.dot(t);
            // (I − R) p = t⊥ with p ⊥ a has the closed form ½ t⊥ + ½ cot(θ/2) a × t⊥,
            // which is the least-squares solution closest to the origin.
            let cot_half = 1.0 / (angle * 0.5).tan();
            let pivot = (t_perp + a.cross(t_perp) * cot_half) * 0.5;
            Ok(JointEstimate::revolute(a.to_array(), pivot.to_array(), angle.to_degrees()))
        }
        JointType::Prismatic => {
            let d = t.norm();
            if d < 1e-12 {
                return Err(Error::invalid("prismatic decomposition of a pure rotation"));
            }
            Ok(JointEstimate::prismatic((t * (1.0 / d)).to_array(), d))
        }
    }
}

/// Sign-invariant angle between joint axes, degrees in `[0, 90]`.
pub fn axis_direction_error(pred: &JointEstimate, gt: &JointEstimate) -> f64 {
    let (a, b) = (pred.axis().normalized(), gt.axis().normalized());
    let theta = a.dot(b).clamp(-1.0, 1.0).acos().to_degrees();
    theta.min(180.0 - theta)
}

/// Minimum distance between two revolute axis lines.
pub fn axis_position_error(pred: &JointEstimate, gt: &JointEstimate) -> Result<f64> {
    let (Some(p1), Some(p2)) = (pred.pivot, gt.pivot) else {
        return Err(Error::invalid("axis position error needs two revolute joints"));
    };
    if pred.joint_type != JointType::Revolute || gt.joint_type != JointType::Revolute {
        return Err(Error::invalid("axis position error needs two revolute joints"));
    }
    let (a, b) = (pred.axis().normalized(), gt.axis().normalized());
    let w = Vec3::from_f64(p2) - Vec3::from_f64(p1);
    let n = a.cross(b);
    let nn = n.norm();
    if nn < 1e-9 {
        Ok(w.cross(a).norm())
    } else {
        Ok(w.dot(n).abs() / nn)
    }
}

/// Angle of `R_pred R_gtᵀ`, degrees.
pub fn geodesic_rotation_error<T: Real>(pred: &Transform<T>, gt: &Transform<T>) -> f64 {
    let (p, g) = (pred.cast::<f64>(), gt.cast::<f64>());
    rotation_angle(&(p.rotation * g.rotation.transpose())).to_degrees()
}

/// `‖t_pred − t_gt‖`.
pub fn translation_error<T: Real>(pred: &Transform<T>, gt: &Transform<T>) -> f64 {
    (pred.translation.cast::<f64>() - gt.translation.cast::<f64>()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rotation_about, se3_from_axis_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
        loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalized();
            }
        }
    }

    #[test]
    fn pure_translation_is_prismatic() {
        let j = decompose_motion(&Transform::from_translation(Vec3::new(0.0, 0.0, 0.3_f64)), 2.0).unwrap();
        assert_eq!(j.joint_type, JointType::Prismatic);
        assert!((Vec3::from_f64(j.axis_direction) - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((j.translation_distance.unwrap() - 0.3).abs() < 1e-12);
        j.validate().unwrap();
    }

    #[test]
    fn revolute_with_offset_pivot_fixes_its_axis() {
        let m = se3_from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 40f64.to_radians(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let j = decompose_motion(&m, 2.0).unwrap();
        assert_eq!(j.joint_type, JointType::Revolute);
        assert!((j.angle.unwrap() - 40.0).abs() < 1e-10);
        let (a, p) = (Vec3::from_f64(j.axis_direction), Vec3::from_f64(j.pivot.unwrap()));
        // oracle: every point on the claimed axis is a fixed point
        for s in [-3.0, -0.5, 0.0, 1.0, 2.5] {
            let q = p + a * s;
            assert!((m.apply_point(q) - q).norm() < 1e-8);
        }
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn identity_has_no_motion() {
        assert!(matches!(decompose_motion(&Transform::<f64>::identity(), 2.0), Err(Error::NoMotion)));
    }

    #[test]
    fn round_trip_500_revolute_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut ed, mut eg, mut ep): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for _ in 0..500 {
            let axis = unit(&mut rng);
            let angle = rng.gen_range(5.0..170.0_f64);
            let pivot = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let m = se3_from_axis_angle(axis, angle.to_radians(), pivot).unwrap();
            let gt = JointEstimate::revolute(axis.to_array(), pivot.to_array(), angle);
            let pred = decompose_motion(&m, 2.0).unwrap();
            ed = ed.max(axis_direction_error(&pred, &gt));
            eg = eg.max(geodesic_rotation_error(&pred.to_transform().unwrap(), &m));
            ep = ep.max(axis_position_error(&pred, &gt).unwrap());
        }
        assert!(ed < 1e-6 && eg < 1e-6 && ep < 1e-8, "e_d {ed} e_g {eg} e_p {ep}");
    }

    #[test]
    fn near_half_turn_axis() {
        let axis = Vec3::new(0.3, -0.5, 0.81_f64).normalized();
        let m = se3_from_axis_angle(axis, 179.99f64.to_radians(), Vec3::new(0.2, 0.1, 0.0)).unwrap();
        let j = decompose_motion(&m, 2.0).unwrap();
        let q = Vec3::from_f64(j.pivot.unwrap());
        assert!((m.apply_point(q) - q).norm() < 1e-6);
        assert!(axis_direction_error(&j, &JointEstimate::revolute(axis.to_array(), [0.0; 3], 0.0)) < 1e-4);
    }

    #[test]
    fn direction_error_cases() {
        let z = JointEstimate::prismatic([0.0, 0.0, 1.0], 1.0);
        let x = JointEstimate::prismatic([1.0, 0.0, 0.0], 1.0);
        let nz = JointEstimate::prismatic([0.0, 0.0, -1.0], 1.0);
        assert_eq!(axis_direction_error(&z, &z), 0.0);
        assert!((axis_direction_error(&z, &x) - 90.0).abs() < 1e-12);
        assert!(axis_direction_error(&z, &nz).abs() < 1e-12);
    }

    #[test]
    fn direction_error_symmetric_and_flip_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (a, b) = (unit(&mut rng), unit(&mut rng));
            let ja = JointEstimate::prismatic(a.to_array(), 1.0);
            let jb = JointEstimate::prismatic(b.to_array(), 1.0);
            let jna = JointEstimate::prismatic((-a).to_array(), 1.0);
            let e = axis_direction_error(&ja, &jb);
            assert!((e - axis_direction_error(&jb, &ja)).abs() < 1e-12);
            assert!((e - axis_direction_error(&jna, &jb)).abs() < 1e-9);
        }
    }

    #[test]
    fn position_error_cases() {
        let a = JointEstimate::revolute([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 10.0);
        assert_eq!(axis_position_error(&a, &a).unwrap(), 0.0);
        let par = JointEstimate::revolute([1.0, 0.0, 0.0], [0.0, 0.5, 0.0], 10.0);
        assert!((axis_position_error(&a, &par).unwrap() - 0.5).abs() < 1e-12);
        let skew = JointEstimate::revolute([0.0, 1.0, 0.0], [0.0, 1.0, 1.0], 10.0);
        let got = axis_position_error(&a, &skew).unwrap();
        // oracle: dense grid over both line parameters
        let mut best = f64::INFINITY;
        for i in -200..=200 {
            for j in -200..=200 {
                let (t, s) = (i as f64 * 0.01, j as f64 * 0.01);
                let p = Vec3::new(t, 0.0, 0.0);
                let q = Vec3::new(0.0, 1.0 + s, 1.0);
                best = best.min((p - q).norm());
            }
        }
        assert!((got - best).abs() < 1e-9 && (got - 1.0).abs() < 1e-12);
        assert!(axis_position_error(&a, &JointEstimate::prismatic([1.0, 0.0, 0.0], 1.0)).is_err());
    }

    #[test]
    fn geodesic_and_translation_errors() {
        let rz = |deg: f64| Transform::from_parts(rotation_about(Vec3::new(0.0, 0.0, 1.0), deg.to_radians()), Vec3::zero());
        assert!(geodesic_rotation_error(&rz(30.0), &rz(30.0)).abs() < 1e-6);
        assert!((geodesic_rotation_error(&rz(30.0), &rz(10.0)) - 20.0).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = Transform::from_parts(rotation_about(unit(&mut rng), rng.gen_range(0.0..3.0)), Vec3::zero());
            let b = Transform::from_parts(rotation_about(unit(&mut rng), rng.gen_range(0.0..3.0)), Vec3::zero());
            let rel = a.rotation * b.rotation.transpose();
            let oracle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            assert!((geodesic_rotation_error(&a, &b) - oracle).abs() < 1e-6);
        }
        let ta = Transform::from_translation(Vec3::new(0.0, 0.0, 0.3_f64));
        let tb = Transform::from_translation(Vec3::new(0.0, 0.0, 0.5));
        assert!((translation_error(&ta, &tb) - 0.2).abs() < 1e-12);
        assert_eq!(translation_error(&ta, &ta), 0.0);
        for _ in 0..50 {
            let (p, q) = (unit(&mut rng) * 0.7, unit(&mut rng) * 0.4);
            let oracle = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
            let got = translation_error(&Transform::from_translation(p), &Transform::from_translation(q));
            assert!((got - oracle).abs() < 1e-12);
        }
    }
}
