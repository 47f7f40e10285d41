//! Rigid transforms between named coordinate frames.

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Identifier of a coordinate frame.
///
/// Frames make transform chains self-checking: composing poses whose frames
/// do not line up is an error instead of a silent wrong answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Frame {
    World,
    Base,
    Sensor,
    Camera(u8),
    Pile,
    Wall,
    Marker,
    Patch,
    Brick(u32),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::World => write!(f, "world"),
            Frame::Base => write!(f, "base"),
            Frame::Sensor => write!(f, "sensor"),
            Frame::Camera(i) => write!(f, "camera_{i}"),
            Frame::Pile => write!(f, "pile"),
            Frame::Wall => write!(f, "wall"),
            Frame::Marker => write!(f, "marker"),
            Frame::Patch => write!(f, "patch"),
            Frame::Brick(i) => write!(f, "brick_{i}"),
        }
    }
}

impl FromStr for Frame {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "world" => Ok(Frame::World),
            "base" => Ok(Frame::Base),
            "sensor" => Ok(Frame::Sensor),
            "pile" => Ok(Frame::Pile),
            "wall" => Ok(Frame::Wall),
            "marker" => Ok(Frame::Marker),
            "patch" => Ok(Frame::Patch),
            _ => {
                if let Some(i) = s.strip_prefix("camera_") {
                    i.parse().map(Frame::Camera).map_err(|e| e.to_string())
                } else if let Some(i) = s.strip_prefix("brick_") {
                    i.parse().map(Frame::Brick).map_err(|e| e.to_string())
                } else {
                    Err(format!("unknown frame `{s}`"))
                }
            }
        }
    }
}

impl Serialize for Frame {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rigid transform carrying points expressed in `from` into `to`.
///
/// With the notation `T^to_from`, composition reads `T^a_c = T^a_b ∘ T^b_c`.
#[derive(Clone, Copy, Debug)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl Pose3 {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        from: Frame,
        to: Frame,
    ) -> Self {
        Self {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), frame, frame)
    }

    /// Pose with a pure yaw rotation (about +z).
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
            from,
            to,
        )
    }

    /// `self ∘ rhs`: first apply `rhs`, then `self`.
    pub fn compose(&self, rhs: &Pose3) -> Result<Pose3> {
        if self.from != rhs.to {
            return Err(Error::FrameMismatch {
                expected: self.from,
                found: rhs.to,
            });
        }
        Ok(Pose3::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
            rhs.from,
            self.to,
        ))
    }

    pub fn inverse(&self) -> Pose3 {
        let inv_rot = self.rotation.inverse();
        Pose3::new(
            inv_rot,
            -(inv_rot * self.translation),
            self.to,
            self.from,
        )
    }

    /// Map a point expressed in `from` into `to`.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction (no translation).
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Yaw of the rotated x-axis projected into the xy plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }

    /// Same transform with different frame labels.
    pub fn relabel(mut self, from: Frame, to: Frame) -> Pose3 {
        self.from = from;
        self.to = to;
        self
    }

    /// Rotation angle between the two poses, in radians.
    pub fn rotation_angle_to(&self, other: &Pose3) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Euclidean distance between the two translations.
    pub fn translation_distance_to(&self, other: &Pose3) -> f64 {
        (self.translation - other.translation).norm()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Quaternion as [x, y, z, w].
    quat: [f64; 4],
    trans: [f64; 3],
    from: Frame,
    to: Frame,
}

impl Serialize for Pose3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        PoseRepr {
            quat: [q.i, q.j, q.k, q.w],
            trans: [self.translation.x, self.translation.y, self.translation.z],
            from: self.from,
            to: self.to,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(deserializer)?;
        let q = nalgebra::Quaternion::new(r.quat[3], r.quat[0], r.quat[1], r.quat[2]);
        Ok(Pose3::new(
            UnitQuaternion::from_quaternion(q),
            Vector3::new(r.trans[0], r.trans[1], r.trans[2]),
            r.from,
            r.to,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Pose3::from_yaw(0.7, Vector3::new(1.0, -2.0, 0.5), Frame::Pile, Frame::Base);
        let id = t.compose(&t.inverse()).unwrap();
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        assert_eq!(id.from, Frame::Base);
        assert_eq!(id.to, Frame::Base);
        let id_other_way = t.inverse().compose(&t).unwrap();
        assert!(id_other_way.rotation.angle() < 1e-9);
        assert!(id_other_way.translation.norm() < 1e-9);
        assert_eq!(id_other_way.from, Frame::Pile);
    }

    #[test]
    fn identity_applies_as_noop() {
        let id = Pose3::identity(Frame::World);
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(id.apply(&p), p);
    }

    #[test]
    fn yaw_extraction_matches_definition() {
        let t = Pose3::from_yaw(0.3, Vector3::zeros(), Frame::Wall, Frame::Base);
        assert_relative_eq!(t.yaw(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn frame_mismatch_is_reported() {
        let a = Pose3::identity(Frame::Base);
        let b = Pose3::identity(Frame::Pile);
        match a.compose(&b) {
            Err(Error::FrameMismatch { expected, found }) => {
                assert_eq!(expected, Frame::Base);
                assert_eq!(found, Frame::Pile);
            }
            other => panic!("expected frame mismatch, got {other:?}"),
        }
    }

    #[test]
    fn frame_round_trips_through_strings() {
        for f in [
            Frame::World,
            Frame::Camera(2),
            Frame::Brick(17),
            Frame::Patch,
        ] {
            let s = f.to_string();
            assert_eq!(s.parse::<Frame>().unwrap(), f);
        }
    }

    #[test]
    fn pose_round_trips_through_json() {
        let t = Pose3::from_yaw(
            -1.2,
            Vector3::new(0.1, 0.2, 0.3),
            Frame::Brick(3),
            Frame::Wall,
        );
        let s = serde_json::to_string(&t).unwrap();
        let back: Pose3 = serde_json::from_str(&s).unwrap();
        assert!(t.rotation_angle_to(&back) < 1e-12);
        assert!(t.translation_distance_to(&back) < 1e-12);
        assert_eq!(back.from, Frame::Brick(3));
        assert_eq!(back.to, Frame::Wall);
    }
}
