//! Vectors, unit quaternions and rigid poses.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Point or direction in the world frame (meters, z up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Self {
        self.scale(T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    /// Component-wise conversion to another scalar type.
    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Maximum tolerated deviation of `|q|` from one.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

impl<T: Real> Quat<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let half = angle / T::lit(2.0);
        let s = half.sin();
        Self::new(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    /// Rotation about the world z axis.
    pub fn from_yaw(yaw: T) -> Self {
        let half = yaw / T::lit(2.0);
        Self::new(half.cos(), T::zero(), T::zero(), half.sin())
    }

    /// Builds the quaternion of a proper rotation matrix given row-major.
    pub fn from_rotation_matrix(m: [[T; 3]; 3]) -> Self {
        let one = T::one();
        let two = T::lit(2.0);
        let quarter = T::lit(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * two;
            Self::new(
                quarter * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * two;
            Self::new(
                (m[2][1] - m[1][2]) / s,
                quarter * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * two;
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                quarter * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * two;
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                quarter * s,
            )
        };
        q.normalized()
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - T::one()).abs().to_f64_lossy() <= UNIT_NORM_TOLERANCE
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotates `v` by this quaternion.
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        // v' = v + 2w (u x v) + 2 u x (u x v), with u the vector part
        let u = Vec3::new(self.x, self.y, self.z);
        let two = T::lit(2.0);
        let uv = u.cross(v);
        let uuv = u.cross(uv);
        v + uv.scale(two * self.w) + uuv.scale(two)
    }

    /// Row-major rotation matrix.
    pub fn to_rotation_matrix(self) -> [[T; 3]; 3] {
        let Self { w, x, y, z } = self;
        let one = T::one();
        let two = T::lit(2.0);
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Rigid transform. Serialized as `[x, y, z, qw, qx, qy, qz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[T; 7]", from = "[T; 7]")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Pose<T: Real> {
    pub position: Vec3<T>,
    pub orientation: Quat<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vec3<T>, orientation: Quat<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_position(position: Vec3<T>) -> Self {
        Self::new(position, Quat::identity())
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: Vec3<T>) -> Vec3<T> {
        self.orientation.rotate(local) + self.position
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.orientation.conjugate().rotate(p - self.position)
    }
}

impl<T: Real> From<Pose<T>> for [T; 7] {
    fn from(p: Pose<T>) -> Self {
        let (v, q) = (p.position, p.orientation);
        [v.x, v.y, v.z, q.w, q.x, q.y, q.z]
    }
}

impl<T: Real> From<[T; 7]> for Pose<T> {
    fn from(a: [T; 7]) -> Self {
        Pose::new(Vec3::new(a[0], a[1], a[2]), Quat::new(a[3], a[4], a[5], a[6]))
    }
}

/// Axis-aligned box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance_to_point(&self, p: Vec3<T>) -> T {
        let gap = |v: T, lo: T, hi: T| (lo - v).max(T::zero()).max(v - hi);
        let d = Vec3::new(
            gap(p.x, self.min.x, self.max.x),
            gap(p.y, self.min.y, self.max.y),
            gap(p.z, self.min.z, self.max.z),
        );
        d.norm()
    }

    /// Minimum distance between the segment `a..b` and the box.
    ///
    /// Distance to a convex set is convex along a line, so a golden-section
    /// search over the segment parameter converges to the minimum.
    pub fn distance_to_segment(&self, a: Vec3<T>, b: Vec3<T>) -> T {
        let f = |t: T| self.distance_to_point(a + (b - a).scale(t));
        let inv_phi = T::lit(0.618_033_988_749_894_8);
        let (mut lo, mut hi) = (T::zero(), T::one());
        let mut c = hi - (hi - lo) * inv_phi;
        let mut d = lo + (hi - lo) * inv_phi;
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - (hi - lo) * inv_phi;
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + (hi - lo) * inv_phi;
                fd = f(d);
            }
        }
        f(T::zero()).min(f(T::one())).min(fc).min(fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_matrix_round_trip() {
        let q = Quat::from_axis_angle(Vec3::new(0.3, -1.0, 0.4), 2.1f64);
        let back = Quat::from_rotation_matrix(q.to_rotation_matrix());
        // q and -q encode the same rotation
        let same = (q.w - back.w).abs() < 1e-12 || (q.w + back.w).abs() < 1e-12;
        assert!(same);
        let v = Vec3::new(0.2, 0.7, -1.3);
        assert!(q.rotate(v).distance(back.rotate(v)) < 1e-12);
    }

    #[test]
    fn rotate_matches_matrix() {
        let q = Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7f64);
        let m = q.to_rotation_matrix();
        let v = Vec3::new(-0.4, 0.9, 0.25);
        let mv = Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        );
        assert!(q.rotate(v).distance(mv) < 1e-12);
    }

    #[test]
    fn pose_serializes_as_seven_tuple() {
        let p = Pose::new(Vec3::new(1.0, 2.0, 3.0), Quat::<f64>::identity());
        assert_eq!(serde_json::to_string(&p).unwrap(), "[1.0,2.0,3.0,1.0,0.0,0.0,0.0]");
        let back: Pose<f64> = serde_json::from_str("[1.0,2.0,3.0,1.0,0.0,0.0,0.0]").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn segment_distance_against_dense_scan() {
        let b = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.2, 0.1, 0.01));
        let a = Vec3::new(-0.3, 0.4, 0.2);
        let c = Vec3::new(0.5, -0.3, 0.05);
        let scan = (0..=20_000)
            .map(|i| b.distance_to_point(a + (c - a).scale(i as f64 / 20_000.0)))
            .fold(f64::INFINITY, f64::min);
        assert!((b.distance_to_segment(a, c) - scan).abs() < 1e-6);
    }
}
