//! Small 3D vector and planar-rectangle toolkit used by the ray tracer.
//!
//! Everything here is plain `f64` geometry: points, directions, mirror
//! images across planes, and segment/rectangle intersection tests. The
//! types are deliberately minimal — scenes at desk scale never need an
//! acceleration structure.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A point or direction in 3D space, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction. Zero-length input is returned as is.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit direction for an azimuth/elevation pair in degrees.
///
/// Azimuth is measured counterclockwise from +x in the xy-plane, elevation
/// upward from the xy-plane; `(0, 0)` maps to +x and `(90, 0)` to +y.
pub fn direction_from_az_el(az_deg: f64, el_deg: f64) -> Vec3 {
    let az = az_deg.to_radians();
    let el = el_deg.to_radians();
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Inverse of [`direction_from_az_el`]: (azimuth, elevation) in degrees.
pub fn az_el_from_direction(d: Vec3) -> (f64, f64) {
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    (d.y.atan2(d.x).to_degrees(), d.z.atan2(horiz).to_degrees())
}

/// A planar rectangle in 3D, the only reflective primitive in a scene.
///
/// `origin` is one corner; `edge_u` and `edge_v` are the two (orthogonal)
/// side vectors, so the corners are `origin`, `origin+edge_u`,
/// `origin+edge_u+edge_v`, `origin+edge_v`. The unit normal follows
/// `edge_u × edge_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect3 {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
}

impl Rect3 {
    pub fn new(origin: Vec3, edge_u: Vec3, edge_v: Vec3) -> Rect3 {
        let normal = edge_u.cross(edge_v).normalized();
        Rect3 { origin, edge_u, edge_v, normal }
    }

    pub fn center(&self) -> Vec3 {
        self.origin + self.edge_u * 0.5 + self.edge_v * 0.5
    }

    pub fn corners(&self) -> [Vec3; 4] {
        [
            self.origin,
            self.origin + self.edge_u,
            self.origin + self.edge_u + self.edge_v,
            self.origin + self.edge_v,
        ]
    }

    /// Signed distance of `p` from the rectangle's plane (positive on the
    /// normal side).
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.origin).dot(self.normal)
    }

    /// Mirror image of `p` across the rectangle's plane.
    pub fn mirror(&self, p: Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Intersection of segment `a -> b` with the rectangle's (unbounded)
    /// plane: `Some((t, point))` with `t` in [0, 1] if the segment crosses
    /// it, `None` if parallel or out of range.
    pub fn segment_plane_hit(&self, a: Vec3, b: Vec3) -> Option<(f64, Vec3)> {
        let denom = (b - a).dot(self.normal);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = -self.signed_distance(a) / denom;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        Some((t, a + (b - a) * t))
    }

    /// Whether a point already on the plane lies inside the rectangle,
    /// with `tol` meters of slack on the borders.
    pub fn contains_on_plane(&self, p: Vec3, tol: f64) -> bool {
        let r = p - self.origin;
        let lu2 = self.edge_u.dot(self.edge_u);
        let lv2 = self.edge_v.dot(self.edge_v);
        if lu2 <= 0.0 || lv2 <= 0.0 {
            return false;
        }
        let u = r.dot(self.edge_u) / lu2;
        let v = r.dot(self.edge_v) / lv2;
        let tu = tol / lu2.sqrt();
        let tv = tol / lv2.sqrt();
        u >= -tu && u <= 1.0 + tu && v >= -tv && v <= 1.0 + tv
    }

    /// Intersection of segment `a -> b` with the rectangle itself.
    pub fn segment_hit(&self, a: Vec3, b: Vec3, tol: f64) -> Option<(f64, Vec3)> {
        let (t, p) = self.segment_plane_hit(a, b)?;
        if self.contains_on_plane(p, tol) {
            Some((t, p))
        } else {
            None
        }
    }
}

/// Distance from point `p` to segment `a -> b`, plus the parameter of the
/// closest point.
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((p - (a + ab * t)).norm(), t)
}
