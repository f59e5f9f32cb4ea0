//! Small fixed-size vector helpers used throughout the crate.
//!
//! Positions, velocities and orientation errors are plain `[f64; 3]` arrays;
//! diagonal gain matrices are stored as their diagonal.

/// A 3-vector.
pub type Vec3 = [f64; 3];

/// The diagonal of a 3x3 diagonal matrix.
pub type Diag3 = [f64; 3];

pub const ZERO: Vec3 = [0.0; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn neg(a: Vec3) -> Vec3 {
    [-a[0], -a[1], -a[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Cross product; the skew matrix convention is `S(a) b = a x b`.
#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: Vec3) -> f64 {
    a[0].abs().max(a[1].abs()).max(a[2].abs())
}

/// Apply a diagonal matrix: `diag(d) * v`.
#[inline]
pub fn dmul(d: Diag3, v: Vec3) -> Vec3 {
    [d[0] * v[0], d[1] * v[1], d[2] * v[2]]
}

/// Quadratic form `v' diag(d) v`.
#[inline]
pub fn quad(d: Diag3, v: Vec3) -> f64 {
    d[0] * v[0] * v[0] + d[1] * v[1] * v[1] + d[2] * v[2] * v[2]
}

pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_follows_right_hand_rule() {
        assert_eq!(cross([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn skew_annihilates_its_own_axis() {
        // S(a) a = 0, the identity the stability proofs rely on.
        let a = [0.3, -1.2, 2.5];
        assert_eq!(cross(a, a), [0.0, 0.0, 0.0]);
    }
}
