//! Absolute and relative end-effector pose math.
//!
//! An absolute end-effector state is `(position, rotation, gripper)`. The
//! training-side action is the component-wise difference from a reference
//! state: position by subtraction, rotation by composition with the inverse
//! reference rotation, gripper unchanged except for normalization to
//! `[-1, 1]`. Rotations are regressed as the first two columns of the
//! rotation matrix (the continuous 6D representation), so a relative action
//! is 3 + 6 + 1 = 10 numbers.
//!
//! Quaternion convention: `(w, x, y, z)`, right-handed, active rotation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Unit-norm tolerance accepted by quaternion-consuming operations.
pub const UNIT_QUAT_TOL: f64 = 1e-6;

/// A unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    /// Build a unit quaternion, renormalizing the input.
    ///
    /// Fails when the norm is zero or any component is non-finite.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::NonUnitQuaternion {
                norm,
                tol: UNIT_QUAT_TOL,
            });
        }
        Ok(Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Conjugate; equals the inverse for unit quaternions.
    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }

    /// Rotation matrix, row-major `[[r00,r01,r02],...]`.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Quaternion from an orthonormal rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Self> {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Quat::new(w, x, y, z)
    }

    /// Angle (radians, in `[0, π]`) between two rotations.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let dot =
            (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * dot.min(1.0).acos()
    }

    fn check_unit(&self) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(Error::NonUnitQuaternion {
                norm,
                tol: UNIT_QUAT_TOL,
            });
        }
        Ok(())
    }
}

/// Absolute end-effector state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Meters.
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quat,
    /// Raw device units; see [`GripperRange`].
    pub gripper: f64,
}

impl Pose {
    pub fn new(position: [f64; 3], rotation: Quat, gripper: f64) -> Result<Self> {
        if !position.iter().all(|p| p.is_finite()) || !gripper.is_finite() {
            return Err(Error::invalid("pose components must be finite"));
        }
        rotation.check_unit()?;
        Ok(Self {
            position,
            rotation,
            gripper,
        })
    }

    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            rotation: Quat::identity(),
            gripper: 0.0,
        }
    }
}

/// Relative end-effector action: 3 position deltas, 6 rotation numbers,
/// 1 normalized gripper — 10 dims total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelAction {
    pub delta_position: [f64; 3],
    pub rotation6d: [f64; 6],
    /// In `[-1, 1]`.
    pub gripper_norm: f64,
}

impl RelAction {
    pub fn to_vector(&self) -> [f64; 10] {
        let mut v = [0.0; 10];
        v[..3].copy_from_slice(&self.delta_position);
        v[3..9].copy_from_slice(&self.rotation6d);
        v[9] = self.gripper_norm;
        v
    }

    pub fn from_vector(v: &[f64; 10]) -> Self {
        Self {
            delta_position: [v[0], v[1], v[2]],
            rotation6d: [v[3], v[4], v[5], v[6], v[7], v[8]],
            gripper_norm: v[9],
        }
    }
}

/// Raw gripper range used by the affine normalization into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperRange {
    pub raw_min: f64,
    pub raw_max: f64,
}

impl GripperRange {
    pub fn new(raw_min: f64, raw_max: f64) -> Result<Self> {
        if !(raw_min < raw_max) {
            return Err(Error::invalid(format!(
                "gripper range requires raw_min < raw_max, got [{raw_min}, {raw_max}]"
            )));
        }
        Ok(Self { raw_min, raw_max })
    }

    /// `g_norm = 2(g - min)/(max - min) - 1`, clamped to `[-1, 1]`.
    ///
    /// The bool reports whether clamping fired (encoders overshoot).
    pub fn normalize(&self, raw: f64) -> (f64, bool) {
        let n = 2.0 * (raw - self.raw_min) / (self.raw_max - self.raw_min) - 1.0;
        if n < -1.0 {
            (-1.0, true)
        } else if n > 1.0 {
            (1.0, true)
        } else {
            (n, false)
        }
    }

    pub fn denormalize(&self, norm: f64) -> f64 {
        self.raw_min + (norm + 1.0) * 0.5 * (self.raw_max - self.raw_min)
    }
}

/// First two columns of the rotation matrix of `q`, column-major.
pub fn quat_to_rot6d(q: &Quat) -> Result<[f64; 6]> {
    q.check_unit()?;
    let m = q.to_matrix();
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

/// Recover a rotation matrix from the 6D representation via Gram-Schmidt
/// on the two columns, cross product for the third.
///
/// Scale-invariant: already-orthonormal columns are recovered exactly.
pub fn rot6d_to_matrix(r6: &[f64; 6]) -> Result<[[f64; 3]; 3]> {
    let a1 = [r6[0], r6[1], r6[2]];
    let a2 = [r6[3], r6[4], r6[5]];
    let n1 = norm3(&a1);
    if n1 <= 1e-8 {
        return Err(Error::Degenerate6d(format!("first column norm {n1}")));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(&b1, &a2);
    let mut b2 = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&b2);
    if n2 <= 1e-8 {
        return Err(Error::Degenerate6d(format!(
            "columns are parallel (residual norm {n2})"
        )));
    }
    b2 = [b2[0] / n2, b2[1] / n2, b2[2] / n2];
    let b3 = cross3(&b1, &b2);
    Ok([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ])
}

/// Relative action of `abs` with respect to reference state `reference`:
/// `(p_i - p_s, R_s⁻¹ R_i as 6D, gripper normalized)`.
///
/// The bool reports whether the gripper value had to be clamped.
pub fn to_relative(abs: &Pose, reference: &Pose, range: &GripperRange) -> Result<(RelAction, bool)> {
    abs.rotation.check_unit()?;
    reference.rotation.check_unit()?;
    let delta_position = [
        abs.position[0] - reference.position[0],
        abs.position[1] - reference.position[1],
        abs.position[2] - reference.position[2],
    ];
    let rel_rot = reference.rotation.conjugate().mul(&abs.rotation);
    let rotation6d = quat_to_rot6d(&rel_rot)?;
    let (gripper_norm, clamped) = range.normalize(abs.gripper);
    Ok((
        RelAction {
            delta_position,
            rotation6d,
            gripper_norm,
        },
        clamped,
    ))
}

/// Inverse of [`to_relative`]: `p = p_s + Δp`, `R = R_s · R_rel`, gripper
/// denormalized.
pub fn to_absolute(rel: &RelAction, reference: &Pose, range: &GripperRange) -> Result<Pose> {
    reference.rotation.check_unit()?;
    let position = [
        reference.position[0] + rel.delta_position[0],
        reference.position[1] + rel.delta_position[1],
        reference.position[2] + rel.delta_position[2],
    ];
    let rel_rot = Quat::from_matrix(&rot6d_to_matrix(&rel.rotation6d)?)?;
    let rotation = reference.rotation.mul(&rel_rot);
    let gripper = range.denormalize(rel.gripper_norm);
    Pose::new(position, rotation, gripper)
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

// --- structured-text records -------------------------------------------
//
// One field per line, field name then decimal values with 18 significant
// digits (exact f64 round trip). Used by the CLI and the simulator traces.

fn fmt_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {v:.17e}");
    }
}

impl Pose {
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        s.push_str("position");
        fmt_floats(&mut s, &self.position);
        s.push_str("\nrotation");
        fmt_floats(
            &mut s,
            &[
                self.rotation.w,
                self.rotation.x,
                self.rotation.y,
                self.rotation.z,
            ],
        );
        s.push_str("\ngripper");
        fmt_floats(&mut s, &[self.gripper]);
        s.push('\n');
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut position = None;
        let mut rotation = None;
        let mut gripper = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or("");
            let vals: Vec<f64> = it
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad float {t:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            match key {
                "position" if vals.len() == 3 => position = Some([vals[0], vals[1], vals[2]]),
                "rotation" if vals.len() == 4 => {
                    rotation = Some(Quat::new(vals[0], vals[1], vals[2], vals[3])?)
                }
                "gripper" if vals.len() == 1 => gripper = Some(vals[0]),
                _ => return Err(Error::Parse(format!("unexpected pose record line {line:?}"))),
            }
        }
        match (position, rotation, gripper) {
            (Some(p), Some(r), Some(g)) => Pose::new(p, r, g),
            _ => Err(Error::Parse(
                "pose record must contain position, rotation, gripper".into(),
            )),
        }
    }
}

impl RelAction {
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        s.push_str("delta_position");
        fmt_floats(&mut s, &self.delta_position);
        s.push_str("\nrotation6d");
        fmt_floats(&mut s, &self.rotation6d);
        s.push_str("\ngripper_norm");
        fmt_floats(&mut s, &[self.gripper_norm]);
        s.push('\n');
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut delta = None;
        let mut rot6 = None;
        let mut grip = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or("");
            let vals: Vec<f64> = it
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad float {t:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            match key {
                "delta_position" if vals.len() == 3 => delta = Some([vals[0], vals[1], vals[2]]),
                "rotation6d" if vals.len() == 6 => {
                    rot6 = Some([vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]])
                }
                "gripper_norm" if vals.len() == 1 => grip = Some(vals[0]),
                _ => {
                    return Err(Error::Parse(format!(
                        "unexpected rel-action record line {line:?}"
                    )))
                }
            }
        }
        match (delta, rot6, grip) {
            (Some(d), Some(r), Some(g)) => Ok(RelAction {
                delta_position: d,
                rotation6d: r,
                gripper_norm: g,
            }),
            _ => Err(Error::Parse(
                "rel-action record must contain delta_position, rotation6d, gripper_norm".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_quat(rng: &mut impl Rng) -> Quat {
        // Marsaglia: four gaussians, normalized, gives uniform rotations.
        let g = |rng: &mut dyn rand::RngCore| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u1.ln()).sqrt() * u2.cos()
        };
        Quat::new(g(rng), g(rng), g(rng), g(rng)).unwrap()
    }

    fn random_pose(rng: &mut impl Rng, range: &GripperRange) -> Pose {
        Pose::new(
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
            random_quat(rng),
            rng.gen_range(range.raw_min..range.raw_max),
        )
        .unwrap()
    }

    /// Independent quaternion→matrix oracle: rotate the basis vectors with
    /// the sandwich product q v q* and stack them as columns.
    fn matrix_by_sandwich(q: &Quat) -> [[f64; 3]; 3] {
        let rotate = |v: [f64; 3]| {
            let p = Quat {
                w: 0.0,
                x: v[0],
                y: v[1],
                z: v[2],
            };
            let r = q.mul(&p).mul(&q.conjugate());
            [r.x, r.y, r.z]
        };
        let c0 = rotate([1.0, 0.0, 0.0]);
        let c1 = rotate([0.0, 1.0, 0.0]);
        let c2 = rotate([0.0, 0.0, 1.0]);
        [
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ]
    }

    #[test]
    fn rot6d_of_identity() {
        let r6 = quat_to_rot6d(&Quat::identity()).unwrap();
        assert_eq!(r6, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rot6d_of_quarter_turn_about_z() {
        let h = 0.5f64.sqrt();
        let q = Quat::new(h, 0.0, 0.0, h).unwrap();
        let r6 = quat_to_rot6d(&q).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in r6.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{r6:?}");
        }
    }

    #[test]
    fn rot6d_matches_sandwich_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let r6 = quat_to_rot6d(&q).unwrap();
            let m = matrix_by_sandwich(&q);
            let expect = [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]];
            for (a, b) in r6.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rot6d_roundtrip_recovers_matrix() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..500 {
            let q = random_quat(&mut rng);
            let m = q.to_matrix();
            let back = rot6d_to_matrix(&quat_to_rot6d(&q).unwrap()).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m[i][j] - back[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rot6d_to_matrix_identity_and_scale_invariance() {
        let m = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let m2 = rot6d_to_matrix(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert_eq!(m[i][j], id);
                assert_eq!(m2[i][j], id);
            }
        }
    }

    #[test]
    fn rot6d_to_matrix_is_orthonormal_right_handed() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..500 {
            let r6: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let m = match rot6d_to_matrix(&r6) {
                Ok(m) => m,
                Err(_) => continue,
            };
            // MᵀM = I
            for i in 0..3 {
                for j in 0..3 {
                    let mut d = 0.0;
                    for k in 0..3 {
                        d += m[k][i] * m[k][j];
                    }
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((d - id).abs() < 1e-9);
                }
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_6d_inputs_error() {
        assert!(rot6d_to_matrix(&[0.0; 6]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quat {
            w: 1.0,
            x: 1.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(quat_to_rot6d(&q).is_err());
    }

    #[test]
    fn relative_of_self_is_zero() {
        let range = GripperRange::new(0.0, 100.0).unwrap();
        let mut rng = StdRng::seed_from_u64(10);
        let p = random_pose(&mut rng, &range);
        let (rel, clamped) = to_relative(&p, &p, &range).unwrap();
        assert!(!clamped);
        assert!(rel.delta_position.iter().all(|d| d.abs() < 1e-12));
        let id6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (a, b) in rel.rotation6d.iter().zip(id6.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let (expect_g, _) = range.normalize(p.gripper);
        assert_eq!(rel.gripper_norm, expect_g);
    }

    #[test]
    fn relative_to_identity_reference_copies_pose() {
        let range = GripperRange::new(-1.0, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let p = random_pose(&mut rng, &range);
        let reference = Pose::identity();
        let (rel, _) = to_relative(&p, &reference, &range).unwrap();
        for i in 0..3 {
            assert!((rel.delta_position[i] - p.position[i]).abs() < 1e-12);
        }
        let expect = quat_to_rot6d(&p.rotation).unwrap();
        for (a, b) in rel.rotation6d.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_abs_rel_abs() {
        let range = GripperRange::new(2.0, 90.0).unwrap();
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..10_000 {
            let abs = random_pose(&mut rng, &range);
            let reference = random_pose(&mut rng, &range);
            let (rel, clamped) = to_relative(&abs, &reference, &range).unwrap();
            assert!(!clamped);
            let back = to_absolute(&rel, &reference, &range).unwrap();
            for i in 0..3 {
                assert!((back.position[i] - abs.position[i]).abs() < 1e-9);
            }
            assert!(back.rotation.angle_to(&abs.rotation) < 1e-6);
            assert!((back.gripper - abs.gripper).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rel_action_recovers_reference() {
        let range = GripperRange::new(0.0, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        let reference = random_pose(&mut rng, &range);
        let (g, _) = range.normalize(reference.gripper);
        let rel = RelAction {
            delta_position: [0.0; 3],
            rotation6d: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            gripper_norm: g,
        };
        let back = to_absolute(&rel, &reference, &range).unwrap();
        for i in 0..3 {
            assert!((back.position[i] - reference.position[i]).abs() < 1e-12);
        }
        assert!(back.rotation.angle_to(&reference.rotation) < 1e-9);
    }

    #[test]
    fn translation_only_rel_translates_reference() {
        let range = GripperRange::new(0.0, 1.0).unwrap();
        let reference = Pose::identity();
        let rel = RelAction {
            delta_position: [0.5, -0.25, 1.0],
            rotation6d: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            gripper_norm: 0.0,
        };
        let back = to_absolute(&rel, &reference, &range).unwrap();
        assert_eq!(back.position, [0.5, -0.25, 1.0]);
    }

    #[test]
    fn left_invariance_under_common_rotation() {
        // Pre-composing both rotations with a common rotation leaves the
        // relative rotation (and untouched positions) unchanged.
        let range = GripperRange::new(0.0, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..200 {
            let abs = random_pose(&mut rng, &range);
            let reference = random_pose(&mut rng, &range);
            let common = random_quat(&mut rng);
            let abs2 = Pose {
                rotation: common.mul(&abs.rotation),
                ..abs
            };
            let ref2 = Pose {
                rotation: common.mul(&reference.rotation),
                ..reference
            };
            let (rel1, _) = to_relative(&abs, &reference, &range).unwrap();
            let (rel2, _) = to_relative(&abs2, &ref2, &range).unwrap();
            for (a, b) in rel1.rotation6d.iter().zip(rel2.rotation6d.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
            let n1 = norm3(&rel1.delta_position);
            let n2 = norm3(&rel2.delta_position);
            assert!((n1 - n2).abs() < 1e-12);
        }
    }

    #[test]
    fn gripper_out_of_range_clamps_with_flag() {
        let range = GripperRange::new(0.0, 10.0).unwrap();
        let abs = Pose {
            gripper: 12.0,
            ..Pose::identity()
        };
        let (rel, clamped) = to_relative(&abs, &Pose::identity(), &range).unwrap();
        assert!(clamped);
        assert_eq!(rel.gripper_norm, 1.0);
    }

    #[test]
    fn rel_action_vector_is_ten_dims() {
        let rel = RelAction {
            delta_position: [1.0, 2.0, 3.0],
            rotation6d: [4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            gripper_norm: 0.5,
        };
        let v = rel.to_vector();
        assert_eq!(v.len(), 10);
        assert_eq!(RelAction::from_vector(&v), rel);
    }

    #[test]
    fn records_roundtrip() {
        let range = GripperRange::new(0.0, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(15);
        let p = random_pose(&mut rng, &range);
        let p2 = Pose::from_record(&p.to_record()).unwrap();
        for i in 0..3 {
            assert!((p.position[i] - p2.position[i]).abs() < 1e-11);
        }
        for (a, b) in [
            (p.rotation.w, p2.rotation.w),
            (p.rotation.x, p2.rotation.x),
            (p.rotation.y, p2.rotation.y),
            (p.rotation.z, p2.rotation.z),
        ] {
            assert!((a - b).abs() < 1e-11);
        }
        let (rel, _) = to_relative(&p, &Pose::identity(), &range).unwrap();
        let rel2 = RelAction::from_record(&rel.to_record()).unwrap();
        for (a, b) in rel.to_vector().iter().zip(rel2.to_vector().iter()) {
            assert!((a - b).abs() < 1e-11);
        }
    }
}
