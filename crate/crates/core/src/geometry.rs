//! Surface charts, Gauss frames, and rolling-contact kinematics.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, RowVector2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance kept from the hemisphere chart poles.
pub const POLE_MARGIN: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-12;
const CONDITION_LIMIT: f64 = 1e12;

/// Chart point with first and second partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartDerivatives {
    pub point: Vector3<f64>,
    pub ca: Vector3<f64>,
    pub cb: Vector3<f64>,
    pub caa: Vector3<f64>,
    pub cab: Vector3<f64>,
    pub cbb: Vector3<f64>,
}

/// Closed coordinate box `[a_min, a_max] x [b_min, b_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartDomain {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl ChartDomain {
    pub fn unbounded() -> Self {
        Self {
            a_min: f64::NEG_INFINITY,
            a_max: f64::INFINITY,
            b_min: f64::NEG_INFINITY,
            b_max: f64::INFINITY,
        }
    }

    pub fn contains(&self, xi: &Vector2<f64>) -> bool {
        (self.a_min..=self.a_max).contains(&xi[0]) && (self.b_min..=self.b_max).contains(&xi[1])
    }

    pub fn is_bounded(&self) -> bool {
        [self.a_min, self.a_max, self.b_min, self.b_max].iter().all(|v| v.is_finite())
    }
}

/// A parameterized surface patch `c(a, b)` in its body frame.
pub trait Chart: Send + Sync + fmt::Debug {
    fn derivatives(&self, xi: &Vector2<f64>) -> ChartDerivatives;
    fn domain(&self) -> ChartDomain;
}

/// Face of an axis-aligned box, named by its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxFace {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl BoxFace {
    /// `(normal axis, sign, a axis, b axis)` with `e_a x e_b` = outward normal.
    fn axes(self) -> (usize, f64, usize, usize) {
        match self {
            BoxFace::PosX => (0, 1.0, 1, 2),
            BoxFace::NegX => (0, -1.0, 2, 1),
            BoxFace::PosY => (1, 1.0, 2, 0),
            BoxFace::NegY => (1, -1.0, 0, 2),
            BoxFace::PosZ => (2, 1.0, 0, 1),
            BoxFace::NegZ => (2, -1.0, 1, 0),
        }
    }

    pub fn outward_normal(self) -> Vector3<f64> {
        let (n, s, _, _) = self.axes();
        let mut v = Vector3::zeros();
        v[n] = s;
        v
    }
}

/// Shipped surface families plus user charts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfacePatch {
    /// `c = [-R cos a cos b, R sin a, -R cos a sin b]`, the `z >= 0` half
    /// sphere for `b` in `[-pi, 0]`.
    Hemisphere { radius: f64 },
    /// `c = [a, b, 0]`
    Plane,
    /// One face of a box centered at the body origin.
    BoxFace { half_extents: [f64; 3], face: BoxFace },
    #[serde(skip)]
    Custom(Arc<dyn Chart>),
}

impl SurfacePatch {
    pub fn validate(&self) -> Result<()> {
        match self {
            SurfacePatch::Hemisphere { radius } if !(radius.is_finite() && *radius > 0.0) => {
                Err(Error::InvalidModel(format!("hemisphere radius must be positive, got {radius}")))
            }
            SurfacePatch::BoxFace { half_extents, .. } if half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) => {
                Err(Error::InvalidModel(format!("box half extents must be positive, got {half_extents:?}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether both principal curvatures vanish everywhere.
    pub fn is_flat(&self) -> bool {
        matches!(self, SurfacePatch::Plane | SurfacePatch::BoxFace { .. })
    }

    pub fn point(&self, xi: &Vector2<f64>) -> Vector3<f64> {
        self.derivatives(xi).point
    }
}

impl Chart for SurfacePatch {
    fn derivatives(&self, xi: &Vector2<f64>) -> ChartDerivatives {
        let (a, b) = (xi[0], xi[1]);
        match self {
            SurfacePatch::Hemisphere { radius: r } => {
                let (sa, ca) = a.sin_cos();
                let (sb, cb) = b.sin_cos();
                let point = Vector3::new(-r * ca * cb, r * sa, -r * ca * sb);
                ChartDerivatives {
                    point,
                    ca: Vector3::new(r * sa * cb, r * ca, r * sa * sb),
                    cb: Vector3::new(r * ca * sb, 0.0, -r * ca * cb),
                    caa: -point,
                    cab: Vector3::new(-r * sa * sb, 0.0, r * sa * cb),
                    cbb: Vector3::new(r * ca * cb, 0.0, r * ca * sb),
                }
            }
            SurfacePatch::Plane => ChartDerivatives {
                point: Vector3::new(a, b, 0.0),
                ca: Vector3::x(),
                cb: Vector3::y(),
                caa: Vector3::zeros(),
                cab: Vector3::zeros(),
                cbb: Vector3::zeros(),
            },
            SurfacePatch::BoxFace { half_extents, face } => {
                let (n, s, ia, ib) = face.axes();
                let mut point = Vector3::zeros();
                point[n] = s * half_extents[n];
                point[ia] = a;
                point[ib] = b;
                let mut ea = Vector3::zeros();
                ea[ia] = 1.0;
                let mut eb = Vector3::zeros();
                eb[ib] = 1.0;
                ChartDerivatives {
                    point,
                    ca: ea,
                    cb: eb,
                    caa: Vector3::zeros(),
                    cab: Vector3::zeros(),
                    cbb: Vector3::zeros(),
                }
            }
            SurfacePatch::Custom(c) => c.derivatives(xi),
        }
    }

    fn domain(&self) -> ChartDomain {
        match self {
            SurfacePatch::Hemisphere { .. } => ChartDomain {
                a_min: -FRAC_PI_2 + POLE_MARGIN,
                a_max: FRAC_PI_2 - POLE_MARGIN,
                b_min: -PI,
                b_max: 0.0,
            },
            SurfacePatch::Plane => ChartDomain::unbounded(),
            SurfacePatch::BoxFace { half_extents, face } => {
                let (_, _, ia, ib) = face.axes();
                ChartDomain {
                    a_min: -half_extents[ia],
                    a_max: half_extents[ia],
                    b_min: -half_extents[ib],
                    b_max: half_extents[ib],
                }
            }
            SurfacePatch::Custom(c) => c.domain(),
        }
    }
}

/// Metric, curvature and torsion of a chart at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTensors {
    pub m: Matrix2<f64>,
    pub k: Matrix2<f64>,
    pub t: RowVector2<f64>,
}

impl GeometricTensors {
    /// Tensors of a plane in its standard chart.
    pub fn flat() -> Self {
        Self {
            m: Matrix2::identity(),
            k: Matrix2::zeros(),
            t: RowVector2::zeros(),
        }
    }
}

fn singular(xi: &Vector2<f64>) -> Error {
    Error::ChartSingularity { a: xi[0], b: xi[1] }
}

fn frame_parts(d: &ChartDerivatives, xi: &Vector2<f64>) -> Result<(f64, f64, Vector3<f64>, f64)> {
    let la = d.ca.norm();
    let lb = d.cb.norm();
    let n = d.ca.cross(&d.cb);
    let ln = n.norm();
    if la <= DEGENERATE_TOL || lb <= DEGENERATE_TOL || ln <= DEGENERATE_TOL * la * lb {
        return Err(singular(xi));
    }
    Ok((la, lb, n, ln))
}

/// Gauss frame `[c_a/|c_a|, c_b/|c_b|, n/|n|]` mapping contact to body
/// coordinates.
pub fn gauss_frame(patch: &SurfacePatch, xi: &Vector2<f64>) -> Result<Matrix3<f64>> {
    let d = patch.derivatives(xi);
    let (la, lb, n, ln) = frame_parts(&d, xi)?;
    Ok(Matrix3::from_columns(&[d.ca / la, d.cb / lb, n / ln]))
}

/// Metric, curvature and torsion tensors from analytic chart partials.
pub fn tensors(patch: &SurfacePatch, xi: &Vector2<f64>) -> Result<GeometricTensors> {
    let d = patch.derivatives(xi);
    let (la, lb, n, ln) = frame_parts(&d, xi)?;
    let rho1 = d.ca / la;
    let rho2 = d.cb / lb;
    let rho3 = n / ln;
    let unit_rate = |u: &Vector3<f64>, du: Vector3<f64>, len: f64| (du - u * u.dot(&du)) / len;
    let drho3_a = unit_rate(&rho3, d.caa.cross(&d.cb) + d.ca.cross(&d.cab), ln);
    let drho3_b = unit_rate(&rho3, d.cab.cross(&d.cb) + d.ca.cross(&d.cbb), ln);
    let drho1_a = unit_rate(&rho1, d.caa, la);
    let drho1_b = unit_rate(&rho1, d.cab, la);
    let col_a = drho3_a / la;
    let col_b = drho3_b / lb;
    let k = Matrix2::new(rho1.dot(&col_a), rho1.dot(&col_b), rho2.dot(&col_a), rho2.dot(&col_b));
    let t = RowVector2::new(rho2.dot(&drho1_a) / la, rho2.dot(&drho1_b) / lb);
    Ok(GeometricTensors {
        m: Matrix2::new(la, 0.0, 0.0, lb),
        k,
        t,
    })
}

/// Contact coordinates on both surfaces and the contact angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactFrameState {
    pub xi_f: Vector2<f64>,
    pub xi_o: Vector2<f64>,
    pub psi: f64,
}

/// Time derivatives of [`ContactFrameState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingRates {
    pub xi_f: Vector2<f64>,
    pub xi_o: Vector2<f64>,
    pub psi: f64,
}

impl RollingRates {
    pub fn zero() -> Self {
        Self {
            xi_f: Vector2::zeros(),
            xi_o: Vector2::zeros(),
            psi: 0.0,
        }
    }
}

/// Reflection relating the object's tangent axes to the finger's.
pub fn r_psi(psi: f64) -> Matrix2<f64> {
    let (s, c) = psi.sin_cos();
    Matrix2::new(c, -s, -s, -c)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

fn selector() -> Matrix2x3<f64> {
    Matrix2x3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0)
}

fn condition2(m: &Matrix2<f64>) -> f64 {
    let sv = m.svd(false, false).singular_values;
    let lo = sv.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / lo
    }
}

struct RelativeCurvature {
    tf: GeometricTensors,
    to: GeometricTensors,
    rpsi: Matrix2<f64>,
    inv: Matrix2<f64>,
}

fn relative_curvature(cf: &ContactFrameState, finger: &SurfacePatch, object: &SurfacePatch) -> Result<RelativeCurvature> {
    let tf = tensors(finger, &cf.xi_f)?;
    let to = tensors(object, &cf.xi_o)?;
    let rpsi = r_psi(cf.psi);
    let krel = tf.k + rpsi * to.k * rpsi;
    let condition = condition2(&krel);
    if !(condition < CONDITION_LIMIT) {
        return Err(Error::RollingDegenerate { condition });
    }
    let inv = krel.try_inverse().ok_or(Error::RollingDegenerate { condition })?;
    Ok(RelativeCurvature { tf, to, rpsi, inv })
}

/// `R_cp = R_fc^T R_pf^T`, mapping palm coordinates to contact coordinates.
pub fn contact_rotation(finger: &SurfacePatch, xi_f: &Vector2<f64>, r_pf: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    Ok(gauss_frame(finger, xi_f)?.transpose() * r_pf.transpose())
}

/// `H = M_f^-1 (K_f + R_psi K_o R_psi)^-1 S`.
pub fn h_matrix(cf: &ContactFrameState, finger: &SurfacePatch, object: &SurfacePatch) -> Result<Matrix2x3<f64>> {
    let rc = relative_curvature(cf, finger, object)?;
    let minv = rc.tf.m.try_inverse().ok_or_else(|| singular(&cf.xi_f))?;
    Ok(minv * rc.inv * selector())
}

/// Rolling evolution of the contact coordinates for palm-frame angular
/// velocities `omega_f` (finger) and `omega_o` (object).
///
/// The contact angle rate includes the relative spin about the contact
/// normal, which vanishes for pure rolling.
pub fn rolling_rates(
    cf: &ContactFrameState,
    finger: &SurfacePatch,
    object: &SurfacePatch,
    omega_f: &Vector3<f64>,
    omega_o: &Vector3<f64>,
    r_pf: &Matrix3<f64>,
) -> Result<RollingRates> {
    let rc = relative_curvature(cf, finger, object)?;
    let rel = contact_rotation(finger, &cf.xi_f, r_pf)? * (omega_f - omega_o);
    let driven = rc.inv * selector() * rel;
    let mf_inv = rc.tf.m.try_inverse().ok_or_else(|| singular(&cf.xi_f))?;
    let mo_inv = rc.to.m.try_inverse().ok_or_else(|| singular(&cf.xi_o))?;
    let xi_f = mf_inv * driven;
    let xi_o = mo_inv * rc.rpsi * driven;
    let psi = (rc.tf.t * rc.tf.m * xi_f)[0] + (rc.to.t * rc.to.m * xi_o)[0] + rel[2];
    Ok(RollingRates { xi_f, xi_o, psi })
}

/// Central difference of `H` along the contact-coordinate rates.
pub fn h_matrix_rate(
    cf: &ContactFrameState,
    finger: &SurfacePatch,
    object: &SurfacePatch,
    rates: &RollingRates,
) -> Result<Matrix2x3<f64>> {
    if rates.xi_f == Vector2::zeros() && rates.xi_o == Vector2::zeros() && rates.psi == 0.0 {
        return Ok(Matrix2x3::zeros());
    }
    let shifted = |s: f64| ContactFrameState {
        xi_f: cf.xi_f + rates.xi_f * s,
        xi_o: cf.xi_o + rates.xi_o * s,
        psi: cf.psi + rates.psi * s,
    };
    let hp = h_matrix(&shifted(FD_STEP), finger, object)?;
    let hm = h_matrix(&shifted(-FD_STEP), finger, object)?;
    Ok((hp - hm) / (2.0 * FD_STEP))
}

/// Contact angle from the world-frame tangent axes: the object's first
/// tangent equals `cos(psi) x_f - sin(psi) y_f`.
pub fn contact_angle(finger_frame_world: &Matrix3<f64>, object_frame_world: &Matrix3<f64>) -> f64 {
    let xf = finger_frame_world.column(0);
    let yf = finger_frame_world.column(1);
    let xo = object_frame_world.column(0);
    (-xo.dot(&yf)).atan2(xo.dot(&xf))
}

/// Worst orthogonality defect `|c_a . c_b|` over an `n x n` grid of the
/// (clipped) domain, plus whether the tensors were defined everywhere.
pub fn audit_orthogonality(patch: &SurfacePatch, n: usize) -> (f64, bool) {
    let d = patch.domain();
    let clip = |lo: f64, hi: f64| {
        if lo.is_finite() && hi.is_finite() {
            (lo, hi)
        } else {
            (-1.0, 1.0)
        }
    };
    let (a0, a1) = clip(d.a_min, d.a_max);
    let (b0, b1) = clip(d.b_min, d.b_max);
    let mut worst = 0.0f64;
    let mut defined = true;
    let steps = n.max(2) - 1;
    for i in 0..=steps {
        for j in 0..=steps {
            let xi = Vector2::new(
                a0 + (a1 - a0) * i as f64 / steps as f64,
                b0 + (b1 - b0) * j as f64 / steps as f64,
            );
            let dv = patch.derivatives(&xi);
            worst = worst.max(dv.ca.dot(&dv.cb).abs());
            defined &= tensors(patch, &xi).is_ok();
        }
    }
    (worst, defined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    const R: f64 = 0.06;

    fn hemi() -> SurfacePatch {
        SurfacePatch::Hemisphere { radius: R }
    }

    fn fd_derivatives(patch: &SurfacePatch, xi: &Vector2<f64>) -> ChartDerivatives {
        let h = 1e-5;
        let p = |a: f64, b: f64| patch.point(&Vector2::new(xi[0] + a, xi[1] + b));
        ChartDerivatives {
            point: p(0.0, 0.0),
            ca: (p(h, 0.0) - p(-h, 0.0)) / (2.0 * h),
            cb: (p(0.0, h) - p(0.0, -h)) / (2.0 * h),
            caa: (p(h, 0.0) - 2.0 * p(0.0, 0.0) + p(-h, 0.0)) / (h * h),
            cab: (p(h, h) - p(h, -h) - p(-h, h) + p(-h, -h)) / (4.0 * h * h),
            cbb: (p(0.0, h) - 2.0 * p(0.0, 0.0) + p(0.0, -h)) / (h * h),
        }
    }

    #[test]
    fn hemisphere_partials_match_differences() {
        let xi = Vector2::new(0.3, -1.1);
        let a = hemi().derivatives(&xi);
        let f = fd_derivatives(&hemi(), &xi);
        for (x, y, tol) in [
            (a.ca, f.ca, 1e-9),
            (a.cb, f.cb, 1e-9),
            (a.caa, f.caa, 1e-6),
            (a.cab, f.cab, 1e-6),
            (a.cbb, f.cbb, 1e-6),
        ] {
            assert!((x - y).amax() < tol);
        }
    }

    #[test]
    fn hemisphere_frame_at_tip() {
        let r = gauss_frame(&hemi(), &Vector2::new(0.0, -FRAC_PI_2)).unwrap();
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert!((r.column(2) - Vector3::z()).amax() < 1e-12);
        assert!((r.column(0) - Vector3::y()).amax() < 1e-12);
        assert!((hemi().point(&Vector2::new(0.0, -FRAC_PI_2)) - Vector3::new(0.0, 0.0, R)).amax() < 1e-15);
    }

    #[test]
    fn plane_frame_and_tensors() {
        let r = gauss_frame(&SurfacePatch::Plane, &Vector2::new(0.4, 2.0)).unwrap();
        assert_eq!(r, Matrix3::identity());
        assert_eq!(tensors(&SurfacePatch::Plane, &Vector2::new(0.4, 2.0)).unwrap(), GeometricTensors::flat());
    }

    #[test]
    fn sphere_is_umbilic() {
        for xi in [Vector2::new(0.0, -1.0), Vector2::new(0.7, -2.5), Vector2::new(-1.2, -0.3)] {
            let t = tensors(&hemi(), &xi).unwrap();
            assert!((t.k - Matrix2::identity() / R).amax() < 1e-10);
            assert!(t.t.amax().is_finite());
        }
        let t = tensors(&hemi(), &Vector2::new(0.0, -1.0)).unwrap();
        assert!((t.m - Matrix2::identity() * R).amax() < 1e-15);
        let a = 0.4f64;
        let t = tensors(&hemi(), &Vector2::new(a, -1.0)).unwrap();
        assert_abs_diff_eq!(t.t[1], -a.tan() / R, epsilon = 1e-10);
        assert_abs_diff_eq!(t.t[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pole_is_singular() {
        assert!(matches!(
            gauss_frame(&hemi(), &Vector2::new(FRAC_PI_2, -1.0)),
            Err(Error::ChartSingularity { .. })
        ));
    }

    #[test]
    fn box_faces_point_outward() {
        let faces = [BoxFace::PosX, BoxFace::NegX, BoxFace::PosY, BoxFace::NegY, BoxFace::PosZ, BoxFace::NegZ];
        for face in faces {
            let p = SurfacePatch::BoxFace {
                half_extents: [0.13, 0.2, 0.3],
                face,
            };
            let r = gauss_frame(&p, &Vector2::zeros()).unwrap();
            assert_eq!(r.column(2).into_owned(), face.outward_normal());
            assert_abs_diff_eq!(r.determinant(), 1.0);
            assert!(p.point(&Vector2::zeros()).dot(&face.outward_normal()) > 0.0);
        }
    }

    #[test]
    fn r_psi_is_involution() {
        for psi in [-2.0, 0.0, 0.3, 3.0] {
            assert!((r_psi(psi) * r_psi(psi) - Matrix2::identity()).amax() < 1e-15);
        }
    }

    #[test]
    fn equal_angular_velocities_give_zero_rates() {
        let cf = ContactFrameState {
            xi_f: Vector2::new(0.1, -1.4),
            xi_o: Vector2::new(0.0, 0.0),
            psi: 0.3,
        };
        let w = Vector3::new(0.3, -1.0, 2.0);
        let r = rolling_rates(&cf, &hemi(), &SurfacePatch::Plane, &w, &w, &Matrix3::identity()).unwrap();
        assert_eq!(r, RollingRates::zero());
    }

    #[test]
    fn flat_on_flat_is_degenerate() {
        let cf = ContactFrameState {
            xi_f: Vector2::zeros(),
            xi_o: Vector2::zeros(),
            psi: 0.0,
        };
        let r = h_matrix(&cf, &SurfacePatch::Plane, &SurfacePatch::Plane);
        assert!(matches!(r, Err(Error::RollingDegenerate { .. })));
    }

    #[test]
    fn h_matches_rates_and_flat_form() {
        let cf = ContactFrameState {
            xi_f: Vector2::new(0.2, -1.3),
            xi_o: Vector2::new(0.01, 0.02),
            psi: 0.7,
        };
        let r_pf = Rotation3::from_euler_angles(0.1, 0.5, -0.3).into_inner();
        let (wf, wo) = (Vector3::new(0.4, -0.1, 0.3), Vector3::new(-0.2, 0.3, 0.1));
        let h = h_matrix(&cf, &hemi(), &SurfacePatch::Plane).unwrap();
        let rates = rolling_rates(&cf, &hemi(), &SurfacePatch::Plane, &wf, &wo, &r_pf).unwrap();
        let rcp = contact_rotation(&hemi(), &cf.xi_f, &r_pf).unwrap();
        assert!((h * rcp * (wf - wo) - rates.xi_f).amax() < 1e-15);
        let t = tensors(&hemi(), &cf.xi_f).unwrap();
        let flat = t.m.try_inverse().unwrap() * t.k.try_inverse().unwrap() * selector();
        assert!((h - flat).amax() < 1e-12);
        // At the chart equator the metric is R I and K = I / R, so H = S.
        let eq = ContactFrameState {
            xi_f: Vector2::new(0.0, -1.0),
            ..cf
        };
        let h = h_matrix(&eq, &hemi(), &SurfacePatch::Plane).unwrap();
        assert!((h - selector()).amax() < 1e-12);
        let zero = h_matrix_rate(&eq, &hemi(), &SurfacePatch::Plane, &RollingRates::zero()).unwrap();
        assert_eq!(zero, Matrix2x3::zeros());
    }

    #[test]
    fn umbilic_rate_vanishes_along_equator() {
        let cf = ContactFrameState {
            xi_f: Vector2::new(0.0, -1.0),
            xi_o: Vector2::zeros(),
            psi: 0.2,
        };
        let rates = RollingRates {
            xi_f: Vector2::new(0.0, 0.5),
            xi_o: Vector2::new(0.1, -0.3),
            psi: 0.0,
        };
        let hd = h_matrix_rate(&cf, &hemi(), &SurfacePatch::Plane, &rates).unwrap();
        assert!(hd.amax() < 1e-8);
    }

    /// Sphere (finger) rolling on a fixed plane (object) with constant
    /// angular velocity: integrate the rolling equations and compare with the
    /// rigid-body contact trajectory.
    pub(crate) fn sphere_on_plane_error(omega: Vector3<f64>, duration: f64, dt: f64) -> (f64, f64) {
        let finger = hemi();
        let plane = SurfacePatch::Plane;
        let r0 = Rotation3::from_axis_angle(&Vector3::x_axis(), PI).into_inner();
        let rot_at = |t: f64| -> Matrix3<f64> {
            let n = omega.norm();
            if n == 0.0 {
                return r0;
            }
            Rotation3::from_axis_angle(&Unit::new_normalize(omega), n * t).into_inner() * r0
        };
        let xi_f0 = Vector2::new(0.0, -FRAC_PI_2);
        let frame_f = r0 * gauss_frame(&finger, &xi_f0).unwrap();
        let mut cf = ContactFrameState {
            xi_f: xi_f0,
            xi_o: Vector2::new(0.02, -0.01),
            psi: contact_angle(&frame_f, &Matrix3::identity()),
        };
        let deriv = |cf: &ContactFrameState, t: f64| {
            rolling_rates(cf, &finger, &plane, &omega, &Vector3::zeros(), &rot_at(t)).unwrap()
        };
        let add = |cf: &ContactFrameState, r: &RollingRates, h: f64| ContactFrameState {
            xi_f: cf.xi_f + r.xi_f * h,
            xi_o: cf.xi_o + r.xi_o * h,
            psi: cf.psi + r.psi * h,
        };
        let steps = (duration / dt).round() as usize;
        for k in 0..steps {
            let t = k as f64 * dt;
            let k1 = deriv(&cf, t);
            let k2 = deriv(&add(&cf, &k1, dt / 2.0), t + dt / 2.0);
            let k3 = deriv(&add(&cf, &k2, dt / 2.0), t + dt / 2.0);
            let k4 = deriv(&add(&cf, &k3, dt), t + dt);
            cf.xi_f += (k1.xi_f + 2.0 * k2.xi_f + 2.0 * k3.xi_f + k4.xi_f) * (dt / 6.0);
            cf.xi_o += (k1.xi_o + 2.0 * k2.xi_o + 2.0 * k3.xi_o + k4.xi_o) * (dt / 6.0);
            cf.psi += (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi) * (dt / 6.0);
        }
        let t = steps as f64 * dt;
        // Contact on the plane moves with the sphere center.
        let start = Vector3::new(0.02, -0.01, 0.0);
        let expected_plane = start + omega.cross(&Vector3::z()) * (R * t);
        let plane_err = (plane.point(&cf.xi_o) - expected_plane).norm();
        // Body-fixed location of the lowest sphere point.
        let rot = rot_at(t);
        let expected_body = rot.transpose() * Vector3::new(0.0, 0.0, -R);
        let body_err = (finger.point(&cf.xi_f) - expected_body).norm();
        let frame_f = rot * gauss_frame(&finger, &cf.xi_f).unwrap();
        let psi_err = wrap_angle(contact_angle(&frame_f, &Matrix3::identity()) - cf.psi).abs();
        (plane_err.max(body_err), psi_err)
    }

    #[test]
    fn sphere_rolls_on_plane() {
        for omega in [Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.0, -0.4, 0.0), Vector3::new(0.3, 0.3, 0.0)] {
            let (pos, psi) = sphere_on_plane_error(omega, 1.0, 1e-3);
            assert!(pos <= 1e-5, "position error {pos} for {omega:?}");
            assert!(psi <= 1e-6, "angle error {psi} for {omega:?}");
        }
    }

    #[test]
    fn spin_about_normal_turns_contact_angle() {
        let (pos, psi) = sphere_on_plane_error(Vector3::new(0.2, -0.1, 0.8), 1.0, 1e-3);
        assert!(pos <= 1e-5, "position error {pos}");
        assert!(psi <= 1e-6, "angle error {psi}");
    }

    #[test]
    fn shipped_patches_are_orthogonal() {
        for p in [
            hemi(),
            SurfacePatch::Plane,
            SurfacePatch::BoxFace {
                half_extents: [0.13; 3],
                face: BoxFace::NegY,
            },
        ] {
            let (worst, defined) = audit_orthogonality(&p, 50);
            assert!(worst <= 1e-10 && defined);
        }
    }

    proptest! {
        #[test]
        fn gauss_frame_is_rotation(a in -1.5f64..1.5, b in -3.1f64..-0.01) {
            let r = gauss_frame(&hemi(), &Vector2::new(a, b)).unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn wrap_angle_range(x in -50.0f64..50.0) {
            let y = wrap_angle(x);
            prop_assert!(y > -PI && y <= PI);
            prop_assert!(((x - y) / (2.0 * PI)).round() * 2.0 * PI - (x - y) < 1e-9);
        }
    }
}
