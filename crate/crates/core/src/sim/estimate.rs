//! Blind-grasping estimates from contact locations and the nominal
//! manipulation controller.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::dynamics::{grasp_map, GraspState, GraspSystem, ObjectModel, InertiaSpec};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ContactFrameState};

use super::scenario::{ControllerSpec, EstimateSpec};

const PINV_CUTOFF: f64 = 1e-8;

/// Object frame estimate from contact positions: origin at the centroid,
/// z along the normal of the first three contacts, x toward contact 1.
pub fn virtual_frame(contacts: &[Vector3<f64>]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    if contacts.len() < 3 {
        return Err(Error::DegenerateFrame);
    }
    let centroid = contacts.iter().sum::<Vector3<f64>>() / contacts.len() as f64;
    let normal = (contacts[1] - contacts[0]).cross(&(contacts[2] - contacts[0]));
    let scale = (contacts[1] - contacts[0]).norm() * (contacts[2] - contacts[0]).norm();
    if !(normal.norm() > 1e-9 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateFrame);
    }
    let z = normal.normalize();
    let radial = contacts[0] - centroid;
    let x = radial - z * z.dot(&radial);
    if !(x.norm() > 1e-12) {
        return Err(Error::DegenerateFrame);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Ok((centroid, Matrix3::from_columns(&[x, y, z])))
}

/// Roll, pitch, yaw of a rotation (`R = Rz(yaw) Ry(pitch) Rx(roll)`).
pub fn euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    Vector3::new(roll, pitch, yaw)
}

/// `[p; roll, pitch, yaw]`
pub fn task_state(p: &Vector3<f64>, r: &Matrix3<f64>) -> Vector6<f64> {
    let e = euler_zyx(r);
    Vector6::new(p[0], p[1], p[2], e[0], e[1], e[2])
}

/// Task error with angle components wrapped.
pub fn task_error(x: &Vector6<f64>, reference: &Vector6<f64>) -> Vector6<f64> {
    let mut e = x - reference;
    for k in 3..6 {
        e[k] = wrap_angle(e[k]);
    }
    e
}

/// Moore-Penrose pseudo-inverse; `true` flags a rank-deficient input.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_CUTOFF * smax.max(1.0);
    let deficient = svd.singular_values.iter().filter(|s| **s > cutoff).count() < m.nrows().min(m.ncols());
    let pinv = svd.pseudo_inverse(cutoff).unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()));
    (pinv, deficient)
}

/// What the controller believes about the object at one sample.
#[derive(Debug, Clone)]
pub struct ObjectEstimate {
    pub p_o: Vector3<f64>,
    pub r_po: Matrix3<f64>,
    pub twist: Vector6<f64>,
    pub grasp: DMatrix<f64>,
    pub hand_jacobian: DMatrix<f64>,
    pub contact_points: Vec<Vector3<f64>>,
    pub rank_deficient: bool,
}

impl ObjectEstimate {
    pub fn task_state(&self) -> Vector6<f64> {
        task_state(&self.p_o, &self.r_po)
    }
}

/// Virtual-frame estimate with the twist from the rolling relation,
/// `xdot = (G^T)^+ J_h qd`.
pub fn estimate_object(system: &GraspSystem, q: &DVector<f64>, qd: &DVector<f64>, xi_f: &[nalgebra::Vector2<f64>]) -> Result<ObjectEstimate> {
    let contact_points = system.hand.contact_points(q, xi_f);
    let (p_o, r_po) = virtual_frame(&contact_points)?;
    let grasp = grasp_map(&contact_points, &p_o);
    let hand_jacobian = system.hand.hand_jacobian(q, xi_f);
    let (gt_pinv, rank_deficient) = pseudo_inverse(&grasp.transpose());
    let tw = gt_pinv * (&hand_jacobian * qd);
    Ok(ObjectEstimate {
        p_o,
        r_po,
        twist: Vector6::from_column_slice(tw.as_slice()),
        grasp,
        hand_jacobian,
        contact_points,
        rank_deficient,
    })
}

/// Controller-side model: true hand, object with perturbed inertia and a
/// flat surface.
pub fn nominal_system(truth: &GraspSystem, spec: &EstimateSpec) -> GraspSystem {
    let inertia = truth.object.inertia.matrix() + Matrix3::identity() * spec.inertia_error;
    GraspSystem {
        hand: truth.hand.clone(),
        object: ObjectModel {
            mass: truth.object.mass + spec.mass_error,
            inertia: InertiaSpec::Full(std::array::from_fn(|i| std::array::from_fn(|j| inertia[(i, j)]))),
            shape: truth.object.shape.clone(),
        },
        faces: truth.faces.clone(),
        gravity: truth.gravity,
        flat_object: true,
    }
}

/// State handed to the constraint builder in blind mode.
pub fn estimated_state(q: &DVector<f64>, qd: &DVector<f64>, xi_f: &[nalgebra::Vector2<f64>], est: &ObjectEstimate) -> GraspState {
    GraspState {
        q: q.clone(),
        qd: qd.clone(),
        p_o: est.p_o,
        orientation: UnitQuaternion::from_matrix(&est.r_po),
        v_o: est.twist.fixed_rows::<3>(0).into_owned(),
        w_o: est.twist.fixed_rows::<3>(3).into_owned(),
        contacts: xi_f
            .iter()
            .map(|x| ContactFrameState {
                xi_f: *x,
                xi_o: nalgebra::Vector2::zeros(),
                psi: 0.0,
            })
            .collect(),
    }
}

/// Componentwise saturation at `limit`.
pub fn saturate(x: &Vector6<f64>, limit: f64) -> Vector6<f64> {
    x.map(|v| v.clamp(-limit, limit))
}

/// Internal squeeze toward the contact centroid, `k_f (p_bar - p_c_i)`.
pub fn internal_force(contacts: &[Vector3<f64>], kf: f64) -> DVector<f64> {
    let centroid = contacts.iter().sum::<Vector3<f64>>() / contacts.len() as f64;
    DVector::from_iterator(3 * contacts.len(), contacts.iter().flat_map(|p| ((centroid - p) * kf).data.0[0]))
}

/// PID-on-object-pose controller with internal force regulation.
#[derive(Debug, Clone)]
pub struct NominalController {
    kp: Matrix6<f64>,
    ki: Matrix6<f64>,
    kd: Matrix6<f64>,
    kf: f64,
    limit: f64,
    projection: Matrix6<f64>,
    integral: Vector6<f64>,
}

/// One controller evaluation.
#[derive(Debug, Clone)]
pub struct NominalOutput {
    pub u_nom: DVector<f64>,
    pub error: Vector6<f64>,
    pub rank_deficient: bool,
}

impl NominalController {
    pub fn new(spec: &ControllerSpec) -> Self {
        Self {
            kp: spec.kp.matrix(),
            ki: spec.ki.matrix(),
            kd: spec.kd.matrix(),
            kf: spec.kf,
            limit: spec.integral_limit,
            projection: spec
                .projection
                .map(|p| Matrix6::from_fn(|i, j| p[i][j]))
                .unwrap_or_else(Matrix6::identity),
            integral: Vector6::zeros(),
        }
    }

    pub fn integral(&self) -> &Vector6<f64> {
        &self.integral
    }

    /// `J^T ((P^T G)^+ (-Kp e - Ki sat(int e) - Kd edot) + u_f)`; the
    /// integral then advances by `e * period` and is clamped.
    pub fn control(&mut self, est: &ObjectEstimate, reference: &Vector6<f64>, period: f64) -> NominalOutput {
        let error = task_error(&est.task_state(), reference);
        let p = DMatrix::from_fn(6, 6, |i, j| self.projection[(i, j)]);
        let (pg_pinv, deficient) = pseudo_inverse(&(p.transpose() * &est.grasp));
        let wrench = -(self.kp * error) - self.ki * saturate(&self.integral, self.limit) - self.kd * est.twist;
        let forces = pg_pinv * DVector::from_column_slice(wrench.as_slice()) + internal_force(&est.contact_points, self.kf);
        let u_nom = est.hand_jacobian.tr_mul(&forces);
        self.integral = saturate(&(self.integral + error * period), self.limit);
        NominalOutput {
            u_nom,
            error,
            rank_deficient: deficient || est.rank_deficient,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilateral_frame() {
        let c: Vec<Vector3<f64>> = (0..3)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                Vector3::new(t.cos(), t.sin(), 0.5)
            })
            .collect();
        let (p, r) = virtual_frame(&c).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
        assert!((r.column(2) - Vector3::z()).norm() < 1e-15);
        assert!((r.column(0) - Vector3::x()).norm() < 1e-15);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_is_equivariant() {
        let c = [Vector3::new(0.13, 0.0, 0.4), Vector3::new(-0.13, 0.07, 0.42), Vector3::new(-0.13, -0.07, 0.39)];
        let (p, r) = virtual_frame(&c).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let t = Vector3::new(0.5, -0.2, 1.0);
        let moved: Vec<_> = c.iter().map(|x| rot * x + t).collect();
        let (p2, r2) = virtual_frame(&moved).unwrap();
        assert!((p2 - (rot * p + t)).norm() < 1e-14);
        assert!((r2 - rot * r).amax() < 1e-14);
    }

    #[test]
    fn collinear_contacts_rejected() {
        let c = [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        assert!(matches!(virtual_frame(&c), Err(Error::DegenerateFrame)));
    }

    #[test]
    fn saturation_examples() {
        let s = saturate(&Vector6::new(5.0, -5.0, 2.0, 3.0, -3.0, 0.0), 3.0);
        assert_eq!(s, Vector6::new(3.0, -3.0, 2.0, 3.0, -3.0, 0.0));
    }

    #[test]
    fn antipodal_squeeze() {
        let c = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let f = internal_force(&c, 2.0);
        assert_eq!(f.as_slice(), &[-2.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    }
}
