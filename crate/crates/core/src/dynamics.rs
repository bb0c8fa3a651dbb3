//! Serial-chain finger models, rigid object, and the coupled hand-object
//! dynamics under rolling contact.

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Matrix6, Rotation3, Translation3, Unit, UnitQuaternion, Vector2, Vector3,
    Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, BoxFace, ContactFrameState, RollingRates, SurfacePatch};

const FD_STEP: f64 = 1e-6;
const GRASP_CONDITION_LIMIT: f64 = 1e12;

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Diagonal or full inertia tensor in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaSpec {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl InertiaSpec {
    pub fn matrix(&self) -> Matrix3<f64> {
        match self {
            InertiaSpec::Diagonal(d) => Matrix3::from_diagonal(&vec3(*d)),
            InertiaSpec::Full(r) => Matrix3::from_fn(|i, j| r[i][j]),
        }
    }
}

fn check_inertia(what: &str, i: &Matrix3<f64>) -> Result<()> {
    if (i - i.transpose()).amax() > 1e-12 * (1.0 + i.amax()) {
        return Err(Error::InvalidModel(format!("{what} inertia is not symmetric")));
    }
    let eig = i.symmetric_eigenvalues();
    if !eig.iter().all(|e| e.is_finite() && *e > 0.0) {
        return Err(Error::InvalidModel(format!("{what} inertia is not positive definite")));
    }
    Ok(())
}

/// Revolute joint: translate by `origin` in the parent frame, then rotate
/// about the local `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub axis: [f64; 3],
    pub origin: [f64; 3],
}

/// Rigid link attached to the preceding joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub mass: f64,
    pub inertia: InertiaSpec,
    /// Center of mass in the joint frame.
    pub com: [f64; 3],
    /// Box dimensions, informational only.
    #[serde(default)]
    pub dimensions: Option<[f64; 3]>,
}

/// Pose of a frame given by a translation and a rotation matrix (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

/// Fingertip frame relative to the last joint frame, with roll-pitch-yaw
/// angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipSpec {
    pub origin: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Serial revolute finger with a fingertip surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerModel {
    pub name: String,
    pub base: PoseSpec,
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkSpec>,
    pub tip: TipSpec,
    pub fingertip: SurfacePatch,
    pub joint_limits: JointLimits,
    pub torque_limit: f64,
}

/// World-frame kinematic quantities of one finger.
#[derive(Debug, Clone)]
pub struct FingerFrames {
    /// Joint frames after each joint rotation.
    pub joints: Vec<Isometry3<f64>>,
    pub tip: Isometry3<f64>,
}

impl FingerModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        let bad = |msg: String| Err(Error::InvalidModel(format!("finger `{}`: {msg}", self.name)));
        if n == 0 {
            return bad("no joints".into());
        }
        if self.links.len() != n {
            return bad(format!("{} links for {} joints", self.links.len(), n));
        }
        if self.joint_limits.min.len() != n || self.joint_limits.max.len() != n {
            return bad("joint limit length mismatch".into());
        }
        for (j, (lo, hi)) in self.joint_limits.min.iter().zip(&self.joint_limits.max).enumerate() {
            if !(lo < hi) {
                return bad(format!("joint {j} limits [{lo}, {hi}] are empty"));
            }
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if !(vec3(joint.axis).norm() > 0.0) {
                return bad(format!("joint {j} has a zero axis"));
            }
        }
        for (j, link) in self.links.iter().enumerate() {
            if !(link.mass.is_finite() && link.mass > 0.0) {
                return bad(format!("link {j} mass must be positive"));
            }
            check_inertia(&format!("finger `{}` link {j}", self.name), &link.inertia.matrix())?;
        }
        if !(self.torque_limit.is_finite() && self.torque_limit > 0.0) {
            return bad("torque limit must be positive".into());
        }
        let r = self.base_rotation();
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return bad("base rotation is not a proper rotation".into());
        }
        self.fingertip.validate()
    }

    fn base_rotation(&self) -> Matrix3<f64> {
        let r = &self.base.rotation;
        Matrix3::from_fn(|i, j| r[i][j])
    }

    fn base_pose(&self) -> Isometry3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.base_rotation());
        Isometry3::from_parts(
            Translation3::from(vec3(self.base.position)),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    fn tip_offset(&self) -> Isometry3<f64> {
        let [r, p, y] = self.tip.rpy;
        Isometry3::from_parts(
            Translation3::from(vec3(self.tip.origin)),
            UnitQuaternion::from_euler_angles(r, p, y),
        )
    }

    /// Joint and fingertip frames in the palm frame.
    pub fn frames(&self, q: &[f64]) -> FingerFrames {
        let mut pose = self.base_pose();
        let mut joints = Vec::with_capacity(self.joints.len());
        for (joint, &qj) in self.joints.iter().zip(q) {
            let axis = Unit::new_normalize(vec3(joint.axis));
            pose = pose
                * Isometry3::from_parts(
                    Translation3::from(vec3(joint.origin)),
                    UnitQuaternion::from_axis_angle(&axis, qj),
                );
            joints.push(pose);
        }
        let tip = pose * self.tip_offset();
        FingerFrames { joints, tip }
    }

    fn world_axes(&self, frames: &FingerFrames) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        frames
            .joints
            .iter()
            .zip(&self.joints)
            .map(|(f, j)| (f.rotation * vec3(j.axis).normalize(), f.translation.vector))
            .collect()
    }

    /// Fingertip position and orientation in the palm frame.
    pub fn fingertip_pose(&self, q: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
        let tip = self.frames(q).tip;
        (tip.translation.vector, tip.rotation.to_rotation_matrix().into_inner())
    }

    /// Maps joint rates to the fingertip-origin linear velocity (top) and
    /// angular velocity (bottom).
    pub fn spatial_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let frames = self.frames(q);
        self.spatial_jacobian_from(&frames)
    }

    fn spatial_jacobian_from(&self, frames: &FingerFrames) -> DMatrix<f64> {
        let p_f = frames.tip.translation.vector;
        let mut j = DMatrix::zeros(6, self.dof());
        for (c, (a, p)) in self.world_axes(frames).into_iter().enumerate() {
            j.fixed_view_mut::<3, 1>(0, c).copy_from(&a.cross(&(p_f - p)));
            j.fixed_view_mut::<3, 1>(3, c).copy_from(&a);
        }
        j
    }

    /// Linear-velocity Jacobian of a point attached to link `link`.
    fn point_jacobian(&self, axes: &[(Vector3<f64>, Vector3<f64>)], link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, self.dof());
        for (c, (a, p)) in axes.iter().enumerate().take(link + 1) {
            j.fixed_view_mut::<3, 1>(0, c).copy_from(&a.cross(&(point - p)));
        }
        j
    }

    /// Joint-space inertia by the composite rigid-body recursion with
    /// spatial inertias about the palm origin.
    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let frames = self.frames(q);
        let axes = self.world_axes(&frames);
        let n = self.dof();
        let mut composite = Matrix6::zeros();
        let mut composites = vec![Matrix6::zeros(); n];
        for i in (0..n).rev() {
            composite += self.spatial_inertia(&frames, i);
            composites[i] = composite;
        }
        let twists: Vec<Vector6<f64>> = axes
            .iter()
            .map(|(a, p)| {
                let v = p.cross(a);
                Vector6::new(a[0], a[1], a[2], v[0], v[1], v[2])
            })
            .collect();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = twists[i].dot(&(composites[j] * twists[j]));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Spatial inertia of link `i` about the palm origin in (angular;
    /// linear) ordering.
    fn spatial_inertia(&self, frames: &FingerFrames, i: usize) -> Matrix6<f64> {
        let link = &self.links[i];
        let f = &frames.joints[i];
        let rot = f.rotation.to_rotation_matrix().into_inner();
        let c = f * nalgebra::Point3::from(vec3(link.com));
        let cx = skew(&c.coords);
        let ic = rot * link.inertia.matrix() * rot.transpose();
        let mut s = Matrix6::zeros();
        s.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + cx.transpose() * cx * link.mass));
        s.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * link.mass));
        s.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * link.mass));
        s.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * link.mass));
        s
    }

    /// Partial derivatives of the mass matrix, `dm[k] = dM/dq_k`.
    fn mass_partials(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        let mut qp = q.to_vec();
        (0..self.dof())
            .map(|k| {
                qp[k] = q[k] + FD_STEP;
                let mp = self.mass_matrix(&qp);
                qp[k] = q[k] - FD_STEP;
                let mm = self.mass_matrix(&qp);
                qp[k] = q[k];
                (mp - mm) / (2.0 * FD_STEP)
            })
            .collect()
    }

    /// Coriolis matrix from Christoffel symbols of the first kind.
    pub fn coriolis_matrix(&self, q: &[f64], qd: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        if qd.iter().all(|v| *v == 0.0) {
            return DMatrix::zeros(n, n);
        }
        let dm = self.mass_partials(q);
        DMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k])
                .sum()
        })
    }

    /// Generalized joint torque produced by gravity on the links.
    pub fn gravity_torque(&self, q: &[f64], gravity: &Vector3<f64>) -> DVector<f64> {
        let frames = self.frames(q);
        let axes = self.world_axes(&frames);
        let mut tau = DVector::zeros(self.dof());
        for (i, link) in self.links.iter().enumerate() {
            let c = (frames.joints[i] * nalgebra::Point3::from(vec3(link.com))).coords;
            tau += self.point_jacobian(&axes, i, &c).tr_mul(&(gravity * link.mass));
        }
        tau
    }

    /// Potential energy of the links in a uniform gravity field.
    pub fn potential_energy(&self, q: &[f64], gravity: &Vector3<f64>) -> f64 {
        let frames = self.frames(q);
        self.links
            .iter()
            .enumerate()
            .map(|(i, link)| {
                let c = (frames.joints[i] * nalgebra::Point3::from(vec3(link.com))).coords;
                -link.mass * gravity.dot(&c)
            })
            .sum()
    }
}

/// Multi-fingered hand: fingers stacked block-diagonally.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModel {
    pub fingers: Vec<FingerModel>,
}

impl HandModel {
    pub fn validate(&self) -> Result<()> {
        if self.fingers.is_empty() {
            return Err(Error::InvalidModel("hand has no fingers".into()));
        }
        self.fingers.iter().try_for_each(FingerModel::validate)
    }

    pub fn dof(&self) -> usize {
        self.fingers.iter().map(FingerModel::dof).sum()
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    /// Offset of finger `i`'s joints in the stacked joint vector.
    pub fn joint_offset(&self, i: usize) -> usize {
        self.fingers[..i].iter().map(FingerModel::dof).sum()
    }

    pub fn joint_slice<'a>(&self, q: &'a [f64], i: usize) -> &'a [f64] {
        let o = self.joint_offset(i);
        &q[o..o + self.fingers[i].dof()]
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.fingers.iter().flat_map(|f| f.joint_limits.min.iter().copied()))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.fingers.iter().flat_map(|f| f.joint_limits.max.iter().copied()))
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dof(),
            self.fingers.iter().flat_map(|f| std::iter::repeat_n(f.torque_limit, f.dof())),
        )
    }

    /// Block-diagonal mass matrix and Coriolis matrix.
    pub fn mass_and_coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = self.dof();
        check_dim("hand joint positions", m, q.len())?;
        check_dim("hand joint velocities", m, qd.len())?;
        let mut mass = DMatrix::zeros(m, m);
        let mut cor = DMatrix::zeros(m, m);
        for (i, f) in self.fingers.iter().enumerate() {
            let o = self.joint_offset(i);
            let qi = self.joint_slice(q.as_slice(), i);
            let qdi = self.joint_slice(qd.as_slice(), i);
            let d = f.dof();
            mass.view_mut((o, o), (d, d)).copy_from(&f.mass_matrix(qi));
            cor.view_mut((o, o), (d, d)).copy_from(&f.coriolis_matrix(qi, qdi));
        }
        Ok((mass, cor))
    }

    pub fn gravity_torque(&self, q: &DVector<f64>, gravity: &Vector3<f64>) -> DVector<f64> {
        let mut tau = DVector::zeros(self.dof());
        for (i, f) in self.fingers.iter().enumerate() {
            let o = self.joint_offset(i);
            tau.rows_mut(o, f.dof())
                .copy_from(&f.gravity_torque(self.joint_slice(q.as_slice(), i), gravity));
        }
        tau
    }

    /// Contact points on the fingertip surfaces in the palm frame.
    pub fn contact_points(&self, q: &DVector<f64>, xi_f: &[Vector2<f64>]) -> Vec<Vector3<f64>> {
        self.fingers
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let tip = f.frames(self.joint_slice(q.as_slice(), i)).tip;
                (tip * nalgebra::Point3::from(f.fingertip.point(&xi_f[i]))).coords
            })
            .collect()
    }

    /// Hand Jacobian mapping joint rates to the velocity of the material
    /// fingertip points currently in contact.
    pub fn hand_jacobian(&self, q: &DVector<f64>, xi_f: &[Vector2<f64>]) -> DMatrix<f64> {
        let n = self.finger_count();
        let mut j = DMatrix::zeros(3 * n, self.dof());
        for (i, f) in self.fingers.iter().enumerate() {
            let frames = f.frames(self.joint_slice(q.as_slice(), i));
            let js = f.spatial_jacobian_from(&frames);
            let p_c = (frames.tip * nalgebra::Point3::from(f.fingertip.point(&xi_f[i]))).coords;
            let p_fc = p_c - frames.tip.translation.vector;
            let block = contact_point_jacobian(&js, &p_fc);
            j.view_mut((3 * i, self.joint_offset(i)), (3, f.dof())).copy_from(&block);
        }
        j
    }
}

/// `[I  -[p_fc]x] J_s`
pub fn contact_point_jacobian(js: &DMatrix<f64>, p_fc: &Vector3<f64>) -> DMatrix<f64> {
    let top = js.rows(0, 3).into_owned();
    let bottom = js.rows(3, 3).into_owned();
    let sk = skew(p_fc);
    let sk = DMatrix::from_fn(3, 3, |i, j| sk[(i, j)]);
    top - sk * bottom
}

/// Shape of the grasped object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectShape {
    Box { half_extents: [f64; 3] },
}

/// Rigid grasped object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectModel {
    pub mass: f64,
    /// Inertia about the center of mass in body coordinates.
    pub inertia: InertiaSpec,
    pub shape: ObjectShape,
}

impl ObjectModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidModel(format!("object mass must be positive, got {}", self.mass)));
        }
        check_inertia("object", &self.inertia.matrix())?;
        match &self.shape {
            ObjectShape::Box { half_extents } if half_extents.iter().all(|h| h.is_finite() && *h > 0.0) => Ok(()),
            ObjectShape::Box { .. } => Err(Error::InvalidModel("object box extents must be positive".into())),
        }
    }

    /// Surface patch of the given face.
    pub fn face_patch(&self, face: BoxFace) -> SurfacePatch {
        match &self.shape {
            ObjectShape::Box { half_extents } => SurfacePatch::BoxFace {
                half_extents: *half_extents,
                face,
            },
        }
    }
}

/// Newton-Euler inertia and velocity-product terms of a rigid body with
/// world-frame inertia `inertia_world`: returns `(M_o, C_o xdot_o)`.
pub fn object_terms(mass: f64, inertia_world: &Matrix3<f64>, twist: &Vector6<f64>) -> (Matrix6<f64>, Vector6<f64>) {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * mass));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(inertia_world);
    let w = twist.fixed_rows::<3>(3).into_owned();
    let gyro = w.cross(&(inertia_world * w));
    (m, Vector6::new(0.0, 0.0, 0.0, gyro[0], gyro[1], gyro[2]))
}

/// `C_o` matrix with zero translational block and `[w]x I_w` rotational block.
pub fn object_coriolis_matrix(inertia_world: &Matrix3<f64>, omega: &Vector3<f64>) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(skew(omega) * inertia_world));
    c
}

/// Grasp map `[I ...; [p_c - p_o]x ...]`.
pub fn grasp_map(contacts: &[Vector3<f64>], p_o: &Vector3<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(6, 3 * contacts.len());
    for (i, p) in contacts.iter().enumerate() {
        g.view_mut((0, 3 * i), (3, 3)).copy_from(&DMatrix::identity(3, 3));
        let s = skew(&(p - p_o));
        g.view_mut((3, 3 * i), (3, 3)).copy_from(&DMatrix::from_fn(3, 3, |r, c| s[(r, c)]));
    }
    g
}

/// Full hand-object state.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub p_o: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub v_o: Vector3<f64>,
    pub w_o: Vector3<f64>,
    pub contacts: Vec<ContactFrameState>,
}

impl GraspState {
    pub fn object_twist(&self) -> Vector6<f64> {
        Vector6::new(self.v_o[0], self.v_o[1], self.v_o[2], self.w_o[0], self.w_o[1], self.w_o[2])
    }

    pub fn r_po(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    pub fn xi_f(&self) -> Vec<Vector2<f64>> {
        self.contacts.iter().map(|c| c.xi_f).collect()
    }
}

/// Hand and object description read from a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub notes: Vec<String>,
    pub hand: HandModel,
    pub object: ObjectModel,
}

impl ModelFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let model: ModelFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Built-in presets by name: `hand9dof` or `allegro`.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "hand9dof" => include_str!("../presets/hand9dof.json"),
            "allegro" => include_str!("../presets/allegro.json"),
            other => return Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        };
        Self::from_json(text, name)
    }

    pub fn validate(&self) -> Result<()> {
        self.hand.validate()?;
        self.object.validate()
    }
}

/// Hand, object, and the object faces touched by each finger.
#[derive(Debug, Clone)]
pub struct GraspSystem {
    pub hand: HandModel,
    pub object: ObjectModel,
    pub faces: Vec<BoxFace>,
    pub gravity: Vector3<f64>,
    /// Replace the object-side surface by an unbounded plane in the
    /// rolling kinematics.
    pub flat_object: bool,
}

/// Model matrices entering the contact-force solution. Biases collect
/// every velocity, gravity and disturbance term:
/// `bias_h = C_h qd - tau_gravity - tau_e`, `bias_o = C_o xd - w_gravity - w_e`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_h: DMatrix<f64>,
    pub bias_h: DVector<f64>,
    pub jac_h: DMatrix<f64>,
    pub jdot_qd: DVector<f64>,
    pub grasp: DMatrix<f64>,
    pub gdot_t_xd: DVector<f64>,
    pub mass_o: DMatrix<f64>,
    pub bias_o: DVector<f64>,
}

/// Contact forces and accelerations as affine functions of the input:
/// `f_c = force_u u + force_0`, `qdd = qdd_u u + qdd_0`,
/// `xdd_o = xdd_u u + xdd_0`.
#[derive(Debug, Clone)]
pub struct AffineAccel {
    pub force_u: DMatrix<f64>,
    pub force_0: DVector<f64>,
    pub qdd_u: DMatrix<f64>,
    pub qdd_0: DVector<f64>,
    pub xdd_u: DMatrix<f64>,
    pub xdd_0: DVector<f64>,
}

impl AffineAccel {
    pub fn force(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.force_u * u + &self.force_0
    }

    pub fn qdd(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.qdd_u * u + &self.qdd_0
    }

    pub fn xdd(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.xdd_u * u + &self.xdd_0
    }
}

impl DynamicsTerms {
    /// Solves the rolling-contact force equation
    /// `(J M^-1 J^T + G^T M_o^-1 G) f_c = J M^-1 (u - bias_h) + Jdot qd - Gdot^T xd + G^T M_o^-1 bias_o`
    /// symbolically in `u`.
    pub fn affine(&self) -> Result<AffineAccel> {
        let m = self.mass_h.nrows();
        let mh = self
            .mass_h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("hand mass matrix is not positive definite".into()))?;
        let mo = self
            .mass_o
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("object mass matrix is not positive definite".into()))?;
        let mh_inv_jt = mh.solve(&self.jac_h.transpose());
        let mo_inv_g = mo.solve(&self.grasp);
        let b_ho = &self.jac_h * &mh_inv_jt + self.grasp.tr_mul(&mo_inv_g);
        let b_ho = (&b_ho + b_ho.transpose()) * 0.5;
        let eig = b_ho.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition < GRASP_CONDITION_LIMIT) {
            return Err(Error::SingularGrasp { condition });
        }
        let bch = b_ho.cholesky().ok_or(Error::SingularGrasp { condition })?;
        // J M^-1 = (M^-1 J^T)^T since M is symmetric.
        let j_minv = mh_inv_jt.transpose();
        let force_u = bch.solve(&j_minv);
        let drift = -(&j_minv * &self.bias_h) + &self.jdot_qd - &self.gdot_t_xd + mo_inv_g.tr_mul(&self.bias_o);
        let force_0 = bch.solve(&drift);
        let qdd_u = mh.solve(&(DMatrix::identity(m, m) - self.jac_h.tr_mul(&force_u)));
        let qdd_0 = mh.solve(&(-(&self.bias_h) - self.jac_h.tr_mul(&force_0)));
        let xdd_u = &mo_inv_g * &force_u;
        let xdd_0 = mo.solve(&(-(&self.bias_o))) + &mo_inv_g * &force_0;
        Ok(AffineAccel {
            force_u,
            force_0,
            qdd_u,
            qdd_0,
            xdd_u,
            xdd_0,
        })
    }
}

/// Per-finger kinematic data at a state.
#[derive(Debug, Clone)]
pub struct FingerState {
    pub p_f: Vector3<f64>,
    pub r_pf: Matrix3<f64>,
    pub jac_s: DMatrix<f64>,
    pub contact_point: Vector3<f64>,
    pub omega_f: Vector3<f64>,
}

impl GraspSystem {
    pub fn validate(&self) -> Result<()> {
        self.hand.validate()?;
        self.object.validate()?;
        if self.faces.len() != self.hand.finger_count() {
            return Err(Error::InvalidModel(format!(
                "{} contact faces for {} fingers",
                self.faces.len(),
                self.hand.finger_count()
            )));
        }
        for f in &self.hand.fingers {
            if f.fingertip.is_flat() {
                return Err(Error::InvalidModel(format!(
                    "finger `{}`: flat fingertip on a flat object face has undefined rolling kinematics",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn object_patch(&self, i: usize) -> SurfacePatch {
        if self.flat_object {
            SurfacePatch::Plane
        } else {
            self.object.face_patch(self.faces[i])
        }
    }

    pub fn finger_states(&self, state: &GraspState) -> Vec<FingerState> {
        self.hand
            .fingers
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let qi = self.hand.joint_slice(state.q.as_slice(), i);
                let qdi = self.hand.joint_slice(state.qd.as_slice(), i);
                let frames = f.frames(qi);
                let jac_s = f.spatial_jacobian_from(&frames);
                let p_f = frames.tip.translation.vector;
                let r_pf = frames.tip.rotation.to_rotation_matrix().into_inner();
                let contact_point = p_f + r_pf * f.fingertip.point(&state.contacts[i].xi_f);
                let omega_f = (jac_s.rows(3, 3) * DVector::from_column_slice(qdi)).fixed_rows::<3>(0).into_owned();
                FingerState {
                    p_f,
                    r_pf,
                    jac_s,
                    contact_point,
                    omega_f,
                }
            })
            .collect()
    }

    /// Rolling evolution of every contact under the true geometry.
    pub fn rolling(&self, state: &GraspState, fingers: &[FingerState]) -> Result<Vec<RollingRates>> {
        fingers
            .iter()
            .enumerate()
            .map(|(i, fs)| {
                geometry::rolling_rates(
                    &state.contacts[i],
                    &self.hand.fingers[i].fingertip,
                    &self.object_patch(i),
                    &fs.omega_f,
                    &state.w_o,
                    &fs.r_pf,
                )
            })
            .collect()
    }

    pub fn inertia_world(&self, orientation: &UnitQuaternion<f64>) -> Matrix3<f64> {
        let r = orientation.to_rotation_matrix().into_inner();
        r * self.object.inertia.matrix() * r.transpose()
    }

    /// Time derivatives of the hand Jacobian and grasp map along the flow,
    /// by central differences over `(q, xi_f, p_o)`.
    pub fn matrix_rates(&self, state: &GraspState, xi_f_rates: &[Vector2<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.hand.finger_count();
        if state.qd.iter().all(|v| *v == 0.0) && state.v_o == Vector3::zeros() && xi_f_rates.iter().all(|r| *r == Vector2::zeros()) {
            return (DMatrix::zeros(3 * n, self.hand.dof()), DMatrix::zeros(6, 3 * n));
        }
        let at = |s: f64| {
            let q = &state.q + &state.qd * s;
            let xi: Vec<Vector2<f64>> = state.contacts.iter().zip(xi_f_rates).map(|(c, r)| c.xi_f + r * s).collect();
            let p_o = state.p_o + state.v_o * s;
            let j = self.hand.hand_jacobian(&q, &xi);
            let g = grasp_map(&self.hand.contact_points(&q, &xi), &p_o);
            (j, g)
        };
        let (jp, gp) = at(FD_STEP);
        let (jm, gm) = at(-FD_STEP);
        ((jp - jm) / (2.0 * FD_STEP), (gp - gm) / (2.0 * FD_STEP))
    }

    /// True-model dynamics terms with external joint torque `tau_e` and
    /// object wrench `w_e`.
    pub fn dynamics_terms(
        &self,
        state: &GraspState,
        fingers: &[FingerState],
        rates: &[RollingRates],
        tau_e: &DVector<f64>,
        w_e: &Vector6<f64>,
    ) -> Result<DynamicsTerms> {
        let (mass_h, cor) = self.hand.mass_and_coriolis(&state.q, &state.qd)?;
        check_dim("external joint torque", self.hand.dof(), tau_e.len())?;
        let bias_h = &cor * &state.qd - self.hand.gravity_torque(&state.q, &self.gravity) - tau_e;
        let xi_rates: Vec<Vector2<f64>> = rates.iter().map(|r| r.xi_f).collect();
        let jac_h = self.hand.hand_jacobian(&state.q, &state.xi_f());
        let (jdot, gdot) = self.matrix_rates(state, &xi_rates);
        let contacts: Vec<Vector3<f64>> = fingers.iter().map(|f| f.contact_point).collect();
        let grasp = grasp_map(&contacts, &state.p_o);
        let twist = DVector::from_column_slice(state.object_twist().as_slice());
        let (mo, co_xd) = object_terms(self.object.mass, &self.inertia_world(&state.orientation), &state.object_twist());
        let gravity_wrench = Vector6::new(
            self.object.mass * self.gravity[0],
            self.object.mass * self.gravity[1],
            self.object.mass * self.gravity[2],
            0.0,
            0.0,
            0.0,
        );
        let bias_o = co_xd - gravity_wrench - w_e;
        Ok(DynamicsTerms {
            jdot_qd: &jdot * &state.qd,
            gdot_t_xd: gdot.tr_mul(&twist),
            mass_h,
            bias_h,
            jac_h,
            grasp,
            mass_o: DMatrix::from_column_slice(6, 6, mo.as_slice()),
            bias_o: DVector::from_column_slice(bias_o.as_slice()),
        })
    }

    /// Kinematics, rolling rates and the input-affine solution of the
    /// coupled dynamics at a state.
    pub fn linearize(&self, state: &GraspState, tau_e: &DVector<f64>, w_e: &Vector6<f64>) -> Result<Linearization> {
        check_dim("contact states", self.hand.finger_count(), state.contacts.len())?;
        let fingers = self.finger_states(state);
        let rates = self.rolling(state, &fingers)?;
        let terms = self.dynamics_terms(state, &fingers, &rates, tau_e, w_e)?;
        let affine = terms.affine()?;
        Ok(Linearization {
            fingers,
            rates,
            terms,
            affine,
        })
    }

    /// Contact forces keeping the contacts rolling without separation.
    pub fn contact_forces(&self, state: &GraspState, u: &DVector<f64>, tau_e: &DVector<f64>, w_e: &Vector6<f64>) -> Result<DVector<f64>> {
        check_dim("joint torque", self.hand.dof(), u.len())?;
        Ok(self.linearize(state, tau_e, w_e)?.affine.force(u))
    }

    /// Joint and object accelerations with the contact forces.
    pub fn coupled_accels(&self, state: &GraspState, u: &DVector<f64>, tau_e: &DVector<f64>, w_e: &Vector6<f64>) -> Result<Accelerations> {
        check_dim("joint torque", self.hand.dof(), u.len())?;
        let lin = self.linearize(state, tau_e, w_e)?;
        Ok(Accelerations {
            qdd: lin.affine.qdd(u),
            xdd: lin.affine.xdd(u),
            force: lin.affine.force(u),
            rates: lin.rates,
            fingers: lin.fingers,
        })
    }

    /// Time derivative of the full state.
    pub fn state_rate(&self, state: &GraspState, u: &DVector<f64>, tau_e: &DVector<f64>, w_e: &Vector6<f64>) -> Result<StateRate> {
        let acc = self.coupled_accels(state, u, tau_e, w_e)?;
        Ok(StateRate {
            q: state.qd.clone(),
            qd: acc.qdd,
            p_o: state.v_o,
            w_o: state.w_o,
            v_o: Vector3::new(acc.xdd[0], acc.xdd[1], acc.xdd[2]),
            dw_o: Vector3::new(acc.xdd[3], acc.xdd[4], acc.xdd[5]),
            contacts: acc.rates,
        })
    }

    /// `J_h qd - G^T xd_o`
    pub fn rolling_residual(&self, state: &GraspState) -> DVector<f64> {
        let j = self.hand.hand_jacobian(&state.q, &state.xi_f());
        let g = grasp_map(&self.hand.contact_points(&state.q, &state.xi_f()), &state.p_o);
        let twist = DVector::from_column_slice(state.object_twist().as_slice());
        j * &state.qd - g.tr_mul(&twist)
    }

    /// Distance between the finger-side and object-side contact points.
    pub fn contact_gaps(&self, state: &GraspState) -> Vec<f64> {
        let r = state.r_po();
        self.hand
            .contact_points(&state.q, &state.xi_f())
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let po = state.p_o + r * self.object_patch(i).point(&state.contacts[i].xi_o);
                (p - po).norm()
            })
            .collect()
    }

    /// Kinetic plus potential energy of hand and object.
    pub fn energy(&self, state: &GraspState) -> Result<f64> {
        let (mh, _) = self.hand.mass_and_coriolis(&state.q, &DVector::zeros(self.hand.dof()))?;
        let ke_h = 0.5 * state.qd.dot(&(&mh * &state.qd));
        let iw = self.inertia_world(&state.orientation);
        let ke_o = 0.5 * self.object.mass * state.v_o.norm_squared() + 0.5 * state.w_o.dot(&(iw * state.w_o));
        let pe_h: f64 = self
            .hand
            .fingers
            .iter()
            .enumerate()
            .map(|(i, f)| f.potential_energy(self.hand.joint_slice(state.q.as_slice(), i), &self.gravity))
            .sum();
        let pe_o = -self.object.mass * self.gravity.dot(&state.p_o);
        Ok(ke_h + ke_o + pe_h + pe_o)
    }
}

/// Output of [`GraspSystem::linearize`].
#[derive(Debug, Clone)]
pub struct Linearization {
    pub fingers: Vec<FingerState>,
    pub rates: Vec<RollingRates>,
    pub terms: DynamicsTerms,
    pub affine: AffineAccel,
}

/// Time derivative of a [`GraspState`]; `w_o` drives the orientation.
#[derive(Debug, Clone)]
pub struct StateRate {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub p_o: Vector3<f64>,
    pub w_o: Vector3<f64>,
    pub v_o: Vector3<f64>,
    pub dw_o: Vector3<f64>,
    pub contacts: Vec<RollingRates>,
}

impl StateRate {
    /// Weighted sum of rates with matching shapes.
    pub fn combine(parts: &[(f64, &StateRate)]) -> StateRate {
        let (w0, first) = parts[0];
        let mut out = StateRate {
            q: &first.q * w0,
            qd: &first.qd * w0,
            p_o: first.p_o * w0,
            w_o: first.w_o * w0,
            v_o: first.v_o * w0,
            dw_o: first.dw_o * w0,
            contacts: first
                .contacts
                .iter()
                .map(|c| RollingRates {
                    xi_f: c.xi_f * w0,
                    xi_o: c.xi_o * w0,
                    psi: c.psi * w0,
                })
                .collect(),
        };
        for &(w, r) in &parts[1..] {
            out.q += &r.q * w;
            out.qd += &r.qd * w;
            out.p_o += r.p_o * w;
            out.w_o += r.w_o * w;
            out.v_o += r.v_o * w;
            out.dw_o += r.dw_o * w;
            for (o, c) in out.contacts.iter_mut().zip(&r.contacts) {
                o.xi_f += c.xi_f * w;
                o.xi_o += c.xi_o * w;
                o.psi += c.psi * w;
            }
        }
        out
    }
}

impl GraspState {
    /// Explicit step `x + h * rate`; the quaternion follows
    /// `qdot = 0.5 w (x) q` and is renormalized.
    pub fn advanced(&self, rate: &StateRate, h: f64) -> GraspState {
        let quat = self.orientation.into_inner();
        let w = nalgebra::Quaternion::new(0.0, rate.w_o[0], rate.w_o[1], rate.w_o[2]);
        let next = quat + (w * quat) * (0.5 * h);
        GraspState {
            q: &self.q + &rate.q * h,
            qd: &self.qd + &rate.qd * h,
            p_o: self.p_o + rate.p_o * h,
            orientation: UnitQuaternion::new_normalize(next),
            v_o: self.v_o + rate.v_o * h,
            w_o: self.w_o + rate.dw_o * h,
            contacts: self
                .contacts
                .iter()
                .zip(&rate.contacts)
                .map(|(c, r)| ContactFrameState {
                    xi_f: c.xi_f + r.xi_f * h,
                    xi_o: c.xi_o + r.xi_o * h,
                    psi: c.psi + r.psi * h,
                })
                .collect(),
        }
    }
}

/// Output of [`GraspSystem::coupled_accels`].
#[derive(Debug, Clone)]
pub struct Accelerations {
    pub qdd: DVector<f64>,
    pub xdd: DVector<f64>,
    pub force: DVector<f64>,
    pub rates: Vec<RollingRates>,
    pub fingers: Vec<FingerState>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn planar_finger(links: usize) -> FingerModel {
        FingerModel {
            name: "planar".into(),
            base: PoseSpec {
                position: [0.0; 3],
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            },
            joints: (0..links)
                .map(|i| JointSpec {
                    axis: [0.0, 0.0, 1.0],
                    origin: if i == 0 { [0.0; 3] } else { [1.0, 0.0, 0.0] },
                })
                .collect(),
            links: (0..links)
                .map(|_| LinkSpec {
                    mass: 2.0,
                    inertia: InertiaSpec::Diagonal([0.01, 0.02, 0.03]),
                    com: [0.4, 0.0, 0.0],
                    dimensions: None,
                })
                .collect(),
            tip: TipSpec {
                origin: [1.0, 0.0, 0.0],
                rpy: [0.0; 3],
            },
            fingertip: SurfacePatch::Hemisphere { radius: 0.1 },
            joint_limits: JointLimits {
                min: vec![-3.0; links],
                max: vec![3.0; links],
            },
            torque_limit: 10.0,
        }
    }

    fn spatial_finger() -> FingerModel {
        FingerModel {
            name: "spatial".into(),
            base: PoseSpec {
                position: [0.1, -0.2, 0.05],
                rotation: [[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            },
            joints: vec![
                JointSpec { axis: [1.0, 0.0, 0.0], origin: [0.0; 3] },
                JointSpec { axis: [0.0, 0.0, 1.0], origin: [0.0, 0.3, 0.0] },
                JointSpec { axis: [1.0, 0.0, 0.0], origin: [0.0, 0.3, 0.0] },
            ],
            links: vec![
                LinkSpec {
                    mass: 0.25,
                    inertia: InertiaSpec::Diagonal([0.0019, 0.0001, 0.0019]),
                    com: [0.0, 0.15, 0.0],
                    dimensions: None,
                };
                3
            ],
            tip: TipSpec {
                origin: [0.0, 0.3, 0.0],
                rpy: [-std::f64::consts::FRAC_PI_2, 0.0, 0.0],
            },
            fingertip: SurfacePatch::Hemisphere { radius: 0.06 },
            joint_limits: JointLimits {
                min: vec![0.0, -1.0, 0.0],
                max: vec![2.3, 1.0, 2.3],
            },
            torque_limit: 3.5,
        }
    }

    #[test]
    fn zero_configuration_composes_offsets() {
        let f = planar_finger(2);
        let (p, r) = f.fingertip_pose(&[0.0, 0.0]);
        assert!((p - Vector3::new(2.0, 0.0, 0.0)).amax() < 1e-15);
        assert!((r - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn one_link_quarter_turn() {
        let f = planar_finger(1);
        let (p, r) = f.fingertip_pose(&[std::f64::consts::FRAC_PI_2]);
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-15);
        assert!((r.column(0) - Vector3::y()).amax() < 1e-15);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn planar_jacobian_at_zero() {
        let f = planar_finger(2);
        let j = f.spatial_jacobian(&[0.0, 0.0]);
        let expected = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!((j - expected).amax() < 1e-15);
    }

    #[test]
    fn jacobian_matches_differences() {
        let f = spatial_finger();
        let q = [0.7, 0.2, 0.9];
        let j = f.spatial_jacobian(&q);
        let h = 1e-6;
        for c in 0..3 {
            let mut qp = q;
            qp[c] += h;
            let mut qm = q;
            qm[c] -= h;
            let (pp, rp) = f.fingertip_pose(&qp);
            let (pm, rm) = f.fingertip_pose(&qm);
            let v = (pp - pm) / (2.0 * h);
            let (_, r0) = f.fingertip_pose(&q);
            let rdot = (rp - rm) / (2.0 * h);
            let w = rdot * r0.transpose();
            let w = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
            assert!((j.fixed_view::<3, 1>(0, c) - v).amax() < 1e-8);
            assert!((j.fixed_view::<3, 1>(3, c) - w).amax() < 1e-8);
        }
        // Angular rows of a single revolute joint equal its axis.
        let one = planar_finger(1);
        assert_eq!(one.spatial_jacobian(&[0.4]).fixed_view::<3, 1>(3, 0).into_owned(), Vector3::z());
    }

    #[test]
    fn pendulum_inertia() {
        let f = planar_finger(1);
        let m = f.mass_matrix(&[0.3]);
        assert_abs_diff_eq!(m[(0, 0)], 0.03 + 2.0 * 0.4 * 0.4, epsilon = 1e-14);
    }

    #[test]
    fn crba_matches_jacobian_sum() {
        let f = spatial_finger();
        let q = [0.4, -0.3, 1.1];
        let frames = f.frames(&q);
        let axes = f.world_axes(&frames);
        let mut expected = DMatrix::zeros(3, 3);
        for (i, link) in f.links.iter().enumerate() {
            let fr = &frames.joints[i];
            let c = (fr * nalgebra::Point3::from(vec3(link.com))).coords;
            let jv = f.point_jacobian(&axes, i, &c);
            let mut jw = DMatrix::zeros(3, 3);
            for (k, (a, _)) in axes.iter().enumerate().take(i + 1) {
                jw.fixed_view_mut::<3, 1>(0, k).copy_from(a);
            }
            let rot = fr.rotation.to_rotation_matrix().into_inner();
            let iw = rot * link.inertia.matrix() * rot.transpose();
            let iw = DMatrix::from_fn(3, 3, |r, c| iw[(r, c)]);
            expected += jv.transpose() * &jv * link.mass + jw.transpose() * iw * &jw;
        }
        assert!((f.mass_matrix(&q) - expected).amax() < 1e-14);
    }

    #[test]
    fn coriolis_zero_at_rest_and_skew_property() {
        let f = spatial_finger();
        assert_eq!(f.coriolis_matrix(&[0.1, 0.2, 0.3], &[0.0; 3]), DMatrix::zeros(3, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qd: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c = f.coriolis_matrix(&q, &qd);
            let qp: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a + 1e-6 * b).collect();
            let qm: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a - 1e-6 * b).collect();
            let mdot = (f.mass_matrix(&qp) - f.mass_matrix(&qm)) / 2e-6;
            let s = mdot - 2.0 * c;
            assert!((&s + s.transpose()).amax() <= 1e-8);
        }
    }

    #[test]
    fn gravity_torque_is_potential_gradient() {
        let f = spatial_finger();
        let g = Vector3::new(0.0, 0.0, -9.81);
        let q = [0.5, 0.1, 0.8];
        let tau = f.gravity_torque(&q, &g);
        for k in 0..3 {
            let mut qp = q;
            qp[k] += 1e-6;
            let mut qm = q;
            qm[k] -= 1e-6;
            let d = (f.potential_energy(&qp, &g) - f.potential_energy(&qm, &g)) / 2e-6;
            assert_abs_diff_eq!(tau[k], -d, epsilon = 1e-7);
        }
    }

    #[test]
    fn grasp_map_examples() {
        let p_o = Vector3::new(0.1, 0.2, 0.3);
        let g = grasp_map(&[p_o], &p_o);
        assert_eq!(g.view((3, 0), (3, 3)).into_owned(), DMatrix::zeros(3, 3));
        let contacts = [p_o + Vector3::x(), p_o - Vector3::x()];
        let f = DVector::from_vec(vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((grasp_map(&contacts, &p_o) * f).amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cs: Vec<Vector3<f64>> = (0..3).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
        let f = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
        let w = grasp_map(&cs, &p_o) * &f;
        let mut expected = Vector6::zeros();
        for (i, c) in cs.iter().enumerate() {
            let fi = Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]);
            let t = (c - p_o).cross(&fi);
            expected += Vector6::new(fi[0], fi[1], fi[2], t[0], t[1], t[2]);
        }
        assert!((w - DVector::from_column_slice(expected.as_slice())).amax() < 1e-14);
    }

    #[test]
    fn object_coriolis_is_skew_compatible() {
        // d/dt I_w = [w]x I_w - I_w [w]x, so Mdot - 2C is skew.
        let r = Rotation3::from_euler_angles(0.3, -0.2, 0.9).into_inner();
        let iw = r * Matrix3::from_diagonal(&Vector3::new(0.0058, 0.0214, 0.0214)) * r.transpose();
        let w = Vector3::new(0.4, -1.0, 0.7);
        let idot = skew(&w) * iw - iw * skew(&w);
        let c = object_coriolis_matrix(&iw, &w);
        let s = idot - 2.0 * c.fixed_view::<3, 3>(3, 3);
        assert!((s + s.transpose()).amax() < 1e-15);
        let (_, cxd) = object_terms(0.11, &iw, &Vector6::new(0.0, 0.0, 0.0, w[0], w[1], w[2]));
        assert!((cxd.fixed_rows::<3>(3) - c.fixed_view::<3, 3>(3, 3) * w).amax() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_models() {
        let mut f = spatial_finger();
        f.links[1].mass = 0.0;
        assert!(f.validate().is_err());
        let mut f = spatial_finger();
        f.links[0].inertia = InertiaSpec::Diagonal([1.0, -1.0, 1.0]);
        assert!(f.validate().is_err());
        let mut f = spatial_finger();
        f.base.rotation[0][0] = 2.0;
        assert!(f.validate().is_err());
        assert!(spatial_finger().validate().is_ok());
    }
}
