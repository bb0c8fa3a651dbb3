//! Grasp constraint rows for the safety filter: friction-pyramid no-slip
//! rows, joint-limit barrier rows and fingertip-workspace barrier rows.
//!
//! Every family is written as `A u >= b` by substituting the input-affine
//! contact force and accelerations of [`Linearization`] into the barrier
//! condition `Bdot + alpha2(B) >= nu`.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::barrier::ExtendedClassK;
use crate::dynamics::{skew, GraspState, GraspSystem, Linearization};
use crate::error::{Error, Result};
use crate::geometry::{self, ContactFrameState, RollingRates};

const FD_STEP: f64 = 1e-6;

/// Inward face normals of a friction pyramid inscribed in the cone of
/// coefficient `mu_hat`, in contact coordinates with the normal along z.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionPyramid {
    mu_hat: f64,
    faces: usize,
    normals: Vec<Vector3<f64>>,
}

impl FrictionPyramid {
    pub fn new(mu_hat: f64, faces: usize) -> Result<Self> {
        if faces < 3 {
            return Err(Error::InvalidArgument(format!("friction pyramid needs at least 3 faces, got {faces}")));
        }
        if !(mu_hat.is_finite() && mu_hat > 0.0) {
            return Err(Error::InvalidArgument(format!("friction coefficient must be positive, got {mu_hat}")));
        }
        let l = faces as f64;
        let half = std::f64::consts::PI / l;
        let normals = (0..faces)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / l + half;
                Vector3::new(-theta.cos(), -theta.sin(), mu_hat * half.cos())
            })
            .collect();
        Ok(Self { mu_hat, faces, normals })
    }

    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }

    pub fn faces(&self) -> usize {
        self.faces
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// Block-diagonal face matrix for `contacts` contacts.
    pub fn matrix(&self, contacts: usize) -> DMatrix<f64> {
        let l = self.faces;
        let mut m = DMatrix::zeros(l * contacts, 3 * contacts);
        for i in 0..contacts {
            for (k, n) in self.normals.iter().enumerate() {
                for c in 0..3 {
                    m[(l * i + k, 3 * i + c)] = n[c];
                }
            }
        }
        m
    }

    /// Face residuals of one contact-frame force.
    pub fn residuals(&self, force: &Vector3<f64>) -> Vec<f64> {
        self.normals.iter().map(|n| n.dot(force)).collect()
    }
}

/// `Lambda` for `n` contacts.
pub fn pyramid_matrix(mu_hat: f64, faces: usize, contacts: usize) -> Result<DMatrix<f64>> {
    Ok(FrictionPyramid::new(mu_hat, faces)?.matrix(contacts))
}

/// Robustness margins of the grasp constraint families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspMargins {
    pub epsilon: f64,
    pub delta_q: f64,
    pub beta_q: f64,
    pub delta_r: f64,
    pub beta_r: f64,
    pub nu_hat: f64,
}

impl GraspMargins {
    pub fn validate(&self) -> Result<()> {
        let all = [self.epsilon, self.delta_q, self.beta_q, self.delta_r, self.beta_r, self.nu_hat];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidScenario("grasp margins must be finite and nonnegative".into()))
        }
    }
}

/// Admissible box of fingertip contact coordinates `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceBox {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl WorkspaceBox {
    /// Interior of the hemisphere chart.
    pub fn hemisphere() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            a_min: -FRAC_PI_2,
            a_max: FRAC_PI_2,
            b_min: -PI,
            b_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a_min < self.a_max && self.b_min < self.b_max {
            Ok(())
        } else {
            Err(Error::InvalidScenario("fingertip workspace box has an empty interior".into()))
        }
    }

    /// `[a - a_min, a_max - a, b - b_min, b_max - b]`
    pub fn distances(&self, xi: &Vector2<f64>) -> [f64; 4] {
        [xi[0] - self.a_min, self.a_max - xi[0], xi[1] - self.b_min, self.b_max - xi[1]]
    }
}

/// Extended class-K pair shaping every barrier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierGains {
    pub alpha1: ExtendedClassK,
    pub alpha2: ExtendedClassK,
}

/// Stacked half-spaces `a u >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRows {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConstraintRows {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `a u - b`
    pub fn slack(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u - &self.b
    }

    fn shifted(mut self, offset: f64) -> Self {
        self.b.add_scalar_mut(offset);
        self
    }
}

/// Scalar barrier of one coordinate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundBarrier {
    pub h: f64,
    pub h_rob: f64,
    pub hdot: f64,
    pub b_rob: f64,
}

/// Barrier of `sign * (x - bound)` given `x` and its rate.
pub fn bound_barrier(x: f64, xd: f64, bound: f64, sign: f64, delta: f64, beta: f64, alpha1: &ExtendedClassK) -> BoundBarrier {
    let h = sign * (x - bound);
    let h_rob = h - delta;
    let hdot = sign * xd;
    BoundBarrier {
        h,
        h_rob,
        hdot,
        b_rob: hdot + alpha1.evaluate(h_rob) - beta,
    }
}

/// Joint barriers ordered as all lower bounds, then all upper bounds.
pub fn joint_barriers(
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_min: &DVector<f64>,
    q_max: &DVector<f64>,
    margins: &GraspMargins,
    alpha1: &ExtendedClassK,
) -> Vec<BoundBarrier> {
    let m = q.len();
    let lower = (0..m).map(|j| bound_barrier(q[j], qd[j], q_min[j], 1.0, margins.delta_q, margins.beta_q, alpha1));
    let upper = (0..m).map(|j| bound_barrier(q[j], qd[j], q_max[j], -1.0, margins.delta_q, margins.beta_q, alpha1));
    lower.chain(upper).collect()
}

/// Workspace barriers of one contact in the order
/// `a >= a_min, a <= a_max, b >= b_min, b <= b_max`.
pub fn contact_barriers(
    xi: &Vector2<f64>,
    xi_rate: &Vector2<f64>,
    workspace: &WorkspaceBox,
    margins: &GraspMargins,
    alpha1: &ExtendedClassK,
) -> [BoundBarrier; 4] {
    let (d, b) = (margins.delta_r, margins.beta_r);
    [
        bound_barrier(xi[0], xi_rate[0], workspace.a_min, 1.0, d, b, alpha1),
        bound_barrier(xi[0], xi_rate[0], workspace.a_max, -1.0, d, b, alpha1),
        bound_barrier(xi[1], xi_rate[1], workspace.b_min, 1.0, d, b, alpha1),
        bound_barrier(xi[1], xi_rate[1], workspace.b_max, -1.0, d, b, alpha1),
    ]
}

/// Model, state and linearization the rows are built from. For blind
/// grasping the system carries the nominal object and the state carries
/// the virtual-frame estimate.
pub struct RowContext<'a> {
    pub system: &'a GraspSystem,
    pub state: &'a GraspState,
    pub lin: Linearization,
    /// `R_cp` per contact.
    pub r_cp: Vec<Matrix3<f64>>,
}

impl<'a> RowContext<'a> {
    pub fn new(system: &'a GraspSystem, state: &'a GraspState, tau_e: &DVector<f64>, w_e: &nalgebra::Vector6<f64>) -> Result<Self> {
        let lin = system.linearize(state, tau_e, w_e)?;
        let r_cp = lin
            .fingers
            .iter()
            .enumerate()
            .map(|(i, f)| geometry::contact_rotation(&system.hand.fingers[i].fingertip, &state.contacts[i].xi_f, &f.r_pf))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { system, state, lin, r_cp })
    }

    fn contacts(&self) -> usize {
        self.r_cp.len()
    }

    /// Angular-velocity rows of finger `i`'s spatial Jacobian, embedded in
    /// the full joint space.
    fn finger_omega_map(&self, i: usize) -> DMatrix<f64> {
        let hand = &self.system.hand;
        let f = &self.lin.fingers[i];
        let mut w = DMatrix::zeros(3, hand.dof());
        w.view_mut((0, hand.joint_offset(i)), (3, hand.fingers[i].dof()))
            .copy_from(&f.jac_s.rows(3, 3));
        w
    }

    /// `[0 I] Jdot_s qd_i` along the joint flow.
    fn omega_bias(&self, i: usize) -> Vector3<f64> {
        let hand = &self.system.hand;
        let finger = &hand.fingers[i];
        let q = hand.joint_slice(self.state.q.as_slice(), i);
        let qd = hand.joint_slice(self.state.qd.as_slice(), i);
        if qd.iter().all(|v| *v == 0.0) {
            return Vector3::zeros();
        }
        let shifted = |s: f64| -> Vec<f64> { q.iter().zip(qd).map(|(a, b)| a + s * b).collect() };
        let jp = finger.spatial_jacobian(&shifted(FD_STEP));
        let jm = finger.spatial_jacobian(&shifted(-FD_STEP));
        let jdot = (jp - jm) / (2.0 * FD_STEP);
        let v = jdot.rows(3, 3) * DVector::from_column_slice(qd);
        Vector3::new(v[0], v[1], v[2])
    }

    /// Time derivative of `R_cp` for a fingertip moving with angular
    /// velocity `omega_f` while the contact coordinates roll at `xi_rate`.
    fn r_cp_rate(&self, i: usize, xi_rate: &Vector2<f64>) -> Result<Matrix3<f64>> {
        let patch = &self.system.hand.fingers[i].fingertip;
        let xi = self.state.contacts[i].xi_f;
        let frame_rate = if *xi_rate == Vector2::zeros() {
            Matrix3::zeros()
        } else {
            let rp = geometry::gauss_frame(patch, &(xi + xi_rate * FD_STEP))?;
            let rm = geometry::gauss_frame(patch, &(xi - xi_rate * FD_STEP))?;
            (rp - rm) / (2.0 * FD_STEP)
        };
        let f = &self.lin.fingers[i];
        Ok(frame_rate.transpose() * f.r_pf.transpose() - self.r_cp[i] * skew(&f.omega_f))
    }

    /// Input-affine fingertip contact-coordinate acceleration of contact
    /// `i`: `xi_dd = gain u + offset`.
    pub fn rolling_acceleration(&self, i: usize) -> Result<(DMatrix<f64>, Vector2<f64>)> {
        let sys = self.system;
        let aff = &self.lin.affine;
        let cf: &ContactFrameState = &self.state.contacts[i];
        let fingertip = &sys.hand.fingers[i].fingertip;
        let object = sys.object_patch(i);
        let h = geometry::h_matrix(cf, fingertip, &object)?;
        let rates: &RollingRates = &self.lin.rates[i];
        let h_rate = geometry::h_matrix_rate(cf, fingertip, &object, rates)?;
        let r_rate = self.r_cp_rate(i, &rates.xi_f)?;
        let rel = self.lin.fingers[i].omega_f - self.state.w_o;

        // d/dt (omega_f - omega_o) = w_u u + w_0
        let wf = self.finger_omega_map(i);
        let w_u = &wf * &aff.qdd_u - aff.xdd_u.rows(3, 3);
        let w0 = &wf * &aff.qdd_0 - aff.xdd_0.rows(3, 3);
        let w_0 = self.omega_bias(i) + Vector3::new(w0[0], w0[1], w0[2]);

        let hr = h * self.r_cp[i];
        let hr_dyn = DMatrix::from_fn(2, 3, |r, c| hr[(r, c)]);
        let gain = hr_dyn * w_u;
        let offset = (h_rate * self.r_cp[i] + h * r_rate) * rel + hr * w_0;
        Ok((gain, offset))
    }

    /// `H R_cp`
    pub fn rolling_map(&self, i: usize) -> Result<Matrix2x3<f64>> {
        let h = geometry::h_matrix(&self.state.contacts[i], &self.system.hand.fingers[i].fingertip, &self.system.object_patch(i))?;
        Ok(h * self.r_cp[i])
    }
}

/// Friction-pyramid rows `Lambda R_cp f_c(u) >= epsilon`.
pub fn no_slip_rows(ctx: &RowContext, pyramid: &FrictionPyramid, epsilon: f64) -> ConstraintRows {
    let n = ctx.contacts();
    let lam = pyramid.matrix(n);
    let mut rot = DMatrix::zeros(3 * n, 3 * n);
    for (i, r) in ctx.r_cp.iter().enumerate() {
        rot.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&DMatrix::from_fn(3, 3, |a, b| r[(a, b)]));
    }
    let map = lam * rot;
    let a = &map * &ctx.lin.affine.force_u;
    let b = (-(&map * &ctx.lin.affine.force_0)).add_scalar(epsilon);
    ConstraintRows { a, b }
}

/// Joint-limit rows, lower bounds first.
pub fn joint_rows(ctx: &RowContext, gains: &BarrierGains, margins: &GraspMargins) -> ConstraintRows {
    let hand = &ctx.system.hand;
    let m = hand.dof();
    let aff = &ctx.lin.affine;
    let barriers = joint_barriers(&ctx.state.q, &ctx.state.qd, &hand.q_min(), &hand.q_max(), margins, &gains.alpha1);
    let mut a = DMatrix::zeros(2 * m, m);
    let mut b = DVector::zeros(2 * m);
    for (r, bar) in barriers.iter().enumerate() {
        let j = r % m;
        let sign = if r < m { 1.0 } else { -1.0 };
        a.row_mut(r).copy_from(&(aff.qdd_u.row(j) * sign));
        b[r] = -sign * aff.qdd_0[j] - gains.alpha1.derivative(bar.h_rob) * bar.hdot - gains.alpha2.evaluate(bar.b_rob);
    }
    ConstraintRows { a, b }
}

/// Fingertip workspace rows, four per contact.
pub fn contact_rows(ctx: &RowContext, gains: &BarrierGains, margins: &GraspMargins, workspace: &WorkspaceBox) -> Result<ConstraintRows> {
    let n = ctx.contacts();
    let m = ctx.system.hand.dof();
    let mut a = DMatrix::zeros(4 * n, m);
    let mut b = DVector::zeros(4 * n);
    for i in 0..n {
        let (gain, offset) = ctx.rolling_acceleration(i)?;
        let xi = ctx.state.contacts[i].xi_f;
        let xi_rate = ctx.lin.rates[i].xi_f;
        let barriers = contact_barriers(&xi, &xi_rate, workspace, margins, &gains.alpha1);
        for (k, bar) in barriers.iter().enumerate() {
            let coord = k / 2;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let r = 4 * i + k;
            a.row_mut(r).copy_from(&(gain.row(coord) * sign));
            b[r] = -sign * offset[coord] - gains.alpha1.derivative(bar.h_rob) * bar.hdot - gains.alpha2.evaluate(bar.b_rob);
        }
    }
    Ok(ConstraintRows { a, b })
}

/// Stacked safety-filter constraints with torque bounds.
#[derive(Debug, Clone)]
pub struct AssembledConstraints {
    pub rows: ConstraintRows,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub no_slip: usize,
    pub joint: usize,
    pub contact: usize,
}

/// `[A_f; A_q; A_r] u >= [b_f; b_q + nu; b_r + nu]` with the hand's torque
/// box.
pub fn assemble(
    ctx: &RowContext,
    pyramid: &FrictionPyramid,
    gains: &BarrierGains,
    margins: &GraspMargins,
    workspace: &WorkspaceBox,
) -> Result<AssembledConstraints> {
    let f = no_slip_rows(ctx, pyramid, margins.epsilon);
    let q = joint_rows(ctx, gains, margins).shifted(margins.nu_hat);
    let r = contact_rows(ctx, gains, margins, workspace)?.shifted(margins.nu_hat);
    let m = ctx.system.hand.dof();
    let (nf, nq, nr) = (f.len(), q.len(), r.len());
    let mut a = DMatrix::zeros(nf + nq + nr, m);
    a.rows_mut(0, nf).copy_from(&f.a);
    a.rows_mut(nf, nq).copy_from(&q.a);
    a.rows_mut(nf + nq, nr).copy_from(&r.a);
    let b = DVector::from_iterator(nf + nq + nr, f.b.iter().chain(q.b.iter()).chain(r.b.iter()).copied());
    let limits = ctx.system.hand.torque_limits();
    Ok(AssembledConstraints {
        rows: ConstraintRows { a, b },
        lb: -&limits,
        ub: limits,
        no_slip: nf,
        joint: nq,
        contact: nr,
    })
}

/// Contact-frame forces `R_cp f_c` of the stacked palm-frame forces.
pub fn contact_frame_forces(r_cp: &[Matrix3<f64>], force: &DVector<f64>) -> Vec<Vector3<f64>> {
    r_cp.iter()
        .enumerate()
        .map(|(i, r)| r * Vector3::new(force[3 * i], force[3 * i + 1], force[3 * i + 2]))
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pyramid_examples() {
        let p = FrictionPyramid::new(0.64, 4).unwrap();
        assert_eq!(p.matrix(1).shape(), (4, 3));
        assert_eq!(p.matrix(3).shape(), (12, 9));
        assert!(p.residuals(&Vector3::z()).iter().all(|r| *r > 0.0));
        let half = std::f64::consts::PI / 4.0;
        for (k, n) in p.normals().iter().enumerate() {
            let theta = std::f64::consts::FRAC_PI_2 * k as f64 + half;
            let ratio = 0.64 * half.cos();
            let f = Vector3::new(ratio * theta.cos(), ratio * theta.sin(), 1.0);
            assert!(n.dot(&f).abs() < 1e-15);
        }
        assert!(FrictionPyramid::new(0.64, 2).is_err());
    }

    #[test]
    fn pyramid_floor_bounds_normal_force() {
        let p = FrictionPyramid::new(0.64, 4).unwrap();
        let eps = 0.03;
        // Boundary points of {Lambda f >= eps}: the normal force never
        // drops below eps / mu_hat.
        for t in 0..360 {
            let phi = (t as f64).to_radians();
            let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
            // Smallest normal force admitting a tangential force of 0.1 along dir.
            let fn_min = p
                .normals()
                .iter()
                .map(|n| (eps - 0.1 * n.dot(&dir)) / n[2])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(fn_min >= eps / 0.64 - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pyramid_is_inscribed(mu in 0.1f64..2.0, faces in 3usize..9, fx in -1.0f64..1.0, fy in -1.0f64..1.0, fz in 0.0f64..1.0) {
            let p = FrictionPyramid::new(mu, faces).unwrap();
            let f = Vector3::new(fx, fy, fz);
            if p.residuals(&f).iter().all(|r| *r >= 0.0) {
                prop_assert!((fx * fx + fy * fy).sqrt() <= mu * fz + 1e-12);
            }
        }
    }

    #[test]
    fn barrier_values() {
        let a1 = ExtendedClassK::linear(2.0).unwrap();
        let b = bound_barrier(0.0, 0.0, 3.0 * std::f64::consts::FRAC_PI_4, -1.0, 0.1, 0.05, &a1);
        assert!((b.h_rob - (3.0 * std::f64::consts::FRAC_PI_4 - 0.1)).abs() < 1e-15);
        assert_eq!(b.b_rob, b.hdot + a1.evaluate(b.h_rob) - 0.05);
        let ws = WorkspaceBox::hemisphere();
        assert_eq!(ws.distances(&Vector2::new(0.0, -std::f64::consts::FRAC_PI_2))[0], std::f64::consts::FRAC_PI_2);
    }
}
