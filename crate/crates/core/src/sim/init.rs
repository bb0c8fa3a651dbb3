//! Initial grasp by damped least squares on contact consistency.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector2, Vector3};

use crate::dynamics::{GraspState, GraspSystem};
use crate::error::{Error, Result};
use crate::geometry::{self, Chart, ContactFrameState, SurfacePatch};

use super::scenario::InitialGrasp;

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-10;
const FD_STEP: f64 = 1e-7;

/// Contact residual of one finger: point gap and normal misalignment in
/// the palm frame, six entries.
fn residual(system: &GraspSystem, finger: usize, q: &[f64], xi_f: &Vector2<f64>, xi_o: &Vector2<f64>, p_o: &Vector3<f64>, r_po: &Matrix3<f64>) -> Result<DVector<f64>> {
    let f = &system.hand.fingers[finger];
    let (p_f, r_pf) = f.fingertip_pose(q);
    let obj = system.object_patch(finger);
    let pc_f = p_f + r_pf * f.fingertip.point(xi_f);
    let pc_o = p_o + r_po * obj.point(xi_o);
    let n_f = r_pf * geometry::gauss_frame(&f.fingertip, xi_f)?.column(2);
    let n_o = r_po * geometry::gauss_frame(&obj, xi_o)?.column(2);
    let gap = pc_f - pc_o;
    let align = n_f + n_o;
    Ok(DVector::from_iterator(6, gap.iter().chain(align.iter()).copied()))
}

/// Result of [`grasp_initializer`].
#[derive(Debug, Clone)]
pub struct Initialization {
    pub state: GraspState,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves joint angles and object-side contact coordinates so that every
/// fingertip touches its face with opposed normals, at rest.
pub fn grasp_initializer(system: &GraspSystem, spec: &InitialGrasp) -> Result<Initialization> {
    let hand = &system.hand;
    let n = hand.finger_count();
    if spec.faces.len() != n || spec.fingertip_coords.len() != n {
        return Err(Error::InvalidScenario(format!("{} fingers but {} contact specifications", n, spec.faces.len())));
    }
    if spec.seed_q.len() != hand.dof() {
        return Err(Error::InvalidScenario(format!("seed has {} joint angles, hand has {}", spec.seed_q.len(), hand.dof())));
    }
    let p_o = Vector3::from_column_slice(&spec.object_position);
    let [roll, pitch, yaw] = spec.object_euler;
    let orientation = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
    let r_po = orientation.to_rotation_matrix().into_inner();
    let mut q = spec.seed_q.clone();
    let mut contacts = Vec::with_capacity(n);
    let mut worst = 0.0f64;
    let mut total_iterations = 0;
    for i in 0..n {
        let off = hand.joint_offset(i);
        let d = hand.fingers[i].dof();
        let xi_f = Vector2::from(spec.fingertip_coords[i]);
        let obj = system.object_patch(i);
        // Start the object coordinates at the face point nearest the fingertip.
        let (p_f, _) = hand.fingers[i].fingertip_pose(&q[off..off + d]);
        let xi_o0 = nearest_chart_point(&obj, &(r_po.transpose() * (p_f - p_o)));
        let mut z: Vec<f64> = q[off..off + d].iter().copied().chain([xi_o0[0], xi_o0[1]]).collect();
        let eval = |z: &[f64]| residual(system, i, &z[..d], &xi_f, &Vector2::new(z[d], z[d + 1]), &p_o, &r_po);
        let mut r = eval(&z)?;
        let mut lambda = 1e-3;
        let mut it = 0;
        while r.norm() > TOLERANCE {
            if it == MAX_ITERATIONS {
                return Err(Error::Initialization {
                    residual: r.norm(),
                    iterations: it,
                });
            }
            it += 1;
            let mut jac = DMatrix::zeros(6, d + 2);
            for k in 0..d + 2 {
                let mut zp = z.clone();
                zp[k] += FD_STEP;
                let mut zm = z.clone();
                zm[k] -= FD_STEP;
                jac.set_column(k, &((eval(&zp)? - eval(&zm)?) / (2.0 * FD_STEP)));
            }
            loop {
                let sys = &jac * jac.transpose() + DMatrix::identity(6, 6) * (lambda * lambda);
                let step = jac.transpose() * sys.lu().solve(&r).ok_or(Error::Initialization {
                    residual: r.norm(),
                    iterations: it,
                })?;
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
                let rt = eval(&trial)?;
                if rt.norm() < r.norm() {
                    z = trial;
                    r = rt;
                    lambda = (lambda * 0.3).max(1e-12);
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e6 {
                    return Err(Error::Initialization {
                        residual: r.norm(),
                        iterations: it,
                    });
                }
            }
        }
        total_iterations += it;
        worst = worst.max(r.norm());
        q[off..off + d].copy_from_slice(&z[..d]);
        let xi_o = Vector2::new(z[d], z[d + 1]);
        let (_, r_pf) = hand.fingers[i].fingertip_pose(&z[..d]);
        let finger_frame = r_pf * geometry::gauss_frame(&hand.fingers[i].fingertip, &xi_f)?;
        let object_frame = r_po * geometry::gauss_frame(&obj, &xi_o)?;
        contacts.push(ContactFrameState {
            xi_f,
            xi_o,
            psi: geometry::contact_angle(&finger_frame, &object_frame),
        });
    }
    let m = hand.dof();
    Ok(Initialization {
        state: GraspState {
            q: DVector::from_vec(q),
            qd: DVector::zeros(m),
            p_o,
            orientation,
            v_o: Vector3::zeros(),
            w_o: Vector3::zeros(),
            contacts,
        },
        residual: worst,
        iterations: total_iterations,
    })
}

/// Chart coordinates of the projection of a body-frame point onto a flat
/// face (exact for planes and box faces).
fn nearest_chart_point(patch: &SurfacePatch, p: &Vector3<f64>) -> Vector2<f64> {
    let d = patch.derivatives(&Vector2::zeros());
    let rel = p - d.point;
    Vector2::new(rel.dot(&d.ca) / d.ca.norm_squared(), rel.dot(&d.cb) / d.cb.norm_squared())
}
