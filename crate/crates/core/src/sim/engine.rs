//! Sampled-data closed loop: sense, estimate, filter, hold, integrate.

use nalgebra::{DVector, Vector2, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::constraints::{self, contact_barriers, joint_barriers, FrictionPyramid, RowContext};
use crate::dynamics::{GraspState, GraspSystem, StateRate};
use crate::error::{Error, Result};
use crate::geometry::Chart;
use crate::qp::{filter_control, QpStatus};

use super::estimate::{estimate_object, estimated_state, nominal_system, NominalController};
use super::init::grasp_initializer;
use super::scenario::{EstimateMode, Scenario};
use super::trace::{Sample, Summary, Trace};

/// Which side of a contact left its chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSide {
    Fingertip,
    Object,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    /// A contact coordinate left its chart domain: the grasp is lost.
    ContactExit { time: f64, contact: usize, side: ContactSide },
    /// The dynamics became singular (over-extension or degenerate rolling).
    Stopped { time: f64, reason: String },
}

/// Torque-only disturbance inputs at time `t`.
fn disturbances(scenario: &Scenario, dof: usize, t: f64) -> (DVector<f64>, Vector6<f64>) {
    (scenario.disturbance.joint(t, dof), scenario.disturbance.object(t))
}

/// First contact whose fingertip or object coordinates left the chart.
pub fn contact_exit(system: &GraspSystem, state: &GraspState) -> Option<(usize, ContactSide)> {
    state.contacts.iter().enumerate().find_map(|(i, c)| {
        if !system.hand.fingers[i].fingertip.domain().contains(&c.xi_f) {
            Some((i, ContactSide::Fingertip))
        } else if !system.object_patch(i).domain().contains(&c.xi_o) {
            Some((i, ContactSide::Object))
        } else {
            None
        }
    })
}

/// Holds `u` for one sampling period and integrates the coupled dynamics
/// with `substeps` classic Runge-Kutta steps. Stops early, returning the
/// last in-chart state and the exit, if a contact leaves its chart.
pub fn zoh_step(
    system: &GraspSystem,
    state: &GraspState,
    u: &DVector<f64>,
    t0: f64,
    scenario: &Scenario,
) -> Result<(GraspState, Option<(usize, ContactSide)>)> {
    let h = scenario.period / scenario.substeps as f64;
    let dof = system.hand.dof();
    let rate = |s: &GraspState, t: f64| -> Result<StateRate> {
        let (tau_e, w_e) = disturbances(scenario, dof, t);
        system.state_rate(s, u, &tau_e, &w_e)
    };
    let mut x = state.clone();
    for k in 0..scenario.substeps {
        let t = t0 + k as f64 * h;
        let k1 = rate(&x, t)?;
        let k2 = rate(&x.advanced(&k1, 0.5 * h), t + 0.5 * h)?;
        let k3 = rate(&x.advanced(&k2, 0.5 * h), t + 0.5 * h)?;
        let k4 = rate(&x.advanced(&k3, h), t + h)?;
        let avg = StateRate::combine(&[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]);
        let next = x.advanced(&avg, h);
        if let Some(exit) = contact_exit(system, &next) {
            return Ok((x, Some(exit)));
        }
        x = next;
        for c in &mut x.contacts {
            c.psi = crate::geometry::wrap_angle(c.psi);
        }
    }
    Ok((x, None))
}

/// Builds the true grasp system for a scenario.
pub fn truth_system(scenario: &Scenario) -> Result<GraspSystem> {
    let model = scenario.load_model()?;
    let system = GraspSystem {
        hand: model.hand,
        object: model.object,
        faces: scenario.initial.faces.clone(),
        gravity: scenario.gravity_vector(),
        flat_object: false,
    };
    system.validate()?;
    Ok(system)
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub summary: Summary,
    pub final_state: GraspState,
}

fn stopping(e: Error) -> Result<String> {
    match e {
        Error::SingularGrasp { .. } | Error::RollingDegenerate { .. } | Error::ChartSingularity { .. } | Error::DegenerateFrame => {
            Ok(e.to_string())
        }
        other => Err(other),
    }
}

/// Runs a scenario to its duration or until the grasp is lost.
pub fn run(scenario: &Scenario) -> Result<RunResult> {
    scenario.validate()?;
    let truth = truth_system(scenario)?;
    let init = grasp_initializer(&truth, &scenario.initial)?;
    run_from(scenario, &truth, init.state)
}

/// Runs a scenario from a given initial state.
pub fn run_from(scenario: &Scenario, truth: &GraspSystem, initial: GraspState) -> Result<RunResult> {
    let m = truth.hand.dof();
    let n = truth.hand.finger_count();
    let pyramid = FrictionPyramid::new(scenario.friction.mu_hat, scenario.friction.faces)?;
    // The grasp set is defined with the true coefficient; the filter works
    // with the conservative one.
    let true_pyramid = FrictionPyramid::new(scenario.friction.mu, scenario.friction.faces)?;
    let nominal = nominal_system(truth, &scenario.estimate);
    let mut controller = NominalController::new(&scenario.controller);
    let q_min = truth.hand.q_min();
    let q_max = truth.hand.q_max();
    let limits = truth.hand.torque_limits();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = |std: f64| Normal::new(0.0, std.max(0.0)).map_err(|e| Error::InvalidScenario(e.to_string()));
    let (q_noise, qd_noise) = (noise(scenario.sensor_noise.q_std)?, noise(scenario.sensor_noise.qd_std)?);

    let mut state = initial;
    let xi0: Vec<Vector2<f64>> = state.xi_f();
    let est0 = estimate_object(truth, &state.q, &state.qd, &xi0)?;
    let reference = est0.task_state() + Vector6::from_column_slice(&scenario.reference_offset);
    let mut trace = Trace::new(m, n, pyramid.faces());
    let mut outcome = RunOutcome::Completed;

    for k in 0..scenario.sample_count() {
        let t = k as f64 * scenario.period;
        let xi_f = state.xi_f();
        let mut q_s = state.q.clone();
        let mut qd_s = state.qd.clone();
        if scenario.sensor_noise.q_std > 0.0 {
            q_s.iter_mut().for_each(|v| *v += q_noise.sample(&mut rng));
        }
        if scenario.sensor_noise.qd_std > 0.0 {
            qd_s.iter_mut().for_each(|v| *v += qd_noise.sample(&mut rng));
        }
        let est = match estimate_object(truth, &q_s, &qd_s, &xi_f) {
            Ok(e) => e,
            Err(e) => {
                outcome = RunOutcome::Stopped { time: t, reason: stopping(e)? };
                break;
            }
        };
        let nominal_out = controller.control(&est, &reference, scenario.period);
        let u_nom = nominal_out.u_nom.clone();

        let mut qp_status = None;
        let mut slack = 0.0;
        let mut relaxed = false;
        let u = if scenario.filter_enabled {
            let est_state;
            let ctx = match scenario.estimate.mode {
                EstimateMode::Blind => {
                    est_state = estimated_state(&q_s, &qd_s, &xi_f, &est);
                    RowContext::new(&nominal, &est_state, &DVector::zeros(m), &Vector6::zeros())
                }
                EstimateMode::Exact => {
                    let (tau_e, w_e) = disturbances(scenario, m, t);
                    RowContext::new(truth, &state, &tau_e, &w_e)
                }
            };
            let assembled = match ctx.and_then(|c| constraints::assemble(&c, &pyramid, &scenario.barrier, &scenario.margins, &scenario.workspace)) {
                Ok(a) => a,
                Err(e) => {
                    outcome = RunOutcome::Stopped { time: t, reason: stopping(e)? };
                    break;
                }
            };
            let out = filter_control(&u_nom, &assembled.rows.a, &assembled.rows.b, &assembled.lb, &assembled.ub, scenario.infeasible_policy)?;
            qp_status = Some(out.status);
            slack = out.slack;
            relaxed = out.relaxed;
            out.u
        } else {
            u_nom.zip_map(&limits, |v, l| v.clamp(-l, l))
        };

        // Ground truth at the sample.
        let (tau_e, w_e) = disturbances(scenario, m, t);
        let lin = match truth.linearize(&state, &tau_e, &w_e) {
            Ok(l) => l,
            Err(e) => {
                outcome = RunOutcome::Stopped { time: t, reason: stopping(e)? };
                break;
            }
        };
        let force = lin.affine.force(&u);
        let r_cp = lin
            .fingers
            .iter()
            .enumerate()
            .map(|(i, f)| crate::geometry::contact_rotation(&truth.hand.fingers[i].fingertip, &xi_f[i], &f.r_pf))
            .collect::<Result<Vec<_>>>()?;
        let local = constraints::contact_frame_forces(&r_cp, &force);
        let no_slip: Vec<f64> = local.iter().flat_map(|f| true_pyramid.residuals(f)).collect();
        let design_pyramid: Vec<f64> = local.iter().flat_map(|f| pyramid.residuals(f)).collect();
        let cone: Vec<f64> = local
            .iter()
            .map(|f| scenario.friction.mu * f[2] - Vector2::new(f[0], f[1]).norm())
            .collect();
        let joints = joint_barriers(&state.q, &state.qd, &q_min, &q_max, &scenario.margins, &scenario.barrier.alpha1);
        let rolling: Vec<_> = (0..n)
            .flat_map(|i| contact_barriers(&xi_f[i], &lin.rates[i].xi_f, &scenario.workspace, &scenario.margins, &scenario.barrier.alpha1))
            .collect();
        trace.push(Sample {
            t,
            state: state.clone(),
            estimate_x: est.task_state(),
            estimate_twist: est.twist,
            force: force.clone(),
            joint: joints,
            rolling,
            no_slip,
            design_pyramid,
            cone,
            u_nom,
            u: u.clone(),
            qp_status,
            slack,
            relaxed,
            error: nominal_out.error,
            integral: *controller.integral(),
            rolling_residual: truth.rolling_residual(&state).amax(),
        });

        match zoh_step(truth, &state, &u, t, scenario) {
            Ok((next, exit)) => {
                state = next;
                if let Some((contact, side)) = exit {
                    outcome = RunOutcome::ContactExit {
                        time: t + scenario.period,
                        contact,
                        side,
                    };
                    break;
                }
            }
            Err(e) => {
                outcome = RunOutcome::Stopped {
                    time: t,
                    reason: stopping(e)?,
                };
                break;
            }
        }
    }

    let summary = Summary::from_trace(scenario, &trace, outcome);
    Ok(RunResult {
        trace,
        summary,
        final_state: state,
    })
}

/// Status label of a sample for the trace.
pub fn status_label(status: Option<QpStatus>) -> &'static str {
    match status {
        None => "unfiltered",
        Some(QpStatus::Optimal) => "optimal",
        Some(QpStatus::Infeasible) => "infeasible",
        Some(QpStatus::MaxIterations) => "max_iterations",
    }
}
