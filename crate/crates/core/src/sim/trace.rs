//! Per-sample trace records, CSV output and run summaries.
//!
//! Trace columns, in order:
//! `t`, `q_*`, `qd_*`, `p_o_{x,y,z}`, `quat_{w,x,y,z}`, `euler_{roll,pitch,yaw}`,
//! `v_o_*`, `w_o_*`, `est_{x,y,z,roll,pitch,yaw}`, `est_{vx,vy,vz,wx,wy,wz}`,
//! per contact `c{i}_{af,bf,ao,bo,psi}`, `f{i}_{x,y,z}` (palm frame),
//! `hq_min_*`, `hq_max_*`, `Bq_min_*`, `Bq_max_*`,
//! `hr{i}_{amin,amax,bmin,bmax}`, `Br{i}_*`, `hf{i}_{k}` (pyramid faces at the true
//! friction coefficient), `hfd{i}_{k}` (design pyramid at the conservative
//! coefficient), `cone{i}` (true cone margin), `unom_*`, `u_*`, `qp_status`, `slack`,
//! `relaxed`, `e_*`, `int_*`, `rolling_residual`.
//! Floats use 17 significant digits.

use std::io::Write;
use std::path::Path;

use nalgebra::{DVector, Vector6};
use serde::Serialize;

use crate::constraints::BoundBarrier;
use crate::dynamics::GraspState;
use crate::error::{Error, Result};
use crate::qp::QpStatus;

use super::engine::{status_label, RunOutcome};
use super::estimate::euler_zyx;
use super::scenario::Scenario;

/// Ground truth and controller data at one sampling instant.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub state: GraspState,
    pub estimate_x: Vector6<f64>,
    pub estimate_twist: Vector6<f64>,
    pub force: DVector<f64>,
    /// Lower-bound barriers of every joint, then upper-bound barriers.
    pub joint: Vec<BoundBarrier>,
    /// Four workspace barriers per contact.
    pub rolling: Vec<BoundBarrier>,
    /// Pyramid face residuals of the true contact forces, true coefficient.
    pub no_slip: Vec<f64>,
    /// The same forces against the conservative pyramid the filter uses.
    pub design_pyramid: Vec<f64>,
    /// `mu f_n - |f_t|` per contact with the true coefficient.
    pub cone: Vec<f64>,
    pub u_nom: DVector<f64>,
    pub u: DVector<f64>,
    pub qp_status: Option<QpStatus>,
    pub slack: f64,
    pub relaxed: bool,
    pub error: Vector6<f64>,
    pub integral: Vector6<f64>,
    pub rolling_residual: f64,
}

/// Sample sequence of one run.
#[derive(Debug, Clone)]
pub struct Trace {
    dof: usize,
    contacts: usize,
    faces: usize,
    pub samples: Vec<Sample>,
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trace {
    pub fn new(dof: usize, contacts: usize, faces: usize) -> Self {
        Self {
            dof,
            contacts,
            faces,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Sample) {
        self.samples.push(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let (m, n) = (self.dof, self.contacts);
        let mut h = vec!["t".to_string()];
        fn idx(p: &str, k: usize) -> impl Iterator<Item = String> + '_ {
            (0..k).map(move |j| format!("{p}{j}"))
        }
        h.extend(idx("q_", m));
        h.extend(idx("qd_", m));
        h.extend(["p_o_x", "p_o_y", "p_o_z", "quat_w", "quat_x", "quat_y", "quat_z"].map(String::from));
        h.extend(["euler_roll", "euler_pitch", "euler_yaw"].map(String::from));
        h.extend(["v_o_x", "v_o_y", "v_o_z", "w_o_x", "w_o_y", "w_o_z"].map(String::from));
        h.extend(["est_x", "est_y", "est_z", "est_roll", "est_pitch", "est_yaw"].map(String::from));
        h.extend(["est_vx", "est_vy", "est_vz", "est_wx", "est_wy", "est_wz"].map(String::from));
        for i in 0..n {
            h.extend(["af", "bf", "ao", "bo", "psi"].map(|s| format!("c{i}_{s}")));
        }
        for i in 0..n {
            h.extend(["x", "y", "z"].map(|s| format!("f{i}_{s}")));
        }
        h.extend(idx("hq_min_", m));
        h.extend(idx("hq_max_", m));
        h.extend(idx("Bq_min_", m));
        h.extend(idx("Bq_max_", m));
        for i in 0..n {
            h.extend(["amin", "amax", "bmin", "bmax"].map(|s| format!("hr{i}_{s}")));
        }
        for i in 0..n {
            h.extend(["amin", "amax", "bmin", "bmax"].map(|s| format!("Br{i}_{s}")));
        }
        for i in 0..n {
            h.extend((0..self.faces).map(|k| format!("hf{i}_{k}")));
        }
        for i in 0..n {
            h.extend((0..self.faces).map(|k| format!("hfd{i}_{k}")));
        }
        h.extend(idx("cone", n));
        h.extend(idx("unom_", m));
        h.extend(idx("u_", m));
        h.extend(["qp_status", "slack", "relaxed"].map(String::from));
        h.extend(idx("e_", 6));
        h.extend(idx("int_", 6));
        h.push("rolling_residual".into());
        h
    }

    fn record(&self, s: &Sample) -> Vec<String> {
        let mut r = vec![fmt_float(s.t)];
        let nums = |it: &mut dyn Iterator<Item = f64>, r: &mut Vec<String>| r.extend(it.map(fmt_float));
        let st = &s.state;
        nums(&mut st.q.iter().copied(), &mut r);
        nums(&mut st.qd.iter().copied(), &mut r);
        nums(&mut st.p_o.iter().copied(), &mut r);
        let qq = st.orientation.quaternion();
        nums(&mut [qq.w, qq.i, qq.j, qq.k].into_iter(), &mut r);
        nums(&mut euler_zyx(&st.r_po()).iter().copied(), &mut r);
        nums(&mut st.v_o.iter().chain(st.w_o.iter()).copied(), &mut r);
        nums(&mut s.estimate_x.iter().copied(), &mut r);
        nums(&mut s.estimate_twist.iter().copied(), &mut r);
        for c in &st.contacts {
            nums(&mut [c.xi_f[0], c.xi_f[1], c.xi_o[0], c.xi_o[1], c.psi].into_iter(), &mut r);
        }
        nums(&mut s.force.iter().copied(), &mut r);
        nums(&mut s.joint.iter().map(|b| b.h), &mut r);
        nums(&mut s.joint.iter().map(|b| b.b_rob), &mut r);
        nums(&mut s.rolling.iter().map(|b| b.h), &mut r);
        nums(&mut s.rolling.iter().map(|b| b.b_rob), &mut r);
        nums(&mut s.no_slip.iter().copied(), &mut r);
        nums(&mut s.design_pyramid.iter().copied(), &mut r);
        nums(&mut s.cone.iter().copied(), &mut r);
        nums(&mut s.u_nom.iter().copied(), &mut r);
        nums(&mut s.u.iter().copied(), &mut r);
        r.push(status_label(s.qp_status).to_string());
        r.push(fmt_float(s.slack));
        r.push(u8::from(s.relaxed).to_string());
        nums(&mut s.error.iter().copied(), &mut r);
        nums(&mut s.integral.iter().copied(), &mut r);
        r.push(fmt_float(s.rolling_residual));
        r
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for s in &self.samples {
            w.write_record(self.record(s))?;
        }
        w.flush().map_err(|e| Error::io("trace", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Extremes of one constraint family over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    /// Minimum of the raw constraint functions.
    pub min_h: Option<f64>,
    /// Minimum of the margin-shifted constraint functions.
    pub min_h_robust: Option<f64>,
    /// First sample time with a raw value below zero.
    pub first_violation: Option<f64>,
    /// First sample time with a margin-shifted value below zero.
    pub first_robust_violation: Option<f64>,
}

impl FamilySummary {
    fn build<'a, I>(samples: I) -> Self
    where
        I: Iterator<Item = (f64, &'a [(f64, f64)])>,
    {
        let mut out = FamilySummary {
            min_h: None,
            min_h_robust: None,
            first_violation: None,
            first_robust_violation: None,
        };
        for (t, values) in samples {
            for &(h, hr) in values {
                out.min_h = Some(out.min_h.map_or(h, |m: f64| m.min(h)));
                out.min_h_robust = Some(out.min_h_robust.map_or(hr, |m: f64| m.min(hr)));
                if h < 0.0 && out.first_violation.is_none() {
                    out.first_violation = Some(t);
                }
                if hr < 0.0 && out.first_robust_violation.is_none() {
                    out.first_robust_violation = Some(t);
                }
            }
        }
        out
    }

    pub fn violated(&self) -> bool {
        self.first_violation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Families {
    /// Pyramid face residuals of the true contact forces at the true
    /// friction coefficient (no margin).
    pub no_slip: FamilySummary,
    /// Residuals against the conservative design pyramid. Reported only;
    /// dipping below zero here is not slip.
    pub design_pyramid: FamilySummary,
    /// True-cone margin `mu f_n - |f_t|` (no margin).
    pub friction_cone: FamilySummary,
    pub joint: FamilySummary,
    pub rolling: FamilySummary,
}

/// Aggregates of one run. Wall-clock time is left out so repeated runs
/// produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub filter_enabled: bool,
    pub samples: usize,
    pub outcome: RunOutcome,
    pub families: Families,
    /// Any family with a raw value below zero.
    pub any_violation: bool,
    /// Minimum margin-shifted value over every family.
    pub min_h_robust: Option<f64>,
    pub min_barrier: Option<f64>,
    pub final_reference_error: Option<[f64; 6]>,
    pub final_yaw_error: Option<f64>,
    pub reached_reference: bool,
    pub qp_infeasible_count: usize,
    pub max_abs_u: f64,
    pub max_abs_integral: f64,
    pub max_rolling_residual: f64,
}

impl Summary {
    pub fn from_trace(scenario: &Scenario, trace: &Trace, outcome: RunOutcome) -> Self {
        let pairs = |f: &dyn Fn(&Sample) -> Vec<(f64, f64)>| -> Vec<(f64, Vec<(f64, f64)>)> {
            trace.samples.iter().map(|s| (s.t, f(s))).collect()
        };
        let fam = |data: Vec<(f64, Vec<(f64, f64)>)>| FamilySummary::build(data.iter().map(|(t, v)| (*t, v.as_slice())));
        let no_slip = fam(pairs(&|s| s.no_slip.iter().map(|v| (*v, *v)).collect()));
        let design_pyramid = fam(pairs(&|s| s.design_pyramid.iter().map(|v| (*v, *v)).collect()));
        let friction_cone = fam(pairs(&|s| s.cone.iter().map(|v| (*v, *v)).collect()));
        let joint = fam(pairs(&|s| s.joint.iter().map(|b| (b.h, b.h_rob)).collect()));
        let rolling = fam(pairs(&|s| s.rolling.iter().map(|b| (b.h, b.h_rob)).collect()));
        let min_opt = |vals: [Option<f64>; 3]| vals.into_iter().flatten().reduce(f64::min);
        let min_h_robust = min_opt([no_slip.min_h_robust, joint.min_h_robust, rolling.min_h_robust]);
        let min_barrier = trace
            .samples
            .iter()
            .flat_map(|s| s.joint.iter().chain(&s.rolling).map(|b| b.b_rob))
            .reduce(f64::min);
        let last = trace.samples.last();
        let final_reference_error = last.map(|s| std::array::from_fn(|k| s.error[k]));
        let final_yaw_error = last.map(|s| s.error[5]);
        let any_violation = [&no_slip, &joint, &rolling].iter().any(|f| f.violated());
        Summary {
            scenario: scenario.name.clone(),
            filter_enabled: scenario.filter_enabled,
            samples: trace.len(),
            outcome,
            any_violation,
            min_h_robust,
            min_barrier,
            reached_reference: final_yaw_error.is_some_and(|e| e.abs() <= scenario.reference_tolerance),
            final_reference_error,
            final_yaw_error,
            qp_infeasible_count: trace.samples.iter().filter(|s| s.relaxed).count(),
            max_abs_u: trace.samples.iter().map(|s| s.u.amax()).fold(0.0, f64::max),
            max_abs_integral: trace.samples.iter().map(|s| s.integral.amax()).fold(0.0, f64::max),
            max_rolling_residual: trace.samples.iter().map(|s| s.rolling_residual).fold(0.0, f64::max),
            families: Families {
                no_slip,
                design_pyramid,
                friction_cone,
                joint,
                rolling,
            },
        }
    }

    /// Floats are written in shortest round-trip form; non-finite values
    /// become `null`.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("summary", e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}
