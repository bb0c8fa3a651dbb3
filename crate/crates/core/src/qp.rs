//! Dense strictly convex QP with identity Hessian:
//! minimize `|u - u_nom|^2` subject to `A u >= b` and `lb <= u <= ub`.
//!
//! Solved with a dual active-set method (Goldfarb-Idnani): start at the
//! unconstrained minimizer, repeatedly add the most violated constraint and
//! drop active constraints whose multipliers would turn negative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Inequality-constrained projection problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub u_nom: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Solver output. Constraint indices `0..k` refer to rows of `A`; index
/// `k + j` is the lower bound of `u[j]` and `k + m + j` its upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    pub active_set: Vec<usize>,
    /// Multipliers for the objective `0.5 |u - u_nom|^2`, one per active index.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QuadraticProgram {
    pub fn new(u_nom: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Result<Self> {
        let qp = Self { u_nom, a, b, lb, ub };
        qp.validate()?;
        Ok(qp)
    }

    /// Box-only problem with symmetric bounds `|u_j| <= limit`.
    pub fn boxed(u_nom: DVector<f64>, limit: f64) -> Result<Self> {
        let m = u_nom.len();
        Self::new(
            u_nom,
            DMatrix::zeros(0, m),
            DVector::zeros(0),
            DVector::from_element(m, -limit),
            DVector::from_element(m, limit),
        )
    }

    pub fn dim(&self) -> usize {
        self.u_nom.len()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.u_nom.len();
        check_dim("qp constraint columns", m, self.a.ncols())?;
        check_dim("qp right-hand side", self.a.nrows(), self.b.len())?;
        check_dim("qp lower bound", m, self.lb.len())?;
        check_dim("qp upper bound", m, self.ub.len())?;
        check_finite("qp nominal input", self.u_nom.iter())?;
        check_finite("qp constraint matrix", self.a.iter())?;
        check_finite("qp right-hand side", self.b.iter())?;
        if self.lb.iter().chain(self.ub.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("qp bounds"));
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument("qp lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    /// Row `index` of the stacked constraint system as `(normal, rhs)`;
    /// `None` for an infinite bound.
    fn row(&self, index: usize) -> Option<(DVector<f64>, f64)> {
        let k = self.rows();
        let m = self.dim();
        if index < k {
            return Some((self.a.row(index).transpose(), self.b[index]));
        }
        let j = (index - k) % m;
        let upper = index >= k + m;
        let bound = if upper { -self.ub[j] } else { self.lb[j] };
        if !bound.is_finite() {
            return None;
        }
        let mut n = DVector::zeros(m);
        n[j] = if upper { -1.0 } else { 1.0 };
        Some((n, bound))
    }

    fn total_rows(&self) -> usize {
        self.rows() + 2 * self.dim()
    }

    fn slack(&self, index: usize, u: &DVector<f64>) -> f64 {
        match self.row(index) {
            Some((n, rhs)) => n.dot(u) - rhs,
            None => f64::INFINITY,
        }
    }

    fn feasibility_tol(&self) -> f64 {
        let bmax = self
            .b
            .iter()
            .chain(self.lb.iter())
            .chain(self.ub.iter())
            .filter(|v| v.is_finite())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        1e-12 * (1.0 + bmax)
    }

    /// Worst violation of the constraint system at `u` (nonnegative).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        (0..self.total_rows()).fold(0.0f64, |acc, i| acc.max(-self.slack(i, u)))
    }

    /// Largest of stationarity, primal infeasibility, dual infeasibility and
    /// complementarity for a candidate primal/dual pair.
    pub fn kkt_residual(&self, u: &DVector<f64>, active: &[usize], multipliers: &[f64]) -> f64 {
        let mut grad = u - &self.u_nom;
        let mut worst = 0.0f64;
        for (&i, &lam) in active.iter().zip(multipliers) {
            if let Some((n, _)) = self.row(i) {
                grad -= n * lam;
                worst = worst.max(-lam).max((lam * self.slack(i, u)).abs());
            }
        }
        worst.max(grad.amax()).max(self.max_violation(u))
    }
}

struct ActiveSet {
    indices: Vec<usize>,
    normals: Vec<DVector<f64>>,
    lambda: Vec<f64>,
}

impl ActiveSet {
    /// Returns `(z, r)`: the step direction for the new constraint normal
    /// `n` projected off the active normals, and the multiplier sensitivity.
    fn directions(&self, n: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let k = self.indices.len();
        if k == 0 {
            return (n.clone(), DVector::zeros(0));
        }
        let m = n.len();
        let mut nmat = DMatrix::zeros(k, m);
        for (r, v) in self.normals.iter().enumerate() {
            nmat.set_row(r, &v.transpose());
        }
        let gram = &nmat * nmat.transpose();
        let rhs = &nmat * n;
        let r = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, RANK_TOL)
                .unwrap_or_else(|_| DVector::zeros(k)),
        };
        let z = n - nmat.tr_mul(&r);
        (z, r)
    }

    fn drop(&mut self, pos: usize) {
        self.indices.remove(pos);
        self.normals.remove(pos);
        self.lambda.remove(pos);
    }
}

/// Solves the QP. Never panics on well-formed input; infeasibility and the
/// iteration cap are reported through [`QpStatus`].
pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution> {
    qp.validate()?;
    let m = qp.dim();
    let total = qp.total_rows();
    let cap = 50 * (m + qp.rows()).max(1);
    let tol = qp.feasibility_tol();
    let mut u = qp.u_nom.clone();
    let mut act = ActiveSet {
        indices: Vec::new(),
        normals: Vec::new(),
        lambda: Vec::new(),
    };
    let mut iterations = 0;

    let finish = |u: DVector<f64>, act: ActiveSet, status: QpStatus, iterations: usize| {
        let mut order: Vec<usize> = (0..act.indices.len()).collect();
        order.sort_by_key(|&p| act.indices[p]);
        let active_set: Vec<usize> = order.iter().map(|&p| act.indices[p]).collect();
        let multipliers: Vec<f64> = order.iter().map(|&p| act.lambda[p]).collect();
        let kkt_residual = qp.kkt_residual(&u, &active_set, &multipliers);
        QpSolution {
            u_star: u,
            active_set,
            multipliers,
            kkt_residual,
            status,
            iterations,
        }
    };

    loop {
        // Most violated inactive constraint, lowest index on ties.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..total {
            if act.indices.contains(&i) {
                continue;
            }
            let s = qp.slack(i, &u);
            if s < -tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            return Ok(finish(u, act, QpStatus::Optimal, iterations));
        };
        let (n_p, rhs_p) = qp.row(p).expect("violated rows are finite");
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > cap {
                return Ok(finish(u, act, QpStatus::MaxIterations, iterations));
            }
            let (z, r) = act.directions(&n_p);
            // Dual step: largest multiplier decrease keeping active multipliers
            // nonnegative.
            let mut partial: Option<(usize, f64)> = None;
            for (pos, (&rj, &lj)) in r.iter().zip(act.lambda.iter()).enumerate() {
                if rj > RANK_TOL {
                    let t = lj / rj;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((pos, t));
                    }
                }
            }
            let zn = z.dot(&n_p);
            let full = if z.norm() > RANK_TOL * (1.0 + n_p.norm()) && zn > 0.0 {
                Some((rhs_p - n_p.dot(&u)) / zn)
            } else {
                None
            };
            match (full, partial) {
                (None, None) => {
                    return Ok(finish(u, act, QpStatus::Infeasible, iterations));
                }
                (None, Some((pos, t))) => {
                    for (l, rj) in act.lambda.iter_mut().zip(r.iter()) {
                        *l -= t * rj;
                    }
                    lambda_p += t;
                    act.drop(pos);
                }
                (Some(t2), partial) => {
                    let (t, drop) = match partial {
                        Some((pos, t1)) if t1 < t2 => (t1, Some(pos)),
                        _ => (t2, None),
                    };
                    u += &z * t;
                    for (l, rj) in act.lambda.iter_mut().zip(r.iter()) {
                        *l -= t * rj;
                    }
                    lambda_p += t;
                    match drop {
                        Some(pos) => act.drop(pos),
                        None => {
                            act.indices.push(p);
                            act.normals.push(n_p.clone());
                            act.lambda.push(lambda_p);
                            break;
                        }
                    }
                }
            }
        }
    }
}

/// What to do when the stacked constraints admit no input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Return [`Error::Infeasible`].
    Fail,
    /// Relax every constraint row by the smallest common slack that restores
    /// feasibility (bounds are never relaxed) and flag the sample.
    #[default]
    Relax,
}

/// Result of [`filter_control`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// Common slack subtracted from every row; zero unless relaxed.
    pub slack: f64,
    pub relaxed: bool,
    pub kkt_residual: f64,
}

/// Minimal modification of `u_nom` satisfying `a u >= b` within the box.
pub fn filter_control(
    u_nom: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    policy: InfeasiblePolicy,
) -> Result<FilterOutcome> {
    let qp = QuadraticProgram::new(u_nom.clone(), a.clone(), b.clone(), lb.clone(), ub.clone())?;
    let sol = solve(&qp)?;
    match sol.status {
        QpStatus::Optimal if qp.max_violation(&sol.u_star) <= 1e3 * qp.feasibility_tol() => Ok(FilterOutcome {
            u: clamp_to_box(&qp, sol.u_star),
            status: QpStatus::Optimal,
            slack: 0.0,
            relaxed: false,
            kkt_residual: sol.kkt_residual,
        }),
        _ if policy == InfeasiblePolicy::Fail => Err(Error::Infeasible),
        _ => relax(&qp),
    }
}

/// Actuator bounds are physical, so roundoff past them is removed.
fn clamp_to_box(qp: &QuadraticProgram, u: DVector<f64>) -> DVector<f64> {
    u.zip_zip_map(&qp.lb, &qp.ub, |v, l, h| v.clamp(l, h))
}

fn relax(qp: &QuadraticProgram) -> Result<FilterOutcome> {
    // Any point of the box is feasible for a large enough slack.
    let center = DVector::from_iterator(
        qp.dim(),
        qp.u_nom
            .iter()
            .zip(qp.lb.iter().zip(qp.ub.iter()))
            .map(|(u, (l, h))| u.clamp(*l, *h)),
    );
    let worst = (0..qp.rows())
        .map(|i| qp.b[i] - qp.a.row(i).transpose().dot(&center))
        .fold(0.0f64, f64::max);
    let shifted = |s: f64| {
        let mut q = qp.clone();
        q.b.add_scalar_mut(-s);
        q
    };
    // Near the smallest feasible slack the feasible set shrinks to a point
    // and the active-set iterates lose accuracy, so a slack only counts if
    // the returned input actually satisfies every row.
    let accepted = |q: &QuadraticProgram, r: &QpSolution| r.status == QpStatus::Optimal && q.max_violation(&r.u_star) <= 1e3 * q.feasibility_tol();
    let feasible = |s: f64| {
        let q = shifted(s);
        solve(&q).map(|r| accepted(&q, &r))
    };
    let mut hi = worst * (1.0 + 1e-12) + 1e-12;
    while !feasible(hi)? {
        hi = 2.0 * hi + 1e-9;
        if !hi.is_finite() {
            return Err(Error::Infeasible);
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + hi) {
            break;
        }
    }
    let sol = solve(&shifted(hi))?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Infeasible);
    }
    Ok(FilterOutcome {
        u: clamp_to_box(qp, sol.u_star),
        status: QpStatus::Infeasible,
        slack: hi,
        relaxed: true,
        kkt_residual: sol.kkt_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn feasible_nominal_is_returned() {
        let qp = QuadraticProgram::boxed(dv(&[1.0, 2.0]), 10.0).unwrap();
        let s = solve(&qp).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.u_star, dv(&[1.0, 2.0]));
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn projection_onto_half_line() {
        let qp = QuadraticProgram::new(dv(&[0.0]), DMatrix::from_element(1, 1, 1.0), dv(&[1.0]), dv(&[-10.0]), dv(&[10.0])).unwrap();
        let s = solve(&qp).unwrap();
        assert_eq!(s.u_star[0], 1.0);
        assert_eq!(s.active_set, vec![0]);
        assert_abs_diff_eq!(s.multipliers[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn torque_clamp() {
        let qp = QuadraticProgram::boxed(dv(&[5.0]), 3.5).unwrap();
        let s = solve(&qp).unwrap();
        assert_eq!(s.u_star[0], 3.5);
        assert_eq!(s.active_set, vec![1]);
    }

    #[test]
    fn detects_infeasibility() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let qp = QuadraticProgram::new(dv(&[0.0]), a, dv(&[1.0, 1.0]), dv(&[-10.0]), dv(&[10.0])).unwrap();
        assert_eq!(solve(&qp).unwrap().status, QpStatus::Infeasible);
        let a = DMatrix::from_element(1, 1, 1.0);
        let qp = QuadraticProgram::new(dv(&[0.0]), a, dv(&[4.0]), dv(&[-3.5]), dv(&[3.5])).unwrap();
        assert_eq!(solve(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_nan_and_crossed_bounds() {
        assert!(QuadraticProgram::boxed(dv(&[f64::NAN]), 1.0).is_err());
        let r = QuadraticProgram::new(dv(&[0.0]), DMatrix::zeros(0, 1), dv(&[]), dv(&[1.0]), dv(&[0.0]));
        assert!(r.is_err());
    }

    #[test]
    fn redundant_rows_are_handled() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let qp = QuadraticProgram::new(dv(&[0.0, 0.0]), a, dv(&[1.0, 2.0, 1.0]), dv(&[-5.0, -5.0]), dv(&[5.0, 5.0])).unwrap();
        let s = solve(&qp).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.u_star[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.u_star[1], 0.0, epsilon = 1e-12);
        assert!(s.kkt_residual <= 1e-10);
    }

    #[test]
    fn filter_examples() {
        let lb = dv(&[-10.0, -10.0]);
        let ub = dv(&[10.0, 10.0]);
        let out = filter_control(&dv(&[0.3, -0.2]), &DMatrix::zeros(0, 2), &dv(&[]), &lb, &ub, InfeasiblePolicy::Fail).unwrap();
        assert_eq!(out.u, dv(&[0.3, -0.2]));
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let out = filter_control(&dv(&[0.0, 0.0]), &a, &dv(&[2.0]), &lb, &ub, InfeasiblePolicy::Fail).unwrap();
        assert_eq!(out.u, dv(&[2.0, 0.0]));
    }

    #[test]
    fn contradictory_rows_relax_with_flag() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = dv(&[1.0, 1.0]);
        let lb = dv(&[-10.0]);
        let ub = dv(&[10.0]);
        assert!(matches!(
            filter_control(&dv(&[0.0]), &a, &b, &lb, &ub, InfeasiblePolicy::Fail),
            Err(Error::Infeasible)
        ));
        let out = filter_control(&dv(&[0.0]), &a, &b, &lb, &ub, InfeasiblePolicy::Relax).unwrap();
        assert!(out.relaxed && out.u[0].is_finite());
        assert_abs_diff_eq!(out.slack, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.u[0], 0.0, epsilon = 1e-9);
    }

    /// Exhaustive oracle: for every subset of at most `m` rows, project onto
    /// their intersection and keep the best feasible projection.
    pub(crate) fn enumeration_oracle(qp: &QuadraticProgram) -> Option<DVector<f64>> {
        let m = qp.dim();
        let rows: Vec<(DVector<f64>, f64)> = (0..qp.total_rows()).filter_map(|i| qp.row(i)).collect();
        let tol = 1e-9 * (1.0 + qp.b.amax().max(qp.lb.amax()).max(qp.ub.amax()));
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut subset = Vec::new();
        fn recurse(
            start: usize,
            subset: &mut Vec<usize>,
            rows: &[(DVector<f64>, f64)],
            m: usize,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            visit(subset);
            if subset.len() == m {
                return;
            }
            for i in start..rows.len() {
                subset.push(i);
                recurse(i + 1, subset, rows, m, visit);
                subset.pop();
            }
        }
        let mut visit = |s: &[usize]| {
            let k = s.len();
            let mut n = DMatrix::zeros(k, m);
            let mut d = DVector::zeros(k);
            for (r, &i) in s.iter().enumerate() {
                n.set_row(r, &rows[i].0.transpose());
                d[r] = rows[i].1;
            }
            let u = if k == 0 {
                qp.u_nom.clone()
            } else {
                let gram = &n * n.transpose();
                if gram.clone().svd(false, false).singular_values.min() < 1e-10 {
                    return;
                }
                let mu = gram.lu().solve(&(d - &n * &qp.u_nom)).unwrap();
                &qp.u_nom + n.tr_mul(&mu)
            };
            if rows.iter().all(|(nv, rhs)| nv.dot(&u) >= rhs - tol) {
                let cost = (&u - &qp.u_nom).norm_squared();
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, u));
                }
            }
        };
        recurse(0, &mut subset, &rows, m, &mut visit);
        best.map(|(_, u)| u)
    }

    pub(crate) fn random_feasible_qp(rng: &mut ChaCha8Rng) -> QuadraticProgram {
        let m = rng.gen_range(1..=4);
        let k = rng.gen_range(0..=8);
        let anchor = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(k, m, |_, _| rng.gen_range(-2.0..2.0));
        let b = DVector::from_fn(k, |i, _| a.row(i).transpose().dot(&anchor) - rng.gen_range(0.0..1.0));
        let u_nom = DVector::from_fn(m, |_, _| rng.gen_range(-4.0..4.0));
        let lb = DVector::from_fn(m, |i, _| anchor[i] - rng.gen_range(0.1..3.0));
        let ub = DVector::from_fn(m, |i, _| anchor[i] + rng.gen_range(0.1..3.0));
        QuadraticProgram::new(u_nom, a, b, lb, ub).unwrap()
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let qp = random_feasible_qp(&mut rng);
            let s = solve(&qp).unwrap();
            assert_eq!(s.status, QpStatus::Optimal);
            let oracle = enumeration_oracle(&qp).unwrap();
            assert!((&s.u_star - &oracle).amax() <= 1e-8);
            assert!(s.kkt_residual <= 1e-8);
        }
    }

    #[test]
    fn deterministic_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let qp = random_feasible_qp(&mut rng);
        let a = solve(&qp).unwrap();
        let b = solve(&qp).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn minimal_deviation_and_idempotence(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qp = random_feasible_qp(&mut rng);
            let s = solve(&qp).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            let tol = 1e-9 * (1.0 + qp.b.amax());
            prop_assert!(qp.max_violation(&s.u_star) <= tol);
            let d_star = (&s.u_star - &qp.u_nom).norm();
            for _ in 0..50 {
                let cand = DVector::from_fn(qp.dim(), |i, _| rng.gen_range(qp.lb[i]..=qp.ub[i]));
                if qp.max_violation(&cand) == 0.0 {
                    prop_assert!(d_star <= (&cand - &qp.u_nom).norm() + 1e-12);
                }
            }
            let again = filter_control(&s.u_star, &qp.a, &qp.b, &qp.lb, &qp.ub, InfeasiblePolicy::Fail).unwrap();
            prop_assert!((&again.u - &s.u_star).amax() <= 1e-10);
        }
    }
}
