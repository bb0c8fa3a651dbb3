//! Double-integrator invariance benchmark: one degree of freedom kept in
//! `[lower, upper]` by the barrier filter under a bounded disturbance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barrier::{self, ExtendedClassK, MarginEstimate, NuOptions, PlantState, PositionConstraint, SecondOrderPlant};
use crate::error::Result;
use crate::qp::{filter_control, InfeasiblePolicy};

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub lower: f64,
    pub upper: f64,
    pub period: f64,
    pub horizon: f64,
    pub disturbance_bound: f64,
    pub delta: f64,
    pub beta: f64,
    pub nu_hat: f64,
    pub u_limit: f64,
    pub runs: usize,
    pub alpha1: ExtendedClassK,
    pub alpha2: ExtendedClassK,
    pub seed: u64,
}

impl BenchmarkConfig {
    /// `1 <= x <= 4`, `T = 0.01`, `|d| <= 0.05`, `delta = 0.05`,
    /// `beta = 0.1`, `nu = 0.01`, 50 runs of 10 s.
    pub fn standard(alpha1: ExtendedClassK) -> Self {
        Self {
            lower: 1.0,
            upper: 4.0,
            period: 0.01,
            horizon: 10.0,
            disturbance_bound: 0.05,
            delta: 0.05,
            beta: 0.1,
            nu_hat: 0.01,
            u_limit: 50.0,
            runs: 50,
            alpha1,
            alpha2: ExtendedClassK::Cubic { gain: 1.0 },
            seed: 7,
        }
    }

    pub fn constraints(&self) -> Result<[PositionConstraint; 2]> {
        Ok([
            PositionConstraint::lower_bound(1, 0, self.lower, self.delta, self.beta)?,
            PositionConstraint::upper_bound(1, 0, self.upper, self.delta, self.beta)?,
        ])
    }

    /// Velocity interval where both robust barriers are nonnegative, or
    /// `None` outside the tightened position interval.
    pub fn admissible_velocity(&self, x: f64) -> Option<(f64, f64)> {
        let (hl, hu) = (x - self.lower - self.delta, self.upper - x - self.delta);
        if hl < 0.0 || hu < 0.0 {
            return None;
        }
        let lo = -self.alpha1.evaluate(hl) + self.beta;
        let hi = self.alpha1.evaluate(hu) - self.beta;
        (lo <= hi).then_some((lo, hi))
    }

    /// Uniform draw from the admissible set by rejection.
    pub fn sample_state(&self, rng: &mut ChaCha8Rng) -> PlantState {
        loop {
            let x = rng.gen_range(self.lower..=self.upper);
            if let Some((lo, hi)) = self.admissible_velocity(x) {
                let v = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
                return PlantState::scalar(x, v);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRun {
    pub x0: f64,
    pub v0: f64,
    pub samples: usize,
    pub min_h_robust: f64,
    pub violations: usize,
    pub relaxed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub runs: Vec<BenchmarkRun>,
}

impl BenchmarkReport {
    pub fn min_h_robust(&self) -> f64 {
        self.runs.iter().map(|r| r.min_h_robust).fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self) -> usize {
        self.runs.iter().map(|r| r.violations).sum()
    }
}

/// Nominal input pushing toward targets outside the admissible interval,
/// switching every two seconds.
fn nominal(cfg: &BenchmarkConfig, t: f64, x: &PlantState) -> f64 {
    let span = cfg.upper - cfg.lower;
    let target = if (t / 2.0).floor() as i64 % 2 == 0 { cfg.upper + span } else { cfg.lower - span };
    4.0 * (target - x.q[0]) - 1.0 * x.qd[0]
}

/// One closed-loop run; the disturbance is held over each period and drawn
/// uniformly from the bound.
pub fn run_once(cfg: &BenchmarkConfig, initial: PlantState, rng: &mut ChaCha8Rng) -> Result<BenchmarkRun> {
    let plant = SecondOrderPlant::double_integrator(1)?;
    let constraints = cfg.constraints()?;
    let steps = ((cfg.horizon / cfg.period) * (1.0 + 1e-12)).floor() as usize;
    let mut x = initial.clone();
    let mut min_h = f64::INFINITY;
    let mut violations = 0;
    let mut relaxed = 0;
    let lb = DVector::from_element(1, -cfg.u_limit);
    let ub = DVector::from_element(1, cfg.u_limit);
    for k in 0..=steps {
        let t = k as f64 * cfg.period;
        for c in &constraints {
            let h = barrier::eval_h_robust(c, &x.q)?;
            min_h = min_h.min(h);
            if h < 0.0 {
                violations += 1;
            }
        }
        if k == steps {
            break;
        }
        let mut a = DMatrix::zeros(2, 1);
        let mut b = DVector::zeros(2);
        for (r, c) in constraints.iter().enumerate() {
            let hs = barrier::barrier_halfspace(&plant, c, &cfg.alpha1, &cfg.alpha2, cfg.nu_hat, &x)?;
            a[(r, 0)] = hs.row[0];
            b[r] = hs.rhs;
        }
        let u_nom = DVector::from_element(1, nominal(cfg, t, &x));
        let out = filter_control(&u_nom, &a, &b, &lb, &ub, InfeasiblePolicy::Relax)?;
        if out.relaxed {
            relaxed += 1;
        }
        let d = rng.gen_range(-cfg.disturbance_bound..=cfg.disturbance_bound);
        // Exact zero-order-hold update of the double integrator.
        let acc = out.u[0] + d;
        let (p, v) = (x.q[0], x.qd[0]);
        x = PlantState::scalar(p + v * cfg.period + 0.5 * acc * cfg.period * cfg.period, v + acc * cfg.period);
    }
    Ok(BenchmarkRun {
        x0: initial.q[0],
        v0: initial.qd[0],
        samples: steps + 1,
        min_h_robust: min_h,
        violations,
        relaxed,
    })
}

/// `cfg.runs` runs from random admissible initial states.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let runs = (0..cfg.runs)
        .map(|_| {
            let x0 = cfg.sample_state(&mut rng);
            run_once(cfg, x0, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport { runs })
}

/// Sampled-data margin constants of the benchmark over its admissible set.
pub fn benchmark_margin(cfg: &BenchmarkConfig, options: NuOptions) -> Result<MarginEstimate> {
    let plant = SecondOrderPlant::double_integrator(1)?;
    let constraints = cfg.constraints()?;
    let options = NuOptions {
        disturbance_bound: cfg.disturbance_bound,
        ..options
    };
    barrier::estimate_nu(&plant, &constraints, &cfg.alpha1, &cfg.alpha2, |rng| cfg.sample_state(rng), cfg.u_limit, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissible_interval_matches_barriers() {
        let cfg = BenchmarkConfig::standard(ExtendedClassK::Linear { gain: 1.0 });
        let (lo, hi) = cfg.admissible_velocity(2.5).unwrap();
        assert!((lo - (-1.45 + 0.1)).abs() < 1e-15);
        assert!((hi - (1.45 - 0.1)).abs() < 1e-15);
        assert!(cfg.admissible_velocity(1.01).is_none());
    }

    #[test]
    fn short_benchmark_stays_invariant() {
        let mut cfg = BenchmarkConfig::standard(ExtendedClassK::Linear { gain: 1.0 });
        cfg.runs = 5;
        cfg.horizon = 3.0;
        let report = run_benchmark(&cfg).unwrap();
        assert_eq!(report.violations(), 0);
        assert!(report.min_h_robust() >= 0.0);
    }
}
