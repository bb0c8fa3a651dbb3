//! Robust zeroing barrier functions for position constraints on
//! second-order (mechanical) plants.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

const FD_STEP: f64 = 1e-6;
const FD_HESSIAN_STEP: f64 = 1e-4;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied class-K function together with its derivative.
#[derive(Clone)]
pub struct CustomClassK {
    pub name: String,
    pub value: ScalarFn,
    pub derivative: ScalarFn,
}

impl fmt::Debug for CustomClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomClassK").field("name", &self.name).finish()
    }
}

/// Strictly increasing scalar function through the origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtendedClassK {
    /// `gain * s`
    Linear { gain: f64 },
    /// `gain * s^3`
    Cubic { gain: f64 },
    /// `gain * atan(s)`
    Arctan { gain: f64 },
    #[serde(skip)]
    Custom(CustomClassK),
}

impl ExtendedClassK {
    pub fn linear(gain: f64) -> Result<Self> {
        Self::Linear { gain }.validated()
    }

    pub fn cubic(gain: f64) -> Result<Self> {
        Self::Cubic { gain }.validated()
    }

    pub fn arctan(gain: f64) -> Result<Self> {
        Self::Arctan { gain }.validated()
    }

    pub fn custom<V, D>(name: impl Into<String>, value: V, derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom(CustomClassK {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        })
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear { gain } | Self::Cubic { gain } | Self::Arctan { gain } => {
                if !(gain.is_finite() && *gain > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "class-K gain must be positive and finite, got {gain}"
                    )));
                }
                Ok(())
            }
            Self::Custom(c) => {
                let at_zero = (c.value)(0.0);
                if at_zero != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "custom class-K `{}` is {at_zero} at zero",
                        c.name
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, s: f64) -> f64 {
        match self {
            Self::Linear { gain } => gain * s,
            Self::Cubic { gain } => gain * s * s * s,
            Self::Arctan { gain } => gain * s.atan(),
            Self::Custom(c) => (c.value)(s),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            Self::Linear { gain } => *gain,
            Self::Cubic { gain } => 3.0 * gain * s * s,
            Self::Arctan { gain } => gain / (1.0 + s * s),
            Self::Custom(c) => (c.derivative)(s),
        }
    }
}

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Scalar constraint `h(q) >= 0` on the configuration with robustness
/// margins `delta` (position) and `beta` (velocity).
#[derive(Clone)]
pub struct PositionConstraint {
    dim: usize,
    h: ValueFn,
    grad: Option<GradientFn>,
    hess: Option<HessianFn>,
    delta: f64,
    beta: f64,
}

impl fmt::Debug for PositionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PositionConstraint")
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.grad.is_some())
            .field("analytic_hessian", &self.hess.is_some())
            .field("delta", &self.delta)
            .field("beta", &self.beta)
            .finish()
    }
}

fn check_margins(delta: f64, beta: f64) -> Result<()> {
    if !(delta.is_finite() && delta >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margins must be finite and nonnegative (delta={delta}, beta={beta})"
        )));
    }
    Ok(())
}

impl PositionConstraint {
    /// Constraint from a value function only; derivatives fall back to
    /// central differences.
    pub fn new<F>(dim: usize, h: F, delta: f64, beta: f64) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        check_margins(delta, beta)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("constraint dimension is zero".into()));
        }
        Ok(Self {
            dim,
            h: Arc::new(h),
            grad: None,
            hess: None,
            delta,
            beta,
        })
    }

    pub fn with_gradient<F>(mut self, grad: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(hess));
        self
    }

    /// `h(q) = q[index] - bound`
    pub fn lower_bound(dim: usize, index: usize, bound: f64, delta: f64, beta: f64) -> Result<Self> {
        Self::coordinate(dim, index, 1.0, -bound, delta, beta)
    }

    /// `h(q) = bound - q[index]`
    pub fn upper_bound(dim: usize, index: usize, bound: f64, delta: f64, beta: f64) -> Result<Self> {
        Self::coordinate(dim, index, -1.0, bound, delta, beta)
    }

    fn coordinate(dim: usize, index: usize, sign: f64, offset: f64, delta: f64, beta: f64) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "coordinate index {index} out of range for dimension {dim}"
            )));
        }
        let c = Self::new(dim, move |q| sign * q[index] + offset, delta, beta)?
            .with_gradient(move |_| {
                let mut g = DVector::zeros(dim);
                g[index] = sign;
                g
            })
            .with_hessian(move |_| DMatrix::zeros(dim, dim));
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn value(&self, q: &DVector<f64>) -> Result<f64> {
        check_dim("constraint configuration", self.dim, q.len())?;
        Ok((self.h)(q))
    }

    pub fn gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("constraint configuration", self.dim, q.len())?;
        if let Some(g) = &self.grad {
            return Ok(g(q));
        }
        let mut g = DVector::zeros(self.dim);
        let mut qp = q.clone();
        for j in 0..self.dim {
            qp[j] = q[j] + FD_STEP;
            let hp = (self.h)(&qp);
            qp[j] = q[j] - FD_STEP;
            let hm = (self.h)(&qp);
            qp[j] = q[j];
            g[j] = (hp - hm) / (2.0 * FD_STEP);
        }
        Ok(g)
    }

    pub fn hessian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("constraint configuration", self.dim, q.len())?;
        if let Some(h) = &self.hess {
            return Ok(h(q));
        }
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        if let Some(g) = &self.grad {
            let mut qp = q.clone();
            for j in 0..n {
                qp[j] = q[j] + FD_STEP;
                let gp = g(&qp);
                qp[j] = q[j] - FD_STEP;
                let gm = g(&qp);
                qp[j] = q[j];
                out.set_column(j, &((gp - gm) / (2.0 * FD_STEP)));
            }
            return Ok((&out + out.transpose()) * 0.5);
        }
        let s = FD_HESSIAN_STEP;
        let h = |v: &DVector<f64>| (self.h)(v);
        let h0 = h(q);
        for i in 0..n {
            for j in i..n {
                let value = if i == j {
                    let mut a = q.clone();
                    a[i] += s;
                    let mut b = q.clone();
                    b[i] -= s;
                    (h(&a) - 2.0 * h0 + h(&b)) / (s * s)
                } else {
                    let mut pp = q.clone();
                    pp[i] += s;
                    pp[j] += s;
                    let mut pm = q.clone();
                    pm[i] += s;
                    pm[j] -= s;
                    let mut mp = q.clone();
                    mp[i] -= s;
                    mp[j] += s;
                    let mut mm = q.clone();
                    mm[i] -= s;
                    mm[j] -= s;
                    (h(&pp) - h(&pm) - h(&mp) + h(&mm)) / (4.0 * s * s)
                };
                out[(i, j)] = value;
                out[(j, i)] = value;
            }
        }
        Ok(out)
    }
}

/// State `(q, qdot)` of a second-order plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl PlantState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn scalar(q: f64, qd: f64) -> Self {
        Self {
            q: DVector::from_element(1, q),
            qd: DVector::from_element(1, qd),
        }
    }
}

type DriftFn = Arc<dyn Fn(&PlantState) -> DVector<f64> + Send + Sync>;
type InputFn = Arc<dyn Fn(&PlantState) -> DMatrix<f64> + Send + Sync>;
type DisturbanceFn = Arc<dyn Fn(f64, &PlantState) -> DVector<f64> + Send + Sync>;

/// Acceleration-level control-affine plant `qddot = F(x) + G(x) u + d(t, x)`.
#[derive(Clone)]
pub struct SecondOrderPlant {
    dim_q: usize,
    dim_u: usize,
    drift: DriftFn,
    input: InputFn,
    disturbance: Option<DisturbanceFn>,
}

impl fmt::Debug for SecondOrderPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondOrderPlant")
            .field("dim_q", &self.dim_q)
            .field("dim_u", &self.dim_u)
            .field("disturbed", &self.disturbance.is_some())
            .finish()
    }
}

impl SecondOrderPlant {
    pub fn new<F, G>(dim_q: usize, dim_u: usize, drift: F, input: G) -> Result<Self>
    where
        F: Fn(&PlantState) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&PlantState) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim_q == 0 || dim_u == 0 {
            return Err(Error::InvalidArgument("plant dimensions must be positive".into()));
        }
        Ok(Self {
            dim_q,
            dim_u,
            drift: Arc::new(drift),
            input: Arc::new(input),
            disturbance: None,
        })
    }

    /// Unit-mass double integrator `qddot = u` in `dim` axes.
    pub fn double_integrator(dim: usize) -> Result<Self> {
        Self::new(
            dim,
            dim,
            move |_| DVector::zeros(dim),
            move |_| DMatrix::identity(dim, dim),
        )
    }

    pub fn with_disturbance<D>(mut self, d: D) -> Self
    where
        D: Fn(f64, &PlantState) -> DVector<f64> + Send + Sync + 'static,
    {
        self.disturbance = Some(Arc::new(d));
        self
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn dim_u(&self) -> usize {
        self.dim_u
    }

    pub fn drift(&self, x: &PlantState) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let f = (self.drift)(x);
        check_dim("plant drift", self.dim_q, f.len())?;
        check_finite("plant drift", f.iter())?;
        Ok(f)
    }

    pub fn input_matrix(&self, x: &PlantState) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let g = (self.input)(x);
        check_dim("plant input rows", self.dim_q, g.nrows())?;
        check_dim("plant input columns", self.dim_u, g.ncols())?;
        check_finite("plant input matrix", g.iter())?;
        Ok(g)
    }

    pub fn disturbance(&self, t: f64, x: &PlantState) -> DVector<f64> {
        match &self.disturbance {
            Some(d) => d(t, x),
            None => DVector::zeros(self.dim_q),
        }
    }

    /// Full acceleration under a held input.
    pub fn acceleration(&self, t: f64, x: &PlantState, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("plant input", self.dim_u, u.len())?;
        Ok(self.drift(x)? + self.input_matrix(x)? * u + self.disturbance(t, x))
    }

    fn check_state(&self, x: &PlantState) -> Result<()> {
        check_dim("plant configuration", self.dim_q, x.q.len())?;
        check_dim("plant velocity", self.dim_q, x.qd.len())
    }
}

/// Robust constraint value, its rate, and the robust barrier value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierEvaluation {
    pub h_rob: f64,
    pub hdot: f64,
    pub b_rob: f64,
}

/// Half-space `row . u >= rhs` of admissible inputs for one barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub row: DVector<f64>,
    pub rhs: f64,
    pub barrier: BarrierEvaluation,
}

/// `h(q) - delta`
pub fn eval_h_robust(c: &PositionConstraint, q: &DVector<f64>) -> Result<f64> {
    Ok(c.value(q)? - c.delta)
}

/// Evaluates `B = grad_h . qdot + alpha1(h - delta) - beta`.
pub fn eval_barrier(c: &PositionConstraint, alpha1: &ExtendedClassK, x: &PlantState) -> Result<BarrierEvaluation> {
    check_dim("barrier velocity", c.dim, x.qd.len())?;
    let h_rob = eval_h_robust(c, &x.q)?;
    let hdot = c.gradient(&x.q)?.dot(&x.qd);
    let b_rob = hdot + alpha1.evaluate(h_rob) - c.beta;
    Ok(BarrierEvaluation { h_rob, hdot, b_rob })
}

/// Admissible-input half-space `Lg B u >= nu_hat - (Lf B + alpha2(B))`.
pub fn barrier_halfspace(
    plant: &SecondOrderPlant,
    c: &PositionConstraint,
    alpha1: &ExtendedClassK,
    alpha2: &ExtendedClassK,
    nu_hat: f64,
    x: &PlantState,
) -> Result<HalfSpace> {
    if !(nu_hat.is_finite() && nu_hat >= 0.0) {
        return Err(Error::InvalidArgument(format!("nu_hat must be nonnegative, got {nu_hat}")));
    }
    check_dim("constraint vs plant", plant.dim_q, c.dim)?;
    let barrier = eval_barrier(c, alpha1, x)?;
    let grad = c.gradient(&x.q)?;
    let hess = c.hessian(&x.q)?;
    let drift = plant.drift(x)?;
    let input = plant.input_matrix(x)?;
    let lf = lie_drift(&grad, &hess, &drift, alpha1, &barrier, x);
    let row = input.tr_mul(&grad);
    let rhs = nu_hat - (lf + alpha2.evaluate(barrier.b_rob));
    Ok(HalfSpace { row, rhs, barrier })
}

fn lie_drift(
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    drift: &DVector<f64>,
    alpha1: &ExtendedClassK,
    barrier: &BarrierEvaluation,
    x: &PlantState,
) -> f64 {
    x.qd.dot(&(hess * &x.qd)) + grad.dot(drift) + alpha1.derivative(barrier.h_rob) * barrier.hdot
}

/// One sample of the induced velocity bounds for a scalar configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub q: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

/// Velocity interval on which both barriers are nonnegative, for each
/// configuration in `q_grid`.
pub fn velocity_envelope(
    c_min: &PositionConstraint,
    c_max: &PositionConstraint,
    alpha1: &ExtendedClassK,
    q_grid: &[f64],
) -> Result<Vec<EnvelopePoint>> {
    check_dim("envelope constraint", 1, c_min.dim)?;
    check_dim("envelope constraint", 1, c_max.dim)?;
    let mut out = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let qv = DVector::from_element(1, q);
        let mut v_lo = f64::NEG_INFINITY;
        let mut v_hi = f64::INFINITY;
        for c in [c_min, c_max] {
            let g = c.gradient(&qv)?[0];
            let level = c.beta - alpha1.evaluate(eval_h_robust(c, &qv)?);
            if g > 0.0 {
                v_lo = v_lo.max(level / g);
            } else if g < 0.0 {
                v_hi = v_hi.min(level / g);
            } else if level > 0.0 {
                v_lo = f64::INFINITY;
            }
        }
        if v_lo > v_hi {
            return Err(Error::InvalidArgument(format!(
                "empty admissible velocity interval at q = {q}: [{v_lo}, {v_hi}]"
            )));
        }
        out.push(EnvelopePoint { q, v_lo, v_hi });
    }
    Ok(out)
}

/// Lipschitz and bound constants behind the sampled-data margin
/// `nu(T) = (a / b) (exp(b T) - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub a_coef: f64,
    pub b_coef: f64,
}

impl MarginEstimate {
    pub fn from_constants(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> Result<Self> {
        for (name, v) in [("c1", c1), ("c2", c2), ("c3", c3), ("c4", c4), ("c5", c5)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(Self {
            c1,
            c2,
            c3,
            c4,
            c5,
            a_coef: (c1 + c2 + c3 * c4) * c5,
            b_coef: c1 + c2 * c4,
        })
    }

    /// Margin for sampling period `t`.
    pub fn nu(&self, t: f64) -> f64 {
        nu_of_period(self.a_coef, self.b_coef, t)
    }
}

/// `(a / b) (exp(b t) - 1)`, with the `b -> 0` limit `a t`.
pub fn nu_of_period(a_coef: f64, b_coef: f64, t: f64) -> f64 {
    if b_coef == 0.0 {
        a_coef * t
    } else {
        a_coef / b_coef * (b_coef * t).exp_m1()
    }
}

/// Sampling options for [`estimate_nu`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuOptions {
    pub pairs: usize,
    pub rel_step: f64,
    pub seed: u64,
    /// Bound on the disturbance acceleration, folded into `c5`.
    pub disturbance_bound: f64,
}

impl Default for NuOptions {
    fn default() -> Self {
        Self {
            pairs: 2000,
            rel_step: 1e-5,
            seed: 0,
            disturbance_bound: 0.0,
        }
    }
}

/// Randomized estimate of the margin constants over a sampled region.
///
/// The constants are maxima of finite-difference Lipschitz quotients, so the
/// result is an estimate rather than a certificate.
pub fn estimate_nu<S>(
    plant: &SecondOrderPlant,
    constraints: &[PositionConstraint],
    alpha1: &ExtendedClassK,
    alpha2: &ExtendedClassK,
    mut sampler: S,
    u_bound: f64,
    options: NuOptions,
) -> Result<MarginEstimate>
where
    S: FnMut(&mut ChaCha8Rng) -> PlantState,
{
    if constraints.is_empty() {
        return Err(Error::InvalidArgument("no constraints to estimate".into()));
    }
    if options.pairs == 0 || !(options.rel_step > 0.0) {
        return Err(Error::InvalidArgument("need at least one pair and a positive step".into()));
    }
    if !(u_bound.is_finite() && u_bound >= 0.0) {
        return Err(Error::InvalidArgument(format!("input bound must be nonnegative, got {u_bound}")));
    }
    let p = plant.dim_q;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (mut c1, mut c2, mut c3, mut c5) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut first: Option<PlantState> = None;
    let mut spread = false;

    for _ in 0..options.pairs {
        let x = sampler(&mut rng);
        check_dim("sampled configuration", p, x.q.len())?;
        check_dim("sampled velocity", p, x.qd.len())?;
        match &first {
            None => first = Some(x.clone()),
            Some(f) => spread |= *f != x,
        }
        let scale = options.rel_step * (1.0 + x.q.norm().max(x.qd.norm()));
        let mut dir: Vec<f64> = (0..2 * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|v| *v *= scale / norm);
        let y = PlantState::new(
            &x.q + DVector::from_column_slice(&dir[..p]),
            &x.qd + DVector::from_column_slice(&dir[p..]),
        );
        let dist = DVector::from_vec(dir).norm();

        for c in constraints {
            let (lf_x, a2_x, lg_x) = barrier_terms(plant, c, alpha1, alpha2, &x)?;
            let (lf_y, a2_y, lg_y) = barrier_terms(plant, c, alpha1, alpha2, &y)?;
            c1 = c1.max((lf_x - lf_y).abs() / dist);
            c2 = c2.max((a2_x - a2_y).abs() / dist);
            c3 = c3.max((lg_x - lg_y).norm() / dist);
        }

        let f = plant.drift(&x)?;
        let g = plant.input_matrix(&x)?;
        let accel = f.norm() + spectral_norm(&g) * u_bound + options.disturbance_bound;
        c5 = c5.max((x.qd.norm_squared() + accel * accel).sqrt());
    }
    if !spread {
        return Err(Error::InvalidArgument("degenerate sampling region: all samples identical".into()));
    }
    MarginEstimate::from_constants(c1, c2, c3, u_bound, c5)
}

fn barrier_terms(
    plant: &SecondOrderPlant,
    c: &PositionConstraint,
    alpha1: &ExtendedClassK,
    alpha2: &ExtendedClassK,
    x: &PlantState,
) -> Result<(f64, f64, DVector<f64>)> {
    let barrier = eval_barrier(c, alpha1, x)?;
    let grad = c.gradient(&x.q)?;
    let hess = c.hessian(&x.q)?;
    let lf = lie_drift(&grad, &hess, &plant.drift(x)?, alpha1, &barrier, x);
    let lg = plant.input_matrix(x)?.tr_mul(&grad);
    Ok((lf, alpha2.evaluate(barrier.b_rob), lg))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}
