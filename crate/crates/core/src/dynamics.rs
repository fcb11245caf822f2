//! Forced mechanical equations, integrators and trajectory recording.

use std::sync::Arc;

use nalgebra::DVector;

use crate::completion::{BarrierFunction, Guards};
use crate::control::{ControlledSystem, Feedback};
use crate::error::{Error, Result};
use crate::geometry::{MetricAt, MetricField, Point, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct MechState {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl MechState {
    pub fn new(t: f64, q: &[f64], qd: &[f64]) -> Self {
        Self {
            t,
            q: DVector::from_column_slice(q),
            qd: DVector::from_column_slice(qd),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `(q, q̇)` stacked.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.qd[i - n] })
    }

    pub fn from_vector(t: f64, x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            t,
            q: x.rows(0, n).into_owned(),
            qd: x.rows(n, n).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// A second-order system `q̈ = a(q, q̇)` with bookkeeping hooks.
pub trait MechanicalFlow: Send + Sync {
    fn dim(&self) -> usize;

    fn control_count(&self) -> usize {
        0
    }

    /// Acceleration and the control applied to produce it.
    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;

    /// Region function; the state is feasible where it is negative.
    fn phi(&self, q: &Point) -> f64;

    /// `(E, E_{L_f})`.
    fn energies(&self, q: &Point, qd: &DVector<f64>) -> Result<(f64, f64)>;
}

/// `q̈^k = −Γ^k_{ij}q̇^iq̇^j − g^{ki}∂_iV + u^a Y^k_a`.
pub fn forced_rhs(
    system: &ControlledSystem,
    feedback: Option<&dyn Feedback>,
    q: &Point,
    qd: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    system.ensure_feasible(q)?;
    let at = MetricAt::new(system.metric.as_ref(), q)?;
    let mut qdd = -at.gamma.contract(qd) - &at.g_inv * system.potential.gradient(q);
    let u = match feedback {
        Some(law) => {
            let u = law.evaluate(q, qd)?;
            qdd += system.controls.fields(q)? * &u;
            u
        }
        None => DVector::zeros(system.control_count()),
    };
    if qdd.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "acceleration at q = {:?}",
            q.as_slice()
        )));
    }
    Ok((qdd, u))
}

/// Free motion of `(g, V)`.
pub fn free_rhs(
    metric: &dyn MetricField,
    potential: &dyn ScalarField,
    q: &Point,
    qd: &DVector<f64>,
) -> Result<DVector<f64>> {
    let at = MetricAt::new(metric, q)?;
    Ok(-at.gamma.contract(qd) - at.g_inv * potential.gradient(q))
}

/// Euler–Lagrange equations of `𝐋 = ½g(q̇,q̇) + ½(df·q̇)² − V` solved for `q̈`.
///
/// With `W = g + ∇f∇fᵀ` this is
/// `W q̈ = −∂_kg_{ij}q̇^jq̇^k − (∂²_{jk}f q̇^jq̇^k)∂_if + ½∂_ig_{jk}q̇^jq̇^k − ∂_iV`;
/// no Christoffel symbols are formed.
pub fn covariant_rhs(
    metric: &dyn MetricField,
    potential: &dyn ScalarField,
    extra: &dyn ScalarField,
    q: &Point,
    qd: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = q.len();
    let df = extra.gradient(q);
    let w = metric.components(q) + &df * df.transpose();
    let partials = metric.partials(q);
    let hess_term = qd.dot(&(extra.hessian(q) * qd));
    let mut rhs = -(potential.gradient(q) + &df * hess_term);
    for k in 0..n {
        rhs -= &partials[k] * qd * qd[k];
    }
    for i in 0..n {
        rhs[i] += 0.5 * qd.dot(&(&partials[i] * qd));
    }
    let lu = w.clone().lu();
    let scale = w.amax().max(f64::MIN_POSITIVE);
    let sv = w.singular_values();
    if !(sv.min() > 1e-13 * scale) {
        return Err(Error::SingularHessian {
            q: q.as_slice().to_vec(),
        });
    }
    lu.solve(&rhs).ok_or_else(|| Error::SingularHessian {
        q: q.as_slice().to_vec(),
    })
}

/// A controlled system driven by a feedback law.
#[derive(Clone)]
pub struct ClosedLoop {
    pub system: Arc<ControlledSystem>,
    pub feedback: Arc<dyn Feedback>,
}

impl ClosedLoop {
    pub fn new(system: Arc<ControlledSystem>, feedback: Arc<dyn Feedback>) -> Result<Self> {
        if feedback.count() != system.control_count() {
            return Err(Error::DimensionMismatch {
                expected: system.control_count(),
                found: feedback.count(),
            });
        }
        Ok(Self { system, feedback })
    }
}

impl MechanicalFlow for ClosedLoop {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn control_count(&self) -> usize {
        self.system.control_count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        forced_rhs(&self.system, Some(self.feedback.as_ref()), q, qd)
    }

    fn phi(&self, q: &Point) -> f64 {
        self.system.barrier.phi(q)
    }

    fn energies(&self, q: &Point, qd: &DVector<f64>) -> Result<(f64, f64)> {
        self.system.energies(q, qd)
    }
}

/// Uncontrolled motion of `(metric, V)` restricted to a region.
#[derive(Clone)]
pub struct FreeFlow {
    pub metric: Arc<dyn MetricField>,
    pub potential: Arc<dyn ScalarField>,
    pub region: Arc<BarrierFunction>,
}

impl MechanicalFlow for FreeFlow {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.region.ensure(q)?;
        let qdd = free_rhs(self.metric.as_ref(), self.potential.as_ref(), q, qd)?;
        if qdd.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "acceleration at q = {:?}",
                q.as_slice()
            )));
        }
        Ok((qdd, DVector::zeros(0)))
    }

    fn phi(&self, q: &Point) -> f64 {
        self.region.phi(q)
    }

    fn energies(&self, q: &Point, qd: &DVector<f64>) -> Result<(f64, f64)> {
        let e = 0.5 * qd.dot(&(self.metric.components(q) * qd)) + self.potential.value(q);
        Ok((e, e))
    }
}

/// Free motion of `(g + df⊗df, V)` through [`covariant_rhs`].
#[derive(Clone)]
pub struct CovariantFlow {
    pub metric: Arc<dyn MetricField>,
    pub potential: Arc<dyn ScalarField>,
    pub barrier: Arc<BarrierFunction>,
}

impl MechanicalFlow for CovariantFlow {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.barrier.ensure(q)?;
        let qdd = covariant_rhs(
            self.metric.as_ref(),
            self.potential.as_ref(),
            self.barrier.f().as_ref(),
            q,
            qd,
        )?;
        Ok((qdd, DVector::zeros(0)))
    }

    fn phi(&self, q: &Point) -> f64 {
        self.barrier.phi(q)
    }

    fn energies(&self, q: &Point, qd: &DVector<f64>) -> Result<(f64, f64)> {
        let v = self.potential.value(q);
        let e = 0.5 * qd.dot(&(self.metric.components(q) * qd)) + v;
        let s = self.barrier.f().gradient(q).dot(qd);
        Ok((e, e + 0.5 * s * s))
    }
}

// ---------------------------------------------------------------------------
// Integration

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Rk4 { step: f64 },
    Dopri5 { rtol: f64, atol: f64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Rk4 { .. } => "rk4",
            Scheme::Dopri5 { .. } => "dopri5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub max_steps: usize,
    pub guards: Guards,
    /// When set, samples are recorded exactly at multiples of this interval.
    pub sample_dt: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Dopri5 {
                rtol: 1e-9,
                atol: 1e-12,
            },
            max_steps: 2_000_000,
            guards: Guards::default(),
            sample_dt: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.scheme {
            Scheme::Rk4 { step } => step > 0.0 && step.is_finite(),
            Scheme::Dopri5 { rtol, atol } => {
                rtol > 0.0 && atol >= 0.0 && rtol.is_finite() && atol.is_finite()
            }
        };
        if !ok || self.max_steps == 0 || self.sample_dt.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Invalid(format!(
                "invalid integrator configuration {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardKind {
    Position,
    Speed,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    HorizonReached,
    /// First guard crossing, located inside `bracket` by bisection on the step.
    Guard {
        kind: GuardKind,
        t: f64,
        bracket: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub u: DVector<f64>,
    pub energy: f64,
    pub energy_lf: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub status: Status,
    pub scheme: Scheme,
    pub steps: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectory has at least the initial sample")
    }

    /// `min(−φ)` over samples.
    pub fn min_margin(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| -s.phi)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest state difference between two trajectories sampled at the same times.
    pub fn max_deviation(&self, other: &Trajectory) -> Result<f64> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                found: other.samples.len(),
            });
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.samples.iter().zip(&other.samples) {
            if (a.t - b.t).abs() > 1e-12 * a.t.abs().max(1.0) {
                return Err(Error::Invalid(format!(
                    "sample times differ: {} vs {}",
                    a.t, b.t
                )));
            }
            worst = worst.max((&a.q - &b.q).amax()).max((&a.qd - &b.qd).amax());
        }
        Ok(worst)
    }
}

fn derivative(flow: &dyn MechanicalFlow, x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = flow.dim();
    let q = x.rows(0, n).into_owned();
    let qd = x.rows(n, n).into_owned();
    let (qdd, _) = flow.evaluate(&q, &qd)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&qd);
    out.rows_mut(n, n).copy_from(&qdd);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state derivative".into()));
    }
    Ok(out)
}

fn rk4_step(flow: &dyn MechanicalFlow, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = derivative(flow, x)?;
    let k2 = derivative(flow, &(x + &k1 * (0.5 * h)))?;
    let k3 = derivative(flow, &(x + &k2 * (0.5 * h)))?;
    let k4 = derivative(flow, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand–Prince 5(4) tableau; the flows are autonomous so the nodes are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct DopriStep {
    x: DVector<f64>,
    k7: DVector<f64>,
    err: DVector<f64>,
}

fn dopri_step(
    flow: &dyn MechanicalFlow,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
) -> Result<DopriStep> {
    let k2 = derivative(flow, &(x + k1 * (h * A21)))?;
    let k3 = derivative(flow, &(x + (k1 * A31 + &k2 * A32) * h))?;
    let k4 = derivative(flow, &(x + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
    let k5 = derivative(
        flow,
        &(x + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )?;
    let k6 = derivative(
        flow,
        &(x + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )?;
    let x_new = x + (k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
    let k7 = derivative(flow, &x_new)?;
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    Ok(DopriStep { x: x_new, k7, err })
}

fn error_norm(
    err: &DVector<f64>,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    rtol: f64,
    atol: f64,
) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(x0.iter().zip(x1.iter()))
        .map(|(&e, (&a, &b))| {
            if e == 0.0 {
                return 0.0;
            }
            let sc = (atol + rtol * a.abs().max(b.abs())).max(f64::MIN_POSITIVE);
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn guard_hit(flow: &dyn MechanicalFlow, guards: &Guards, x: &DVector<f64>) -> Option<GuardKind> {
    let n = flow.dim();
    let q = x.rows(0, n).into_owned();
    if q.norm() > guards.position {
        Some(GuardKind::Position)
    } else if x.rows(n, n).norm() > guards.speed {
        Some(GuardKind::Speed)
    } else if !(flow.phi(&q) < -guards.margin) {
        Some(GuardKind::Boundary)
    } else {
        None
    }
}

/// Errors raised when a stage is evaluated outside the domain of the equations.
fn leaves_domain(e: &Error) -> bool {
    matches!(
        e,
        Error::OutsideFeasibleRegion { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::DegenerateMetric { .. }
            | Error::SingularHessian { .. }
            | Error::NonFinite(_)
    )
}

fn make_sample(flow: &dyn MechanicalFlow, t: f64, x: &DVector<f64>) -> Result<Sample> {
    let s = MechState::from_vector(t, x);
    let (_, u) = flow.evaluate(&s.q, &s.qd)?;
    let (energy, energy_lf) = flow.energies(&s.q, &s.qd)?;
    let phi = flow.phi(&s.q);
    Ok(Sample {
        t,
        q: s.q,
        qd: s.qd,
        u,
        energy,
        energy_lf,
        phi,
    })
}

/// Single untested step of the configured scheme, used to locate guard crossings.
fn plain_step(
    flow: &dyn MechanicalFlow,
    scheme: Scheme,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    match scheme {
        Scheme::Rk4 { .. } => rk4_step(flow, x, h),
        Scheme::Dopri5 { .. } => {
            let k1 = derivative(flow, x)?;
            Ok(dopri_step(flow, x, &k1, h)?.x)
        }
    }
}

/// Bisects `[0, h]` for the first time a guard fires; returns `(t_lo, t_hi)` offsets.
fn locate_guard(
    flow: &dyn MechanicalFlow,
    cfg: &IntegratorConfig,
    x: &DVector<f64>,
    h: f64,
) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..60 {
        if hi - lo <= 1e-12 * h {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match plain_step(flow, cfg.scheme, x, mid) {
            Ok(y) if guard_hit(flow, &cfg.guards, &y).is_none() => lo = mid,
            _ => hi = mid,
        }
    }
    (lo, hi)
}

/// Integrates `flow` from `x0` over `[x0.t, x0.t + horizon]`.
///
/// Guard crossings end the run with [`Status::Guard`]; all recorded samples
/// satisfy the guards.
pub fn integrate(
    flow: &dyn MechanicalFlow,
    x0: &MechState,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.dim() != flow.dim() {
        return Err(Error::DimensionMismatch {
            expected: flow.dim(),
            found: x0.dim(),
        });
    }
    if !x0.is_finite() {
        return Err(Error::InfeasibleInitialState(
            "non-finite initial state".into(),
        ));
    }
    let mut x = x0.to_vector();
    if let Some(kind) = guard_hit(flow, &cfg.guards, &x) {
        return Err(Error::InfeasibleInitialState(format!(
            "{kind:?} guard active at q = {:?}",
            x0.q.as_slice()
        )));
    }
    let first =
        make_sample(flow, x0.t, &x).map_err(|e| Error::InfeasibleInitialState(e.to_string()))?;
    let t_end = x0.t + horizon;
    let mut t = x0.t;
    let mut samples = vec![first];
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut next_sample = cfg.sample_dt.map(|d| x0.t + d);
    let mut sample_index = 1u64;

    let finish = |samples, status, steps, rejected| Trajectory {
        samples,
        status,
        scheme: cfg.scheme,
        steps,
        rejected,
    };

    let mut k1 = derivative(flow, &x)?;
    let mut h = match cfg.scheme {
        Scheme::Rk4 { step } => step,
        Scheme::Dopri5 { rtol, atol } => initial_step(flow, &x, &k1, rtol, atol, horizon),
    };

    while t < t_end && (t_end - t) > 1e-14 * t_end.abs().max(1.0) {
        if steps + rejected >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                t,
                steps: steps + rejected,
            });
        }
        let mut h_try = h.min(t_end - t);
        let mut lands_on_sample = false;
        if let Some(ts) = next_sample {
            if t + h_try >= ts - 1e-12 * ts.abs().max(1.0) {
                h_try = ts - t;
                lands_on_sample = true;
            }
        }
        if t + h_try >= t_end {
            h_try = t_end - t;
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h_try < h_min {
            return Err(Error::StepSizeUnderflow { t });
        }

        let (x_new, accepted, h_next, k_next) = match cfg.scheme {
            Scheme::Rk4 { step } => match rk4_step(flow, &x, h_try) {
                Ok(y) => (y, true, step, None),
                Err(e) if leaves_domain(&e) => {
                    let (lo, hi) = locate_guard(flow, cfg, &x, h_try);
                    let status = Status::Guard {
                        kind: GuardKind::Boundary,
                        t: t + 0.5 * (lo + hi),
                        bracket: (t + lo, t + hi),
                    };
                    return Ok(finish(samples, status, steps + 1, rejected));
                }
                Err(e) => return Err(e),
            },
            Scheme::Dopri5 { rtol, atol } => match dopri_step(flow, &x, &k1, h_try) {
                Ok(st) => {
                    let e = error_norm(&st.err, &x, &st.x, rtol, atol);
                    if e <= 1.0 {
                        let fac = if e == 0.0 {
                            5.0
                        } else {
                            (0.9 * e.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        let grow = if lands_on_sample {
                            h.max(h_try * fac)
                        } else {
                            h_try * fac
                        };
                        (st.x, true, grow, Some(st.k7))
                    } else {
                        let fac = (0.9 * e.powf(-0.2)).clamp(0.1, 1.0);
                        (x.clone(), false, h_try * fac, None)
                    }
                }
                Err(_) => (x.clone(), false, h_try * 0.25, None),
            },
        };
        h = h_next;
        if !accepted {
            rejected += 1;
            if h < h_min {
                return Err(Error::StepSizeUnderflow { t });
            }
            continue;
        }

        if let Some(kind) = guard_hit(flow, &cfg.guards, &x_new) {
            let (lo, hi) = locate_guard(flow, cfg, &x, h_try);
            let status = Status::Guard {
                kind,
                t: t + 0.5 * (lo + hi),
                bracket: (t + lo, t + hi),
            };
            if lo > 0.0 {
                if let Ok(y) = plain_step(flow, cfg.scheme, &x, lo) {
                    if let Ok(s) = make_sample(flow, t + lo, &y) {
                        samples.push(s);
                    }
                }
            }
            return Ok(finish(samples, status, steps + 1, rejected));
        }

        steps += 1;
        t = if lands_on_sample {
            next_sample.unwrap_or(t + h_try)
        } else {
            t + h_try
        };
        if (t_end - t).abs() <= 1e-14 * t_end.abs().max(1.0) {
            t = t_end;
        }
        x = x_new;
        k1 = match k_next {
            Some(k) => k,
            None => derivative(flow, &x)?,
        };
        let record = match cfg.sample_dt {
            None => true,
            Some(d) => {
                if lands_on_sample {
                    sample_index += 1;
                    next_sample = Some(x0.t + d * sample_index as f64);
                }
                lands_on_sample || t >= t_end
            }
        };
        if record {
            samples.push(make_sample(flow, t, &x)?);
        }
    }
    Ok(finish(samples, Status::HorizonReached, steps, rejected))
}

/// Starting step size following Hairer, Nørsett & Wanner.
fn initial_step(
    flow: &dyn MechanicalFlow,
    x: &DVector<f64>,
    f0: &DVector<f64>,
    rtol: f64,
    atol: f64,
    span: f64,
) -> f64 {
    let scale = |v: &DVector<f64>| -> f64 {
        let n = v.len() as f64;
        (v.iter()
            .zip(x.iter())
            .map(|(&a, &b)| (a / (atol + rtol * b.abs()).max(f64::MIN_POSITIVE)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scale(x);
    let d1 = scale(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let d2 = match derivative(flow, &(x + f0 * h0)) {
        Ok(f1) => scale(&(f1 - f0)) / h0,
        Err(_) => return h0 * 0.01,
    };
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Energies of the closed loop at a state.
pub fn energies(system: &ControlledSystem, state: &MechState) -> Result<(f64, f64)> {
    system.energies(&state.q, &state.qd)
}

/// First-order vector field `(q̇, q̈)` at the stacked state `x`.
pub fn state_derivative(flow: &dyn MechanicalFlow, x: &DVector<f64>) -> Result<DVector<f64>> {
    derivative(flow, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{BarrierLaw, ZeroLaw};
    use crate::geometry::{
        AnalyticMetric, AnalyticScalar, ConstantScalar, CoordinateFields, Euclidean,
    };

    fn p(x: f64, y: f64) -> Point {
        Point::from_vec(vec![x, y])
    }

    fn landing() -> Arc<ControlledSystem> {
        let region = Arc::new(AnalyticScalar::new(2, |q| -q[1]));
        let f = Arc::new(AnalyticScalar::new(2, |q| q[1].ln()));
        Arc::new(
            ControlledSystem::new(
                Arc::new(Euclidean { dim: 2 }),
                Arc::new(AnalyticScalar::new(2, |q| q[1])),
                Arc::new(CoordinateFields {
                    dim: 2,
                    axes: vec![1],
                }),
                Arc::new(BarrierFunction::new(region, f)),
            )
            .unwrap(),
        )
    }

    #[test]
    fn forced_rhs_examples() {
        let free = ControlledSystem::new(
            Arc::new(Euclidean { dim: 2 }),
            Arc::new(ConstantScalar { dim: 2, value: 0.0 }),
            Arc::new(CoordinateFields::full(2)),
            Arc::new(BarrierFunction::unconstrained(2)),
        )
        .unwrap();
        let (a, _) = forced_rhs(
            &free,
            None,
            &p(1.0, 2.0),
            &DVector::from_vec(vec![3.0, -1.0]),
        )
        .unwrap();
        assert_eq!(a, DVector::zeros(2));

        let poi = AnalyticMetric::conformal(2, |q| q[1].powi(-2));
        let a = free_rhs(
            &poi,
            &ConstantScalar { dim: 2, value: 0.0 },
            &p(0.0, 1.0),
            &DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        assert!(a[0].abs() < 1e-14 && (a[1] + 1.0).abs() < 1e-14);

        let sys = landing();
        let law = BarrierLaw::unchecked(sys.clone());
        let (a, u) = forced_rhs(&sys, Some(&law), &p(0.0, 1.0), &DVector::zeros(2)).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-15 && (a[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn covariant_route_matches_completed_metric() {
        let sys = landing();
        let target = sys.target_metric();
        for &(y, yd) in &[(1.0, 1.0), (0.3, -2.0), (4.0, 0.5)] {
            let q = p(0.1, y);
            let qd = DVector::from_vec(vec![0.4, yd]);
            let a = covariant_rhs(
                sys.metric.as_ref(),
                sys.potential.as_ref(),
                sys.barrier.f().as_ref(),
                &q,
                &qd,
            )
            .unwrap();
            let b = free_rhs(&target, sys.potential.as_ref(), &q, &qd).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
        let zero = ConstantScalar { dim: 2, value: 0.0 };
        let q = p(0.0, 1.0);
        let qd = DVector::from_vec(vec![1.0, 1.0]);
        let a = covariant_rhs(sys.metric.as_ref(), sys.potential.as_ref(), &zero, &q, &qd).unwrap();
        assert_eq!(a, DVector::from_vec(vec![0.0, -1.0]));
    }

    #[test]
    fn singular_lagrangian_hessian_is_reported() {
        let degenerate = AnalyticMetric::new(2, |_| {
            let one = crate::autodiff::HyperDual::constant(1.0);
            vec![one, one, one, one]
        });
        let zero = ConstantScalar { dim: 2, value: 0.0 };
        let err =
            covariant_rhs(&degenerate, &zero, &zero, &p(0.0, 0.0), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::SingularHessian { .. }));
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let sys = ControlledSystem::new(
            Arc::new(Euclidean { dim: 2 }),
            Arc::new(AnalyticScalar::new(2, |q| {
                (q[0] * q[0] + q[1] * q[1]) * 0.5
            })),
            Arc::new(CoordinateFields::full(2)),
            Arc::new(BarrierFunction::unconstrained(2)),
        )
        .unwrap();
        let flow = ClosedLoop::new(Arc::new(sys), Arc::new(ZeroLaw { count: 2 })).unwrap();
        let traj = integrate(
            &flow,
            &MechState::new(0.0, &[0.0, 0.0], &[0.0, 0.0]),
            5.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, Status::HorizonReached);
        assert!(traj
            .samples
            .iter()
            .all(|s| s.q.amax() == 0.0 && s.qd.amax() == 0.0));
    }

    #[test]
    fn harmonic_oscillator_accuracy_and_sampling() {
        let sys = ControlledSystem::new(
            Arc::new(Euclidean { dim: 1 }),
            Arc::new(AnalyticScalar::new(1, |q| q[0] * q[0] * 0.5)),
            Arc::new(CoordinateFields::full(1)),
            Arc::new(BarrierFunction::unconstrained(1)),
        )
        .unwrap();
        let flow = ClosedLoop::new(Arc::new(sys), Arc::new(ZeroLaw { count: 1 })).unwrap();
        let cfg = IntegratorConfig {
            sample_dt: Some(0.5),
            ..IntegratorConfig::default()
        };
        let traj = integrate(&flow, &MechState::new(0.0, &[1.0], &[0.0]), 10.0, &cfg).unwrap();
        assert_eq!(traj.samples.len(), 21);
        for (i, s) in traj.samples.iter().enumerate() {
            assert!((s.t - 0.5 * i as f64).abs() < 1e-12);
            assert!((s.q[0] - s.t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn guard_is_located_inside_step() {
        let sys = ControlledSystem::new(
            Arc::new(Euclidean { dim: 1 }),
            Arc::new(ConstantScalar { dim: 1, value: 0.0 }),
            Arc::new(CoordinateFields::full(1)),
            Arc::new(BarrierFunction::new(
                Arc::new(AnalyticScalar::new(1, |q| q[0] - 2.0)),
                Arc::new(ConstantScalar { dim: 1, value: 0.0 }),
            )),
        )
        .unwrap();
        let flow = ClosedLoop::new(Arc::new(sys), Arc::new(ZeroLaw { count: 1 })).unwrap();
        let cfg = IntegratorConfig {
            scheme: Scheme::Rk4 { step: 0.3 },
            ..IntegratorConfig::default()
        };
        let traj = integrate(&flow, &MechState::new(0.0, &[0.0], &[1.0]), 10.0, &cfg).unwrap();
        match traj.status {
            Status::Guard {
                kind: GuardKind::Boundary,
                t,
                bracket,
            } => {
                assert!((t - (2.0 - cfg.guards.margin)).abs() < 1e-9, "{t}");
                assert!(bracket.0 <= t && t <= bracket.1);
            }
            other => panic!("unexpected status {other:?}"),
        }
        assert!(traj.samples.iter().all(|s| s.phi < 0.0));
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let flow = ClosedLoop::new(landing(), Arc::new(ZeroLaw { count: 1 })).unwrap();
        let err = integrate(
            &flow,
            &MechState::new(0.0, &[0.0, -1.0], &[0.0, 0.0]),
            1.0,
            &IntegratorConfig::default(),
        );
        assert!(matches!(err, Err(Error::InfeasibleInitialState(_))));
    }
}
