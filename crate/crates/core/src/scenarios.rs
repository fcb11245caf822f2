//! Catalog of worked systems: metrics, potentials, barriers, closed-form
//! reference controls and initial data.
//!
//! The bouncing examples (half-plane, strip, square, disk interior) are
//! written as a Euclidean particle with full actuation whose shaped metric is
//! the conformal metric `h(q)·I`; the barrier function is constant, so the
//! feedback is pure metric shaping.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::HyperDual;
use crate::completion::BarrierFunction;
use crate::control::{
    BarrierLaw, ConstrainedClLaw, ControlledSystem, DissipationLaw, Feedback, ReferenceLaw,
    SampleBox, SumLaw,
};
use crate::dynamics::{ClosedLoop, CovariantFlow, FreeFlow, IntegratorConfig, MechState, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{
    AnalyticMetric, AnalyticScalar, ConstantScalar, CoordinateFields, Euclidean, FnFields,
    MetricField, Point, RaisedCoframe, ScalarField, Signature, VectorFieldSet,
};

/// Hypothesis-check points used when a synthesized law is built.
const SYNTHESIS_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    Landing,
    PoincareBounce,
    PoincareStrip,
    Square,
    DiskAvoid,
    DiskBounce,
    PendulumCartDown,
    PendulumCartUp,
    /// One-dimensional particle in `V = −½|x|^{2+2ε}`, optionally completed.
    EscapeTime,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 9] = [
        ScenarioId::Landing,
        ScenarioId::PoincareBounce,
        ScenarioId::PoincareStrip,
        ScenarioId::Square,
        ScenarioId::DiskAvoid,
        ScenarioId::DiskBounce,
        ScenarioId::PendulumCartDown,
        ScenarioId::PendulumCartUp,
        ScenarioId::EscapeTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Landing => "Landing",
            ScenarioId::PoincareBounce => "PoincareBounce",
            ScenarioId::PoincareStrip => "PoincareStrip",
            ScenarioId::Square => "Square",
            ScenarioId::DiskAvoid => "DiskAvoid",
            ScenarioId::DiskBounce => "DiskBounce",
            ScenarioId::PendulumCartDown => "PendulumCartDown",
            ScenarioId::PendulumCartUp => "PendulumCartUp",
            ScenarioId::EscapeTime => "EscapeTime",
        }
    }

    /// What the confinement margin measures.
    pub fn invariant(self) -> &'static str {
        match self {
            ScenarioId::Landing | ScenarioId::PoincareBounce => "y > 0",
            ScenarioId::PoincareStrip => "0 < y < 1",
            ScenarioId::Square => "0 < x < 1 and 0 < y < 1",
            ScenarioId::DiskAvoid => "x^2 + y^2 > 1",
            ScenarioId::DiskBounce => "x^2 + y^2 < 1",
            ScenarioId::PendulumCartDown => "|s| < 1",
            ScenarioId::PendulumCartUp => "|z| < r",
            ScenarioId::EscapeTime => "none",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown scenario `{s}`")))
    }
}

/// A tunable scalar with its admissible range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub min: f64,
    pub max: f64,
    /// Whether `min` itself is excluded.
    pub open_min: bool,
    pub meaning: &'static str,
}

impl ParamSpec {
    const fn new(
        name: &'static str,
        default: f64,
        min: f64,
        max: f64,
        open_min: bool,
        meaning: &'static str,
    ) -> Self {
        Self {
            name,
            default,
            min,
            max,
            open_min,
            meaning,
        }
    }

    fn check(&self, value: f64) -> Result<()> {
        let above = if self.open_min {
            value > self.min
        } else {
            value >= self.min
        };
        if value.is_finite() && above && value <= self.max {
            Ok(())
        } else {
            let lo = if self.open_min { "(" } else { "[" };
            Err(Error::ParameterOutOfRange {
                name: self.name.to_string(),
                value,
                reason: format!("admissible range is {lo}{}, {}]", self.min, self.max),
            })
        }
    }
}

const INF: f64 = f64::INFINITY;

const PENDULUM_COMMON: [ParamSpec; 6] = [
    ParamSpec::new("alpha", 1.0, 0.0, INF, true, "pendulum inertia"),
    ParamSpec::new("beta", 1.0, -INF, INF, false, "cart–pendulum coupling"),
    ParamSpec::new("gamma", 1.5, 0.0, INF, true, "cart inertia"),
    ParamSpec::new("D", -1.0, -INF, INF, false, "gravity term, V = −D cos φ"),
    ParamSpec::new("k_d", 0.0, 0.0, INF, false, "dissipation gain"),
    ParamSpec::new(
        "e_star",
        1.0,
        -INF,
        INF,
        false,
        "target energy of the storage dissipation",
    ),
];

/// Parameters of a scenario with their defaults and ranges.
pub fn param_specs(id: ScenarioId) -> Vec<ParamSpec> {
    match id {
        ScenarioId::Landing => vec![ParamSpec::new(
            "G",
            9.81,
            0.0,
            INF,
            false,
            "gravitational acceleration",
        )],
        ScenarioId::PoincareBounce | ScenarioId::PoincareStrip | ScenarioId::Square => {
            vec![ParamSpec::new("kappa", 1e4, 0.0, INF, true, "metric scale")]
        }
        ScenarioId::DiskAvoid => vec![ParamSpec::new(
            "gain",
            1.0 / 30f64.sqrt(),
            0.0,
            INF,
            false,
            "f = gain·ln(x² + y² − 1)",
        )],
        ScenarioId::DiskBounce => {
            vec![ParamSpec::new("kappa", 1e3, 1.0, INF, true, "metric scale")]
        }
        ScenarioId::PendulumCartDown => PENDULUM_COMMON.to_vec(),
        ScenarioId::PendulumCartUp => {
            let mut v = PENDULUM_COMMON.to_vec();
            v.extend([
                ParamSpec::new("kappa", 1.2, 0.0, INF, false, "controlled-Lagrangian gain"),
                ParamSpec::new(
                    "k_b",
                    0.1,
                    0.0,
                    INF,
                    false,
                    "barrier gain, f = k_b·asin(z/r)",
                ),
                ParamSpec::new("r", 1.0, 0.0, INF, true, "half width of the band |z| < r"),
            ]);
            v
        }
        ScenarioId::EscapeTime => vec![
            ParamSpec::new("eps", 1.0, 0.0, INF, true, "V = −½|x|^(2+2ε)"),
            ParamSpec::new(
                "completed",
                0.0,
                0.0,
                1.0,
                false,
                "1 adds the completing barrier f",
            ),
        ],
    }
}

/// Resolved parameter values in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(&'static str, f64)>,
}

impl Params {
    fn resolve(id: ScenarioId, overrides: &[(String, f64)]) -> Result<Self> {
        let specs = param_specs(id);
        let mut entries: Vec<(&'static str, f64)> =
            specs.iter().map(|s| (s.name, s.default)).collect();
        for (name, value) in overrides {
            let idx = specs
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| Error::UnknownParameter(format!("{name} (scenario {id})")))?;
            specs[idx].check(*value)?;
            entries[idx].1 = *value;
        }
        Ok(Self { entries })
    }

    /// Value of a declared parameter; panics on an undeclared name.
    pub fn get(&self, name: &str) -> f64 {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter `{name}` is not declared"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.entries.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseLaw {
    /// Barrier control computed in the open-loop metric `g`.
    Barrier,
    /// Metric shaping plus the barrier control of the shaped metric; equals
    /// [`BaseLaw::Barrier`] on unshaped systems.
    ConstrainedCl,
    /// The closed-form control of the scenario.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dissipation {
    None,
    Simple { gain: f64 },
    Storage { gain: f64, e_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackStack {
    pub base: BaseLaw,
    pub dissipation: Dissipation,
}

type Margin = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Scenario {
    pub id: ScenarioId,
    pub params: Params,
    pub system: Arc<ControlledSystem>,
    pub reference: Option<Arc<dyn Feedback>>,
    pub initial: MechState,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    /// Box for random states and hypothesis checks.
    pub sample: SampleBox,
    pub equilibrium_guess: Option<DVector<f64>>,
    pub default_stack: FeedbackStack,
    confinement: Margin,
    sample_filter: Arc<dyn Fn(&Point) -> bool + Send + Sync>,
    cart_bound: Option<Margin>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("id", &self.id)
            .field("params", &self.params)
            .field("initial", &self.initial)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

fn c(v: f64) -> HyperDual {
    HyperDual::constant(v)
}

fn euclidean_particle(
    dim: usize,
    potential: Arc<dyn ScalarField>,
    controls: Arc<dyn VectorFieldSet>,
    barrier: BarrierFunction,
) -> Result<ControlledSystem> {
    ControlledSystem::new(
        Arc::new(Euclidean { dim }),
        potential,
        controls,
        Arc::new(barrier),
    )
}

/// Fully actuated planar particle whose shaped metric is `h(q)·I`; the region is `h > 0`.
fn conformal_bounce<H>(h: H) -> Result<ControlledSystem>
where
    H: Fn(&[HyperDual]) -> HyperDual + Send + Sync + Clone + 'static,
{
    let hr = h.clone();
    let region = AnalyticScalar::new(2, move |q| -hr(q));
    let sys = euclidean_particle(
        2,
        Arc::new(ConstantScalar { dim: 2, value: 0.0 }),
        Arc::new(CoordinateFields::full(2)),
        BarrierFunction::new(
            Arc::new(region),
            Arc::new(ConstantScalar { dim: 2, value: 0.0 }),
        ),
    )?;
    sys.with_shaped(Arc::new(AnalyticMetric::conformal(2, h)))
}

fn pendulum_metric(alpha: f64, beta: f64, gamma: f64) -> AnalyticMetric {
    AnalyticMetric::new(2, move |q| {
        let cb = q[0].cos() * beta;
        vec![c(alpha), cb, cb, c(gamma)]
    })
}

fn pendulum_potential(d: f64) -> AnalyticScalar {
    AnalyticScalar::new(2, move |q| -(q[0].cos() * d))
}

fn box2(lower: [f64; 2], upper: [f64; 2], speed: f64) -> SampleBox {
    SampleBox {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        speed,
    }
}

fn stack(base: BaseLaw, k_d: f64) -> FeedbackStack {
    let dissipation = if k_d > 0.0 {
        Dissipation::Simple { gain: k_d }
    } else {
        Dissipation::None
    };
    FeedbackStack { base, dissipation }
}

/// Closed-form control of the upright pendulum on a cart: shaping part plus
/// the barrier part of `ḡ` through `Y = g_o⁻¹ ds`.
#[allow(clippy::too_many_arguments)]
pub fn pendulum_up_control(
    alpha: f64,
    beta: f64,
    gamma: f64,
    d: f64,
    kappa: f64,
    k_b: f64,
    r: f64,
    q: &Point,
    qd: &DVector<f64>,
) -> f64 {
    let (phi, s, phid, sd) = (q[0], q[1], qd[0], qd[1]);
    let (sn, cs) = phi.sin_cos();
    let det_o = alpha * gamma - beta * beta * cs * cs;
    let det_bar = alpha * gamma - (1.0 + kappa) * beta * beta * cs * cs;
    let delta = alpha - kappa * beta * beta * cs * cs / gamma;
    let shaping = kappa * beta * gamma * sn * (alpha * phid * phid + d * cs) / det_bar;
    let z = s + kappa * beta / gamma * sn;
    let zd = sd + kappa * beta / gamma * cs * phid;
    let w = r * r - z * z;
    let dphi_sq = k_b * k_b / w;
    let rho = delta * dphi_sq / det_bar;
    let bracket = beta / delta * sn * ((kappa + 1.0) * delta * phid * phid + d * cs)
        - kappa * beta / gamma * det_bar / delta * sn * phid * phid
        + det_bar / delta * z / w * zd * zd;
    let barrier = -rho / (1.0 + rho) * bracket * det_o / det_bar;
    shaping + barrier
}

/// Closed-form control of the hanging pendulum on a cart with `f = asin s`.
pub fn pendulum_down_control(
    alpha: f64,
    beta: f64,
    gamma: f64,
    d: f64,
    q: &Point,
    qd: &DVector<f64>,
) -> f64 {
    let (phi, s, phid, sd) = (q[0], q[1], qd[0], qd[1]);
    let (sn, cs) = phi.sin_cos();
    let det_o = alpha * gamma - beta * beta * cs * cs;
    let rho = alpha / (det_o * (1.0 - s * s));
    -rho / (1.0 + rho)
        * (beta / alpha * sn * (alpha * phid * phid + d * cs)
            + det_o / alpha * s / (1.0 - s * s) * sd * sd)
}

/// Closed-form control around the unit disk for `f = gain·ln(x² + y² − 1)`.
pub fn disk_avoid_control(gain: f64, q: &Point, qd: &DVector<f64>) -> f64 {
    let (x, y, xd, yd) = (q[0], q[1], qd[0], qd[1]);
    let w = gain * gain;
    let r2 = x * x + y * y;
    let m = r2 - 1.0;
    let n = 4.0 * x * y * xd * yd - y * y * xd * xd + x * x * xd * xd + xd * xd - x * x * yd * yd
        + y * y * yd * yd
        + yd * yd;
    4.0 * w * n / (m * (m * m + 4.0 * w * r2))
}

impl Scenario {
    /// Builds a scenario with parameter overrides applied.
    pub fn build(id: ScenarioId, overrides: &[(String, f64)]) -> Result<Self> {
        let params = Params::resolve(id, overrides)?;
        let p = |name: &str| params.get(name);
        let default_integrator = IntegratorConfig::default();
        let no_filter: Arc<dyn Fn(&Point) -> bool + Send + Sync> = Arc::new(|_| true);
        let mut cart_bound: Option<Margin> = None;
        let scenario = match id {
            ScenarioId::Landing => {
                let g = p("G");
                let system = euclidean_particle(
                    2,
                    Arc::new(AnalyticScalar::new(2, move |q| q[1] * g)),
                    Arc::new(CoordinateFields {
                        dim: 2,
                        axes: vec![1],
                    }),
                    BarrierFunction::new(
                        Arc::new(AnalyticScalar::new(2, |q| -q[1])),
                        Arc::new(AnalyticScalar::new(2, |q| q[1].ln())),
                    ),
                )?;
                let reference = ReferenceLaw::new(1, move |q, qd| {
                    let y = q[1];
                    DVector::from_element(1, (g * y + qd[1] * qd[1]) / (y * y * y + y))
                });
                // The height decays exponentially towards the wall, so the wall
                // margin is zero and the absolute tolerance vanishes. Past t ≈ 6
                // the height drops below 1e-10 and the closed-loop acceleration
                // is a difference of O(G) terms that f64 no longer resolves.
                let mut integrator = default_integrator;
                integrator.guards.margin = 0.0;
                integrator.scheme = Scheme::Dopri5 {
                    rtol: 1e-9,
                    atol: 1e-300,
                };
                integrator.max_steps = 200_000;
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[0.5, 0.5], &[0.5, 1.0]),
                    horizon: 6.0,
                    integrator,
                    sample: box2([-1.0, 0.05], [1.0, 3.0], 2.0),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::Barrier, 0.0),
                    confinement: Arc::new(|q| q[1]),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
            ScenarioId::PoincareBounce => {
                let kappa = p("kappa");
                let system =
                    conformal_bounce(move |q: &[HyperDual]| 1.0 - 2.0 / (q[1] * q[1] * kappa))?;
                let reference = ReferenceLaw::new(2, move |q, qd| {
                    let (y, xd, yd) = (q[1], qd[0], qd[1]);
                    let den = y * (kappa * y * y - 2.0);
                    DVector::from_vec(vec![-4.0 * xd * yd / den, 2.0 * (xd * xd - yd * yd) / den])
                });
                let floor = (2.0 / kappa).sqrt();
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[0.0, 1.0], &[1.0, -0.5]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([-1.0, 2.0 * floor], [1.0, 2.0], 1.0),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::ConstrainedCl, 0.0),
                    confinement: Arc::new(|q| q[1]),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
            ScenarioId::PoincareStrip => {
                let kappa = p("kappa");
                let system = conformal_bounce(move |q: &[HyperDual]| {
                    let y = q[1];
                    let ym = y - 1.0;
                    1.0 - 2.0 / (y * y * kappa) - 2.0 / (ym * ym * kappa)
                })?;
                let reference = ReferenceLaw::new(2, move |q, qd| {
                    let (y, xd, yd) = (q[1], qd[0], qd[1]);
                    let k = kappa;
                    let h = -2.0 / (k * y * y) - 2.0 / (k * (y - 1.0) * (y - 1.0)) + 1.0;
                    let u1 =
                        -4.0 * xd * yd * (1.0 / (k * y.powi(3)) + 1.0 / (k * (y - 1.0).powi(3)))
                            / h;
                    let num = 2.0
                        * (2.0 * k * y.powi(3) - 3.0 * k * y * y + 3.0 * k * y - k)
                        * (xd * xd - yd * yd);
                    let den = (y - 1.0)
                        * y
                        * (k * k * y.powi(4) - 2.0 * k * k * y.powi(3)
                            + (k * (k - 2.0) - 2.0 * k) * y * y
                            + 4.0 * k * y
                            - 2.0 * k);
                    DVector::from_vec(vec![u1, num / den])
                });
                let edge = 2.0 * (4.0 / kappa).sqrt().min(0.2);
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[0.0, 0.5], &[1.0, -0.5]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([-1.0, edge], [1.0, 1.0 - edge], 1.0),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::ConstrainedCl, 0.0),
                    confinement: Arc::new(|q| q[1].min(1.0 - q[1])),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
            ScenarioId::Square => {
                let kappa = p("kappa");
                let system = conformal_bounce(move |q: &[HyperDual]| {
                    let mut sum = c(0.0);
                    for &v in &q[..2] {
                        let vm = v - 1.0;
                        sum += 1.0 / (v * v) + 1.0 / (vm * vm);
                    }
                    1.0 - sum * (2.0 / kappa)
                })?;
                let edge = 2.0 * (8.0 / kappa).sqrt().min(0.2);
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: None,
                    initial: MechState::new(0.0, &[0.2, 0.5], &[0.5, -0.7]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([edge, edge], [1.0 - edge, 1.0 - edge], 1.0),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::ConstrainedCl, 0.0),
                    confinement: Arc::new(|q| q[0].min(1.0 - q[0]).min(q[1]).min(1.0 - q[1])),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
            ScenarioId::DiskAvoid => {
                let gain = p("gain");
                let system = euclidean_particle(
                    2,
                    Arc::new(ConstantScalar { dim: 2, value: 0.0 }),
                    Arc::new(FnFields::new(2, 1, |q| {
                        DMatrix::from_column_slice(2, 1, q.as_slice())
                    })),
                    BarrierFunction::new(
                        Arc::new(AnalyticScalar::new(2, |q| 1.0 - q[0] * q[0] - q[1] * q[1])),
                        Arc::new(AnalyticScalar::new(2, move |q| {
                            (q[0] * q[0] + q[1] * q[1] - 1.0).ln() * gain
                        })),
                    ),
                )?;
                let reference = ReferenceLaw::new(1, move |q, qd| {
                    DVector::from_element(1, disk_avoid_control(gain, q, qd))
                });
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[-2.0, 0.2], &[1.0, 0.53]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([-3.0, -3.0], [3.0, 3.0], 1.5),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::Barrier, 0.0),
                    confinement: Arc::new(|q| q[0] * q[0] + q[1] * q[1] - 1.0),
                    sample_filter: Arc::new(|q| q[0] * q[0] + q[1] * q[1] > 1.1),
                    cart_bound: None,
                }
            }
            ScenarioId::DiskBounce => {
                let kappa = p("kappa");
                let system = conformal_bounce(move |q: &[HyperDual]| {
                    let w = q[0] * q[0] + q[1] * q[1] - 1.0;
                    1.0 - 1.0 / (w * w * kappa)
                })?;
                let reference = ReferenceLaw::new(2, move |q, qd| {
                    let (x, y, xd, yd) = (q[0], q[1], qd[0], qd[1]);
                    let w = x * x + y * y - 1.0;
                    let den = 1.0 / (kappa * w * w) - 1.0;
                    let k3 = kappa * w * w * w;
                    let d2 = xd * xd - yd * yd;
                    DVector::from_vec(vec![
                        (4.0 * y * xd * yd + 2.0 * x * d2) / k3 / den,
                        (4.0 * x * xd * yd - 2.0 * y * d2) / k3 / den,
                    ])
                });
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[0.5, 0.0], &[0.1, 0.1]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([-0.95, -0.95], [0.95, 0.95], 1.0),
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::ConstrainedCl, 0.0),
                    confinement: Arc::new(|q| 1.0 - q[0] * q[0] - q[1] * q[1]),
                    sample_filter: Arc::new(move |q| q[0] * q[0] + q[1] * q[1] < 0.9),
                    cart_bound: None,
                }
            }
            ScenarioId::PendulumCartDown => {
                let (alpha, beta, gamma, d) = (p("alpha"), p("beta"), p("gamma"), p("D"));
                check_pendulum(alpha, beta, gamma)?;
                let g_o: Arc<dyn MetricField> = Arc::new(pendulum_metric(alpha, beta, gamma));
                let system = ControlledSystem::new(
                    g_o.clone(),
                    Arc::new(pendulum_potential(d)),
                    Arc::new(RaisedCoframe::new(
                        g_o,
                        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                    )),
                    Arc::new(BarrierFunction::new(
                        Arc::new(AnalyticScalar::new(2, |q| q[1] * q[1] - 1.0)),
                        Arc::new(AnalyticScalar::new(2, |q| q[1].asin())),
                    )),
                )?;
                let reference = ReferenceLaw::new(1, move |q, qd| {
                    DVector::from_element(1, pendulum_down_control(alpha, beta, gamma, d, q, qd))
                });
                let pi = std::f64::consts::PI;
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[pi + 0.25, 0.0], &[0.0, 0.03]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([pi - 1.0, -0.9], [pi + 1.0, 0.9], 1.0),
                    equilibrium_guess: Some(DVector::from_vec(vec![pi + 0.05, 0.0, 0.0, 0.0])),
                    default_stack: stack(BaseLaw::ConstrainedCl, p("k_d")),
                    confinement: Arc::new(|q| 1.0 - q[1].abs()),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
            ScenarioId::PendulumCartUp => {
                let (alpha, beta, gamma, d) = (p("alpha"), p("beta"), p("gamma"), p("D"));
                let (kappa, k_b, r) = (p("kappa"), p("k_b"), p("r"));
                check_pendulum(alpha, beta, gamma)?;
                let g_o: Arc<dyn MetricField> = Arc::new(pendulum_metric(alpha, beta, gamma));
                let shaped = AnalyticMetric::new(2, move |q| {
                    let cs = q[0].cos();
                    let a = alpha + cs * cs * (kappa * (kappa + 1.0) * beta * beta / gamma);
                    let b = cs * ((1.0 + kappa) * beta);
                    vec![a, b, b, c(gamma)]
                })
                .with_signature(Signature::Indefinite);
                let lean = kappa * beta / gamma;
                let system = ControlledSystem::new(
                    g_o.clone(),
                    Arc::new(pendulum_potential(d)),
                    Arc::new(RaisedCoframe::new(
                        g_o,
                        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                    )),
                    Arc::new(BarrierFunction::new(
                        Arc::new(AnalyticScalar::new(2, move |q| {
                            let z = q[1] + q[0].sin() * lean;
                            z * z - r * r
                        })),
                        Arc::new(AnalyticScalar::new(2, move |q| {
                            ((q[1] + q[0].sin() * lean) / r).asin() * k_b
                        })),
                    )),
                )?
                .with_shaped(Arc::new(shaped))?;
                let reference = ReferenceLaw::new(1, move |q, qd| {
                    DVector::from_element(
                        1,
                        pendulum_up_control(alpha, beta, gamma, d, kappa, k_b, r, q, qd),
                    )
                });
                let bound = r + kappa * beta.abs() / gamma;
                cart_bound = Some(Arc::new(move |q: &Point| bound - q[1].abs()));
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: Some(Arc::new(reference)),
                    initial: MechState::new(0.0, &[0.25, 0.0], &[0.0, 0.03]),
                    horizon: 50.0,
                    integrator: default_integrator,
                    sample: box2([-0.4, -r], [0.4, r], 1.0),
                    equilibrium_guess: Some(DVector::from_vec(vec![0.05, 0.0, 0.0, 0.0])),
                    default_stack: stack(BaseLaw::ConstrainedCl, p("k_d")),
                    confinement: Arc::new(move |q| r - (q[1] + q[0].sin() * lean).abs()),
                    sample_filter: Arc::new(move |q| (q[1] + q[0].sin() * lean).abs() < 0.95 * r),
                    cart_bound: None,
                }
            }
            ScenarioId::EscapeTime => {
                let eps = p("eps");
                let completed = p("completed");
                if completed != 0.0 && completed != 1.0 {
                    return Err(Error::ParameterOutOfRange {
                        name: "completed".into(),
                        value: completed,
                        reason: "must be 0 or 1".into(),
                    });
                }
                let potential =
                    AnalyticScalar::new(1, move |q| -(q[0].abs().powf(2.0 + 2.0 * eps)) * 0.5);
                let barrier = if completed == 1.0 {
                    BarrierFunction::new(
                        Arc::new(ConstantScalar {
                            dim: 1,
                            value: -1.0,
                        }),
                        Arc::new(AnalyticScalar::new(1, move |q| {
                            q[0] * q[0].abs().powf(1.0 + eps) / (2.0 + eps)
                        })),
                    )
                } else {
                    BarrierFunction::unconstrained(1)
                };
                let system = euclidean_particle(
                    1,
                    Arc::new(potential),
                    Arc::new(CoordinateFields::full(1)),
                    barrier,
                )?;
                let mut integrator = default_integrator;
                integrator.scheme = Scheme::Dopri5 {
                    rtol: 1e-10,
                    atol: 1e-12,
                };
                Self {
                    id,
                    params: params.clone(),
                    system: Arc::new(system),
                    reference: None,
                    initial: MechState::new(0.0, &[1.0], &[0.0]),
                    horizon: if completed == 1.0 { 100.0 } else { 10.0 },
                    integrator,
                    sample: SampleBox {
                        lower: vec![-2.0],
                        upper: vec![2.0],
                        speed: 2.0,
                    },
                    equilibrium_guess: None,
                    default_stack: stack(BaseLaw::Barrier, 0.0),
                    confinement: Arc::new(|_| f64::INFINITY),
                    sample_filter: no_filter,
                    cart_bound: None,
                }
            }
        };
        let mut scenario = scenario;
        scenario.cart_bound = cart_bound;
        let initial = scenario.initial.clone();
        scenario.with_initial(initial)
    }

    /// Replaces the initial state after checking feasibility.
    pub fn with_initial(mut self, initial: MechState) -> Result<Self> {
        if initial.dim() != self.system.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.system.dim(),
                found: initial.dim(),
            });
        }
        if !initial.is_finite() {
            return Err(Error::InfeasibleInitialState(
                "non-finite initial state".into(),
            ));
        }
        if !self.system.barrier.contains(&initial.q) {
            return Err(Error::InfeasibleInitialState(format!(
                "q = {:?} violates {}",
                initial.q.as_slice(),
                self.id.invariant()
            )));
        }
        self.system
            .energies(&initial.q, &initial.qd)
            .map_err(|e| Error::InfeasibleInitialState(e.to_string()))?;
        self.initial = initial;
        Ok(self)
    }

    /// The base law of `stack` plus its dissipation term.
    pub fn feedback(&self, stack: FeedbackStack) -> Result<Arc<dyn Feedback>> {
        let base: Arc<dyn Feedback> = match stack.base {
            BaseLaw::Barrier => Arc::new(BarrierLaw::synthesize(
                self.system.clone(),
                &self.sample,
                SYNTHESIS_POINTS,
            )?),
            BaseLaw::ConstrainedCl => Arc::new(ConstrainedClLaw::synthesize(
                self.system.clone(),
                &self.sample,
                SYNTHESIS_POINTS,
            )?),
            BaseLaw::Reference => self.reference.clone().ok_or_else(|| {
                Error::Invalid(format!("{} has no closed-form reference control", self.id))
            })?,
        };
        let extra: Option<Arc<dyn Feedback>> = match stack.dissipation {
            Dissipation::None => None,
            Dissipation::Simple { gain } => {
                Some(Arc::new(DissipationLaw::simple(self.system.clone(), gain)))
            }
            Dissipation::Storage { gain, e_star } => Some(Arc::new(DissipationLaw::storage(
                self.system.clone(),
                gain,
                e_star,
            ))),
        };
        match extra {
            None => Ok(base),
            Some(d) => Ok(Arc::new(SumLaw::new(vec![base, d])?)),
        }
    }

    pub fn closed_loop(&self, stack: FeedbackStack) -> Result<ClosedLoop> {
        ClosedLoop::new(self.system.clone(), self.feedback(stack)?)
    }

    /// Free motion of the target metric `ḡ + df⊗df` with the scenario potential.
    pub fn target_flow(&self) -> FreeFlow {
        FreeFlow {
            metric: Arc::new(self.system.target_metric()),
            potential: self.system.potential.clone(),
            region: self.system.barrier.clone(),
        }
    }

    /// The same motion through the Euler–Lagrange equations of `ḡ` and `f`.
    pub fn covariant_flow(&self) -> CovariantFlow {
        CovariantFlow {
            metric: self.system.design_metric(),
            potential: self.system.potential.clone(),
            barrier: self.system.barrier.clone(),
        }
    }

    /// Distance-like margin of the confinement invariant; positive inside.
    pub fn confinement_margin(&self, q: &Point) -> f64 {
        (self.confinement)(q)
    }

    /// `r + κβ/γ − |s|` for the upright pendulum on a cart.
    pub fn cart_bound_margin(&self, q: &Point) -> Option<f64> {
        self.cart_bound.as_ref().map(|f| f(q))
    }

    /// Uniform random states in the sample box that lie well inside the region.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<(Point, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.system.dim();
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count && attempts < 1000 * count.max(1) {
            attempts += 1;
            let unit: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
            let (q, qd) = self.sample.state_at(&unit);
            if (self.sample_filter)(&q)
                && self.system.barrier.contains(&q)
                && self.system.energies(&q, &qd).is_ok()
            {
                out.push((q, qd));
            }
        }
        out
    }

    /// Largest `|u_ref − u_synth|` over the given states.
    pub fn reference_vs_synthesized(&self, states: &[(Point, DVector<f64>)]) -> Result<f64> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} has no reference control", self.id)))?;
        let mut worst: f64 = 0.0;
        for (q, qd) in states {
            let u_ref = reference.evaluate(q, qd)?;
            let u_syn = self.system.constrained_cl_control(q, qd)?;
            worst = worst.max((u_ref - u_syn).amax());
        }
        Ok(worst)
    }
}

fn check_pendulum(alpha: f64, beta: f64, gamma: f64) -> Result<()> {
    if alpha * gamma - beta * beta > 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange {
            name: "beta".into(),
            value: beta,
            reason: "the cart metric needs alpha·gamma − beta² > 0".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_builds_with_defaults() {
        for id in ScenarioId::ALL {
            let s = Scenario::build(id, &[]).unwrap();
            assert!(s.confinement_margin(&s.initial.q) > 0.0, "{id}");
            assert!(s.horizon >= 6.0);
            assert_eq!(id.name().parse::<ScenarioId>().unwrap(), id);
        }
    }

    #[test]
    fn worked_example_initial_states() {
        let landing = Scenario::build(ScenarioId::Landing, &[]).unwrap();
        assert_eq!(
            landing.initial.to_vector().as_slice(),
            &[0.5, 0.5, 0.5, 1.0]
        );
        let up = Scenario::build(ScenarioId::PendulumCartUp, &[]).unwrap();
        assert_eq!(up.initial.to_vector().as_slice(), &[0.25, 0.0, 0.0, 0.03]);
        assert_eq!(
            (
                up.params.get("kappa"),
                up.params.get("k_b"),
                up.params.get("r")
            ),
            (1.2, 0.1, 1.0)
        );
        let square = Scenario::build(ScenarioId::Square, &[]).unwrap();
        assert_eq!(
            square.initial.to_vector().as_slice(),
            &[0.2, 0.5, 0.5, -0.7]
        );
        assert_eq!(square.params.get("kappa"), 1e4);
    }

    #[test]
    fn parameter_validation() {
        let bad = Scenario::build(ScenarioId::PoincareBounce, &[("kappa".into(), -1.0)]);
        assert!(matches!(bad, Err(Error::ParameterOutOfRange { .. })));
        let unknown = Scenario::build(ScenarioId::Landing, &[("kappa".into(), 1.0)]);
        assert!(matches!(unknown, Err(Error::UnknownParameter(_))));
        let degenerate = Scenario::build(ScenarioId::PendulumCartDown, &[("beta".into(), 2.0)]);
        assert!(matches!(degenerate, Err(Error::ParameterOutOfRange { .. })));
        assert!("Nowhere".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn infeasible_initial_state_is_rejected() {
        let s = Scenario::build(ScenarioId::Landing, &[]).unwrap();
        let err = s.with_initial(MechState::new(0.0, &[0.0, -0.1], &[0.0, 0.0]));
        assert!(matches!(err, Err(Error::InfeasibleInitialState(_))));
    }

    #[test]
    fn reference_controls_match_synthesis() {
        for id in ScenarioId::ALL {
            let s = Scenario::build(id, &[]).unwrap();
            if s.reference.is_none() {
                continue;
            }
            let states = s.sample_states(50, 7);
            assert_eq!(states.len(), 50, "{id}");
            let dev = s.reference_vs_synthesized(&states).unwrap();
            assert!(dev < 1e-8, "{id}: {dev:e}");
        }
    }

    #[test]
    fn shaped_scenarios_satisfy_matching() {
        for id in [
            ScenarioId::PendulumCartUp,
            ScenarioId::Square,
            ScenarioId::DiskBounce,
        ] {
            let s = Scenario::build(id, &[]).unwrap();
            let report = s.system.check_hypotheses(&s.sample, 64).unwrap();
            assert!(report.max_matching_residual < 1e-8, "{id}: {report:?}");
        }
    }

    #[test]
    fn feedback_stack_composes_dissipation() {
        let s = Scenario::build(ScenarioId::PendulumCartDown, &[("k_d".into(), 0.3)]).unwrap();
        let law = s.feedback(s.default_stack).unwrap();
        let (q, qd) = (s.initial.q.clone(), s.initial.qd.clone());
        let plain = s
            .feedback(FeedbackStack {
                base: BaseLaw::ConstrainedCl,
                dissipation: Dissipation::None,
            })
            .unwrap();
        let diss = s.system.dissipation_simple(0.3, &q, &qd).unwrap();
        let total = law.evaluate(&q, &qd).unwrap();
        assert!((total - plain.evaluate(&q, &qd).unwrap() - diss).amax() < 1e-14);
    }
}
