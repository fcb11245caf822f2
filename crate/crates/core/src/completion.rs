//! Barrier completion `g̃ = g + df⊗df`, metric blending and completeness probes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{integrate, GuardKind, IntegratorConfig, MechState, MechanicalFlow, Status};
use crate::error::{Error, Result};
use crate::geometry::{
    invert_components, Christoffel, ConstantScalar, MetricAt, MetricField, Point, ScalarField,
    Signature,
};

/// Feasible region `M = {φ < 0}` together with a barrier `f` that is proper on `M`.
#[derive(Clone)]
pub struct BarrierFunction {
    region: Arc<dyn ScalarField>,
    f: Arc<dyn ScalarField>,
}

/// Outcome of marching along a ray toward the region boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PropernessWitness {
    /// Ray parameter where `φ` first changes sign, if it does within the search range.
    pub boundary: Option<f64>,
    pub max_abs_f: f64,
    pub holds: bool,
}

impl BarrierFunction {
    pub fn new(region: Arc<dyn ScalarField>, f: Arc<dyn ScalarField>) -> Self {
        assert_eq!(region.dim(), f.dim());
        Self { region, f }
    }

    /// The whole chart with `f ≡ 0`.
    pub fn unconstrained(dim: usize) -> Self {
        Self::new(
            Arc::new(ConstantScalar { dim, value: -1.0 }),
            Arc::new(ConstantScalar { dim, value: 0.0 }),
        )
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn phi(&self, q: &Point) -> f64 {
        self.region.value(q)
    }

    pub fn contains(&self, q: &Point) -> bool {
        self.phi(q) < 0.0
    }

    pub fn ensure(&self, q: &Point) -> Result<()> {
        if self.contains(q) {
            Ok(())
        } else {
            Err(Error::OutsideFeasibleRegion {
                q: q.as_slice().to_vec(),
            })
        }
    }

    pub fn region(&self) -> &Arc<dyn ScalarField> {
        &self.region
    }

    pub fn f(&self) -> &Arc<dyn ScalarField> {
        &self.f
    }

    /// Sampling check that `|f|` exceeds `threshold` along `start + t·dir` before `∂M`.
    ///
    /// Rays that never leave `M` are probed out to `t = 1e6`.
    pub fn properness_witness(
        &self,
        start: &Point,
        dir: &Point,
        threshold: f64,
    ) -> PropernessWitness {
        let at = |t: f64| start + dir * t;
        let mut hi = 1e-3;
        while hi < 1e6 && self.contains(&at(hi)) {
            hi *= 2.0;
        }
        let boundary = if self.contains(&at(hi)) {
            None
        } else {
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.contains(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(lo)
        };
        let probes: Vec<f64> = match boundary {
            Some(tb) => (1..=15).map(|k| tb * (1.0 - 10f64.powi(-k))).collect(),
            None => (0..=6).map(|k| 10f64.powi(k)).collect(),
        };
        let max_abs_f = probes
            .iter()
            .map(|&t| at(t))
            .filter(|p| self.contains(p))
            .map(|p| self.f.value(&p).abs())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        PropernessWitness {
            boundary,
            max_abs_f,
            holds: max_abs_f > threshold,
        }
    }
}

/// `g̃ = g + df⊗df` with the closed-form inverse and connection.
#[derive(Clone)]
pub struct CompletedMetric {
    base: Arc<dyn MetricField>,
    barrier: Arc<BarrierFunction>,
}

/// `g̃_{ij}`, `g̃^{ij}`, `Γ̃^k_{ij}` at one point.
#[derive(Debug, Clone)]
pub struct CompletedComponents {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub gamma: Christoffel,
    /// `|grad_g f|²` in the base metric.
    pub grad_norm_sq: f64,
}

impl CompletedMetric {
    pub fn new(base: Arc<dyn MetricField>, barrier: Arc<BarrierFunction>) -> Self {
        assert_eq!(base.dim(), barrier.dim());
        Self { base, barrier }
    }

    pub fn base(&self) -> &Arc<dyn MetricField> {
        &self.base
    }

    pub fn barrier(&self) -> &Arc<BarrierFunction> {
        &self.barrier
    }

    /// Closed-form components:
    /// `g̃^{ij} = g^{ij} − f^i f^j/(1+|∇f|²)` and `Γ̃^k_{ij} = Γ^k_{ij} + f_{ij} f^k/(1+|∇f|²)`.
    pub fn completed_components(&self, q: &Point) -> Result<CompletedComponents> {
        self.barrier.ensure(q)?;
        let base = MetricAt::new(self.base.as_ref(), q)?;
        let df = self.barrier.f.gradient(q);
        let f_up = &base.g_inv * &df;
        let grad_norm_sq = df.dot(&f_up);
        let denom = 1.0 + grad_norm_sq;
        if !(denom.abs() > 1e-14) || !denom.is_finite() {
            return Err(Error::DegenerateMetric {
                q: q.as_slice().to_vec(),
            });
        }
        let g = &base.g + &df * df.transpose();
        let g_inv = &base.g_inv - &f_up * f_up.transpose() / denom;
        let f_cov = self.barrier.f.hessian(q) - base.gamma.lower_contract(&df);
        let n = q.len();
        let mut gamma = base.gamma.clone();
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    gamma.set(
                        k,
                        i,
                        j,
                        base.gamma.get(k, i, j) + f_cov[(i, j)] * f_up[k] / denom,
                    );
                }
            }
        }
        Ok(CompletedComponents {
            g,
            g_inv,
            gamma,
            grad_norm_sq,
        })
    }
}

impl MetricField for CompletedMetric {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn components(&self, q: &Point) -> DMatrix<f64> {
        let df = self.barrier.f.gradient(q);
        self.base.components(q) + &df * df.transpose()
    }

    /// `∂_k g̃_{ij} = ∂_k g_{ij} + ∂_{ik}f ∂_j f + ∂_i f ∂_{jk}f`.
    fn partials(&self, q: &Point) -> Vec<DMatrix<f64>> {
        let df = self.barrier.f.gradient(q);
        let h = self.barrier.f.hessian(q);
        self.base
            .partials(q)
            .into_iter()
            .enumerate()
            .map(|(k, dg)| {
                let hk = h.column(k).into_owned();
                dg + &hk * df.transpose() + &df * hk.transpose()
            })
            .collect()
    }

    fn signature(&self) -> Signature {
        self.base.signature()
    }
}

/// `s·g₀ + t·g₁`.
#[derive(Clone)]
pub struct BlendedMetric {
    g0: Arc<dyn MetricField>,
    g1: Arc<dyn MetricField>,
    s: f64,
    t: f64,
}

pub fn blend_metrics(
    g0: Arc<dyn MetricField>,
    g1: Arc<dyn MetricField>,
    s: f64,
    t: f64,
) -> Result<BlendedMetric> {
    if !(s > 0.0 && t >= 0.0) {
        return Err(Error::NonPositiveCoefficient { s, t });
    }
    if g0.dim() != g1.dim() {
        return Err(Error::DimensionMismatch {
            expected: g0.dim(),
            found: g1.dim(),
        });
    }
    Ok(BlendedMetric { g0, g1, s, t })
}

impl MetricField for BlendedMetric {
    fn dim(&self) -> usize {
        self.g0.dim()
    }

    fn components(&self, q: &Point) -> DMatrix<f64> {
        if self.t == 0.0 {
            return self.g0.components(q) * self.s;
        }
        self.g0.components(q) * self.s + self.g1.components(q) * self.t
    }

    fn partials(&self, q: &Point) -> Vec<DMatrix<f64>> {
        let p0 = self.g0.partials(q);
        if self.t == 0.0 {
            return p0.into_iter().map(|d| d * self.s).collect();
        }
        p0.into_iter()
            .zip(self.g1.partials(q))
            .map(|(a, b)| a * self.s + b * self.t)
            .collect()
    }

    fn signature(&self) -> Signature {
        self.g0.signature()
    }
}

/// Escape and boundary thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guards {
    pub position: f64,
    pub speed: f64,
    pub margin: f64,
}

impl Default for Guards {
    fn default() -> Self {
        Self {
            position: 1e6,
            speed: 1e6,
            margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeVerdict {
    SurvivedHorizon,
    EscapedAt(f64),
    HitBoundaryAt(f64),
    IntegratorFailure(f64),
}

/// Integrates `flow` from `x0` and classifies how the run ends.
pub fn escape_probe(
    flow: &dyn MechanicalFlow,
    x0: &MechState,
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<ProbeVerdict> {
    if !(horizon > 0.0) {
        return Err(Error::Invalid(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    match integrate(flow, x0, horizon, config) {
        Ok(traj) => Ok(match traj.status {
            Status::HorizonReached => ProbeVerdict::SurvivedHorizon,
            Status::Guard {
                kind: GuardKind::Boundary,
                t,
                ..
            } => ProbeVerdict::HitBoundaryAt(t),
            Status::Guard { t, .. } => ProbeVerdict::EscapedAt(t),
        }),
        Err(e @ Error::InfeasibleInitialState(_)) => Err(e),
        Err(Error::StepSizeUnderflow { t }) | Err(Error::MaxStepsExceeded { t, .. }) => {
            Ok(ProbeVerdict::IntegratorFailure(t))
        }
        Err(e) => Err(e),
    }
}

/// Rays `q0 + t·d`, `t ∈ (0, length]`, each sampled at `samples` points.
#[derive(Debug, Clone)]
pub struct RaySpec {
    pub directions: Vec<DVector<f64>>,
    pub length: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub a: f64,
    pub b: f64,
    pub holds: bool,
    /// Smallest sampled distance where `−V > a + b·d²`.
    pub violation_radius: Option<f64>,
}

/// Tests `−V(q) ≤ a + b·d_g(q₀, q)²` along sampled rays.
///
/// `d_g` is the polyline length of the ray, an upper bound of the distance.
/// `a = max(0, −V(q₀))`; `b` is fitted on the inner two thirds of each ray and the
/// bound is then checked on the full sample.
pub fn potential_growth_probe(
    g: &dyn MetricField,
    v: &dyn ScalarField,
    q0: &Point,
    rays: &RaySpec,
) -> GrowthReport {
    let a = (-v.value(q0)).max(0.0);
    let mut profiles = Vec::new();
    for dir in &rays.directions {
        let mut d = 0.0;
        let mut prev = q0.clone();
        let mut profile = Vec::with_capacity(rays.samples);
        for i in 1..=rays.samples {
            let q = q0 + dir * (rays.length * i as f64 / rays.samples as f64);
            let mid = (&q + &prev) * 0.5;
            let dq = &q - &prev;
            d += dq.dot(&(g.components(&mid) * &dq)).max(0.0).sqrt();
            profile.push((d, -v.value(&q)));
            prev = q;
        }
        profiles.push(profile);
    }
    let mut b: f64 = 0.0;
    for profile in &profiles {
        let cut = profile.last().map_or(0.0, |p| p.0) * 2.0 / 3.0;
        for &(d, w) in profile.iter().filter(|p| p.0 <= cut && p.0 > 0.0) {
            b = b.max((w - a) / (d * d));
        }
    }
    let violation_radius = profiles
        .iter()
        .flatten()
        .filter(|&&(d, w)| w > (a + b * d * d) * (1.0 + 1e-9) + 1e-12)
        .map(|p| p.0)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |x| x.min(d)))
        });
    GrowthReport {
        a,
        b,
        holds: violation_radius.is_none(),
        violation_radius,
    }
}

/// Direct inverse of `g̃` used to cross-check the closed form.
pub fn completed_inverse_direct(cm: &CompletedMetric, q: &Point) -> Result<DMatrix<f64>> {
    invert_components(&cm.components(q), cm.signature(), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{christoffel, AnalyticMetric, AnalyticScalar, Euclidean, FnMetric};

    fn landing() -> CompletedMetric {
        let region = Arc::new(AnalyticScalar::new(2, |q| -q[1]));
        let f = Arc::new(AnalyticScalar::new(2, |q| q[1].ln()));
        CompletedMetric::new(
            Arc::new(Euclidean { dim: 2 }),
            Arc::new(BarrierFunction::new(region, f)),
        )
    }

    fn p(x: f64, y: f64) -> Point {
        Point::from_vec(vec![x, y])
    }

    #[test]
    fn landing_components() {
        let c = landing().completed_components(&p(0.0, 1.0)).unwrap();
        assert_eq!(c.g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert!((c.g_inv[(1, 1)] - 0.5).abs() < 1e-15);
        assert!((c.gamma.get(1, 1, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn disk_components() {
        let region = Arc::new(AnalyticScalar::new(2, |q| 1.0 - q[0] * q[0] - q[1] * q[1]));
        let f = Arc::new(AnalyticScalar::new(2, |q| {
            (q[0] * q[0] + q[1] * q[1] - 1.0).ln()
        }));
        let cm = CompletedMetric::new(
            Arc::new(Euclidean { dim: 2 }),
            Arc::new(BarrierFunction::new(region, f)),
        );
        let c = cm.completed_components(&p(2.0, 0.0)).unwrap();
        assert!((c.g[(0, 0)] - (1.0 + 16.0 / 9.0)).abs() < 1e-14);
    }

    #[test]
    fn constant_barrier_leaves_metric_unchanged() {
        let base: Arc<dyn MetricField> = Arc::new(AnalyticMetric::conformal(2, |q| q[1].powi(-2)));
        let cm = CompletedMetric::new(base.clone(), Arc::new(BarrierFunction::unconstrained(2)));
        let q = p(0.3, 0.7);
        let c = cm.completed_components(&q).unwrap();
        assert_eq!(c.g, base.components(&q));
        assert!(
            c.gamma
                .max_abs_diff(&christoffel(base.as_ref(), &q).unwrap())
                < 1e-15
        );
    }

    #[test]
    fn closed_form_matches_generic_route() {
        let cm = landing();
        for &(x, y) in &[(0.1, 0.2), (1.0, 3.0), (-2.0, 0.05)] {
            let q = p(x, y);
            let c = cm.completed_components(&q).unwrap();
            let direct = completed_inverse_direct(&cm, &q).unwrap();
            assert!((&c.g_inv - direct).amax() < 1e-9);
            let opaque = FnMetric::opaque(Arc::new(cm.clone()));
            let fd = christoffel(&opaque, &q).unwrap();
            let scale = 1.0 + c.gamma.get(1, 1, 1).abs();
            assert!(c.gamma.max_abs_diff(&fd) < 1e-6 * scale);
        }
    }

    #[test]
    fn outside_region_is_an_error() {
        let err = landing().completed_components(&p(0.0, -1.0)).unwrap_err();
        assert_eq!(err, Error::OutsideFeasibleRegion { q: vec![0.0, -1.0] });
    }

    #[test]
    fn blend_examples() {
        let e: Arc<dyn MetricField> = Arc::new(Euclidean { dim: 2 });
        let poi: Arc<dyn MetricField> = Arc::new(AnalyticMetric::conformal(2, |q| q[1].powi(-2)));
        let q = p(0.0, 1.0);
        assert_eq!(
            blend_metrics(e.clone(), poi.clone(), 1.0, 0.0)
                .unwrap()
                .components(&q),
            e.components(&q)
        );
        assert_eq!(
            blend_metrics(e.clone(), poi.clone(), 2.0, 0.0)
                .unwrap()
                .components(&q),
            DMatrix::identity(2, 2) * 2.0
        );
        assert_eq!(
            blend_metrics(e.clone(), poi.clone(), 1.0, 1.0)
                .unwrap()
                .components(&q),
            DMatrix::identity(2, 2) * 2.0
        );
        assert_eq!(
            blend_metrics(e.clone(), poi.clone(), 0.0, 1.0).err(),
            Some(Error::NonPositiveCoefficient { s: 0.0, t: 1.0 })
        );
        assert!(blend_metrics(e, poi, 1.0, -0.5).is_err());
    }

    #[test]
    fn properness_witness_on_landing_barrier() {
        let cm = landing();
        let w = cm
            .barrier()
            .properness_witness(&p(0.0, 1.0), &p(0.0, -1.0), 20.0);
        assert!((w.boundary.unwrap() - 1.0).abs() < 1e-9);
        assert!(w.holds, "{w:?}");
        // ln y grows too slowly upward to pass a large threshold within the probe range
        let up = cm
            .barrier()
            .properness_witness(&p(0.0, 1.0), &p(0.0, 1.0), 100.0);
        assert!(up.boundary.is_none() && !up.holds);
    }

    fn line_rays() -> RaySpec {
        RaySpec {
            directions: vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
            length: 10.0,
            samples: 200,
        }
    }

    #[test]
    fn growth_probe_examples() {
        let e = Euclidean { dim: 1 };
        let q0 = DVector::zeros(1);
        let r = potential_growth_probe(
            &e,
            &AnalyticScalar::new(1, |q| q[0] * q[0]),
            &q0,
            &line_rays(),
        );
        assert!(r.holds && r.b == 0.0 && r.a == 0.0);
        let r = potential_growth_probe(
            &e,
            &AnalyticScalar::new(1, |q| -(q[0] * q[0])),
            &q0,
            &line_rays(),
        );
        assert!(r.holds && r.a == 0.0 && (r.b - 1.0).abs() < 1e-12, "{r:?}");
        let r = potential_growth_probe(
            &e,
            &AnalyticScalar::new(1, |q| q[0].powi(4) * -0.5),
            &q0,
            &line_rays(),
        );
        assert!(!r.holds);
        let radius = r.violation_radius.unwrap();
        assert!(radius > 6.0 && radius < 7.0, "{radius}");
    }
}
