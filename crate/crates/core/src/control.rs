//! Feedback synthesis on a mechanical control system
//! `∇_ċ ċ + grad_g V = u^a Y_a`.
//!
//! [`ControlledSystem::barrier_control`] makes the closed loop coincide with the
//! free motion of `(g + df⊗df, V)`; [`ControlledSystem::constrained_cl_control`]
//! does the same for a shaped metric `ḡ` satisfying the matching conditions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::completion::{BarrierFunction, CompletedMetric};
use crate::error::{Error, Result};
use crate::geometry::{MetricAt, MetricField, Point, ScalarField, Signature, VectorFieldSet};

/// Axis-aligned box of configurations plus a velocity bound, used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub speed: f64,
}

impl SampleBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Maps a point of the unit cube `[0,1]^{2n}` to `(q, q̇)`.
    pub fn state_at(&self, unit: &[f64]) -> (Point, DVector<f64>) {
        let n = self.dim();
        let q = Point::from_fn(n, |i, _| {
            self.lower[i] + (self.upper[i] - self.lower[i]) * unit[i]
        });
        let qd = DVector::from_fn(n, |i, _| self.speed * (2.0 * unit[n + i] - 1.0));
        (q, qd)
    }
}

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut scale = inv;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// The `index`-th Halton point in `dim ≤ 12` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| radical_inverse(index, PRIMES[d]))
        .collect()
}

/// Summary of the synthesis-time hypothesis checks.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub points: usize,
    pub max_span_residual: f64,
    pub max_matching_residual: f64,
}

/// `(g, V, {Y_a}, M, f)` with an optional shaped metric `ḡ`.
#[derive(Clone)]
pub struct ControlledSystem {
    pub metric: Arc<dyn MetricField>,
    pub potential: Arc<dyn ScalarField>,
    pub controls: Arc<dyn VectorFieldSet>,
    pub barrier: Arc<BarrierFunction>,
    pub shaped: Option<Arc<dyn MetricField>>,
    /// Re-checks the span hypothesis on every control evaluation.
    pub debug_checks: bool,
    pub tolerance: f64,
}

impl fmt::Debug for ControlledSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledSystem")
            .field("dim", &self.dim())
            .field("controls", &self.control_count())
            .field("shaped", &self.shaped.is_some())
            .finish()
    }
}

/// Control components and annihilator residuals recovered from an observed acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceDecomposition {
    pub u: DVector<f64>,
    pub annihilator: DVector<f64>,
}

fn check_finite(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Inverse of a Gram matrix; fails when it is numerically singular.
fn invert_gram(c: &DMatrix<f64>, q: &Point) -> Result<DMatrix<f64>> {
    let sv = c.singular_values();
    let hi = sv.max();
    let lo = sv.min();
    if !(hi.is_finite() && lo > 1e-12 * hi) {
        return Err(Error::DependentControlFields {
            q: q.as_slice().to_vec(),
        });
    }
    c.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DependentControlFields {
            q: q.as_slice().to_vec(),
        })
}

/// Orthonormal basis (rows) of the covectors annihilating the columns of `y`.
pub fn annihilator_basis(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let yty = y.transpose() * y;
    let proj = match yty.clone().try_inverse() {
        Some(inv) => DMatrix::identity(n, n) - y * inv * y.transpose(),
        None => DMatrix::identity(n, n),
    };
    let eig = nalgebra::SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
    let rows: Vec<_> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).transpose())
        .collect();
    if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_rows(&rows)
    }
}

impl ControlledSystem {
    pub fn new(
        metric: Arc<dyn MetricField>,
        potential: Arc<dyn ScalarField>,
        controls: Arc<dyn VectorFieldSet>,
        barrier: Arc<BarrierFunction>,
    ) -> Result<Self> {
        let n = metric.dim();
        for found in [potential.dim(), controls.dim(), barrier.dim()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        if controls.count() == 0 || controls.count() > n {
            return Err(Error::Invalid(format!(
                "{} control fields in dimension {n}",
                controls.count()
            )));
        }
        Ok(Self {
            metric,
            potential,
            controls,
            barrier,
            shaped: None,
            debug_checks: false,
            tolerance: 1e-6,
        })
    }

    pub fn with_shaped(mut self, shaped: Arc<dyn MetricField>) -> Result<Self> {
        if shaped.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: shaped.dim(),
            });
        }
        self.shaped = Some(shaped);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn control_count(&self) -> usize {
        self.controls.count()
    }

    pub fn ensure_feasible(&self, q: &Point) -> Result<()> {
        self.barrier.ensure(q)
    }

    /// `ḡ` when present, otherwise `g`.
    pub fn design_metric(&self) -> Arc<dyn MetricField> {
        self.shaped.clone().unwrap_or_else(|| self.metric.clone())
    }

    /// The metric whose free dynamics the synthesized closed loop reproduces.
    pub fn target_metric(&self) -> CompletedMetric {
        CompletedMetric::new(self.design_metric(), self.barrier.clone())
    }

    /// `(C_{ab}, C^{ab})` with `C_{ab} = g(Y_a, Y_b)`.
    pub fn gram(&self, q: &Point) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        gram_in(self.metric.as_ref(), self.controls.as_ref(), q)
    }

    /// Size of the part of `grad f` not lying in `span{Y_a}`, measured in `g`.
    pub fn span_residual(&self, q: &Point) -> Result<f64> {
        self.ensure_feasible(q)?;
        span_residual_in(
            self.metric.as_ref(),
            self.controls.as_ref(),
            self.barrier.f().as_ref(),
            q,
        )
    }

    /// The same residual measured in the shaped metric `ḡ`.
    pub fn span_residual_shaped(&self, q: &Point) -> Result<f64> {
        self.ensure_feasible(q)?;
        span_residual_in(
            self.design_metric().as_ref(),
            self.controls.as_ref(),
            self.barrier.f().as_ref(),
            q,
        )
    }

    fn debug_span_check(&self, metric: &dyn MetricField, q: &Point) -> Result<()> {
        if self.debug_checks {
            let df = self.barrier.f().gradient(q);
            let r = span_residual_in(metric, self.controls.as_ref(), self.barrier.f().as_ref(), q)?;
            if r > self.tolerance * df.norm().max(1.0) {
                return Err(Error::HypothesisViolated {
                    q: q.as_slice().to_vec(),
                    residual: r,
                });
            }
        }
        Ok(())
    }

    /// `u^a = C^{ab}(1+|grad f|²)⁻¹(f^j ∂_jV − f_{jk} q̇^j q̇^k)⟨df, Y_b⟩`.
    pub fn barrier_control(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.ensure_feasible(q)?;
        self.debug_span_check(self.metric.as_ref(), q)?;
        let at = MetricAt::new(self.metric.as_ref(), q)?;
        let y = self.controls.fields(q)?;
        check_finite(self.barrier_term(&at, &y, q, qd)?, "barrier control")
    }

    fn barrier_term(
        &self,
        at: &MetricAt,
        y: &DMatrix<f64>,
        q: &Point,
        qd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let f = self.barrier.f();
        let df = f.gradient(q);
        if df.iter().all(|&v| v == 0.0) {
            return Ok(DVector::zeros(y.ncols()));
        }
        let f_up = &at.g_inv * &df;
        let denom = 1.0 + df.dot(&f_up);
        if !(denom.abs() > 1e-14) {
            return Err(Error::DegenerateMetric {
                q: q.as_slice().to_vec(),
            });
        }
        let f_cov = f.hessian(q) - at.gamma.lower_contract(&df);
        let coef = (f_up.dot(&self.potential.gradient(q)) - qd.dot(&(&f_cov * qd))) / denom;
        let c = y.transpose() * &at.g * y;
        let c_inv = invert_gram(&c, q)?;
        Ok(c_inv * (y.transpose() * df) * coef)
    }

    /// Annihilator components of `(Γ̄ − Γ)(q̇,q̇) + (ḡ⁻¹ − g⁻¹)∇V`.
    ///
    /// This is the matching expression with `q̈` taken from the uncontrolled
    /// `g`-dynamics; it vanishes identically exactly when the free `ḡ`-motion is
    /// realizable by forces along the `Y_a`.
    pub fn matching_residual(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        let shaped = self
            .shaped
            .as_ref()
            .ok_or_else(|| Error::Invalid("system has no shaped metric".into()))?;
        let (delta, _) = self.shaping_defect(shaped.as_ref(), q, qd)?;
        let y = self.controls.fields(q)?;
        Ok(annihilator_basis(&y) * delta)
    }

    /// `[(Γ − Γ̄)(q̇,q̇) + (g⁻¹ − ḡ⁻¹)∇V]` and its scale.
    fn shaping_defect(
        &self,
        shaped: &dyn MetricField,
        q: &Point,
        qd: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64)> {
        let g = MetricAt::new(self.metric.as_ref(), q)?;
        let gb = MetricAt::new(shaped, q)?;
        let dv = self.potential.gradient(q);
        let a = g.gamma.contract(qd);
        let b = gb.gamma.contract(qd);
        let c = &g.g_inv * &dv;
        let d = &gb.g_inv * &dv;
        let scale = a.norm() + b.norm() + c.norm() + d.norm();
        Ok((b - a + d - c, scale))
    }

    /// Control of the shaped system: metric-shaping part plus the barrier part computed in `ḡ`.
    pub fn constrained_cl_control(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.ensure_feasible(q)?;
        let Some(shaped) = self.shaped.as_ref() else {
            return self.barrier_control(q, qd);
        };
        self.debug_span_check(shaped.as_ref(), q)?;
        let u = self.shaping_control(q, qd)? + self.shaped_barrier_control(q, qd)?;
        check_finite(u, "constrained controlled-Lagrangian control")
    }

    /// `C^{ab}(μ_b)_k([Γ − Γ̄]^k_{ij}q̇^iq̇^j + [g − ḡ]^{ki}∂_iV)`.
    pub fn shaping_control(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        let shaped = self
            .shaped
            .as_ref()
            .ok_or_else(|| Error::Invalid("system has no shaped metric".into()))?;
        let (defect, _) = self.shaping_defect(shaped.as_ref(), q, qd)?;
        let y = self.controls.fields(q)?;
        let gq = self.metric.components(q);
        let c = y.transpose() * &gq * &y;
        Ok(invert_gram(&c, q)? * (y.transpose() * gq * (-defect)))
    }

    /// Barrier part of the constrained law, i.e. the barrier control of `(ḡ, V)`.
    pub fn shaped_barrier_control(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        let metric = self.design_metric();
        let at = MetricAt::new(metric.as_ref(), q)?;
        let y = self.controls.fields(q)?;
        self.barrier_term(&at, &y, q, qd)
    }

    /// `−k_d·(ḡ_f)_{ij} Y^i_a q̇^j`.
    pub fn dissipation_simple(
        &self,
        gain: f64,
        q: &Point,
        qd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.ensure_feasible(q)?;
        let y = self.controls.fields(q)?;
        let gf = self.target_metric().components(q);
        check_finite(-(y.transpose() * gf * qd) * gain, "dissipation")
    }

    /// `−k_d·(E_{L_f} − E*)·(ḡ_f)_{ij} Y^i_a q̇^j`, from `H = (E_{L_f} − E*)²/2`.
    pub fn dissipation_storage(
        &self,
        gain: f64,
        e_star: f64,
        q: &Point,
        qd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (_, e_lf) = self.energies(q, qd)?;
        self.dissipation_simple(gain * (e_lf - e_star), q, qd)
    }

    /// `(E, E_{L_f})` with `E = ½g(q̇,q̇) + V` and `E_{L_f} = ½ḡ_f(q̇,q̇) + V`.
    pub fn energies(&self, q: &Point, qd: &DVector<f64>) -> Result<(f64, f64)> {
        self.ensure_feasible(q)?;
        let v = self.potential.value(q);
        let e = 0.5 * qd.dot(&(self.metric.components(q) * qd)) + v;
        let e_lf = 0.5 * qd.dot(&(self.target_metric().components(q) * qd)) + v;
        if e.is_finite() && e_lf.is_finite() {
            Ok((e, e_lf))
        } else {
            Err(Error::NonFinite(format!(
                "energy at q = {:?}",
                q.as_slice()
            )))
        }
    }

    /// Splits `q̈ + Γ(q̇,q̇) + g⁻¹∇V` into control components `u^a` and annihilator residuals.
    pub fn force_decomposition(
        &self,
        q: &Point,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> Result<ForceDecomposition> {
        let at = MetricAt::new(self.metric.as_ref(), q)?;
        let force = qdd + at.gamma.contract(qd) + &at.g_inv * self.potential.gradient(q);
        let y = self.controls.fields(q)?;
        let c = y.transpose() * &at.g * &y;
        let u = invert_gram(&c, q)? * (y.transpose() * &at.g * &force);
        Ok(ForceDecomposition {
            u,
            annihilator: annihilator_basis(&y) * force,
        })
    }

    /// Checks the span hypothesis (and matching, when shaped) on Halton points of `sample`.
    ///
    /// Uses the first `points` feasible candidates; residuals are relative to the
    /// magnitude of the quantities they compare.
    pub fn check_hypotheses(&self, sample: &SampleBox, points: usize) -> Result<HypothesisReport> {
        let n = self.dim();
        if sample.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: sample.dim(),
            });
        }
        let mut report = HypothesisReport {
            points: 0,
            max_span_residual: 0.0,
            max_matching_residual: 0.0,
        };
        let design = self.design_metric();
        let mut index = 1u64;
        while report.points < points && index < 100 * points as u64 + 100 {
            let (q, qd) = sample.state_at(&halton(index, 2 * n));
            index += 1;
            if !self.barrier.contains(&q) {
                continue;
            }
            report.points += 1;
            let df = self.barrier.f().gradient(&q);
            let r = span_residual_in(
                design.as_ref(),
                self.controls.as_ref(),
                self.barrier.f().as_ref(),
                &q,
            )? / df.norm().max(1.0);
            report.max_span_residual = report.max_span_residual.max(r);
            if r > self.tolerance {
                return Err(Error::HypothesisViolated {
                    q: q.as_slice().to_vec(),
                    residual: r,
                });
            }
            if let Some(shaped) = &self.shaped {
                let (defect, scale) = self.shaping_defect(shaped.as_ref(), &q, &qd)?;
                let y = self.controls.fields(&q)?;
                let m = (annihilator_basis(&y) * defect).amax() / scale.max(1.0);
                report.max_matching_residual = report.max_matching_residual.max(m);
                if m > self.tolerance {
                    return Err(Error::MatchingViolated {
                        q: q.as_slice().to_vec(),
                        residual: m,
                    });
                }
            }
        }
        Ok(report)
    }
}

/// Gram matrix of `fields` in `metric` and its inverse.
pub fn gram_in(
    metric: &dyn MetricField,
    fields: &dyn VectorFieldSet,
    q: &Point,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let y = fields.fields(q)?;
    let c = y.transpose() * metric.components(q) * &y;
    let c = (&c + c.transpose()) * 0.5;
    let inv = invert_gram(&c, q)?;
    Ok((c, inv))
}

/// Norm of `grad f` minus its projection onto `span{Y_a}`.
///
/// The projection is orthogonal in `metric`; the norm is the metric norm for
/// Riemannian metrics and the Euclidean norm for indefinite ones.
pub fn span_residual_in(
    metric: &dyn MetricField,
    fields: &dyn VectorFieldSet,
    f: &dyn ScalarField,
    q: &Point,
) -> Result<f64> {
    let at = MetricAt::new(metric, q)?;
    let y = fields.fields(q)?;
    let grad = &at.g_inv * f.gradient(q);
    let c = y.transpose() * &at.g * &y;
    let coeff = invert_gram(&c, q)? * (y.transpose() * &at.g * &grad);
    let r = grad - y * coeff;
    Ok(match metric.signature() {
        Signature::Riemannian => at.norm_sq(&r).max(0.0).sqrt(),
        Signature::Indefinite => r.norm(),
    })
}

// ---------------------------------------------------------------------------
// Feedback laws

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    Barrier,
    ConstrainedCl,
    DissipationSimple,
    DissipationStorage,
    Sum,
    Scaled,
    Reference,
    Zero,
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LawKind::Barrier => "barrier",
            LawKind::ConstrainedCl => "constrained-cl",
            LawKind::DissipationSimple => "dissipation-simple",
            LawKind::DissipationStorage => "dissipation-storage",
            LawKind::Sum => "sum",
            LawKind::Scaled => "scaled",
            LawKind::Reference => "reference",
            LawKind::Zero => "zero",
        };
        f.write_str(s)
    }
}

/// A state feedback `(q, q̇) ↦ u ∈ ℝ^m`.
pub trait Feedback: Send + Sync {
    fn kind(&self) -> LawKind;
    fn count(&self) -> usize;
    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Barrier control of a system without shaping.
pub struct BarrierLaw {
    system: Arc<ControlledSystem>,
}

impl BarrierLaw {
    /// Runs the span hypothesis check on `sample` before returning the law.
    pub fn synthesize(
        system: Arc<ControlledSystem>,
        sample: &SampleBox,
        points: usize,
    ) -> Result<Self> {
        let mut unshaped = (*system).clone();
        unshaped.shaped = None;
        unshaped.check_hypotheses(sample, points)?;
        Ok(Self { system })
    }

    pub fn unchecked(system: Arc<ControlledSystem>) -> Self {
        Self { system }
    }
}

impl Feedback for BarrierLaw {
    fn kind(&self) -> LawKind {
        LawKind::Barrier
    }

    fn count(&self) -> usize {
        self.system.control_count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.system.barrier_control(q, qd)
    }
}

/// Constrained controlled-Lagrangian control.
pub struct ConstrainedClLaw {
    system: Arc<ControlledSystem>,
}

impl ConstrainedClLaw {
    /// Runs the span (in `ḡ`) and matching checks on `sample` before returning the law.
    pub fn synthesize(
        system: Arc<ControlledSystem>,
        sample: &SampleBox,
        points: usize,
    ) -> Result<Self> {
        system.check_hypotheses(sample, points)?;
        Ok(Self { system })
    }

    pub fn unchecked(system: Arc<ControlledSystem>) -> Self {
        Self { system }
    }
}

impl Feedback for ConstrainedClLaw {
    fn kind(&self) -> LawKind {
        LawKind::ConstrainedCl
    }

    fn count(&self) -> usize {
        self.system.control_count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.system.constrained_cl_control(q, qd)
    }
}

/// Energy-based damping; `target = Some(E*)` selects the storage-function form.
pub struct DissipationLaw {
    system: Arc<ControlledSystem>,
    pub gain: f64,
    pub target: Option<f64>,
}

impl DissipationLaw {
    pub fn simple(system: Arc<ControlledSystem>, gain: f64) -> Self {
        Self {
            system,
            gain,
            target: None,
        }
    }

    pub fn storage(system: Arc<ControlledSystem>, gain: f64, e_star: f64) -> Self {
        Self {
            system,
            gain,
            target: Some(e_star),
        }
    }
}

impl Feedback for DissipationLaw {
    fn kind(&self) -> LawKind {
        match self.target {
            None => LawKind::DissipationSimple,
            Some(_) => LawKind::DissipationStorage,
        }
    }

    fn count(&self) -> usize {
        self.system.control_count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        match self.target {
            None => self.system.dissipation_simple(self.gain, q, qd),
            Some(e) => self.system.dissipation_storage(self.gain, e, q, qd),
        }
    }
}

pub struct SumLaw {
    parts: Vec<Arc<dyn Feedback>>,
}

impl SumLaw {
    pub fn new(parts: Vec<Arc<dyn Feedback>>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Invalid("empty feedback sum".into()));
        };
        let m = first.count();
        if let Some(bad) = parts.iter().find(|p| p.count() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.count(),
            });
        }
        Ok(Self { parts })
    }
}

impl Feedback for SumLaw {
    fn kind(&self) -> LawKind {
        LawKind::Sum
    }

    fn count(&self) -> usize {
        self.parts[0].count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        let mut u = DVector::zeros(self.count());
        for p in &self.parts {
            u += p.evaluate(q, qd)?;
        }
        Ok(u)
    }
}

/// `factor · inner`; used for gain studies and fault injection.
pub struct ScaledLaw {
    inner: Arc<dyn Feedback>,
    pub factor: f64,
}

impl ScaledLaw {
    pub fn new(inner: Arc<dyn Feedback>, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl Feedback for ScaledLaw {
    fn kind(&self) -> LawKind {
        LawKind::Scaled
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inner.evaluate(q, qd)? * self.factor)
    }
}

type ControlFn = dyn Fn(&Point, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Closed-form control expression.
#[derive(Clone)]
pub struct ReferenceLaw {
    count: usize,
    f: Arc<ControlFn>,
}

impl ReferenceLaw {
    pub fn new<F>(count: usize, f: F) -> Self
    where
        F: Fn(&Point, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            count,
            f: Arc::new(f),
        }
    }
}

impl Feedback for ReferenceLaw {
    fn kind(&self) -> LawKind {
        LawKind::Reference
    }

    fn count(&self) -> usize {
        self.count
    }

    fn evaluate(&self, q: &Point, qd: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite((self.f)(q, qd), "reference control")
    }
}

pub struct ZeroLaw {
    pub count: usize,
}

impl Feedback for ZeroLaw {
    fn kind(&self) -> LawKind {
        LawKind::Zero
    }

    fn count(&self) -> usize {
        self.count
    }

    fn evaluate(&self, _q: &Point, _qd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.count))
    }
}
