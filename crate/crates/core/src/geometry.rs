//! Coordinate-chart Riemannian machinery.
//!
//! Everything lives in a single global chart on an open subset of `ℝⁿ`.
//! Metrics, scalar fields and control vector fields are trait objects so
//! that closed-form definitions, finite-difference wrappers and derived
//! constructions (completions, blends) compose freely.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{self, HyperDual};
use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Closed-form scalar expression in hyper-dual arithmetic.
pub type ScalarExpr = Arc<dyn Fn(&[HyperDual]) -> HyperDual + Send + Sync>;
/// Closed-form matrix expression, row-major `n × n`.
pub type MatrixExpr = Arc<dyn Fn(&[HyperDual]) -> Vec<HyperDual> + Send + Sync>;

/// Whether a metric must be positive definite or only nondegenerate.
///
/// Controlled-Lagrangian shaping of underactuated systems routinely
/// produces indefinite kinetic forms; those are declared `Indefinite`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Signature {
    #[default]
    Riemannian,
    Indefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    Second,
    Fourth,
}

/// Central finite-difference scheme with step `rel_step · max(1, |q|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffScheme {
    pub order: DiffOrder,
    pub rel_step: f64,
}

impl Default for DiffScheme {
    fn default() -> Self {
        Self {
            order: DiffOrder::Fourth,
            rel_step: 1e-5,
        }
    }
}

impl DiffScheme {
    pub fn second_order(rel_step: f64) -> Self {
        Self {
            order: DiffOrder::Second,
            rel_step,
        }
    }

    pub fn step(&self, q: &Point) -> f64 {
        self.rel_step * q.norm().max(1.0)
    }

    /// Partial derivative along axis `k` of a matrix-valued map.
    pub fn partial<F>(&self, q: &Point, k: usize, f: F) -> DMatrix<f64>
    where
        F: Fn(&Point) -> DMatrix<f64>,
    {
        let h = self.step(q);
        let shifted = |delta: f64| {
            let mut p = q.clone();
            p[k] += delta;
            f(&p)
        };
        match self.order {
            DiffOrder::Second => (shifted(h) - shifted(-h)) / (2.0 * h),
            DiffOrder::Fourth => {
                (shifted(-2.0 * h) - shifted(-h) * 8.0 + shifted(h) * 8.0 - shifted(2.0 * h))
                    / (12.0 * h)
            }
        }
    }

    pub fn metric_partials<M: MetricField + ?Sized>(&self, g: &M, q: &Point) -> Vec<DMatrix<f64>> {
        (0..g.dim())
            .map(|k| self.partial(q, k, |p| g.components(p)))
            .collect()
    }

    pub fn gradient<S: ScalarField + ?Sized>(&self, s: &S, q: &Point) -> DVector<f64> {
        DVector::from_iterator(
            s.dim(),
            (0..s.dim())
                .map(|k| self.partial(q, k, |p| DMatrix::from_element(1, 1, s.value(p)))[(0, 0)]),
        )
    }

    pub fn hessian<S: ScalarField + ?Sized>(&self, s: &S, q: &Point) -> DMatrix<f64> {
        let n = s.dim();
        let mut h = DMatrix::zeros(n, n);
        for k in 0..n {
            let col = self.partial(q, k, |p| {
                let g = s.gradient(p);
                DMatrix::from_column_slice(n, 1, g.as_slice())
            });
            h.set_column(k, &col.column(0));
        }
        (&h + h.transpose()) * 0.5
    }
}

pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// The symmetric matrix `g_ij(q)`.
    fn components(&self, q: &Point) -> DMatrix<f64>;

    /// `∂g/∂q^k` for each `k`; finite differences unless overridden.
    fn partials(&self, q: &Point) -> Vec<DMatrix<f64>> {
        DiffScheme::default().metric_partials(self, q)
    }

    fn signature(&self) -> Signature {
        Signature::Riemannian
    }
}

pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &Point) -> f64;

    fn gradient(&self, q: &Point) -> DVector<f64> {
        DiffScheme::default().gradient(self, q)
    }

    fn hessian(&self, q: &Point) -> DMatrix<f64> {
        DiffScheme::default().hessian(self, q)
    }
}

/// A set of `m ≤ n` control vector fields, returned as the columns of an `n × m` matrix.
pub trait VectorFieldSet: Send + Sync {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn fields(&self, q: &Point) -> Result<DMatrix<f64>>;
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy)]
pub struct Euclidean {
    pub dim: usize,
}

impl MetricField for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }

    fn components(&self, _q: &Point) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }

    fn partials(&self, _q: &Point) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.dim, self.dim); self.dim]
    }
}

/// Metric given by a closed-form expression; partials are exact.
#[derive(Clone)]
pub struct AnalyticMetric {
    dim: usize,
    expr: MatrixExpr,
    signature: Signature,
}

impl AnalyticMetric {
    pub fn new<F>(dim: usize, expr: F) -> Self
    where
        F: Fn(&[HyperDual]) -> Vec<HyperDual> + Send + Sync + 'static,
    {
        Self {
            dim,
            expr: Arc::new(expr),
            signature: Signature::Riemannian,
        }
    }

    /// Conformally flat metric `h(q)·I`.
    pub fn conformal<F>(dim: usize, factor: F) -> Self
    where
        F: Fn(&[HyperDual]) -> HyperDual + Send + Sync + 'static,
    {
        Self::new(dim, move |q| {
            let h = factor(q);
            let mut out = vec![HyperDual::constant(0.0); dim * dim];
            for i in 0..dim {
                out[i * dim + i] = h;
            }
            out
        })
    }

    pub fn with_signature(mut self, signature: Signature) -> Self {
        self.signature = signature;
        self
    }

    fn eval_seeded(&self, q: &Point, k: Option<usize>) -> Vec<HyperDual> {
        let out = (self.expr)(&autodiff::seed(q, k, None));
        assert_eq!(
            out.len(),
            self.dim * self.dim,
            "metric expression has wrong size"
        );
        out
    }
}

impl fmt::Debug for AnalyticMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticMetric")
            .field("dim", &self.dim)
            .field("signature", &self.signature)
            .finish()
    }
}

impl MetricField for AnalyticMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn components(&self, q: &Point) -> DMatrix<f64> {
        let v = self.eval_seeded(q, None);
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, j| 0.5 * (v[i * n + j].re + v[j * n + i].re))
    }

    fn partials(&self, q: &Point) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        (0..n)
            .map(|k| {
                let v = self.eval_seeded(q, Some(k));
                DMatrix::from_fn(n, n, |i, j| 0.5 * (v[i * n + j].e1 + v[j * n + i].e1))
            })
            .collect()
    }

    fn signature(&self) -> Signature {
        self.signature
    }
}

/// Metric given only by values; partials come from a [`DiffScheme`].
#[derive(Clone)]
pub struct FnMetric {
    dim: usize,
    f: Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>,
    pub scheme: DiffScheme,
    signature: Signature,
}

impl FnMetric {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            f: Arc::new(f),
            scheme: DiffScheme::default(),
            signature: Signature::Riemannian,
        }
    }

    /// Treats any metric as an opaque value map, discarding exact partials.
    pub fn opaque(inner: Arc<dyn MetricField>) -> Self {
        let signature = inner.signature();
        let dim = inner.dim();
        Self {
            dim,
            f: Arc::new(move |q| inner.components(q)),
            scheme: DiffScheme::default(),
            signature,
        }
    }
}

impl MetricField for FnMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn components(&self, q: &Point) -> DMatrix<f64> {
        (self.f)(q)
    }

    fn partials(&self, q: &Point) -> Vec<DMatrix<f64>> {
        self.scheme.metric_partials(self, q)
    }

    fn signature(&self) -> Signature {
        self.signature
    }
}

// ---------------------------------------------------------------------------
// Scalar fields

#[derive(Debug, Clone, Copy)]
pub struct ConstantScalar {
    pub dim: usize,
    pub value: f64,
}

impl ScalarField for ConstantScalar {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _q: &Point) -> f64 {
        self.value
    }

    fn gradient(&self, _q: &Point) -> DVector<f64> {
        DVector::zeros(self.dim)
    }

    fn hessian(&self, _q: &Point) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

/// Scalar field from a closed-form expression; gradient and Hessian are exact.
#[derive(Clone)]
pub struct AnalyticScalar {
    dim: usize,
    expr: ScalarExpr,
}

impl AnalyticScalar {
    pub fn new<F>(dim: usize, expr: F) -> Self
    where
        F: Fn(&[HyperDual]) -> HyperDual + Send + Sync + 'static,
    {
        Self {
            dim,
            expr: Arc::new(expr),
        }
    }
}

impl fmt::Debug for AnalyticScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticScalar")
            .field("dim", &self.dim)
            .finish()
    }
}

impl ScalarField for AnalyticScalar {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &Point) -> f64 {
        (self.expr)(&autodiff::seed(q, None, None)).re
    }

    fn gradient(&self, q: &Point) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|k| (self.expr)(&autodiff::seed(q, Some(k), None)).e1),
        )
    }

    fn hessian(&self, q: &Point) -> DMatrix<f64> {
        autodiff::value_gradient_hessian(|p| (self.expr)(p), q).2
    }
}

/// Scalar field given only by values; derivatives by finite differences.
#[derive(Clone)]
pub struct FnScalar {
    dim: usize,
    f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    pub scheme: DiffScheme,
}

impl FnScalar {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            f: Arc::new(f),
            scheme: DiffScheme::default(),
        }
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &Point) -> f64 {
        (self.f)(q)
    }

    fn gradient(&self, q: &Point) -> DVector<f64> {
        self.scheme.gradient(self, q)
    }

    fn hessian(&self, q: &Point) -> DMatrix<f64> {
        self.scheme.hessian(self, q)
    }
}

// ---------------------------------------------------------------------------
// Control vector fields

/// Coordinate fields `∂/∂q^k` for the listed axes.
#[derive(Debug, Clone)]
pub struct CoordinateFields {
    pub dim: usize,
    pub axes: Vec<usize>,
}

impl CoordinateFields {
    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            axes: (0..dim).collect(),
        }
    }
}

impl VectorFieldSet for CoordinateFields {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        self.axes.len()
    }

    fn fields(&self, _q: &Point) -> Result<DMatrix<f64>> {
        let mut y = DMatrix::zeros(self.dim, self.axes.len());
        for (a, &k) in self.axes.iter().enumerate() {
            y[(k, a)] = 1.0;
        }
        Ok(y)
    }
}

#[derive(Clone)]
pub struct FnFields {
    dim: usize,
    count: usize,
    f: Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>,
}

impl FnFields {
    pub fn new<F>(dim: usize, count: usize, f: F) -> Self
    where
        F: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            count,
            f: Arc::new(f),
        }
    }
}

impl VectorFieldSet for FnFields {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        self.count
    }

    fn fields(&self, q: &Point) -> Result<DMatrix<f64>> {
        Ok((self.f)(q))
    }
}

/// Control fields `Y_a = ♯_g μ_a` raised from constant control 1-forms.
#[derive(Clone)]
pub struct RaisedCoframe {
    metric: Arc<dyn MetricField>,
    /// `m × n`, row `a` holds the components of `μ_a`.
    coframe: DMatrix<f64>,
}

impl RaisedCoframe {
    pub fn new(metric: Arc<dyn MetricField>, coframe: DMatrix<f64>) -> Self {
        assert_eq!(coframe.ncols(), metric.dim());
        Self { metric, coframe }
    }
}

impl VectorFieldSet for RaisedCoframe {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn count(&self) -> usize {
        self.coframe.nrows()
    }

    fn fields(&self, q: &Point) -> Result<DMatrix<f64>> {
        Ok(metric_inverse(self.metric.as_ref(), q)? * self.coframe.transpose())
    }
}

/// Errors unless the fields at `q` have smallest singular value above `threshold`.
pub fn check_independent(fields: &dyn VectorFieldSet, q: &Point, threshold: f64) -> Result<()> {
    let y = fields.fields(q)?;
    let sv = y.singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest > threshold) {
        return Err(Error::DependentControlFields {
            q: q.as_slice().to_vec(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Operations

fn check_symmetric(g: &DMatrix<f64>, q: &Point) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "metric at q = {:?}",
            q.as_slice()
        )));
    }
    let scale = g.amax().max(1.0);
    let asymmetry = (g - g.transpose()).amax() / scale;
    if asymmetry > 1e-12 {
        return Err(Error::AsymmetricMetric {
            q: q.as_slice().to_vec(),
            asymmetry,
        });
    }
    Ok(())
}

/// Inverts an already-evaluated metric matrix according to its signature.
pub fn invert_components(
    g: &DMatrix<f64>,
    signature: Signature,
    q: &Point,
) -> Result<DMatrix<f64>> {
    check_symmetric(g, q)?;
    let inv = match signature {
        Signature::Riemannian => g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                q: q.as_slice().to_vec(),
            })?
            .inverse(),
        Signature::Indefinite => {
            let sv = g.singular_values();
            let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
            if !(lo > 1e-13 * hi.max(f64::MIN_POSITIVE)) {
                return Err(Error::DegenerateMetric {
                    q: q.as_slice().to_vec(),
                });
            }
            g.clone()
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::DegenerateMetric {
                    q: q.as_slice().to_vec(),
                })?
        }
    };
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `g^{ij}(q)`; fails with `NotPositiveDefinite` when factorization fails.
pub fn metric_inverse(g: &dyn MetricField, q: &Point) -> Result<DMatrix<f64>> {
    invert_components(&g.components(q), g.signature(), q)
}

/// Christoffel symbols of the second kind, `Γ^k_{ij}`, symmetric in `i, j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
    pub fn from_parts(g_inv: &DMatrix<f64>, partials: &[DMatrix<f64>]) -> Self {
        let n = g_inv.nrows();
        let mut first = vec![0.0; n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in i..n {
                    let v = 0.5 * (partials[i][(j, l)] + partials[j][(i, l)] - partials[l][(i, j)]);
                    first[l * n * n + i * n + j] = v;
                    first[l * n * n + j * n + i] = v;
                }
            }
        }
        let mut out = Self::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let v: f64 = (0..n)
                        .map(|l| g_inv[(k, l)] * first[l * n * n + i * n + j])
                        .sum();
                    out.set(k, i, j, v);
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[k * self.dim * self.dim + i * self.dim + j]
    }

    /// Sets `Γ^k_{ij}` and `Γ^k_{ji}` together.
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.dim;
        self.data[k * n * n + i * n + j] = v;
        self.data[k * n * n + j * n + i] = v;
    }

    /// `Γ^k_{ij} v^i v^j` for each `k`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_iterator(
            n,
            (0..n).map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += self.get(k, i, j) * v[i] * v[j];
                    }
                }
                s
            }),
        )
    }

    /// `Γ^i_{jk} w_i` as a symmetric matrix in `(j, k)`.
    pub fn lower_contract(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |j, k| (0..n).map(|i| self.get(i, j, k) * w[i]).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for &Christoffel {
    type Output = Christoffel;
    fn add(self, o: &Christoffel) -> Christoffel {
        Christoffel {
            dim: self.dim,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }
}

pub fn christoffel(g: &dyn MetricField, q: &Point) -> Result<Christoffel> {
    let g_inv = metric_inverse(g, q)?;
    Ok(Christoffel::from_parts(&g_inv, &g.partials(q)))
}

/// Christoffel symbols from finite-difference partials regardless of what `g` supplies.
pub fn christoffel_with(g: &dyn MetricField, q: &Point, scheme: DiffScheme) -> Result<Christoffel> {
    let g_inv = metric_inverse(g, q)?;
    Ok(Christoffel::from_parts(
        &g_inv,
        &scheme.metric_partials(g, q),
    ))
}

/// `grad_g s = g^{ik} ∂_k s`.
pub fn grad_metric(g: &dyn MetricField, s: &dyn ScalarField, q: &Point) -> Result<DVector<f64>> {
    Ok(metric_inverse(g, q)? * s.gradient(q))
}

/// `s_{jk} = ∂²s/∂q^j∂q^k − Γ^i_{jk} ∂_i s`.
pub fn covariant_hessian(
    g: &dyn MetricField,
    s: &dyn ScalarField,
    q: &Point,
) -> Result<DMatrix<f64>> {
    let gamma = christoffel(g, q)?;
    let h = s.hessian(q) - gamma.lower_contract(&s.gradient(q));
    Ok((&h + h.transpose()) * 0.5)
}

/// `♭_g v`.
pub fn flat(g: &dyn MetricField, q: &Point, v: &DVector<f64>) -> Result<DVector<f64>> {
    let gq = g.components(q);
    invert_components(&gq, g.signature(), q)?;
    Ok(gq * v)
}

/// `♯_g μ`.
pub fn sharp(g: &dyn MetricField, q: &Point, mu: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(metric_inverse(g, q)? * mu)
}

/// Metric, inverse and connection evaluated together at one point.
#[derive(Debug, Clone)]
pub struct MetricAt {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub gamma: Christoffel,
}

impl MetricAt {
    pub fn new(metric: &dyn MetricField, q: &Point) -> Result<Self> {
        let g = metric.components(q);
        let g_inv = invert_components(&g, metric.signature(), q)?;
        let gamma = Christoffel::from_parts(&g_inv, &metric.partials(q));
        Ok(Self { g, g_inv, gamma })
    }

    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.g * v))
    }
}
