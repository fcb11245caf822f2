//! Equilibria, linearization and local stability of closed-loop flows.

use nalgebra::linalg::Hessenberg;
use nalgebra::{Complex, DMatrix, DVector};

use crate::dynamics::{state_derivative, MechanicalFlow};
use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
const JACOBIAN_REL_STEP: f64 = 1e-6;
const SNAP_TOL: f64 = 1e-8;
const ZERO_ROOT_TOL: f64 = 1e-6;
const ROUTH_EPSILON: f64 = 1e-9;

/// Linear stability class of an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Every eigenvalue has negative real part.
    AsymptoticallyStable,
    /// No eigenvalue in the open right half-plane, some on the imaginary axis.
    CenterCandidate,
    /// Some eigenvalue has positive real part.
    Unstable,
    /// Non-finite spectrum or every eigenvalue zero.
    Degenerate,
}

/// Outcome of the Routh–Hurwitz test on the nontrivial factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouthVerdict {
    /// All roots in the open left half-plane.
    Stable,
    /// Roots on the imaginary axis, none in the right half-plane.
    Marginal,
    /// `sign_changes` roots in the right half-plane.
    Unstable { sign_changes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouthTable {
    pub rows: Vec<Vec<f64>>,
    pub first_column: Vec<f64>,
    /// An entire row vanished and was replaced by the auxiliary derivative.
    pub zero_row: bool,
    pub verdict: RouthVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Monic characteristic coefficients, highest power first.
    pub coefficients: Vec<f64>,
    /// Number of zero roots removed before the Routh test.
    pub structural_zeros: usize,
    /// Characteristic polynomial divided by `p^structural_zeros`, highest power first.
    pub factor: Vec<f64>,
    pub routh: RouthTable,
    pub eigenvalues: Vec<Complex<f64>>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub equilibrium: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub spectrum: Spectrum,
}

/// Central-difference Jacobian of the first-order vector field, one Richardson pass.
fn raw_jacobian(
    flow: &dyn MechanicalFlow,
    x: &DVector<f64>,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let diff = |j: usize, h: f64| -> Result<DVector<f64>> {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        Ok((state_derivative(flow, &xp)? - state_derivative(flow, &xm)?) / (2.0 * h))
    };
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let coarse = diff(j, h)?;
        let fine = diff(j, 0.5 * h)?;
        jac.set_column(j, &((fine * 4.0 - coarse) / 3.0));
    }
    Ok(jac)
}

/// Damped Newton search for a zero of the closed-loop vector field.
///
/// Steps are least-squares solutions through the SVD, so continuous
/// families of equilibria (cyclic coordinates) are handled.
pub fn find_equilibrium(flow: &dyn MechanicalFlow, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let fail = || Error::NoConvergence {
        guess: guess.as_slice().to_vec(),
    };
    if guess.len() != 2 * flow.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * flow.dim(),
            found: guess.len(),
        });
    }
    let mut x = guess.clone();
    let mut r = state_derivative(flow, &x).map_err(|_| fail())?;
    for _ in 0..NEWTON_MAX_ITER {
        if r.norm() < NEWTON_TOL {
            return Ok(x);
        }
        let jac = raw_jacobian(flow, &x, JACOBIAN_REL_STEP).map_err(|_| fail())?;
        let svd = jac.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        let dx = svd.solve(&(-&r), eps).map_err(|_| fail())?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = state_derivative(flow, &trial) {
                if rt.norm() < r.norm() {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r.norm() < NEWTON_TOL {
        Ok(x)
    } else {
        Err(fail())
    }
}

/// Jacobian of the closed-loop vector field at an equilibrium.
///
/// The position rows are set to `[0 I]` and lower-block entries below
/// `1e-8` of the largest one are set to zero.
pub fn linearize(flow: &dyn MechanicalFlow, x_e: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = flow.dim();
    if x_e.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            found: x_e.len(),
        });
    }
    let residual = state_derivative(flow, x_e)?.norm();
    if !(residual < 1e-8) {
        return Err(Error::Invalid(format!(
            "not an equilibrium: residual {residual:e}"
        )));
    }
    let mut jac = raw_jacobian(flow, x_e, JACOBIAN_REL_STEP)?;
    for i in 0..n {
        for j in 0..2 * n {
            jac[(i, j)] = if j == n + i { 1.0 } else { 0.0 };
        }
    }
    let scale = jac.rows(n, n).amax().max(1.0);
    for v in jac.rows_mut(n, n).iter_mut() {
        if v.abs() < SNAP_TOL * scale {
            *v = 0.0;
        }
    }
    Ok(jac)
}

/// Characteristic polynomial `det(pI − A)`, highest power first.
///
/// Reduces to upper Hessenberg form and applies La Budde's recurrence.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 0 {
        return vec![1.0];
    }
    let h = Hessenberg::new(a.clone()).h();
    // polys[i] holds the characteristic polynomial of the leading i×i block, ascending powers.
    let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
    for i in 0..n {
        let prev = &polys[i];
        let mut next = vec![0.0; i + 2];
        for (k, c) in prev.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= h[(i, i)] * c;
        }
        let mut beta = 1.0;
        for m in 1..=i {
            beta *= h[(i - m + 1, i - m)];
            let coeff = h[(i - m, i)] * beta;
            for (k, c) in polys[i - m].iter().enumerate() {
                next[k] -= coeff * c;
            }
        }
        polys.push(next);
    }
    let mut desc = polys.pop().unwrap();
    desc.reverse();
    desc
}

/// Routh array of a polynomial given highest power first.
pub fn routh_table(coefficients: &[f64]) -> RouthTable {
    let mut poly: Vec<f64> = coefficients.to_vec();
    while poly.len() > 1 && poly[0] == 0.0 {
        poly.remove(0);
    }
    let degree = poly.len() - 1;
    if poly[0] < 0.0 {
        poly.iter_mut().for_each(|c| *c = -*c);
    }
    let scale = poly
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.abs()))
        .max(f64::MIN_POSITIVE);
    let tiny = 1e-12 * scale;
    let width = degree / 2 + 1;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    let mut r0 = vec![0.0; width];
    let mut r1 = vec![0.0; width];
    for (k, c) in poly.iter().enumerate() {
        if k % 2 == 0 {
            r0[k / 2] = *c;
        } else {
            r1[k / 2] = *c;
        }
    }
    rows.push(r0);
    if degree >= 1 {
        rows.push(r1);
    }
    let mut zero_row = false;
    let mut fix_row = |rows: &mut Vec<Vec<f64>>, idx: usize| {
        let row_scale = rows[idx].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if row_scale <= tiny {
            // Replace by the derivative of the auxiliary polynomial built from the row above.
            zero_row = true;
            let power = degree + 1 - idx;
            let above = rows[idx - 1].clone();
            let row = &mut rows[idx];
            for (k, c) in above.iter().enumerate() {
                let p = power as i64 - 2 * k as i64;
                row[k] = if p > 0 { p as f64 * c } else { 0.0 };
            }
        }
        if rows[idx][0].abs() <= tiny {
            rows[idx][0] = ROUTH_EPSILON * scale;
        }
    };
    if degree >= 1 {
        fix_row(&mut rows, 1);
    }
    for i in 2..=degree {
        let (a, b) = (&rows[i - 2], &rows[i - 1]);
        let mut row = vec![0.0; width];
        for j in 0..width - 1 {
            row[j] = (b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0];
        }
        rows.push(row);
        fix_row(&mut rows, i);
    }
    let first_column: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let sign_changes = first_column
        .windows(2)
        .filter(|w| (w[0] > 0.0) != (w[1] > 0.0))
        .count();
    let verdict = if sign_changes > 0 {
        RouthVerdict::Unstable { sign_changes }
    } else if zero_row {
        RouthVerdict::Marginal
    } else {
        RouthVerdict::Stable
    };
    RouthTable {
        rows,
        first_column,
        zero_row,
        verdict,
    }
}

/// Number of vanishing trailing coefficients and the remaining factor.
///
/// The `j` smallest roots are taken as zero when every trailing coefficient
/// `c_{n−i}`, `i < j`, is below `(ZERO_ROOT_TOL·scale)^{j−i}·|c_{n−j}|`, that is
/// when their elementary symmetric functions are all of the size of roots below
/// `ZERO_ROOT_TOL·scale`. The largest such `j` is used.
fn deflate(coefficients: &[f64], scale: f64) -> (usize, Vec<f64>) {
    let n = coefficients.len() - 1;
    let root = ZERO_ROOT_TOL * scale;
    let zeros = (1..=n)
        .rev()
        .find(|&j| {
            let pivot = coefficients[n - j].abs();
            (0..j).all(|i| coefficients[n - i].abs() <= root.powi((j - i) as i32) * pivot)
        })
        .unwrap_or(0);
    (zeros, coefficients[..=n - zeros].to_vec())
}

/// Evaluates a polynomial (highest power first) at a complex point.
pub fn eval_polynomial(coefficients: &[f64], z: Complex<f64>) -> Complex<f64> {
    coefficients
        .iter()
        .fold(Complex::new(0.0, 0.0), |acc, c| acc * z + c)
}

fn classify(eigenvalues: &[Complex<f64>], scale: f64) -> Classification {
    if eigenvalues
        .iter()
        .any(|l| !l.re.is_finite() || !l.im.is_finite())
    {
        return Classification::Degenerate;
    }
    let tol = 1e-7 * scale;
    if eigenvalues.iter().all(|l| l.norm() <= tol) {
        return Classification::Degenerate;
    }
    if eigenvalues.iter().any(|l| l.re > tol) {
        Classification::Unstable
    } else if eigenvalues.iter().all(|l| l.re < -tol) {
        Classification::AsymptoticallyStable
    } else {
        Classification::CenterCandidate
    }
}

/// Characteristic polynomial, Routh test on its nonzero-root factor, and eigenvalues.
pub fn characteristic_and_routh(a: &DMatrix<f64>) -> Spectrum {
    assert!(
        a.is_square(),
        "characteristic_and_routh needs a square matrix"
    );
    let scale = a.amax().max(1.0);
    let coefficients = characteristic_polynomial(a);
    let (structural_zeros, factor) = deflate(&coefficients, scale);
    let routh = routh_table(&factor);
    let eigenvalues: Vec<Complex<f64>> = if a.nrows() == 0 || !a.iter().all(|v| v.is_finite()) {
        vec![Complex::new(f64::NAN, f64::NAN); a.nrows()]
    } else {
        a.clone().complex_eigenvalues().iter().copied().collect()
    };
    let classification = classify(&eigenvalues, scale);
    Spectrum {
        coefficients,
        structural_zeros,
        factor,
        routh,
        eigenvalues,
        classification,
    }
}

/// Equilibrium search, linearization and spectral analysis in one call.
pub fn analyze(flow: &dyn MechanicalFlow, guess: &DVector<f64>) -> Result<StabilityReport> {
    let equilibrium = find_equilibrium(flow, guess)?;
    let jacobian = linearize(flow, &equilibrium)?;
    let spectrum = characteristic_and_routh(&jacobian);
    Ok(StabilityReport {
        equilibrium,
        jacobian,
        spectrum,
    })
}
