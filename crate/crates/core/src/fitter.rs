//! Iterated GLS / AR(1) estimation and the change-point grid search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::ar::{
    estimate_phase, post_pairs, pre_pairs, ArPhaseParams, CovarianceSpec, PhaseEstimate,
};
use crate::error::{Error, Phase, Result};
use crate::model::{check_change_point, segmented_design, ChangePointWindow, MeanParams, Panel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stopping rule for the GLS / AR(1) iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitOptions {
    /// Threshold on the Euclidean distance between successive `(φ̂₁, φ̂₂)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Converged (or last) iterate for one unit at one candidate change point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitFit {
    pub q: usize,
    pub len: usize,
    pub theta: MeanParams,
    pub ar: ArPhaseParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Conditional log-likelihood after each GLS step.
    pub loglik_trace: Vec<f64>,
}

impl UnitFit {
    pub fn covariance(&self) -> CovarianceSpec {
        CovarianceSpec::two_phase(self.q, self.len, &self.ar)
            .expect("fitted AR parameters are valid by construction")
    }

    /// True when no GLS step lowered the log-likelihood by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.loglik_trace.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

/// Thin QR of the whitened design `L X`, with `LᵀL = Σ⁻¹`.
///
/// Working on `L X` rather than `XᵀΣ⁻¹X` keeps the conditioning at the
/// square root of the normal equations, which matters when one phase is
/// fitted exactly and its innovation SD sits at the floor.
pub(crate) struct WhitenedQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl WhitenedQr {
    pub(crate) fn new(x: &DMatrix<f64>, cov: &CovarianceSpec) -> Result<Self> {
        if x.nrows() != cov.dim() {
            return Err(Error::InvalidArgument(format!(
                "design has {} rows, covariance has dimension {}",
                x.nrows(),
                cov.dim()
            )));
        }
        let xw = cov.whiten_matrix(x);
        if xw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("whitened design".into()));
        }
        let qr = xw.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        for j in 0..r.ncols() {
            let scale = xw.column(j).norm();
            let pivot = r[(j, j)].abs();
            if pivot.is_nan() || pivot <= 1e-13 * scale {
                return Err(Error::RankDeficient(format!(
                    "whitened design column {} is linearly dependent",
                    j + 1
                )));
            }
        }
        Ok(Self { q, r })
    }

    /// `(XᵀΣ⁻¹X)⁻¹ XᵀΣ⁻¹y`.
    pub(crate) fn solve(&self, y_whitened: &[f64]) -> DVector<f64> {
        let qty = self.q.transpose() * DVector::from_column_slice(y_whitened);
        self.r
            .solve_upper_triangular(&qty)
            .expect("checked non-singular triangle")
    }

    /// `(XᵀΣ⁻¹X)⁻¹ = R⁻¹R⁻ᵀ`.
    pub(crate) fn covariance(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("checked non-singular triangle");
        &r_inv * r_inv.transpose()
    }
}

/// `θ̂ = (XᵀΣ⁻¹X)⁻¹ XᵀΣ⁻¹y`.
pub(crate) fn gls(x: &DMatrix<f64>, y: &[f64], cov: &CovarianceSpec) -> Result<DVector<f64>> {
    Ok(WhitenedQr::new(x, cov)?.solve(&cov.whiten(y)))
}

/// `(XᵀΣ⁻¹X)⁻¹`.
pub(crate) fn gls_covariance(x: &DMatrix<f64>, cov: &CovarianceSpec) -> Result<DMatrix<f64>> {
    Ok(WhitenedQr::new(x, cov)?.covariance())
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    let gram = x.transpose() * x;
    let rhs = x.transpose() * DVector::from_column_slice(y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("XᵀX is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

pub(crate) fn residuals(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> Vec<f64> {
    let fitted = x * coef;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Residual magnitude below which a phase is treated as noiseless.
pub(crate) fn noise_floor(y: &[f64]) -> f64 {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-10 * (1.0 + scale)
}

/// Phase estimate, falling back to `φ = 0` and the SD floor when the phase
/// carries no residual variation.
pub(crate) fn phase_or_degenerate(
    lagged: &[f64],
    current: &[f64],
    phase: Phase,
    floor: f64,
) -> Result<PhaseEstimate> {
    if lagged.iter().chain(current).all(|r| r.abs() <= floor) {
        return Ok(PhaseEstimate::DEGENERATE);
    }
    match estimate_phase(lagged, current, phase) {
        Err(Error::DegeneratePhase { .. }) => Ok(PhaseEstimate::DEGENERATE),
        other => other,
    }
}

fn two_phase_estimate(resid: &[f64], q: usize, floor: f64) -> Result<ArPhaseParams> {
    let (a, b) = pre_pairs(resid, q);
    let pre = phase_or_degenerate(a, b, Phase::Pre, floor)?;
    let (a, b) = post_pairs(resid, q);
    let post = phase_or_degenerate(a, b, Phase::Post, floor)?;
    Ok(ArPhaseParams::from_phases(pre, post))
}

pub(crate) fn loglik_from_residuals(resid: &[f64], cov: &CovarianceSpec) -> f64 {
    let n = resid.len() as f64;
    -0.5 * n * LN_2PI - 0.5 * cov.log_det() - 0.5 * cov.quadratic_form(resid)
}

/// Gaussian log-likelihood of `y_2..=y_T` given `y_1` under mean `theta`
/// with change point `q` and residual covariance `cov`.
pub fn conditional_loglik(
    y: &[f64],
    theta: &MeanParams,
    cov: &CovarianceSpec,
    q: usize,
) -> Result<f64> {
    let len = y.len();
    check_change_point(q, len)?;
    if cov.dim() != len - 1 {
        return Err(Error::InvalidArgument(format!(
            "covariance dimension {} does not match {} residuals",
            cov.dim(),
            len - 1
        )));
    }
    let x = segmented_design(q, len);
    let coef = DVector::from_column_slice(&theta.to_array());
    let resid = residuals(&x, &y[1..], &coef);
    let value = loglik_from_residuals(&resid, cov);
    if !value.is_finite() {
        return Err(Error::NonFinite("conditional log-likelihood".into()));
    }
    Ok(value)
}

/// Fits one unit at candidate change point `q`.
///
/// Starts from OLS, then alternates between AR(1) phase estimates from the
/// current residuals and a GLS re-fit under the implied covariance until
/// the AR coefficients move by less than `opts.tol`. Running out of
/// iterations is reported through `converged`, not as an error.
pub fn fit_unit(y: &[f64], q: usize, opts: &FitOptions) -> Result<UnitFit> {
    let len = y.len();
    check_change_point(q, len)?;
    opts.validate()?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observations".into()));
    }
    let x = segmented_design(q, len);
    let obs = &y[1..];
    let floor = noise_floor(y);

    let mut coef = ols(&x, obs)?;
    let mut resid = residuals(&x, obs, &coef);
    let mut ar = two_phase_estimate(&resid, q, floor)?;
    let mut cov = CovarianceSpec::two_phase(q, len, &ar)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        coef = gls(&x, obs, &cov)?;
        resid = residuals(&x, obs, &coef);
        let next = two_phase_estimate(&resid, q, floor)?;
        let step = (next.phi1 - ar.phi1).hypot(next.phi2 - ar.phi2);
        ar = next;
        cov = CovarianceSpec::two_phase(q, len, &ar)?;
        trace.push(loglik_from_residuals(&resid, &cov));
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    let loglik = match trace.last() {
        Some(&l) => l,
        None => loglik_from_residuals(&resid, &cov),
    };
    if !loglik.is_finite() {
        return Err(Error::NonFinite("conditional log-likelihood".into()));
    }
    Ok(UnitFit {
        q,
        len,
        theta: MeanParams::from_array([coef[0], coef[1], coef[2], coef[3]]),
        ar,
        loglik,
        iterations,
        converged,
        loglik_trace: trace,
    })
}

/// Unit fits for every candidate change point, indexed `[candidate][unit]`.
#[derive(Clone, Debug)]
pub struct FitGrid {
    window: ChangePointWindow,
    unit_names: Vec<String>,
    fits: Vec<Vec<UnitFit>>,
}

impl FitGrid {
    pub fn window(&self) -> &ChangePointWindow {
        &self.window
    }

    pub fn fits(&self) -> &[Vec<UnitFit>] {
        &self.fits
    }

    /// `L(q) = Σ_j loglik_j(q)`, summed in unit order.
    pub fn profile(&self) -> Vec<ProfilePoint> {
        self.window
            .candidates()
            .iter()
            .zip(&self.fits)
            .map(|(&q, row)| ProfilePoint {
                q,
                loglik: row.iter().map(|f| f.loglik).sum(),
            })
            .collect()
    }

    /// Selects `τ̂ = argmax L(q)`, taking the smallest `q` on ties.
    pub fn into_result(self) -> FitResult {
        let profile = self.profile();
        let mut best = 0;
        for (i, p) in profile.iter().enumerate() {
            if p.loglik > profile[best].loglik {
                best = i;
            }
        }
        let non_converged = self
            .fits
            .iter()
            .flat_map(|row| row.iter().enumerate())
            .filter(|(_, f)| !f.converged)
            .map(|(unit, f)| (unit, f.q))
            .collect();
        let tau_hat = profile[best].q;
        let unit_fits = self.fits.into_iter().nth(best).unwrap_or_default();
        FitResult {
            tau_hat,
            profile,
            unit_fits,
            unit_names: self.unit_names,
            window: self.window,
            non_converged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub q: usize,
    pub loglik: f64,
}

/// Outcome of the global change-point search.
#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub tau_hat: usize,
    pub profile: Vec<ProfilePoint>,
    /// Per-unit fits at `τ̂`, in panel order.
    pub unit_fits: Vec<UnitFit>,
    pub unit_names: Vec<String>,
    pub window: ChangePointWindow,
    /// `(unit index, q)` cells whose iteration hit `max_iter`.
    pub non_converged: Vec<(usize, usize)>,
}

impl FitResult {
    pub fn lag(&self) -> Option<i64> {
        self.window
            .intervention()
            .map(|t| self.tau_hat as i64 - t as i64)
    }
}

/// Fits every `(candidate, unit)` cell.
///
/// Cells are independent; with `parallel` they are spread over the rayon
/// pool. The result does not depend on execution order.
pub fn fit_grid(
    panel: &Panel,
    window: &ChangePointWindow,
    opts: &FitOptions,
    parallel: bool,
) -> Result<FitGrid> {
    window.validate(panel.len())?;
    opts.validate()?;
    let units = panel.units();
    let cands = window.candidates();
    let cell = |k: usize| {
        let (qi, unit) = (k / units, k % units);
        let q = cands[qi];
        fit_unit(panel.series(unit), q, opts).map_err(|e| e.in_unit(&panel.unit_names()[unit], q))
    };
    let flat: Vec<UnitFit> = if parallel {
        (0..cands.len() * units)
            .into_par_iter()
            .map(cell)
            .collect::<Result<_>>()?
    } else {
        (0..cands.len() * units).map(cell).collect::<Result<_>>()?
    };
    let mut rows = Vec::with_capacity(cands.len());
    let mut it = flat.into_iter();
    for _ in cands {
        rows.push(it.by_ref().take(units).collect());
    }
    Ok(FitGrid {
        window: window.clone(),
        unit_names: panel.unit_names().to_vec(),
        fits: rows,
    })
}

/// Estimates the global change point over `window` and the per-unit
/// parameters at it.
pub fn fit_panel(
    panel: &Panel,
    window: &ChangePointWindow,
    opts: &FitOptions,
) -> Result<FitResult> {
    Ok(fit_grid(panel, window, opts, true)?.into_result())
}
