//! Wald tests for a change in the mean functions and parameter inference.
//!
//! For each candidate `q` the full segmented model is fitted per unit; the
//! variance of its coefficients is evaluated under the no-change model with
//! a single AR(1) over the whole series. The per-unit contributions of the
//! `(δ_j, Δ_j)` quadratic forms add up to a statistic that is approximately
//! `χ²_{2J}` under the null of no change. Benjamini-Hochberg control over
//! the candidate set turns the per-`q` p-values into an existence verdict.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::ar::{whole_pairs, CovarianceSpec};
use crate::error::{Error, Phase, Result};
use crate::fitter::{
    fit_grid, gls, gls_covariance, noise_floor, ols, phase_or_degenerate, residuals, FitGrid,
    FitOptions, FitResult, UnitFit,
};
use crate::model::{
    check_change_point, effect_sizes, line_design, segmented_design, ChangePointWindow,
    EffectSizes, Panel, MIN_SERIES_LEN,
};

/// Two-sided 95% normal quantile.
pub fn z_975() -> f64 {
    standard_normal().inverse_cdf(0.975)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Straight-line fit with a single AR(1) over the whole series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReducedFit {
    pub intercept: f64,
    pub slope: f64,
    pub phi: f64,
    pub sigma_w: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ReducedFit {
    pub fn response_sd(&self) -> f64 {
        crate::ar::response_sd(self.phi, self.sigma_w)
    }

    pub fn covariance(&self, len: usize) -> CovarianceSpec {
        CovarianceSpec::single_phase(len, self.phi, self.sigma_w)
            .expect("fitted AR parameters are valid by construction")
    }
}

/// Iterated GLS for the no-change model, one AR(1) regime throughout.
pub fn reduced_model_fit(y: &[f64], opts: &FitOptions) -> Result<ReducedFit> {
    let len = y.len();
    if len < MIN_SERIES_LEN {
        return Err(Error::InvalidArgument(format!(
            "series length {len} is below the minimum of {MIN_SERIES_LEN}"
        )));
    }
    opts.validate()?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observations".into()));
    }
    let x = line_design(len);
    let obs = &y[1..];
    let floor = noise_floor(y);
    let estimate = |resid: &[f64]| {
        let (a, b) = whole_pairs(resid);
        phase_or_degenerate(a, b, Phase::Whole, floor)
    };

    let mut coef = ols(&x, obs)?;
    let mut ar = estimate(&residuals(&x, obs, &coef))?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let cov = CovarianceSpec::single_phase(len, ar.phi, ar.sigma_w)?;
        coef = gls(&x, obs, &cov)?;
        let next = estimate(&residuals(&x, obs, &coef))?;
        let step = (next.phi - ar.phi).abs();
        ar = next;
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(ReducedFit {
        intercept: coef[0],
        slope: coef[1],
        phi: ar.phi,
        sigma_w: ar.sigma_w,
        iterations,
        converged,
    })
}

/// Unit contribution `d' [C V C']⁻¹ d` with `d = (δ̂, Δ̂)` from the full fit
/// and `V = (X'Σ̂₀⁻¹X)⁻¹` under the reduced-model covariance.
fn unit_wald(full: &UnitFit, reduced: &ReducedFit) -> Result<f64> {
    let x = segmented_design(full.q, full.len);
    let cov0 = reduced.covariance(full.len);
    let v = gls_covariance(&x, &cov0)?;
    let block = Matrix2::new(v[(2, 2)], v[(2, 3)], v[(3, 2)], v[(3, 3)]);
    let chol = block
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("C V Cᵀ is numerically singular".into()))?;
    let d = Vector2::new(full.theta.level_shift, full.theta.slope_shift);
    let z = chol
        .l()
        .solve_lower_triangular(&d)
        .ok_or_else(|| Error::RankDeficient("C V Cᵀ is numerically singular".into()))?;
    Ok(z.norm_squared())
}

fn wald_from_fits(fits: &[UnitFit], reduced: &[ReducedFit], names: &[String]) -> Result<f64> {
    let mut total = 0.0;
    for ((fit, red), name) in fits.iter().zip(reduced).zip(names) {
        total += unit_wald(fit, red).map_err(|e| e.in_unit(name, fit.q))?;
    }
    Ok(total)
}

fn reduced_fits(panel: &Panel, opts: &FitOptions) -> Result<Vec<ReducedFit>> {
    (0..panel.units())
        .map(|j| {
            reduced_model_fit(panel.series(j), opts).map_err(|e| Error::Unit {
                unit: panel.unit_names()[j].clone(),
                q: 0,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Multivariate Wald statistic for `H₀: δ_j = Δ_j = 0 ∀j` at change point `q`.
pub fn wald_statistic(panel: &Panel, q: usize, opts: &FitOptions) -> Result<f64> {
    check_change_point(q, panel.len())?;
    let reduced = reduced_fits(panel, opts)?;
    let fits = (0..panel.units())
        .map(|j| {
            crate::fitter::fit_unit(panel.series(j), q, opts)
                .map_err(|e| e.in_unit(&panel.unit_names()[j], q))
        })
        .collect::<Result<Vec<_>>>()?;
    wald_from_fits(&fits, &reduced, panel.unit_names())
}

/// Benjamini-Hochberg step-up outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BhOutcome {
    /// Adjusted p-values in input order.
    pub adjusted: Vec<f64>,
    /// Critical value `kα/m` of the largest passing rank `k`, or `α/m` when
    /// nothing passes.
    pub threshold: f64,
    pub rejected: usize,
}

pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> BhOutcome {
    let m = p_values.len();
    if m == 0 {
        return BhOutcome {
            adjusted: Vec::new(),
            threshold: alpha,
            rejected: 0,
        };
    }
    let mf = m as f64;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mut rejected = 0;
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= (rank + 1) as f64 * alpha / mf {
            rejected = rank + 1;
        }
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * mf / (rank + 1) as f64);
        adjusted[i] = running.clamp(0.0, 1.0);
    }
    BhOutcome {
        adjusted,
        threshold: rejected.max(1) as f64 * alpha / mf,
        rejected,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WaldPoint {
    pub q: usize,
    pub wald: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
}

/// Supremum Wald test report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwtReport {
    pub per_q: Vec<WaldPoint>,
    pub bh_threshold: f64,
    pub alpha: f64,
    pub dof: usize,
    pub rejected_hypotheses: usize,
    /// At least one candidate rejected after BH adjustment.
    pub reject: bool,
}

impl SwtReport {
    pub fn min_raw_p(&self) -> f64 {
        self.per_q.iter().map(|w| w.raw_p).fold(1.0, f64::min)
    }

    pub fn min_adjusted_p(&self) -> f64 {
        self.per_q.iter().map(|w| w.adjusted_p).fold(1.0, f64::min)
    }

    pub fn max_wald(&self) -> f64 {
        self.per_q.iter().map(|w| w.wald).fold(0.0, f64::max)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

fn swt_from_grid(
    grid: &FitGrid,
    reduced: &[ReducedFit],
    names: &[String],
    alpha: f64,
) -> Result<SwtReport> {
    let dof = 2 * reduced.len();
    let chi2 = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    let walds = grid
        .fits()
        .iter()
        .map(|row| wald_from_fits(row, reduced, names))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = walds.iter().map(|&w| chi2.sf(w).clamp(0.0, 1.0)).collect();
    let bh = benjamini_hochberg(&raw, alpha);
    let per_q = grid
        .window()
        .candidates()
        .iter()
        .zip(walds.iter().zip(raw.iter().zip(&bh.adjusted)))
        .map(|(&q, (&wald, (&raw_p, &adjusted_p)))| WaldPoint {
            q,
            wald,
            raw_p,
            adjusted_p,
        })
        .collect();
    Ok(SwtReport {
        per_q,
        bh_threshold: bh.threshold,
        alpha,
        dof,
        rejected_hypotheses: bh.rejected,
        reject: bh.rejected > 0,
    })
}

/// Wald statistic at every candidate, BH step-up at level `alpha`.
pub fn supremum_wald_test(
    panel: &Panel,
    window: &ChangePointWindow,
    alpha: f64,
    opts: &FitOptions,
) -> Result<SwtReport> {
    Ok(fit_and_test(panel, window, alpha, opts, true)?.1)
}

/// Change-point fit and supremum Wald test sharing one grid of unit fits.
pub fn fit_and_test(
    panel: &Panel,
    window: &ChangePointWindow,
    alpha: f64,
    opts: &FitOptions,
    parallel: bool,
) -> Result<(FitResult, SwtReport)> {
    check_alpha(alpha)?;
    let grid = fit_grid(panel, window, opts, parallel)?;
    let reduced = reduced_fits(panel, opts)?;
    let report = swt_from_grid(&grid, &reduced, panel.unit_names(), alpha)?;
    Ok((grid.into_result(), report))
}

/// Estimate with a normal-theory 95% interval and two-sided p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParamInference {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

impl ParamInference {
    pub fn new(estimate: f64, se: f64) -> Self {
        let half = z_975() * se;
        let p_value = if se > 0.0 {
            (2.0 * standard_normal().sf((estimate / se).abs())).clamp(0.0, 1.0)
        } else if estimate == 0.0 {
            1.0
        } else {
            0.0
        };
        Self {
            estimate,
            se,
            ci_low: estimate - half,
            ci_high: estimate + half,
            p_value,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Per-unit inference at `τ̂`, conditional on `τ̂`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitInference {
    pub unit: String,
    pub intercept: ParamInference,
    pub slope: ParamInference,
    pub level_shift: ParamInference,
    pub slope_shift: ParamInference,
    /// `δ̂ + Δ̂ τ̂`.
    pub level_change: ParamInference,
    /// Set when the window carries an intervention time.
    pub effects: Option<EffectSizes>,
}

/// Inference for one converged unit fit.
pub fn unit_inference(
    fit: &UnitFit,
    unit: &str,
    intervention: Option<usize>,
) -> Result<UnitInference> {
    if !fit.converged {
        return Err(Error::NotConverged {
            unit: unit.to_owned(),
            iterations: fit.iterations,
        });
    }
    let x = segmented_design(fit.q, fit.len);
    let v = gls_covariance(&x, &fit.covariance())?;
    let se = |i: usize| v[(i, i)].max(0.0).sqrt();
    let theta = fit.theta;
    let tau = fit.q as f64;
    let weights = DVector::from_column_slice(&[0.0, 0.0, 1.0, tau]);
    let level_var = (weights.transpose() * &v * &weights)[(0, 0)];
    Ok(UnitInference {
        unit: unit.to_owned(),
        intercept: ParamInference::new(theta.intercept, se(0)),
        slope: ParamInference::new(theta.slope, se(1)),
        level_shift: ParamInference::new(theta.level_shift, se(2)),
        slope_shift: ParamInference::new(theta.slope_shift, se(3)),
        level_change: ParamInference::new(
            theta.level_shift + theta.slope_shift * tau,
            level_var.max(0.0).sqrt(),
        ),
        effects: intervention.map(|t| effect_sizes(&theta, fit.q, t)),
    })
}

/// Inference for every unit of a panel fit. Refused when any unit at `τ̂`
/// failed to converge.
pub fn param_inference(fit: &FitResult) -> Result<Vec<UnitInference>> {
    fit.unit_fits
        .iter()
        .zip(&fit.unit_names)
        .map(|(f, name)| unit_inference(f, name, fit.window.intervention()))
        .collect()
}
