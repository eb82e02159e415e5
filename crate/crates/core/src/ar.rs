//! Phase-specific AR(1) errors.
//!
//! Residuals are stored as a slice `r` of length `T - 1` where `r[i]` belongs
//! to time `t = i + 2`. For a change point `q` the pre-change lag pairs are
//! `(r_{t-1}, r_t)` for `t = 3..=q-1` and the post-change pairs are those for
//! `t = q+1..=T`; the pair straddling `q` belongs to neither phase.
//!
//! The covariance of the residual vector is block diagonal with one
//! stationary AR(1) block per phase. Each block has a tridiagonal inverse,
//! so products with `Σ⁻¹`, quadratic forms and log-determinants are `O(T)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Phase, Result};
use crate::model::{check_change_point, mean_function, MeanParams};

/// Estimated AR coefficients are clamped to `[-PHI_BOUND, PHI_BOUND]`.
pub const PHI_BOUND: f64 = 1.0 - 1e-6;

/// Lower bound on an estimated white-noise standard deviation.
pub const SIGMA_W_FLOOR: f64 = 1e-9;

/// Stationary standard deviation `σ_w / sqrt(1 - φ²)` of an AR(1) process.
pub fn response_sd(phi: f64, sigma_w: f64) -> f64 {
    sigma_w / (1.0 - phi * phi).sqrt()
}

/// AR(1) coefficients and innovation SDs before and after the change point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ArPhaseParams {
    pub phi1: f64,
    pub phi2: f64,
    pub sigma_w1: f64,
    pub sigma_w2: f64,
}

impl ArPhaseParams {
    pub fn new(phi1: f64, phi2: f64, sigma_w1: f64, sigma_w2: f64) -> Result<Self> {
        let params = Self {
            phi1,
            phi2,
            sigma_w1,
            sigma_w2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Same process in both phases.
    pub fn single(phi: f64, sigma_w: f64) -> Result<Self> {
        Self::new(phi, phi, sigma_w, sigma_w)
    }

    pub fn validate(&self) -> Result<()> {
        check_phi(self.phi1)?;
        check_phi(self.phi2)?;
        check_sigma(self.sigma_w1)?;
        check_sigma(self.sigma_w2)
    }

    /// Pre-change response SD.
    pub fn sd1(&self) -> f64 {
        response_sd(self.phi1, self.sigma_w1)
    }

    /// Post-change response SD.
    pub fn sd2(&self) -> f64 {
        response_sd(self.phi2, self.sigma_w2)
    }

    pub(crate) fn from_phases(pre: PhaseEstimate, post: PhaseEstimate) -> Self {
        Self {
            phi1: pre.phi,
            phi2: post.phi,
            sigma_w1: pre.sigma_w,
            sigma_w2: post.sigma_w,
        }
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if phi.is_finite() && phi.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::Causality { phi })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "white-noise SD must be positive and finite, got {sigma}"
        )))
    }
}

/// AR(1) estimate for a single phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseEstimate {
    pub phi: f64,
    pub sigma_w: f64,
}

impl PhaseEstimate {
    /// Placeholder used when a phase carries no residual variation.
    pub const DEGENERATE: PhaseEstimate = PhaseEstimate {
        phi: 0.0,
        sigma_w: SIGMA_W_FLOOR,
    };
}

/// Lag-pair estimator over `(lagged[i], current[i])`.
///
/// Both members of a pair are centred on their own mean. The coefficient is
/// the cross-product divided by the average of the two sums of squares,
/// which keeps `|φ| <= 1` by construction; the innovation variance is the
/// mean squared one-step prediction error.
pub fn estimate_phase(lagged: &[f64], current: &[f64], phase: Phase) -> Result<PhaseEstimate> {
    debug_assert_eq!(lagged.len(), current.len());
    let pairs = current.len();
    if pairs < 2 {
        return Err(Error::TooFewPairs { phase, pairs });
    }
    if lagged.iter().chain(current).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{phase} residuals")));
    }
    let n = pairs as f64;
    let mean_lagged = lagged.iter().sum::<f64>() / n;
    let mean_current = current.iter().sum::<f64>() / n;

    let (mut cross, mut ss_lagged, mut ss_current) = (0.0, 0.0, 0.0);
    for (a, b) in lagged.iter().zip(current) {
        let (da, db) = (a - mean_lagged, b - mean_current);
        cross += db * da;
        ss_lagged += da * da;
        ss_current += db * db;
    }
    let volatility = (ss_current + ss_lagged) / 2.0;
    if volatility.is_nan() || volatility <= 0.0 {
        return Err(Error::DegeneratePhase { phase });
    }
    let phi = (cross / volatility).clamp(-PHI_BOUND, PHI_BOUND);

    let innovation_ss: f64 = lagged
        .iter()
        .zip(current)
        .map(|(a, b)| {
            let e = (b - mean_current) - phi * (a - mean_lagged);
            e * e
        })
        .sum();
    let sigma_w = (innovation_ss / n).sqrt().max(SIGMA_W_FLOOR);
    Ok(PhaseEstimate { phi, sigma_w })
}

/// `(lagged, current)` slices of the pre-change phase.
pub(crate) fn pre_pairs(residuals: &[f64], q: usize) -> (&[f64], &[f64]) {
    (&residuals[..q - 3], &residuals[1..q - 2])
}

/// `(lagged, current)` slices of the post-change phase.
pub(crate) fn post_pairs(residuals: &[f64], q: usize) -> (&[f64], &[f64]) {
    let n = residuals.len();
    (&residuals[q - 2..n - 1], &residuals[q - 1..])
}

/// `(lagged, current)` slices spanning the whole residual vector.
pub(crate) fn whole_pairs(residuals: &[f64]) -> (&[f64], &[f64]) {
    let n = residuals.len();
    (&residuals[..n - 1], &residuals[1..])
}

/// Estimates both phases from residuals over `t = 2..=T` for change point `q`.
pub fn estimate_ar_phases(residuals: &[f64], q: usize) -> Result<ArPhaseParams> {
    check_change_point(q, residuals.len() + 1)?;
    let (a, b) = pre_pairs(residuals, q);
    let pre = estimate_phase(a, b, Phase::Pre)?;
    let (a, b) = post_pairs(residuals, q);
    let post = estimate_phase(a, b, Phase::Post)?;
    Ok(ArPhaseParams::from_phases(pre, post))
}

/// Estimates a single AR(1) over the whole residual span.
pub fn estimate_single_phase(residuals: &[f64]) -> Result<PhaseEstimate> {
    if residuals.len() < 3 {
        return Err(Error::TooFewPairs {
            phase: Phase::Whole,
            pairs: residuals.len().saturating_sub(1),
        });
    }
    let (a, b) = whole_pairs(residuals);
    estimate_phase(a, b, Phase::Whole)
}

/// One stationary AR(1) block on the diagonal of the covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArBlock {
    pub start: usize,
    pub len: usize,
    pub phi: f64,
    pub sigma_w: f64,
}

impl ArBlock {
    fn variance(&self) -> f64 {
        self.sigma_w * self.sigma_w / (1.0 - self.phi * self.phi)
    }

    /// `|Γ| = σ²ⁿ (1 - φ²)ⁿ⁻¹` with `σ²` the stationary variance.
    fn log_det(&self) -> f64 {
        let n = self.len as f64;
        n * self.variance().ln() + (n - 1.0) * (1.0 - self.phi * self.phi).ln()
    }

    /// `Γ⁻¹ x` written into `out`.
    fn apply_inverse(&self, x: &[f64], out: &mut [f64]) {
        let phi = self.phi;
        let scale = 1.0 / (self.sigma_w * self.sigma_w);
        let n = self.len;
        if n == 1 {
            out[0] = (1.0 - phi * phi) * scale * x[0];
            return;
        }
        out[0] = scale * (x[0] - phi * x[1]);
        for i in 1..n - 1 {
            out[i] = scale * ((1.0 + phi * phi) * x[i] - phi * (x[i - 1] + x[i + 1]));
        }
        out[n - 1] = scale * (x[n - 1] - phi * x[n - 2]);
    }

    /// `L x` with `LᵀL = Γ⁻¹`: the scaled first value followed by the
    /// one-step prediction errors, all divided by `σ_w`.
    fn whiten(&self, x: &[f64], out: &mut [f64]) {
        let phi = self.phi;
        out[0] = (1.0 - phi * phi).sqrt() * x[0] / self.sigma_w;
        for i in 1..self.len {
            out[i] = (x[i] - phi * x[i - 1]) / self.sigma_w;
        }
    }

    /// `xᵀ Γ⁻¹ x`.
    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let phi = self.phi;
        let mut acc = (1.0 - phi * phi) * x[0] * x[0];
        for w in x.windows(2) {
            let e = w[1] - phi * w[0];
            acc += e * e;
        }
        acc / (self.sigma_w * self.sigma_w)
    }
}

/// Block-diagonal AR(1) covariance of the residual vector over `t = 2..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSpec {
    dim: usize,
    blocks: Vec<ArBlock>,
}

impl CovarianceSpec {
    /// Pre block over `t = 2..=q-1`, post block over `t = q..=T`.
    pub fn two_phase(q: usize, len: usize, params: &ArPhaseParams) -> Result<Self> {
        check_change_point(q, len)?;
        params.validate()?;
        let pre_len = q - 2;
        Ok(Self {
            dim: len - 1,
            blocks: vec![
                ArBlock {
                    start: 0,
                    len: pre_len,
                    phi: params.phi1,
                    sigma_w: params.sigma_w1,
                },
                ArBlock {
                    start: pre_len,
                    len: len - 1 - pre_len,
                    phi: params.phi2,
                    sigma_w: params.sigma_w2,
                },
            ],
        })
    }

    /// One AR(1) block over the whole residual span.
    pub fn single_phase(len: usize, phi: f64, sigma_w: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "series length {len} leaves no residuals"
            )));
        }
        check_phi(phi)?;
        check_sigma(sigma_w)?;
        Ok(Self {
            dim: len - 1,
            blocks: vec![ArBlock {
                start: 0,
                len: len - 1,
                phi,
                sigma_w,
            }],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[ArBlock] {
        &self.blocks
    }

    /// Dense `Σ`: entry `(s, t)` within a block is `σ_w²/(1-φ²) φ^|s-t|`,
    /// zero across blocks.
    pub fn build_covariance(&self) -> DMatrix<f64> {
        let mut sigma = DMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            let var = b.variance();
            for i in 0..b.len {
                for j in 0..b.len {
                    let lag = i.abs_diff(j) as i32;
                    sigma[(b.start + i, b.start + j)] = var * b.phi.powi(lag);
                }
            }
        }
        sigma
    }

    /// `Σ⁻¹ rhs`, column by column, using the tridiagonal block inverses.
    pub fn solve_gls_weights(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has {} rows, covariance has dimension {}",
                rhs.nrows(),
                self.dim
            )));
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("right-hand side of GLS solve".into()));
        }
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for c in 0..rhs.ncols() {
            let col = rhs.column(c);
            let x = col.as_slice();
            let mut dst = out.column_mut(c);
            self.apply_inverse(x, dst.as_mut_slice());
        }
        Ok(out)
    }

    pub(crate) fn apply_inverse(&self, x: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            let range = b.start..b.start + b.len;
            b.apply_inverse(&x[range.clone()], &mut out[range]);
        }
    }

    /// `L x` with `LᵀL = Σ⁻¹`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for b in &self.blocks {
            let range = b.start..b.start + b.len;
            b.whiten(&x[range.clone()], &mut out[range]);
        }
        out
    }

    /// `L X`, column by column.
    pub fn whiten_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let col = self.whiten(x.column(c).as_slice());
            out.column_mut(c).copy_from_slice(&col);
        }
        out
    }

    /// `xᵀ Σ⁻¹ x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.quadratic_form(&x[b.start..b.start + b.len]))
            .sum()
    }

    /// `log |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.blocks.iter().map(ArBlock::log_det).sum()
    }
}

/// Draws `y_1..=y_T` from the segmented mean plus switching AR(1) noise.
///
/// `tau = None` means no change point: the pre-change mean line and the
/// pre-change process hold throughout. The noise starts from its stationary
/// distribution and switches to the post-change coefficient and innovation
/// SD at `t = tau`, i.e. `ε_τ = φ₂ ε_{τ-1} + e_τ`.
pub fn simulate_series(
    theta: &MeanParams,
    tau: Option<usize>,
    params: &ArPhaseParams,
    len: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if let Some(tau) = tau {
        check_change_point(tau, len)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(len);
    let mut eps = params.sd1() * rng.sample::<f64, _>(StandardNormal);
    for t in 1..=len {
        if t > 1 {
            let z: f64 = rng.sample(StandardNormal);
            eps = if tau.is_some_and(|tau| t >= tau) {
                params.phi2 * eps + params.sigma_w2 * z
            } else {
                params.phi1 * eps + params.sigma_w1 * z
            };
        }
        let mu = match tau {
            Some(tau) => mean_function(theta, tau, t),
            None => theta.intercept + theta.slope * t as f64,
        };
        y.push(mu + eps);
    }
    Ok(y)
}
