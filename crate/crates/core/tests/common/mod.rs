//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the estimation code of the crate: every oracle is
//! built from the textbook definitions with dense linear algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// AR(1) phase estimates written out term by term, keyed by time index.
///
/// `r(t)` is the residual at time `t` for `t = 2..=T`. The pre-change sums
/// run over `t = 3..=q-1` and the post-change sums over `t = q+1..=T`, so
/// the pair straddling the change point belongs to neither phase. Every
/// mean divides by the number of terms it adds up.
pub fn ar_phase_reference(residuals: &[f64], q: usize) -> (f64, f64, f64, f64) {
    let big_t = residuals.len() + 1;
    let r = |t: usize| residuals[t - 2];
    let mean = |from: usize, to: usize| {
        let mut s = 0.0;
        for t in from..=to {
            s += r(t);
        }
        s / (to - from + 1) as f64
    };

    let r1a = mean(2, q - 2);
    let r1b = mean(3, q - 1);
    let r2a = mean(q, big_t - 1);
    let r2b = mean(q + 1, big_t);

    let mut sr1 = 0.0;
    let mut cross1 = 0.0;
    for t in 3..=q - 1 {
        sr1 += (r(t) - r1b).powi(2) + (r(t - 1) - r1a).powi(2);
        cross1 += (r(t) - r1b) * (r(t - 1) - r1a);
    }
    let phi1 = cross1 / (sr1 / 2.0);

    let mut sr2 = 0.0;
    let mut cross2 = 0.0;
    for t in q + 1..=big_t {
        sr2 += (r(t) - r2b).powi(2) + (r(t - 1) - r2a).powi(2);
        cross2 += (r(t) - r2b) * (r(t - 1) - r2a);
    }
    let phi2 = cross2 / (sr2 / 2.0);

    let mut ss1 = 0.0;
    for t in 3..=q - 1 {
        ss1 += ((r(t) - r1b) - phi1 * (r(t - 1) - r1a)).powi(2);
    }
    let mut ss2 = 0.0;
    for t in q + 1..=big_t {
        ss2 += ((r(t) - r2b) - phi2 * (r(t - 1) - r2a)).powi(2);
    }
    let sw1 = (ss1 / (q - 3) as f64).sqrt();
    let sw2 = (ss2 / (big_t - q) as f64).sqrt();
    (phi1, phi2, sw1, sw2)
}

/// Dense stationary AR(1) covariance `σ_w²/(1-φ²) φ^|i-j|`.
pub fn ar_block(n: usize, phi: f64, sigma_w: f64) -> DMatrix<f64> {
    let var = sigma_w * sigma_w / (1.0 - phi * phi);
    DMatrix::from_fn(n, n, |i, j| var * phi.powi(i.abs_diff(j) as i32))
}

/// Two-block covariance over `t = 2..=T`: pre block `t < q`, post `t >= q`.
pub fn two_phase_covariance(
    q: usize,
    len: usize,
    phi1: f64,
    phi2: f64,
    sw1: f64,
    sw2: f64,
) -> DMatrix<f64> {
    let n1 = q - 2;
    let n = len - 1;
    let mut sigma = DMatrix::zeros(n, n);
    sigma
        .view_mut((0, 0), (n1, n1))
        .copy_from(&ar_block(n1, phi1, sw1));
    sigma
        .view_mut((n1, n1), (n - n1, n - n1))
        .copy_from(&ar_block(n - n1, phi2, sw2));
    sigma
}

/// Segmented design over `t = 2..=T`, rebuilt from its definition.
pub fn design(q: usize, len: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(len - 1, 4);
    for t in 2..=len {
        let row = t - 2;
        x[(row, 0)] = 1.0;
        x[(row, 1)] = t as f64;
        if t >= q {
            x[(row, 2)] = 1.0;
            x[(row, 3)] = t as f64;
        }
    }
    x
}

/// Gaussian log-density of `y_2..=y_T` with mean `Xθ` and covariance `Σ`,
/// via LU for the determinant and the solve.
pub fn dense_loglik(y: &[f64], theta: [f64; 4], sigma: &DMatrix<f64>, q: usize) -> f64 {
    let len = y.len();
    let x = design(q, len);
    let r = DVector::from_column_slice(&y[1..]) - x * DVector::from_column_slice(&theta);
    let lu = sigma.clone().lu();
    let det = lu.determinant();
    let solved = lu.solve(&r).expect("invertible covariance");
    let n = (len - 1) as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * r.dot(&solved)
}

/// `Σ⁻¹ B` by LU.
pub fn dense_solve(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    sigma
        .clone()
        .lu()
        .solve(rhs)
        .expect("invertible covariance")
}

/// Mean `(XᵀΣ⁻¹X)⁻¹XᵀΣ⁻¹y` with dense inverses.
pub fn dense_gls(y: &[f64], sigma: &DMatrix<f64>, q: usize) -> DVector<f64> {
    let x = design(q, y.len());
    let si = sigma.clone().try_inverse().expect("invertible covariance");
    let a = x.transpose() * &si * &x;
    a.try_inverse().expect("full rank") * x.transpose() * si * DVector::from_column_slice(&y[1..])
}

/// Two independent stationary AR(1) blocks drawn by their own recursions.
pub fn draw_two_blocks(
    n1: usize,
    n2: usize,
    phi1: f64,
    phi2: f64,
    sw1: f64,
    sw2: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n1 + n2);
    for (n, phi, sw) in [(n1, phi1, sw1), (n2, phi2, sw2)] {
        let z: f64 = rng.sample(StandardNormal);
        let mut e = z * sw / (1.0 - phi * phi).sqrt();
        out.push(e);
        for _ in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            e = phi * e + sw * z;
            out.push(e);
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Number of strict decreases along a sequence.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}
