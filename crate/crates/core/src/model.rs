//! Panels, segmented mean functions and the change-point design matrix.
//!
//! Time is the raw integer index `1..=T`. The first observation of every
//! series is conditioned on, so all regression quantities run over
//! `t = 2..=T` and have `T - 1` rows.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Shortest series the model accepts.
pub const MIN_SERIES_LEN: usize = 6;

/// Smallest admissible candidate change point.
pub const MIN_CHANGE_POINT: usize = 4;

/// `J` aligned, complete series of equal length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    values: Vec<Vec<f64>>,
    unit_names: Vec<String>,
    time_labels: Vec<String>,
}

impl Panel {
    /// Builds a panel from one row of values per unit.
    ///
    /// `time_labels` are cosmetic: label `i` names time index `i + 1`.
    pub fn new(
        unit_names: Vec<String>,
        values: Vec<Vec<f64>>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidPanel("panel has no units".into()));
        }
        if unit_names.len() != values.len() {
            return Err(Error::InvalidPanel(format!(
                "{} unit names for {} series",
                unit_names.len(),
                values.len()
            )));
        }
        let len = values[0].len();
        if len < MIN_SERIES_LEN {
            return Err(Error::InvalidPanel(format!(
                "series length {len} is below the minimum of {MIN_SERIES_LEN}"
            )));
        }
        for (name, series) in unit_names.iter().zip(&values) {
            if series.len() != len {
                return Err(Error::InvalidPanel(format!(
                    "unit '{name}' has {} observations, expected {len}",
                    series.len()
                )));
            }
            if let Some(t) = series.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "unit '{name}' has a non-finite value at t={}",
                    t + 1
                )));
            }
        }
        if time_labels.len() != len {
            return Err(Error::InvalidPanel(format!(
                "{} time labels for series of length {len}",
                time_labels.len()
            )));
        }
        Ok(Self {
            values,
            unit_names,
            time_labels,
        })
    }

    /// Panel with time labels `1..=T`.
    pub fn from_series(unit_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let len = values.first().map_or(0, Vec::len);
        let labels = (1..=len).map(|t| t.to_string()).collect();
        Self::new(unit_names, values, labels)
    }

    pub fn units(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn series(&self, unit: usize) -> &[f64] {
        &self.values[unit]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn unit_names(&self) -> &[String] {
        &self.unit_names
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Label of time index 1.
    pub fn time_origin(&self) -> &str {
        &self.time_labels[0]
    }

    /// Label of the 1-based time index `t`.
    pub fn label_of(&self, t: usize) -> Option<&str> {
        t.checked_sub(1)
            .and_then(|i| self.time_labels.get(i))
            .map(String::as_str)
    }

    /// 1-based time index carrying `label`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.time_labels
            .iter()
            .position(|l| l == label)
            .map(|i| i + 1)
    }
}

/// Segmented-regression coefficients of one unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanParams {
    /// Pre-change intercept.
    pub intercept: f64,
    /// Pre-change slope per time unit.
    pub slope: f64,
    /// Intercept shift from the change point on.
    pub level_shift: f64,
    /// Slope shift from the change point on.
    pub slope_shift: f64,
}

impl MeanParams {
    pub const fn new(intercept: f64, slope: f64, level_shift: f64, slope_shift: f64) -> Self {
        Self {
            intercept,
            slope,
            level_shift,
            slope_shift,
        }
    }

    /// Straight line with no change.
    pub const fn line(intercept: f64, slope: f64) -> Self {
        Self::new(intercept, slope, 0.0, 0.0)
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.intercept,
            self.slope,
            self.level_shift,
            self.slope_shift,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn has_change(&self) -> bool {
        self.level_shift != 0.0 || self.slope_shift != 0.0
    }
}

/// Candidate change points `Q` and the formal intervention time `t*`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChangePointWindow {
    candidates: Vec<usize>,
    intervention: Option<usize>,
}

impl ChangePointWindow {
    /// `Q = {t* - before, ..., t* + after}`.
    pub fn around(intervention: usize, before: usize, after: usize, len: usize) -> Result<Self> {
        let start = intervention.checked_sub(before).ok_or_else(|| {
            Error::InvalidWindow(format!(
                "window start t* - m = {intervention} - {before} is below 1"
            ))
        })?;
        let window = Self {
            candidates: (start..=intervention + after).collect(),
            intervention: Some(intervention),
        };
        window.validate(len)?;
        Ok(window)
    }

    /// Explicit candidate set, optionally anchored to an intervention time.
    pub fn from_candidates(
        candidates: Vec<usize>,
        intervention: Option<usize>,
        len: usize,
    ) -> Result<Self> {
        let window = Self {
            candidates,
            intervention,
        };
        window.validate(len)?;
        Ok(window)
    }

    /// Contiguous range `first..=last`.
    pub fn range(first: usize, last: usize, len: usize) -> Result<Self> {
        Self::from_candidates((first..=last).collect(), None, len)
    }

    pub fn with_intervention(mut self, intervention: usize) -> Self {
        self.intervention = Some(intervention);
        self
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn intervention(&self) -> Option<usize> {
        self.intervention
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Checks `Q` against a series of length `len`.
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidWindow("candidate set is empty".into()));
        }
        if self.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidWindow(
                "candidates must be strictly increasing".into(),
            ));
        }
        for &q in &self.candidates {
            check_change_point(q, len)?;
        }
        Ok(())
    }
}

/// `4 <= q <= T - 2`.
pub fn check_change_point(q: usize, len: usize) -> Result<()> {
    if q < MIN_CHANGE_POINT || q + 2 > len {
        return Err(Error::Window { q, len });
    }
    Ok(())
}

/// Level and trend change of one unit at the estimated change point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectSizes {
    /// `delta + Delta * tau_hat`: jump between the projected pre-change line
    /// and the post-change line at the change point.
    pub level_change: f64,
    pub trend_change: f64,
    /// `tau_hat - t*`; negative means the effect anticipates the intervention.
    pub lag: i64,
}

/// Design matrix over `t = 2..=T`: row `[1, t, 0, 0]` before `q`,
/// `[1, t, 1, t]` from `q` on.
pub fn design_matrix(q: usize, len: usize) -> Result<DMatrix<f64>> {
    check_change_point(q, len)?;
    Ok(segmented_design(q, len))
}

pub(crate) fn segmented_design(q: usize, len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(len - 1, 4, |row, col| {
        let t = (row + 2) as f64;
        let post = row + 2 >= q;
        match (col, post) {
            (0, _) => 1.0,
            (1, _) => t,
            (2, true) => 1.0,
            (3, true) => t,
            _ => 0.0,
        }
    })
}

/// Design matrix of the no-change model over `t = 2..=T`.
pub(crate) fn line_design(len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        len - 1,
        2,
        |row, col| if col == 0 { 1.0 } else { (row + 2) as f64 },
    )
}

/// Segmented mean at time `t` for change point `tau`.
pub fn mean_function(theta: &MeanParams, tau: usize, t: usize) -> f64 {
    let t_f = t as f64;
    if t < tau {
        theta.intercept + theta.slope * t_f
    } else {
        (theta.intercept + theta.level_shift) + (theta.slope + theta.slope_shift) * t_f
    }
}

pub fn effect_sizes(theta: &MeanParams, tau_hat: usize, intervention: usize) -> EffectSizes {
    EffectSizes {
        level_change: theta.level_shift + theta.slope_shift * tau_hat as f64,
        trend_change: theta.slope_shift,
        lag: tau_hat as i64 - intervention as i64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn design_matrix_minimal_case() {
        let x = design_matrix(4, 6).unwrap();
        let expected = [
            [1.0, 2.0, 0.0, 0.0],
            [1.0, 3.0, 0.0, 0.0],
            [1.0, 4.0, 1.0, 4.0],
            [1.0, 5.0, 1.0, 5.0],
            [1.0, 6.0, 1.0, 6.0],
        ];
        assert_eq!(x.nrows(), 5);
        for (i, row) in expected.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(x[(i, j)], *v);
            }
        }
    }

    #[test]
    fn design_matrix_rows_around_change() {
        let x = design_matrix(10, 60).unwrap();
        assert_eq!(x.nrows(), 59);
        assert_eq!(
            x.row(7).iter().copied().collect::<Vec<_>>(),
            [1.0, 9.0, 0.0, 0.0]
        );
        assert_eq!(
            x.row(8).iter().copied().collect::<Vec<_>>(),
            [1.0, 10.0, 1.0, 10.0]
        );
    }

    #[test]
    fn design_matrix_rejects_out_of_window() {
        match design_matrix(2, 6) {
            Err(Error::Window { q: 2, len: 6 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(design_matrix(5, 6).is_err());
        assert!(design_matrix(4, 6).is_ok());
        let msg = design_matrix(59, 60).unwrap_err().to_string();
        assert!(msg.contains("q=59") && msg.contains("T=60"), "{msg}");
    }

    #[test]
    fn degenerate_all_post_design_has_unit_indicator() {
        // q = 2 is outside the admissible window; the raw construction still
        // marks every modelled row as post-change.
        let x = segmented_design(2, 6);
        assert!((0..5).all(|i| x[(i, 2)] == 1.0));
    }

    #[test]
    fn mean_function_values() {
        let flat = MeanParams::new(65.0, 0.5, 0.0, 0.0);
        assert_eq!(mean_function(&flat, 30, 10), 70.0);
        let theta = MeanParams::new(65.0, 0.5, 2.0, 0.1);
        assert!((mean_function(&theta, 30, 30) - 85.0).abs() < 1e-12);
        assert!((mean_function(&theta, 30, 29) - 79.5).abs() < 1e-12);
    }

    #[test]
    fn effect_sizes_examples() {
        let e = effect_sizes(&MeanParams::new(65.0, 0.5, 0.0, 0.0), 30, 31);
        assert_eq!(
            e,
            EffectSizes {
                level_change: 0.0,
                trend_change: 0.0,
                lag: -1
            }
        );

        // Level shift chosen so that delta + Delta * 29 = -6.91.
        let slope_shift = -0.35;
        let level_shift = -6.91 - slope_shift * 29.0;
        let e = effect_sizes(
            &MeanParams::new(64.32, 0.56, level_shift, slope_shift),
            29,
            31,
        );
        assert!((e.level_change + 6.91).abs() < 1e-12);
        assert_eq!(e.trend_change, -0.35);
        assert_eq!(e.lag, -2);
    }

    #[test]
    fn window_construction() {
        let w = ChangePointWindow::around(31, 6, 3, 60).unwrap();
        assert_eq!(w.candidates(), (25..=34).collect::<Vec<_>>().as_slice());
        assert_eq!(w.intervention(), Some(31));
        assert!(ChangePointWindow::around(5, 2, 0, 60).is_err());
        assert!(ChangePointWindow::range(50, 59, 60).is_err());
        assert!(ChangePointWindow::from_candidates(vec![10, 10], None, 60).is_err());
        assert!(ChangePointWindow::from_candidates(vec![], None, 60).is_err());
        assert!(ChangePointWindow::around(3, 5, 1, 60).is_err());
    }

    #[test]
    fn panel_validation() {
        let ok = Panel::from_series(vec!["a".into()], vec![vec![1.0; 6]]).unwrap();
        assert_eq!(ok.len(), 6);
        assert_eq!(ok.time_origin(), "1");
        assert_eq!(ok.index_of("4"), Some(4));
        assert!(Panel::from_series(vec!["a".into()], vec![vec![1.0; 5]]).is_err());
        assert!(Panel::from_series(
            vec!["a".into(), "b".into()],
            vec![vec![1.0; 6], vec![1.0; 7]]
        )
        .is_err());
        let mut bad = vec![1.0; 6];
        bad[3] = f64::NAN;
        assert!(Panel::from_series(vec!["a".into()], vec![bad]).is_err());
    }

    fn params() -> impl Strategy<Value = MeanParams> {
        (-100.0..100.0f64, -2.0..2.0f64, -10.0..10.0f64, -1.0..1.0f64)
            .prop_map(|(a, b, c, d)| MeanParams::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn pre_change_columns_do_not_depend_on_q(len in 6usize..80, qa in 0usize..1000, qb in 0usize..1000) {
            let span = len - 5;
            let (qa, qb) = (4 + qa % span, 4 + qb % span);
            let (xa, xb) = (design_matrix(qa, len).unwrap(), design_matrix(qb, len).unwrap());
            prop_assert_eq!(xa.columns(0, 2), xb.columns(0, 2));
        }

        #[test]
        fn no_change_mean_ignores_tau(a in -100.0..100.0f64, b in -2.0..2.0f64, tau in 1usize..200, t in 1usize..200) {
            let theta = MeanParams::line(a, b);
            prop_assert_eq!(mean_function(&theta, tau, t), mean_function(&theta, 1, t));
        }

        #[test]
        fn design_times_theta_is_mean(theta in params(), len in 6usize..80, q in 0usize..1000) {
            let q = 4 + q % (len - 5);
            let x = design_matrix(q, len).unwrap();
            let fitted = &x * nalgebra::DVector::from_row_slice(&theta.to_array());
            for t in 2..=len {
                let m = mean_function(&theta, q, t);
                prop_assert!((fitted[t - 2] - m).abs() <= 1e-9 * (1.0 + m.abs()));
            }
        }
    }
}
