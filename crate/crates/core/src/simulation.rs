//! Monte Carlo studies of size, power and change-point accuracy.
//!
//! Every replicate draws its series from a seed derived from the root seed,
//! a fingerprint of the noise process and the replicate index, so results do
//! not depend on how replicates are spread over worker threads. The
//! fingerprint deliberately leaves out the number of units and the effect
//! size: unit `j` of replicate `i` sees the same noise whatever `J` or `Δ`
//! is, which makes curves across the slope grid and across `J` share
//! common random numbers.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::ar::{simulate_series, ArPhaseParams};
use crate::error::{Error, Result};
use crate::fitter::FitOptions;
use crate::inference::{fit_and_test, wald_statistic};
use crate::model::{ChangePointWindow, MeanParams, Panel};

/// White-noise SD used throughout the simulation studies.
pub const SIGMA_W: f64 = 3.38;

/// Default replicate count.
pub const DEFAULT_REPLICATES: usize = 2_000;

/// Replicate count of the full-size studies.
pub const FULL_REPLICATES: usize = 10_000;

pub const SERIES_LENGTHS: [usize; 2] = [60, 120];
pub const PHIS: [f64; 2] = [0.1, 0.6];
pub const UNIT_COUNTS: [usize; 3] = [1, 3, 5];

/// Reference type-I error rates at `α = 0.05` for the size study, indexed
/// `[phi][T][J]` in the order of [`PHIS`], [`SERIES_LENGTHS`], [`UNIT_COUNTS`].
pub const TABLE1_REFERENCE: [[[f64; 3]; 2]; 2] = [
    [[0.0295, 0.0291, 0.0342], [0.0274, 0.0265, 0.0263]],
    [[0.0460, 0.0704, 0.1003], [0.0299, 0.0318, 0.0436]],
];

pub fn table1_reference(phi: f64, len: usize, units: usize) -> Option<f64> {
    let p = PHIS.iter().position(|&v| v == phi)?;
    let t = SERIES_LENGTHS.iter().position(|&v| v == len)?;
    let j = UNIT_COUNTS.iter().position(|&v| v == units)?;
    Some(TABLE1_REFERENCE[p][t][j])
}

/// Null mean line of unit `j` (0-based): small fixed offsets across units.
pub fn unit_line(j: usize) -> MeanParams {
    MeanParams::line(65.0 + 0.5 * j as f64, 0.5 + 0.01 * j as f64)
}

/// Candidate set of the studies: `{25..=34}` for `T = 60`, `{50..=69}` for
/// `T = 120`, and the same proportions otherwise.
pub fn study_window(len: usize) -> Result<ChangePointWindow> {
    let first = len * 5 / 12;
    let count = (len / 6).max(1);
    ChangePointWindow::range(first, first + count - 1, len)
}

/// Slope-change grid `{0, 0.01, ..., 0.25, 0.30, 0.35, 0.40, 0.45}`.
pub fn slope_grid() -> Vec<f64> {
    (0..=25)
        .map(|i| i as f64 / 100.0)
        .chain([0.30, 0.35, 0.40, 0.45])
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replicate `index`; a pure function of its arguments.
pub fn replicate_seed(root: u64, fingerprint: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ fingerprint) ^ index)
}

fn unit_seed(replicate: u64, unit: usize) -> u64 {
    splitmix64(replicate ^ splitmix64(unit as u64).rotate_left(23))
}

/// One simulation cell.
#[derive(Clone, Debug, Serialize)]
pub struct SimScenario {
    pub units: usize,
    pub len: usize,
    pub phi: f64,
    pub sigma_w: f64,
    pub thetas: Vec<MeanParams>,
    /// `None` simulates without a change point.
    pub tau_true: Option<usize>,
    pub window: ChangePointWindow,
    pub replicates: usize,
    /// Index of the first replicate; lets a study be split into chunks.
    pub first_replicate: usize,
    pub seed: u64,
    pub alpha: f64,
    pub fit: FitOptions,
}

impl SimScenario {
    /// No change point; unit lines from [`unit_line`].
    pub fn null(units: usize, len: usize, phi: f64, replicates: usize, seed: u64) -> Result<Self> {
        let scenario = Self {
            units,
            len,
            phi,
            sigma_w: SIGMA_W,
            thetas: (0..units).map(unit_line).collect(),
            tau_true: None,
            window: study_window(len)?,
            replicates,
            first_replicate: 0,
            seed,
            alpha: 0.05,
            fit: FitOptions::default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Slope change `Δ` in every unit at the middle of the series, no
    /// intercept shift.
    pub fn slope_change(
        units: usize,
        len: usize,
        phi: f64,
        slope_shift: f64,
        replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut scenario = Self::null(units, len, phi, replicates, seed)?;
        scenario.tau_true = Some(len / 2);
        scenario = scenario.with_slope_shift(slope_shift);
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn with_slope_shift(&self, slope_shift: f64) -> Self {
        let mut next = self.clone();
        for theta in &mut next.thetas {
            theta.slope_shift = slope_shift;
        }
        next
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.thetas.len() != self.units {
            return Err(Error::InvalidArgument(format!(
                "{} mean functions for {} units",
                self.thetas.len(),
                self.units
            )));
        }
        ArPhaseParams::single(self.phi, self.sigma_w)?;
        self.window.validate(self.len)?;
        if let Some(tau) = self.tau_true {
            crate::model::check_change_point(tau, self.len)?;
        } else if self.thetas.iter().any(MeanParams::has_change) {
            return Err(Error::InvalidArgument(
                "a scenario without change point must have zero level and slope shifts".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        self.fit.validate()
    }

    /// Hash of the noise process: series length, AR coefficient, noise SD.
    pub fn fingerprint(&self) -> u64 {
        let mut h = splitmix64(self.len as u64);
        h = splitmix64(h ^ self.phi.to_bits());
        splitmix64(h ^ self.sigma_w.to_bits())
    }

    fn noise(&self) -> ArPhaseParams {
        ArPhaseParams::single(self.phi, self.sigma_w).expect("validated scenario")
    }

    /// Panel of replicate `index`.
    pub fn draw_panel(&self, index: usize) -> Result<Panel> {
        let rep = replicate_seed(self.seed, self.fingerprint(), index as u64);
        let noise = self.noise();
        let values = self
            .thetas
            .iter()
            .enumerate()
            .map(|(j, theta)| {
                simulate_series(theta, self.tau_true, &noise, self.len, unit_seed(rep, j))
            })
            .collect::<Result<Vec<_>>>()?;
        Panel::from_series(
            (1..=self.units).map(|j| format!("unit{j}")).collect(),
            values,
        )
    }

    fn replicate_range(&self) -> std::ops::Range<usize> {
        self.first_replicate..self.first_replicate + self.replicates
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReplicateOutcome {
    pub rejected: bool,
    pub tau_hat: usize,
    pub recovered: bool,
    pub converged: bool,
}

pub fn run_replicate(scenario: &SimScenario, index: usize) -> Result<ReplicateOutcome> {
    let panel = scenario.draw_panel(index)?;
    let (fit, swt) = fit_and_test(
        &panel,
        &scenario.window,
        scenario.alpha,
        &scenario.fit,
        false,
    )?;
    Ok(ReplicateOutcome {
        rejected: swt.reject,
        tau_hat: fit.tau_hat,
        recovered: scenario.tau_true == Some(fit.tau_hat),
        converged: fit.non_converged.is_empty(),
    })
}

/// Aggregated replicate counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimOutcome {
    pub replicates: usize,
    pub rejections: usize,
    pub exact_recoveries: usize,
    pub recoveries_given_rejection: usize,
    pub non_converged: usize,
    pub rejection_rate: f64,
    pub exact_recovery_rate: f64,
    /// `None` when no replicate rejected.
    pub recovery_rate_given_rejection: Option<f64>,
    /// `sqrt(p̂(1-p̂)/n)` of the rejection rate.
    pub mc_standard_error: f64,
    pub recovery_mc_standard_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_replicate: Option<Vec<ReplicateOutcome>>,
}

pub fn mc_standard_error(rate: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (rate * (1.0 - rate) / n as f64).sqrt()
}

impl SimOutcome {
    pub fn from_replicates(outcomes: &[ReplicateOutcome]) -> Self {
        let n = outcomes.len();
        let rejections = outcomes.iter().filter(|o| o.rejected).count();
        let exact = outcomes.iter().filter(|o| o.recovered).count();
        let given = outcomes
            .iter()
            .filter(|o| o.rejected && o.recovered)
            .count();
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let rejection_rate = rate(rejections);
        let exact_recovery_rate = rate(exact);
        Self {
            replicates: n,
            rejections,
            exact_recoveries: exact,
            recoveries_given_rejection: given,
            non_converged: outcomes.iter().filter(|o| !o.converged).count(),
            rejection_rate,
            exact_recovery_rate,
            recovery_rate_given_rejection: (rejections > 0)
                .then(|| given as f64 / rejections as f64),
            mc_standard_error: mc_standard_error(rejection_rate, n),
            recovery_mc_standard_error: mc_standard_error(exact_recovery_rate, n),
            per_replicate: None,
        }
    }

    /// Combines counts of disjoint replicate ranges.
    pub fn pooled(parts: &[SimOutcome]) -> Self {
        let mut all = Vec::new();
        for p in parts {
            if let Some(reps) = &p.per_replicate {
                all.extend_from_slice(reps);
            }
        }
        let mut out = Self::from_replicates(&all);
        out.per_replicate = Some(all);
        out
    }
}

/// Runs every replicate of `scenario` on the rayon pool.
pub fn run_scenario(scenario: &SimScenario) -> Result<SimOutcome> {
    scenario.validate()?;
    let outcomes = scenario
        .replicate_range()
        .into_par_iter()
        .map(|i| run_replicate(scenario, i))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SimOutcome::from_replicates(&outcomes);
    out.per_replicate = Some(outcomes);
    Ok(out)
}

/// Empirical size of the supremum Wald test.
pub fn run_type1(scenario: &SimScenario) -> Result<SimOutcome> {
    if scenario.tau_true.is_some() {
        return Err(Error::InvalidArgument(
            "type-I runs need a scenario without change point".into(),
        ));
    }
    run_scenario(scenario)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerPoint {
    pub slope_shift: f64,
    pub outcome: SimOutcome,
}

/// Power and change-point recovery over a grid of slope changes.
pub fn run_power(scenario: &SimScenario, slope_grid: &[f64]) -> Result<Vec<PowerPoint>> {
    if scenario.tau_true.is_none() {
        return Err(Error::InvalidArgument(
            "power runs need a true change point".into(),
        ));
    }
    slope_grid
        .iter()
        .map(|&d| {
            let mut outcome = run_scenario(&scenario.with_slope_shift(d))?;
            outcome.per_replicate = None;
            Ok(PowerPoint {
                slope_shift: d,
                outcome,
            })
        })
        .collect()
}

/// Exact-recovery rate of `τ̂` over all replicates, per slope change.
pub fn run_accuracy(scenario: &SimScenario, slope_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(run_power(scenario, slope_grid)?
        .into_iter()
        .map(|p| (p.slope_shift, p.outcome.exact_recovery_rate))
        .collect())
}

/// Wald statistics at a single candidate `q` under the null.
pub fn null_wald_draws(scenario: &SimScenario, q: usize) -> Result<Vec<f64>> {
    scenario.validate()?;
    scenario
        .replicate_range()
        .into_par_iter()
        .map(|i| wald_statistic(&scenario.draw_panel(i)?, q, &scenario.fit))
        .collect()
}

/// Named `(T, φ)` data-generating regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub len: usize,
    pub phi: f64,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime { len: 60, phi: 0.1 },
        Regime { len: 60, phi: 0.6 },
        Regime { len: 120, phi: 0.1 },
        Regime { len: 120, phi: 0.6 },
    ];

    /// `T60_phi01` style name.
    pub fn name(&self) -> String {
        format!("T{}_phi{:02}", self.len, (self.phi * 10.0).round() as i64)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| {
                let known: Vec<String> = Self::ALL.iter().map(Regime::name).collect();
                Error::InvalidArgument(format!(
                    "unknown regime '{name}', expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// Study-wide settings shared by the presets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StudySettings {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub fit: FitOptions,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            seed: 20_180_501,
            alpha: 0.05,
            fit: FitOptions::default(),
        }
    }
}

impl StudySettings {
    fn apply(&self, mut scenario: SimScenario) -> SimScenario {
        scenario.alpha = self.alpha;
        scenario.fit = self.fit;
        scenario
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Cell {
    pub phi: f64,
    pub len: usize,
    pub units: usize,
    pub outcome: SimOutcome,
    pub reference: Option<f64>,
}

/// Type-I error for every `(φ, T, J)` combination.
pub fn table1(settings: &StudySettings) -> Result<Vec<Table1Cell>> {
    let mut cells = Vec::new();
    for phi in PHIS {
        for len in SERIES_LENGTHS {
            for units in UNIT_COUNTS {
                let scenario = settings.apply(SimScenario::null(
                    units,
                    len,
                    phi,
                    settings.replicates,
                    settings.seed,
                )?);
                let mut outcome = run_type1(&scenario)?;
                outcome.per_replicate = None;
                cells.push(Table1Cell {
                    phi,
                    len,
                    units,
                    outcome,
                    reference: table1_reference(phi, len, units),
                });
            }
        }
    }
    Ok(cells)
}

/// Rows `φ`, columns `T × J`, entries the rejection rate.
pub fn table1_layout_csv(cells: &[Table1Cell]) -> String {
    let mut out = String::from("phi");
    for len in SERIES_LENGTHS {
        for units in UNIT_COUNTS {
            let _ = write!(out, ",T{len}_J{units}");
        }
    }
    out.push('\n');
    for phi in PHIS {
        let _ = write!(out, "{phi}");
        for len in SERIES_LENGTHS {
            for units in UNIT_COUNTS {
                let rate = cells
                    .iter()
                    .find(|c| c.phi == phi && c.len == len && c.units == units)
                    .map(|c| format!("{:.4}", c.outcome.rejection_rate))
                    .unwrap_or_default();
                let _ = write!(out, ",{rate}");
            }
        }
        out.push('\n');
    }
    out
}

/// One row per cell with counts, standard errors and reference values.
pub fn table1_long_csv(cells: &[Table1Cell]) -> String {
    let mut out = String::from("phi,T,J,replicates,rejections,rate,mc_se,reference\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{}",
            c.phi,
            c.len,
            c.units,
            c.outcome.replicates,
            c.outcome.rejections,
            c.outcome.rejection_rate,
            c.outcome.mc_standard_error,
            c.reference.map(|r| format!("{r:.4}")).unwrap_or_default()
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub units: usize,
    pub slope_shift: f64,
    pub outcome: SimOutcome,
}

/// Power and recovery curves of one regime for each unit count.
pub fn regime_curves(
    regime: Regime,
    unit_counts: &[usize],
    grid: &[f64],
    settings: &StudySettings,
) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::new();
    for &units in unit_counts {
        let scenario = settings.apply(SimScenario::slope_change(
            units,
            regime.len,
            regime.phi,
            0.0,
            settings.replicates,
            settings.seed,
        )?);
        for p in run_power(&scenario, grid)? {
            points.push(CurvePoint {
                units,
                slope_shift: p.slope_shift,
                outcome: p.outcome,
            });
        }
    }
    Ok(points)
}

/// `J,delta,power,mc_se`.
pub fn power_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("J,delta,power,mc_se\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.2},{:.4},{:.4}",
            p.units, p.slope_shift, p.outcome.rejection_rate, p.outcome.mc_standard_error
        );
    }
    out
}

/// `J,delta,recovery,mc_se,recovery_given_rejection`.
pub fn accuracy_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("J,delta,recovery,mc_se,recovery_given_rejection\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.2},{:.4},{:.4},{}",
            p.units,
            p.slope_shift,
            p.outcome.exact_recovery_rate,
            p.outcome.recovery_mc_standard_error,
            p.outcome
                .recovery_rate_given_rejection
                .map(|r| format!("{r:.4}"))
                .unwrap_or_default()
        );
    }
    out
}

/// Study presets reproducible from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Table1,
    Figure3,
    Figure4,
}

/// Output files `(name, contents)` of a preset run.
pub fn run_preset(
    preset: Preset,
    regimes: &[Regime],
    settings: &StudySettings,
) -> Result<Vec<(String, String)>> {
    match preset {
        Preset::Table1 => {
            let cells = table1(settings)?;
            Ok(vec![
                ("table1.csv".into(), table1_layout_csv(&cells)),
                ("table1_long.csv".into(), table1_long_csv(&cells)),
            ])
        }
        Preset::Figure3 | Preset::Figure4 => {
            let grid = slope_grid();
            let mut files = Vec::new();
            for regime in regimes {
                let points = regime_curves(*regime, &UNIT_COUNTS, &grid, settings)?;
                let (name, body) = if preset == Preset::Figure3 {
                    (format!("power_{}.csv", regime.name()), power_csv(&points))
                } else {
                    (
                        format!("accuracy_{}.csv", regime.name()),
                        accuracy_csv(&points),
                    )
                };
                files.push((name, body));
            }
            Ok(files)
        }
    }
}
