//! Panel CSV files, run configuration and fit/test reports.
//!
//! Panels are stored wide: a `time` column followed by one column per unit.
//! Time labels are either consecutive integers or consecutive `YYYY-MM`
//! months; rows must be complete and ordered.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::ar::{simulate_series, ArPhaseParams};
use crate::error::{Error, Result};
use crate::fitter::{FitOptions, FitResult};
use crate::inference::{param_inference, ParamInference, SwtReport};
use crate::model::{ChangePointWindow, MeanParams, Panel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimeLabel {
    Index(i64),
    Month { year: i32, month: u32 },
}

impl TimeLabel {
    fn parse(s: &str) -> Option<Self> {
        if let Ok(i) = s.parse::<i64>() {
            return Some(Self::Index(i));
        }
        let (y, m) = s.split_once('-')?;
        if y.len() != 4 || m.len() != 2 {
            return None;
        }
        let year = y.parse().ok()?;
        let month = m.parse().ok()?;
        (1..=12)
            .contains(&month)
            .then_some(Self::Month { year, month })
    }

    fn successor(self) -> Self {
        match self {
            Self::Index(i) => Self::Index(i + 1),
            Self::Month { year, month: 12 } => Self::Month {
                year: year + 1,
                month: 1,
            },
            Self::Month { year, month } => Self::Month {
                year,
                month: month + 1,
            },
        }
    }
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, csv::Position::line);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            column: String::new(),
            message: format!("row has {len} fields, expected {expected_len}"),
        },
        other => Error::Parse {
            line,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Reads a wide panel CSV.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("time") {
        return Err(Error::Parse {
            line: 1,
            column: header.get(0).unwrap_or_default().to_owned(),
            message: "header must be 'time' followed by one column per unit".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if let Some(dup) = names
        .iter()
        .enumerate()
        .find(|(i, n)| names[..*i].contains(n))
        .map(|(_, n)| n)
    {
        return Err(Error::Parse {
            line: 1,
            column: dup.clone(),
            message: "duplicate unit name".into(),
        });
    }
    let mut labels = Vec::new();
    let mut values = vec![Vec::new(); names.len()];
    let mut previous: Option<TimeLabel> = None;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, csv::Position::line);
        let raw = &record[0];
        let label = TimeLabel::parse(raw).ok_or_else(|| Error::Parse {
            line,
            column: "time".into(),
            message: format!("'{raw}' is neither an integer nor a YYYY-MM month"),
        })?;
        if let Some(prev) = previous {
            if prev.successor() != label {
                return Err(Error::Parse {
                    line,
                    column: "time".into(),
                    message: format!(
                        "time label '{raw}' does not follow '{}'; rows must be consecutive",
                        labels.last().map_or("", String::as_str)
                    ),
                });
            }
        }
        previous = Some(label);
        labels.push(raw.to_owned());
        for (j, name) in names.iter().enumerate() {
            let cell = &record[j + 1];
            if cell.is_empty() {
                return Err(Error::Parse {
                    line,
                    column: name.clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: name.clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: name.clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            values[j].push(v);
        }
    }
    Panel::new(names, values, labels)
}

pub fn read_panel_path(path: &Path) -> Result<Panel> {
    read_panel_csv(File::open(path)?)
}

/// Writes a wide panel CSV; values use the shortest round-trip form.
pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_owned()];
    header.extend(panel.unit_names().iter().cloned());
    wtr.write_record(&header).map_err(csv_error)?;
    for (i, label) in panel.time_labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(panel.values().iter().map(|s| s[i].to_string()));
        wtr.write_record(&row).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Consecutive `YYYY-MM` labels starting at `year-month`.
pub fn month_labels(year: i32, month: u32, len: usize) -> Vec<String> {
    let mut label = TimeLabel::Month { year, month };
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        if let TimeLabel::Month { year, month } = label {
            out.push(format!("{year:04}-{month:02}"));
        }
        label = label.successor();
    }
    out
}

/// Layout of the bundled demonstration panel.
pub const DEMO_UNITS: usize = 5;
pub const DEMO_LEN: usize = 60;
pub const DEMO_CHANGE_POINT: usize = 29;
pub const DEMO_INTERVENTION: usize = 31;
pub const DEMO_SEED: u64 = 2010;

/// Five monthly series from 2008-01 with a shared change at `t = 29`
/// (2010-05), two months before the intervention at 2010-07. Without
/// `with_change` the same noise is laid over unbroken lines.
pub fn demo_panel(seed: u64, with_change: bool) -> Result<Panel> {
    let noise = ArPhaseParams::new(0.2, 0.4, 2.5, 2.5)?;
    let names = ["ward_a", "ward_b", "ward_c", "ward_d", "ward_e"];
    let mut values = Vec::with_capacity(DEMO_UNITS);
    for (j, _) in names.iter().enumerate() {
        let slope_shift = if with_change {
            0.35 + 0.05 * j as f64
        } else {
            0.0
        };
        let level_change = if with_change { 4.0 + j as f64 } else { 0.0 };
        let theta = MeanParams::new(
            60.0 + 3.0 * j as f64,
            0.2 - 0.02 * j as f64,
            level_change - slope_shift * DEMO_CHANGE_POINT as f64,
            slope_shift,
        );
        let tau = with_change.then_some(DEMO_CHANGE_POINT);
        let unit_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(j as u64);
        values.push(simulate_series(&theta, tau, &noise, DEMO_LEN, unit_seed)?);
    }
    Panel::new(
        names.iter().map(|s| s.to_string()).collect(),
        values,
        month_labels(2008, 1, DEMO_LEN),
    )
}

/// How the candidate set is specified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WindowSpec {
    /// `m` steps before and `k` steps after the intervention.
    Around { before: usize, after: usize },
    /// Contiguous candidates given by time label or index.
    Range { first: String, last: String },
}

impl WindowSpec {
    /// Parses `m,k`.
    pub fn parse_around(s: &str) -> Result<Self> {
        let (m, k) = s.split_once(',').ok_or_else(|| {
            Error::InvalidArgument(format!("window '{s}' must have the form m,k"))
        })?;
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("window bound '{v}' is not a non-negative integer"))
            })
        };
        Ok(Self::Around {
            before: parse(m)?,
            after: parse(k)?,
        })
    }

    /// Parses `a..b`.
    pub fn parse_range(s: &str) -> Result<Self> {
        let (a, b) = s.split_once("..").ok_or_else(|| {
            Error::InvalidArgument(format!("candidates '{s}' must have the form a..b"))
        })?;
        Ok(Self::Range {
            first: a.trim().to_owned(),
            last: b.trim().to_owned(),
        })
    }
}

/// Resolves a time label, or failing that a 1-based index, on `panel`.
pub fn resolve_time(panel: &Panel, raw: &str) -> Result<usize> {
    if let Some(t) = panel.index_of(raw) {
        return Ok(t);
    }
    match raw.parse::<usize>() {
        Ok(t) if (1..=panel.len()).contains(&t) => Ok(t),
        _ => Err(Error::InvalidWindow(format!(
            "'{raw}' is neither a time label of the panel nor an index in 1..={}",
            panel.len()
        ))),
    }
}

/// Options of a fit or test run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub window: WindowSpec,
    pub intervention: Option<String>,
    pub alpha: f64,
    pub fit: FitOptions,
}

impl RunConfig {
    pub fn new(window: WindowSpec) -> Self {
        Self {
            window,
            intervention: None,
            alpha: 0.05,
            fit: FitOptions::default(),
        }
    }

    pub fn resolve_window(&self, panel: &Panel) -> Result<ChangePointWindow> {
        let intervention = self
            .intervention
            .as_deref()
            .map(|raw| resolve_time(panel, raw))
            .transpose()?;
        match &self.window {
            WindowSpec::Around { before, after } => {
                let t = intervention.ok_or_else(|| {
                    Error::InvalidWindow("a window around t* needs an intervention time".into())
                })?;
                ChangePointWindow::around(t, *before, *after, panel.len())
            }
            WindowSpec::Range { first, last } => {
                let a = resolve_time(panel, first)?;
                let b = resolve_time(panel, last)?;
                if a > b {
                    return Err(Error::InvalidWindow(format!(
                        "candidate range {first}..{last} is empty"
                    )));
                }
                ChangePointWindow::from_candidates((a..=b).collect(), intervention, panel.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TimePoint {
    pub index: usize,
    pub label: String,
}

impl TimePoint {
    fn new(panel: &Panel, index: usize) -> Self {
        Self {
            index,
            label: panel.label_of(index).unwrap_or_default().to_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhaseReport {
    pub phi: f64,
    pub sigma_w: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnitReport {
    pub unit: String,
    pub intercept: ParamInference,
    pub slope: ParamInference,
    pub level_shift: ParamInference,
    pub slope_shift: ParamInference,
    pub level_change: ParamInference,
    /// Same as the slope shift; named for readers of effect summaries.
    pub trend_change: ParamInference,
    pub pre: PhaseReport,
    pub post: PhaseReport,
    pub iterations: usize,
    pub loglik: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileEntry {
    pub q: usize,
    pub label: String,
    pub loglik: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub units: usize,
    pub len: usize,
    pub time_origin: String,
    pub candidates: Vec<TimePoint>,
    pub intervention: Option<TimePoint>,
    pub tau_hat: TimePoint,
    pub lag: Option<i64>,
    pub options: FitOptions,
    pub unit_results: Vec<UnitReport>,
    pub profile: Vec<ProfileEntry>,
}

impl FitReport {
    /// Builds the report; fails when a unit fit at `τ̂` did not converge.
    pub fn new(panel: &Panel, fit: &FitResult, options: FitOptions) -> Result<Self> {
        let inference = param_inference(fit)?;
        let unit_results = inference
            .into_iter()
            .zip(&fit.unit_fits)
            .map(|(inf, uf)| UnitReport {
                unit: inf.unit,
                intercept: inf.intercept,
                slope: inf.slope,
                level_shift: inf.level_shift,
                trend_change: inf.slope_shift,
                slope_shift: inf.slope_shift,
                level_change: inf.level_change,
                pre: PhaseReport {
                    phi: uf.ar.phi1,
                    sigma_w: uf.ar.sigma_w1,
                    sd: uf.ar.sd1(),
                },
                post: PhaseReport {
                    phi: uf.ar.phi2,
                    sigma_w: uf.ar.sigma_w2,
                    sd: uf.ar.sd2(),
                },
                iterations: uf.iterations,
                loglik: uf.loglik,
            })
            .collect();
        Ok(Self {
            units: panel.units(),
            len: panel.len(),
            time_origin: panel.time_origin().to_owned(),
            candidates: fit
                .window
                .candidates()
                .iter()
                .map(|&q| TimePoint::new(panel, q))
                .collect(),
            intervention: fit.window.intervention().map(|t| TimePoint::new(panel, t)),
            tau_hat: TimePoint::new(panel, fit.tau_hat),
            lag: fit.lag(),
            options,
            unit_results,
            profile: fit
                .profile
                .iter()
                .map(|p| ProfileEntry {
                    q: p.q,
                    label: panel.label_of(p.q).unwrap_or_default().to_owned(),
                    loglik: p.loglik,
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Change-point fit: {} units, {} time points from {}",
            self.units, self.len, self.time_origin
        );
        let (first, last) = (
            &self.candidates[0],
            &self.candidates[self.candidates.len() - 1],
        );
        let _ = writeln!(
            out,
            "Candidates: {} ({}) to {} ({})",
            first.index, first.label, last.index, last.label
        );
        let _ = writeln!(
            out,
            "Estimated change point: t = {} ({})",
            self.tau_hat.index, self.tau_hat.label
        );
        if let (Some(t), Some(lag)) = (&self.intervention, self.lag) {
            let _ = writeln!(
                out,
                "Intervention: t = {} ({}), lag {lag:+}",
                t.index, t.label
            );
        }
        for u in &self.unit_results {
            let _ = writeln!(out, "\n[{}]", u.unit);
            for (name, p) in [
                ("intercept", &u.intercept),
                ("slope", &u.slope),
                ("level shift", &u.level_shift),
                ("slope shift", &u.slope_shift),
                ("level change", &u.level_change),
            ] {
                let _ = writeln!(
                    out,
                    "  {name:<13} {:>10.4}  se {:>8.4}  95% CI [{:.4}, {:.4}]  p {:.4}",
                    p.estimate, p.se, p.ci_low, p.ci_high, p.p_value
                );
            }
            let _ = writeln!(
                out,
                "  AR pre        phi {:.4}  sd {:.4}\n  AR post       phi {:.4}  sd {:.4}",
                u.pre.phi, u.pre.sd, u.post.phi, u.post.sd
            );
        }
        let _ = writeln!(out, "\nProfile log-likelihood:");
        for p in &self.profile {
            let mark = if p.q == self.tau_hat.index { " *" } else { "" };
            let _ = writeln!(out, "  {:>4} {:>8} {:>14.4}{mark}", p.q, p.label, p.loglik);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WaldEntry {
    pub q: usize,
    pub label: String,
    pub wald: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub units: usize,
    pub len: usize,
    pub alpha: f64,
    pub dof: usize,
    pub reject: bool,
    pub verdict: String,
    pub bh_threshold: f64,
    pub rejected_hypotheses: usize,
    pub max_wald: f64,
    pub min_raw_p: f64,
    pub min_adjusted_p: f64,
    pub per_q: Vec<WaldEntry>,
}

impl TestReport {
    pub fn new(panel: &Panel, swt: &SwtReport) -> Self {
        Self {
            units: panel.units(),
            len: panel.len(),
            alpha: swt.alpha,
            dof: swt.dof,
            reject: swt.reject,
            verdict: if swt.reject {
                "change point detected".into()
            } else {
                "no change point detected".into()
            },
            bh_threshold: swt.bh_threshold,
            rejected_hypotheses: swt.rejected_hypotheses,
            max_wald: swt.max_wald(),
            min_raw_p: swt.min_raw_p(),
            min_adjusted_p: swt.min_adjusted_p(),
            per_q: swt
                .per_q
                .iter()
                .map(|w| WaldEntry {
                    q: w.q,
                    label: panel.label_of(w.q).unwrap_or_default().to_owned(),
                    wald: w.wald,
                    raw_p: w.raw_p,
                    adjusted_p: w.adjusted_p,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Supremum Wald test: {} units, {} time points, alpha {}",
            self.units, self.len, self.alpha
        );
        let _ = writeln!(
            out,
            "Verdict: {} ({} of {} candidates rejected, BH threshold {:.3e})",
            self.verdict,
            self.rejected_hypotheses,
            self.per_q.len(),
            self.bh_threshold
        );
        let _ = writeln!(
            out,
            "Max Wald {:.4} on {} df, min p {:.3e}, min adjusted p {:.3e}\n",
            self.max_wald, self.dof, self.min_raw_p, self.min_adjusted_p
        );
        let _ = writeln!(
            out,
            "  {:>4} {:>8} {:>12} {:>12} {:>12}",
            "q", "label", "wald", "p", "adj p"
        );
        for w in &self.per_q {
            let _ = writeln!(
                out,
                "  {:>4} {:>8} {:>12.4} {:>12.3e} {:>12.3e}",
                w.q, w.label, w.wald, w.raw_p, w.adjusted_p
            );
        }
        out
    }
}
