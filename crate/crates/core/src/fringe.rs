//! Sinusoidal fits of coincidence fringes.
//!
//! Within a window the counts are modelled as `m + a cos(2 pi tau / T + phi)`
//! where `tau` is scan time (bins with the ramp halted are excluded and do
//! not advance `tau`). With the period fixed the model is linear in
//! `(m, a cos phi, -a sin phi)` and is solved by Poisson-weighted least
//! squares, re-weighting with the fitted model until the weights settle.
//! Visibility is `a / m`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;

use crate::photon_sim::{day_cell, day_cell_count, CoincidenceSeries};
use crate::{Error, Result, CHSH_VISIBILITY_THRESHOLD};

pub const TRACE_CSV_HEADER: [&str; 8] = [
    "window_center_s",
    "sidereal_phase_rad",
    "visibility",
    "visibility_sigma",
    "mean",
    "amplitude",
    "phase_rad",
    "above_threshold",
];

const MIN_ACTIVE_BINS: usize = 8;
const MAX_GAP_FRACTION: f64 = 0.10;
const MIN_FRINGES_PER_WINDOW: f64 = 1.5;
const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-12;
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "period_s", rename_all = "snake_case")]
pub enum PeriodMode {
    /// Period known from the scan rate.
    Fixed(f64),
    /// Period searched within +-20 % of the nominal value.
    Fitted(f64),
}

impl PeriodMode {
    pub fn nominal(self) -> f64 {
        match self {
            PeriodMode::Fixed(t) | PeriodMode::Fitted(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    /// counts per bin
    pub mean: f64,
    /// counts per bin
    pub amplitude: f64,
    /// radians, referred to the first active bin of the window
    pub phase: f64,
    /// seconds of scan time
    pub period: f64,
    pub visibility: f64,
    pub visibility_sigma: f64,
    pub window: (f64, f64),
    pub n_bins: usize,
    /// weighted residual sum of squares
    pub chi2: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl SinusoidFit {
    fn failed(window: (f64, f64), n_bins: usize, period: f64, why: impl Into<String>) -> Self {
        Self {
            mean: f64::NAN,
            amplitude: f64::NAN,
            phase: f64::NAN,
            period,
            visibility: f64::NAN,
            visibility_sigma: f64::NAN,
            window,
            n_bins,
            chi2: f64::NAN,
            converged: false,
            diagnostic: Some(why.into()),
        }
    }
}

struct LinearSolution {
    coef: Vector3<f64>,
    cov: Matrix3<f64>,
    chi2: f64,
}

fn design_row(tau: f64, period: f64) -> Vector3<f64> {
    let (s, c) = (TAU * tau / period).sin_cos();
    Vector3::new(1.0, c, s)
}

fn weighted_solve(rows: &[Vector3<f64>], counts: &[f64], weights: &[f64]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for ((x, &y), &w) in rows.iter().zip(counts).zip(weights) {
        normal += x * x.transpose() * w;
        rhs += x * (w * y);
    }
    let chol = normal.cholesky()?;
    Some((chol.solve(&rhs), chol.inverse()))
}

/// Iteratively re-weighted fit at a fixed period; weights are
/// `1 / max(model, 1)` starting from `1 / max(count, 1)`.
fn fit_fixed(taus: &[f64], counts: &[f64], period: f64) -> Option<LinearSolution> {
    let rows: Vec<Vector3<f64>> = taus.iter().map(|&t| design_row(t, period)).collect();
    let mut weights: Vec<f64> = counts.iter().map(|&y| 1.0 / y.max(1.0)).collect();
    let (mut coef, mut cov) = weighted_solve(&rows, counts, &weights)?;
    for _ in 0..IRLS_MAX_ITER {
        weights = rows.iter().map(|x| 1.0 / x.dot(&coef).max(1.0)).collect();
        let (next, next_cov) = weighted_solve(&rows, counts, &weights)?;
        let change = (next - coef).norm() / next.norm().max(f64::MIN_POSITIVE);
        coef = next;
        cov = next_cov;
        if change < IRLS_TOL {
            break;
        }
    }
    let chi2 = rows
        .iter()
        .zip(counts)
        .zip(&weights)
        .map(|((x, &y), &w)| w * (y - x.dot(&coef)).powi(2))
        .sum();
    Some(LinearSolution { coef, cov, chi2 })
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Fit the bins lying entirely inside `window = (start, end)` seconds.
pub fn fit_window(series: &CoincidenceSeries, window: (f64, f64), period: PeriodMode) -> SinusoidFit {
    let nominal = period.nominal();
    let (start, end) = window;
    if !nominal.is_finite() || nominal <= 0.0 {
        return SinusoidFit::failed(window, 0, nominal, "period must be positive");
    }
    if end - start + EDGE_EPS < MIN_FRINGES_PER_WINDOW * nominal {
        return SinusoidFit::failed(
            window,
            0,
            nominal,
            format!("window of {} s shorter than 1.5 periods", end - start),
        );
    }
    let bw = series.bin_width;
    let inside: Vec<_> = series
        .bins
        .iter()
        .filter(|b| b.start_s >= start - EDGE_EPS && b.start_s + bw <= end + EDGE_EPS)
        .collect();
    let total = inside.len();
    let mut taus = Vec::with_capacity(total);
    let mut counts = Vec::with_capacity(total);
    let mut tau = 0.5 * bw;
    for b in &inside {
        if b.scan_active {
            taus.push(tau);
            counts.push(b.coincidences as f64);
            tau += bw;
        }
    }
    let active = taus.len();
    if total == 0 || (total - active) as f64 > MAX_GAP_FRACTION * total as f64 {
        return SinusoidFit::failed(
            window,
            active,
            nominal,
            format!("scan halted in {} of {} bins", total - active, total),
        );
    }
    if active < MIN_ACTIVE_BINS {
        return SinusoidFit::failed(window, active, nominal, format!("only {active} active bins"));
    }

    let fitted_period = match period {
        PeriodMode::Fixed(t) => t,
        PeriodMode::Fitted(t) => {
            let objective = |p: f64| fit_fixed(&taus, &counts, p).map_or(f64::INFINITY, |s| s.chi2);
            let grid: Vec<f64> = (0..=80).map(|k| t * (0.8 + 0.4 * k as f64 / 80.0)).collect();
            let best = grid
                .iter()
                .enumerate()
                .min_by(|a, b| objective(*a.1).total_cmp(&objective(*b.1)))
                .map(|(k, _)| k)
                .unwrap_or(40);
            let lo = grid[best.saturating_sub(1)];
            let hi = grid[(best + 1).min(grid.len() - 1)];
            golden_min(lo, hi, objective)
        }
    };

    let Some(sol) = fit_fixed(&taus, &counts, fitted_period) else {
        return SinusoidFit::failed(window, active, fitted_period, "singular normal equations");
    };
    let (m, c, s) = (sol.coef[0], sol.coef[1], sol.coef[2]);
    if !m.is_finite() || m <= 0.0 {
        return SinusoidFit::failed(window, active, fitted_period, format!("non-positive mean {m}"));
    }
    let amplitude = c.hypot(s);
    let dof = (active - 3) as f64;
    let cov = sol.cov * (sol.chi2 / dof);
    let variance = if amplitude > 0.0 {
        let grad = Vector3::new(-amplitude / (m * m), c / (amplitude * m), s / (amplitude * m));
        (grad.transpose() * cov * grad)[0]
    } else {
        0.5 * (cov[(1, 1)] + cov[(2, 2)]) / (m * m)
    };
    SinusoidFit {
        mean: m,
        amplitude,
        phase: (-s).atan2(c),
        period: fitted_period,
        visibility: amplitude / m,
        visibility_sigma: variance.max(0.0).sqrt(),
        window,
        n_bins: active,
        chi2: sol.chi2,
        converged: true,
        diagnostic: None,
    }
}

/// Fit over every bin of the series.
pub fn fit_full_span(series: &CoincidenceSeries, period: PeriodMode) -> SinusoidFit {
    match series.span() {
        Some(span) => fit_window(series, span, period),
        None => SinusoidFit::failed((0.0, 0.0), 0, period.nominal(), "empty series"),
    }
}

/// Visibility after removing `accidentals_per_bin` from the fitted mean.
pub fn net_visibility(fit: &SinusoidFit, accidentals_per_bin: f64) -> Result<f64> {
    if !fit.converged {
        return Err(Error::invalid("fit", "not converged"));
    }
    if accidentals_per_bin.is_nan() || accidentals_per_bin < 0.0 {
        return Err(Error::invalid("accidental rate", "must be non-negative"));
    }
    if accidentals_per_bin >= fit.mean {
        return Err(Error::invalid(
            "accidental rate",
            format!("{accidentals_per_bin} not below fitted mean {}", fit.mean),
        ));
    }
    Ok(fit.amplitude / (fit.mean - accidentals_per_bin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingScan {
    pub period: PeriodMode,
    /// seconds; 1.5 periods when absent
    pub window_length: Option<f64>,
    /// seconds; one bin when absent
    pub step: Option<f64>,
    pub threshold: f64,
}

impl SlidingScan {
    pub fn fixed(period: f64) -> Self {
        Self {
            period: PeriodMode::Fixed(period),
            window_length: None,
            step: None,
            threshold: CHSH_VISIBILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub window_center_s: f64,
    pub sidereal_phase: f64,
    pub fit: SinusoidFit,
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedWindow {
    pub window_center_s: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTrace {
    pub threshold: f64,
    pub entries: Vec<TraceEntry>,
    pub dropped: Vec<DroppedWindow>,
}

impl VisibilityTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_CSV_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.window_center_s.to_string(),
                e.sidereal_phase.to_string(),
                e.fit.visibility.to_string(),
                e.fit.visibility_sigma.to_string(),
                e.fit.mean.to_string(),
                e.fit.amplitude.to_string(),
                e.fit.phase.to_string(),
                u8::from(e.above_threshold).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn min_visibility(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.fit.visibility).min_by(f64::total_cmp)
    }
}

/// Fit a window of fixed length stepped across the series. Failed windows
/// are recorded in `dropped` and leave gaps; they never abort the scan.
pub fn sliding_scan(series: &CoincidenceSeries, cfg: &SlidingScan) -> Result<VisibilityTrace> {
    let length = cfg
        .window_length
        .unwrap_or(MIN_FRINGES_PER_WINDOW * cfg.period.nominal());
    let step = cfg.step.unwrap_or(series.bin_width);
    if !length.is_finite() || !step.is_finite() || length <= 0.0 || step <= 0.0 {
        return Err(Error::invalid("sliding window", "length and step must be positive"));
    }
    let Some((first, last)) = series.span() else {
        return Ok(VisibilityTrace {
            threshold: cfg.threshold,
            entries: Vec::new(),
            dropped: Vec::new(),
        });
    };
    let count = if last - first + EDGE_EPS < length {
        0
    } else {
        ((last - first - length) / step + EDGE_EPS).floor() as usize + 1
    };
    let results: Vec<(f64, SinusoidFit)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let start = first + k as f64 * step;
            let fit = fit_window(series, (start, start + length), cfg.period);
            (start + 0.5 * length, fit)
        })
        .collect();

    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for (center, fit) in results {
        if fit.converged {
            entries.push(TraceEntry {
                window_center_s: center,
                sidereal_phase: series.sidereal_phase(center),
                above_threshold: fit.visibility > cfg.threshold,
                fit,
            });
        } else {
            dropped.push(DroppedWindow {
                window_center_s: center,
                reason: fit.diagnostic.unwrap_or_default(),
            });
        }
    }
    Ok(VisibilityTrace {
        threshold: cfg.threshold,
        entries,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCoverage {
    pub cell: usize,
    pub phase_start_rad: f64,
    /// number of traces with at least one fitted window in the cell
    pub multiplicity: u32,
    pub min_visibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelowThreshold {
    pub trace: usize,
    pub window_center_s: f64,
    pub sidereal_phase_rad: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub resolution_s: f64,
    pub required_multiplicity: u32,
    pub min_multiplicity: u32,
    pub cells: Vec<CellCoverage>,
    pub under_covered_cells: Vec<usize>,
    pub below_threshold: Vec<BelowThreshold>,
    /// Bell violation observed at every sidereal moment
    pub verdict: bool,
}

/// Combine traces over the sidereal day. The verdict holds when every cell
/// is covered by at least `required_multiplicity` traces and no fitted
/// window falls at or below its trace's threshold.
pub fn coverage_report(
    traces: &[VisibilityTrace],
    resolution_s: f64,
    required_multiplicity: u32,
) -> Result<CoverageReport> {
    let n = day_cell_count(resolution_s)?;
    let mut cells: Vec<CellCoverage> = (0..n)
        .map(|i| CellCoverage {
            cell: i,
            phase_start_rad: i as f64 / n as f64 * TAU,
            multiplicity: 0,
            min_visibility: None,
        })
        .collect();
    let mut below_threshold = Vec::new();
    for (t, trace) in traces.iter().enumerate() {
        let mut seen = vec![false; n];
        for e in &trace.entries {
            let cell = &mut cells[day_cell(e.sidereal_phase, n)];
            if !seen[cell.cell] {
                seen[cell.cell] = true;
                cell.multiplicity += 1;
            }
            let v = e.fit.visibility;
            cell.min_visibility = Some(cell.min_visibility.map_or(v, |m: f64| m.min(v)));
            if !e.above_threshold {
                below_threshold.push(BelowThreshold {
                    trace: t,
                    window_center_s: e.window_center_s,
                    sidereal_phase_rad: e.sidereal_phase,
                    visibility: v,
                });
            }
        }
    }
    let under_covered_cells: Vec<usize> = cells
        .iter()
        .filter(|c| c.multiplicity < required_multiplicity.max(1))
        .map(|c| c.cell)
        .collect();
    Ok(CoverageReport {
        resolution_s,
        required_multiplicity: required_multiplicity.max(1),
        min_multiplicity: cells.iter().map(|c| c.multiplicity).min().unwrap_or(0),
        verdict: under_covered_cells.is_empty() && below_threshold.is_empty(),
        cells,
        under_covered_cells,
        below_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photon_sim::Bin;
    use approx::assert_relative_eq;
    use chrono::{TimeZone, Utc};

    /// Noiseless series whose counts are exact (non-integer) model values.
    fn exact_series(mean: f64, amp: f64, period: f64, phase: f64, n: usize, bw: f64) -> (CoincidenceSeries, Vec<f64>) {
        let values: Vec<f64> = (0..n)
            .map(|i| mean + amp * (TAU * (i as f64 + 0.5) * bw / period + phase).cos())
            .collect();
        let bins = (0..n)
            .map(|i| Bin {
                start_s: i as f64 * bw,
                singles_a: 0,
                singles_b: 0,
                coincidences: 0,
                scan_active: true,
            })
            .collect();
        let series = CoincidenceSeries {
            bin_width: bw,
            anchor: Utc.with_ymd_and_hms(2008, 6, 1, 0, 0, 0).unwrap(),
            bins,
        };
        (series, values)
    }

    #[test]
    fn exact_model_recovery() {
        let (_, values) = exact_series(33.0, 28.9, 900.0, 0.7, 240, 60.0);
        let taus: Vec<f64> = (0..240).map(|i| (i as f64 + 0.5) * 60.0).collect();
        let sol = fit_fixed(&taus, &values, 900.0).unwrap();
        let (m, c, s) = (sol.coef[0], sol.coef[1], sol.coef[2]);
        assert_relative_eq!(m, 33.0, max_relative = 1e-9);
        assert_relative_eq!(c.hypot(s), 28.9, max_relative = 1e-9);
        assert_relative_eq!((-s).atan2(c), 0.7, max_relative = 1e-9);
        assert!(sol.chi2 < 1e-18);
    }

    #[test]
    fn integer_noiseless_counts() {
        // m = 40, a = 30 sampled at quarter fringes gives integer counts
        let period = 240.0;
        let pattern = [70u64, 40, 10, 40];
        let bins = (0..32)
            .map(|i| Bin {
                start_s: i as f64 * 60.0 - 30.0,
                singles_a: 0,
                singles_b: 0,
                coincidences: pattern[i % 4],
                scan_active: true,
            })
            .collect();
        let series = CoincidenceSeries {
            bin_width: 60.0,
            anchor: Utc.with_ymd_and_hms(2008, 6, 1, 0, 0, 0).unwrap(),
            bins,
        };
        let fit = fit_window(&series, (-30.0, 31.0 * 60.0 + 30.0), PeriodMode::Fixed(period));
        assert!(fit.converged, "{:?}", fit.diagnostic);
        assert_relative_eq!(fit.visibility, 0.75, max_relative = 1e-9);
        assert!(fit.visibility_sigma < 1e-9);
        assert_eq!(net_visibility(&fit, 0.0).unwrap(), fit.visibility);
    }

    #[test]
    fn net_visibility_examples() {
        let mut fit = SinusoidFit::failed((0.0, 1.0), 10, 1.0, "");
        fit.converged = true;
        fit.mean = 10.0;
        fit.amplitude = 5.0;
        fit.visibility = 0.5;
        assert_relative_eq!(net_visibility(&fit, 5.0).unwrap(), 1.0);
        assert!(net_visibility(&fit, 10.0).is_err());
        fit.mean = 33.0;
        fit.amplitude = 0.876 * 33.0;
        assert_relative_eq!(net_visibility(&fit, 2.5).unwrap(), 0.876 * 33.0 / 30.5, max_relative = 1e-12);
        assert!(net_visibility(&fit, 2.5).unwrap() > 0.876);
    }

    #[test]
    fn insufficient_or_gappy_windows_fail() {
        let (mut series, values) = exact_series(30.0, 10.0, 360.0, 0.0, 20, 60.0);
        for (b, v) in series.bins.iter_mut().zip(values) {
            b.coincidences = v.round() as u64;
        }
        let fit = fit_window(&series, (0.0, 420.0), PeriodMode::Fixed(360.0));
        assert!(!fit.converged);
        let fit = fit_window(&series, (0.0, 540.0), PeriodMode::Fixed(360.0));
        assert!(fit.converged, "{:?}", fit.diagnostic);
        series.bins[3].scan_active = false;
        let fit = fit_window(&series, (0.0, 540.0), PeriodMode::Fixed(360.0));
        assert!(!fit.converged);
        assert!(fit.diagnostic.unwrap().contains("halted"));
        // one halted bin in 11 is under 10 %
        let fit = fit_window(&series, (0.0, 660.0), PeriodMode::Fixed(360.0));
        assert!(fit.converged);
        assert_eq!(fit.n_bins, 10);
    }

    #[test]
    fn sliding_window_counts() {
        let series = exact_series(30.0, 10.0, 900.0, 0.0, 240, 60.0).0;
        let cfg = SlidingScan {
            period: PeriodMode::Fixed(900.0),
            window_length: Some(1350.0),
            step: Some(60.0),
            threshold: CHSH_VISIBILITY_THRESHOLD,
        };
        let trace = sliding_scan(&series, &cfg).unwrap();
        assert_eq!(trace.entries.len() + trace.dropped.len(), 218);
        let short = exact_series(30.0, 10.0, 900.0, 0.0, 20, 60.0).0;
        assert!(sliding_scan(&short, &cfg).unwrap().entries.is_empty());
    }

    fn entry(phase: f64, v: f64) -> TraceEntry {
        let mut fit = SinusoidFit::failed((0.0, 1.0), 9, 360.0, "");
        fit.converged = true;
        fit.visibility = v;
        TraceEntry {
            window_center_s: 0.0,
            sidereal_phase: phase,
            above_threshold: v > CHSH_VISIBILITY_THRESHOLD,
            fit,
        }
    }

    fn full_trace(v: f64) -> VisibilityTrace {
        VisibilityTrace {
            threshold: CHSH_VISIBILITY_THRESHOLD,
            entries: (0..2000).map(|k| entry(k as f64 / 2000.0 * TAU, v)).collect(),
            dropped: vec![],
        }
    }

    #[test]
    fn coverage_verdicts() {
        let report = coverage_report(&[full_trace(0.85), full_trace(0.9)], 300.0, 1).unwrap();
        assert!(report.verdict);
        assert_eq!(report.min_multiplicity, 2);

        let mut holey = full_trace(0.85);
        let n = day_cell_count(300.0).unwrap();
        holey.entries.retain(|e| day_cell(e.sidereal_phase, n) != 17);
        let report = coverage_report(&[holey], 300.0, 1).unwrap();
        assert!(!report.verdict);
        assert_eq!(report.under_covered_cells, vec![17]);

        let mut low = full_trace(0.85);
        low.entries[500] = entry(low.entries[500].sidereal_phase, 0.70);
        let report = coverage_report(&[low], 300.0, 1).unwrap();
        assert!(!report.verdict);
        assert_eq!(report.below_threshold.len(), 1);
        assert_relative_eq!(report.below_threshold[0].sidereal_phase_rad, 500.0 / 2000.0 * TAU);
    }

    #[test]
    fn threshold_is_chsh() {
        assert!((CHSH_VISIBILITY_THRESHOLD - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(!entry(0.0, CHSH_VISIBILITY_THRESHOLD).above_threshold);
    }
}
