//! Seeded simulation of binned singles and coincidence counts.
//!
//! The coincidence rate follows the two-photon interference of a Franson
//! arrangement whose phase is ramped linearly in time:
//!
//! ```text
//! R(t) = R_c (1 + V_src cos phi(t)) + R_acc,   phi(t) = phi_0 + 2 pi s(t) / T
//! ```
//!
//! where `s(t)` is the scan time accumulated inside ramp segments. Between
//! segments the phase is frozen. Counts per bin are independent Poisson
//! variates with mean `rate x bin_width`, the rate taken at the bin centre.

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::{Read, Write};

use crate::sidereal::{self, ERA_RATE};
use crate::{check_finite, Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "start_s",
    "wall_clock_iso8601",
    "singles_a",
    "singles_b",
    "coincidences",
    "scan_active",
];

/// Count rates of the source, all per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub true_coincidence_rate: f64,
    pub accidental_rate: f64,
    pub source_visibility: f64,
    pub singles_rate_a: f64,
    pub singles_rate_b: f64,
    /// Fractional change of the singles rates per hour.
    pub singles_drift_per_hour: f64,
}

impl SourceModel {
    pub fn new(
        true_coincidence_rate: f64,
        accidental_rate: f64,
        source_visibility: f64,
        singles_rate_a: f64,
        singles_rate_b: f64,
    ) -> Result<Self> {
        let model = Self {
            true_coincidence_rate,
            accidental_rate,
            source_visibility,
            singles_rate_a,
            singles_rate_b,
            singles_drift_per_hour: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// 30.5/min true coincidences at 94.8 % source visibility plus 2.5/min
    /// accidentals: a 33/min mean with 87.6 % raw visibility.
    pub fn geneva() -> Self {
        Self::new(30.5, 2.5, 0.948, 1.0e4, 1.0e4).expect("constants are valid")
    }

    pub fn with_drift(mut self, per_hour: f64) -> Result<Self> {
        self.singles_drift_per_hour = per_hour;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("true coincidence rate", self.true_coincidence_rate),
            ("accidental rate", self.accidental_rate),
            ("singles rate a", self.singles_rate_a),
            ("singles rate b", self.singles_rate_b),
        ] {
            check_finite(what, v)?;
            if v < 0.0 {
                return Err(Error::invalid(what, "must be non-negative"));
            }
        }
        check_finite("source visibility", self.source_visibility)?;
        if !(0.0..=1.0).contains(&self.source_visibility) {
            return Err(Error::invalid("source visibility", "must lie in [0, 1]"));
        }
        check_finite("singles drift", self.singles_drift_per_hour)?;
        Ok(())
    }

    /// Time-averaged coincidence rate per minute.
    pub fn mean_coincidence_rate(&self) -> f64 {
        self.true_coincidence_rate + self.accidental_rate
    }

    /// Visibility of the expected rate including accidentals.
    pub fn raw_visibility(&self) -> f64 {
        let mean = self.mean_coincidence_rate();
        if mean == 0.0 {
            0.0
        } else {
            self.source_visibility * self.true_coincidence_rate / mean
        }
    }
}

/// Linear phase ramp with optional interruptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    /// seconds of active scanning per fringe
    pub fringe_period: f64,
    pub initial_phase: f64,
    /// `(start, end)` seconds since run start, ordered and disjoint
    pub segments: Vec<(f64, f64)>,
}

impl PhaseScan {
    pub fn new(fringe_period: f64, initial_phase: f64, segments: Vec<(f64, f64)>) -> Result<Self> {
        check_finite("fringe period", fringe_period)?;
        check_finite("initial phase", initial_phase)?;
        if fringe_period <= 0.0 {
            return Err(Error::invalid("fringe period", "must be positive"));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for &(s, e) in &segments {
            check_finite("ramp segment", s)?;
            check_finite("ramp segment", e)?;
            if e <= s {
                return Err(Error::invalid("ramp segment", format!("({s}, {e}) is empty")));
            }
            if s < prev_end {
                return Err(Error::invalid(
                    "ramp segment",
                    "segments must be ordered and disjoint",
                ));
            }
            prev_end = e;
        }
        Ok(Self {
            fringe_period,
            initial_phase,
            segments,
        })
    }

    /// A single uninterrupted ramp over `[0, duration]`.
    pub fn continuous(fringe_period: f64, initial_phase: f64, duration: f64) -> Result<Self> {
        Self::new(fringe_period, initial_phase, vec![(0.0, duration)])
    }

    /// Ramp over `[0, duration]` halted during each of `gaps`.
    pub fn with_gaps(
        fringe_period: f64,
        initial_phase: f64,
        duration: f64,
        gaps: &[(f64, f64)],
    ) -> Result<Self> {
        let mut gaps = gaps.to_vec();
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut segments = Vec::new();
        let mut cursor = 0.0;
        for (gs, ge) in gaps {
            if gs > cursor {
                segments.push((cursor, gs.min(duration)));
            }
            cursor = cursor.max(ge);
            if cursor >= duration {
                break;
            }
        }
        if cursor < duration {
            segments.push((cursor, duration));
        }
        segments.retain(|(s, e)| e > s);
        Self::new(fringe_period, initial_phase, segments)
    }

    /// Scan time accumulated in `[0, t]`.
    pub fn active_time(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .map(|&(s, e)| (t.min(e) - s).max(0.0))
            .sum()
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.segments.iter().any(|&(s, e)| t >= s && t < e)
    }

    pub fn phase(&self, t: f64) -> f64 {
        self.initial_phase + TAU * self.active_time(t) / self.fringe_period
    }
}

/// Expected coincidence rate per minute at `t` seconds into the run.
pub fn coincidence_rate_at(model: &SourceModel, scan: &PhaseScan, t: f64) -> f64 {
    model.true_coincidence_rate * (1.0 + model.source_visibility * scan.phase(t).cos())
        + model.accidental_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// seconds since run start
    pub start_s: f64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
    pub scan_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSeries {
    /// seconds
    pub bin_width: f64,
    /// wall-clock time of `start_s = 0`
    pub anchor: DateTime<Utc>,
    pub bins: Vec<Bin>,
}

impl CoincidenceSeries {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// `(first bin start, last bin end)` in seconds since run start.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((
            self.bins.first()?.start_s,
            self.bins.last()?.start_s + self.bin_width,
        ))
    }

    pub fn wall_clock(&self, offset_s: f64) -> DateTime<Utc> {
        self.anchor + Duration::milliseconds((offset_s * 1000.0).round() as i64)
    }

    /// Sidereal phase `offset_s` seconds after the anchor.
    pub fn sidereal_phase(&self, offset_s: f64) -> f64 {
        sidereal::phase_at(self.anchor, offset_s)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for bin in &self.bins {
            w.write_record([
                bin.start_s.to_string(),
                self.wall_clock(bin.start_s)
                    .to_rfc3339_opts(SecondsFormat::Millis, true),
                bin.singles_a.to_string(),
                bin.singles_b.to_string(),
                bin.coincidences.to_string(),
                u8::from(bin.scan_active).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the CSV written by [`CoincidenceSeries::write_csv`]. The bin
    /// width is taken from the first two rows, or from `bin_width_hint` when
    /// there are fewer.
    pub fn read_csv<R: Read>(reader: R, bin_width_hint: Option<f64>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header {}", CSV_HEADER.join(",")),
            });
        }
        let mut anchor: Option<DateTime<Utc>> = None;
        let mut bins: Vec<Bin> = Vec::new();
        for record in r.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |reason: String| Error::Parse { line, reason };
            if record.len() != CSV_HEADER.len() {
                return Err(bad(format!("expected 6 fields, found {}", record.len())));
            }
            let start_s: f64 = record[0]
                .parse()
                .map_err(|e| bad(format!("start_s: {e}")))?;
            if !start_s.is_finite() {
                return Err(bad("start_s is not finite".into()));
            }
            let wall: DateTime<Utc> = DateTime::parse_from_rfc3339(&record[1])
                .map_err(|e| bad(format!("wall_clock_iso8601: {e}")))?
                .with_timezone(&Utc);
            let count = |i: usize, name: &str| -> Result<u64> {
                record[i]
                    .parse()
                    .map_err(|e| bad(format!("{name}: {e}")))
            };
            let singles_a = count(2, "singles_a")?;
            let singles_b = count(3, "singles_b")?;
            let coincidences = count(4, "coincidences")?;
            let scan_active = match &record[5] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(format!("scan_active: unexpected {other:?}"))),
            };
            let implied = wall - Duration::milliseconds((start_s * 1000.0).round() as i64);
            match anchor {
                None => anchor = Some(implied),
                Some(a) if (implied - a).num_milliseconds().abs() > 1 => {
                    return Err(bad("wall clock inconsistent with start_s".into()));
                }
                Some(_) => {}
            }
            if let Some(prev) = bins.last() {
                if start_s <= prev.start_s {
                    return Err(bad("start_s must increase".into()));
                }
            }
            bins.push(Bin {
                start_s,
                singles_a,
                singles_b,
                coincidences,
                scan_active,
            });
        }
        let bin_width = match (bins.first(), bins.get(1)) {
            (Some(a), Some(b)) => b.start_s - a.start_s,
            _ => bin_width_hint.ok_or_else(|| Error::Parse {
                line: 2,
                reason: "cannot infer bin width from fewer than two rows".into(),
            })?,
        };
        if bin_width.is_nan() || bin_width <= 0.0 {
            return Err(Error::invalid("bin width", "must be positive"));
        }
        Ok(Self {
            bin_width,
            anchor: anchor.unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
            bins,
        })
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

fn check_binning(duration: f64, bin_width: f64) -> Result<usize> {
    check_finite("duration", duration)?;
    check_finite("bin width", bin_width)?;
    if duration < 0.0 {
        return Err(Error::invalid("duration", "must be non-negative"));
    }
    if bin_width <= 0.0 {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    Ok((duration / bin_width + 1e-9).floor() as usize)
}

/// Simulate one run from an explicit random stream.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    model: &SourceModel,
    scan: &PhaseScan,
    duration: f64,
    bin_width: f64,
    anchor: DateTime<Utc>,
    rng: &mut R,
) -> Result<CoincidenceSeries> {
    model.validate()?;
    let n_bins = check_binning(duration, bin_width)?;
    let minutes = bin_width / 60.0;
    let mut bins = Vec::with_capacity(n_bins);
    for i in 0..n_bins {
        let start_s = i as f64 * bin_width;
        let mid = start_s + 0.5 * bin_width;
        let drift = (1.0 + model.singles_drift_per_hour * mid / 3600.0).max(0.0);
        let singles_a = poisson(rng, model.singles_rate_a * drift * minutes);
        let singles_b = poisson(rng, model.singles_rate_b * drift * minutes);
        let coincidences = poisson(rng, coincidence_rate_at(model, scan, mid) * minutes);
        bins.push(Bin {
            start_s,
            singles_a,
            singles_b,
            coincidences,
            scan_active: scan.is_active(mid),
        });
    }
    Ok(CoincidenceSeries {
        bin_width,
        anchor,
        bins,
    })
}

/// Random stream `stream` of the master `seed`.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate one run. Identical inputs give bit-identical output; the stream
/// is stream 0 of `seed`, the same as run 0 of [`compose_day`].
pub fn simulate_series(
    model: &SourceModel,
    scan: &PhaseScan,
    duration: f64,
    bin_width: f64,
    anchor: DateTime<Utc>,
    seed: u64,
) -> Result<CoincidenceSeries> {
    simulate_with_rng(model, scan, duration, bin_width, anchor, &mut run_rng(seed, 0))
}

/// One scheduled measurement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub start: DateTime<Utc>,
    /// seconds
    pub duration: f64,
    pub scan: PhaseScan,
}

/// Multiplicity with which each cell of the sidereal day is covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayCoverage {
    pub cell_count: usize,
    /// nominal cell length in seconds
    pub resolution_s: f64,
    pub multiplicity: Vec<u32>,
    pub uncovered_cells: Vec<usize>,
    pub complete: bool,
}

impl DayCoverage {
    pub fn min_multiplicity(&self) -> u32 {
        self.multiplicity.iter().copied().min().unwrap_or(0)
    }

    /// Fraction of cells with non-zero multiplicity.
    pub fn covered_fraction(&self) -> f64 {
        let covered = self.multiplicity.iter().filter(|&&m| m > 0).count();
        covered as f64 / self.cell_count as f64
    }
}

/// Number of cells for a given resolution in seconds of sidereal day.
pub fn day_cell_count(resolution_s: f64) -> Result<usize> {
    check_finite("coverage resolution", resolution_s)?;
    if resolution_s <= 0.0 {
        return Err(Error::invalid("coverage resolution", "must be positive"));
    }
    let day = TAU / ERA_RATE;
    Ok(((day / resolution_s).round() as usize).max(1))
}

/// Cell index of a sidereal phase.
pub fn day_cell(phase: f64, cell_count: usize) -> usize {
    let idx = (sidereal::wrap(phase) / TAU * cell_count as f64).floor() as usize;
    idx.min(cell_count - 1)
}

/// Coverage of the sidereal day by a run schedule; a cell counts once for
/// every pass of a run over its midpoint.
pub fn schedule_coverage(runs: &[RunSpec], resolution_s: f64) -> Result<DayCoverage> {
    let cell_count = day_cell_count(resolution_s)?;
    let mut multiplicity = vec![0u32; cell_count];
    for run in runs {
        let start = sidereal::rotation_angle(run.start);
        let span = ERA_RATE * run.duration;
        for (i, m) in multiplicity.iter_mut().enumerate() {
            let mid = (i as f64 + 0.5) / cell_count as f64 * TAU;
            let offset = sidereal::wrap(mid - start);
            if offset <= span {
                *m += ((span - offset) / TAU).floor() as u32 + 1;
            }
        }
    }
    let uncovered_cells: Vec<usize> = multiplicity
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0)
        .map(|(i, _)| i)
        .collect();
    Ok(DayCoverage {
        cell_count,
        resolution_s,
        complete: uncovered_cells.is_empty(),
        multiplicity,
        uncovered_cells,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaySimulation {
    pub series: Vec<CoincidenceSeries>,
    pub coverage: DayCoverage,
}

/// Simulate a schedule of runs. Run `i` draws from stream `i` of `seed`, so
/// the output does not depend on how runs are scheduled across threads.
/// Incomplete day coverage is reported, not rejected.
pub fn compose_day(
    runs: &[RunSpec],
    model: &SourceModel,
    bin_width: f64,
    seed: u64,
    resolution_s: f64,
) -> Result<DaySimulation> {
    let series = runs
        .par_iter()
        .enumerate()
        .map(|(i, run)| {
            simulate_with_rng(
                model,
                &run.scan,
                run.duration,
                bin_width,
                run.start,
                &mut run_rng(seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DaySimulation {
        series,
        coverage: schedule_coverage(runs, resolution_s)?,
    })
}
