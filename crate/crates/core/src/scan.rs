//! Sweeps over hypothetical privileged frames.
//!
//! Each curve point classifies the frame, bounds `|beta_par|` over the best
//! window of length `T` and feeds that bound into the worst-case closed form.
//! The pipeline adds no arithmetic of its own.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::fringe::CoverageReport;
use crate::kinematics::{
    bound_beta_parallel, classify_case, sampled_optimal_window, BaselineGeometry, RotationClock,
    WindowCase,
};
use crate::relativity::{vqi_bound_exact, vqi_bound_worstcase, PrivilegedFrame};
use crate::{check_finite, Error, Result};

pub const CURVE_CSV_HEADER: [&str; 4] = ["sweep_value", "case_tag", "beta_parallel_bound", "vqi_over_c"];

pub const DEFAULT_CHI_POINTS: usize = 1801;
pub const DEFAULT_BETA_POINTS: usize = 241;

/// Phase samples per day used by the exact-alignment mode.
const EXACT_RHO_SAMPLES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sweep {
    /// Linear sweep of the zenith angle at fixed speed.
    Chi {
        beta: f64,
        start_deg: f64,
        end_deg: f64,
        points: usize,
    },
    /// Logarithmic sweep of the speed at fixed zenith angle.
    Beta {
        chi_deg: f64,
        min: f64,
        max: f64,
        points: usize,
    },
}

impl Sweep {
    pub fn chi(beta: f64) -> Self {
        Sweep::Chi {
            beta,
            start_deg: 0.0,
            end_deg: 180.0,
            points: DEFAULT_CHI_POINTS,
        }
    }

    pub fn beta(chi_deg: f64) -> Self {
        Sweep::Beta {
            chi_deg,
            min: 1e-6,
            max: 1.0 - 1e-6,
            points: DEFAULT_BETA_POINTS,
        }
    }

    /// The `(beta, chi_deg)` frames in sweep order.
    pub fn frames(&self) -> Result<Vec<PrivilegedFrame>> {
        match *self {
            Sweep::Chi {
                beta,
                start_deg,
                end_deg,
                points,
            } => {
                check_points(points)?;
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::invalid("beta", format!("{beta} outside [0, 1)")));
                }
                let last = points - 1;
                (0..points)
                    .map(|k| {
                        let chi = if k == last {
                            end_deg
                        } else {
                            start_deg + (end_deg - start_deg) * k as f64 / last as f64
                        };
                        PrivilegedFrame::new(beta, chi)
                    })
                    .collect()
            }
            Sweep::Beta {
                chi_deg,
                min,
                max,
                points,
            } => {
                check_points(points)?;
                check_finite("beta sweep min", min)?;
                check_finite("beta sweep max", max)?;
                if !(min > 0.0 && max < 1.0 && min < max) {
                    return Err(Error::invalid(
                        "beta sweep",
                        format!("need 0 < min < max < 1, got [{min}, {max}]"),
                    ));
                }
                let (lmin, lmax) = (min.ln(), max.ln());
                let last = points - 1;
                (0..points)
                    .map(|k| {
                        let beta = match k {
                            0 => min,
                            k if k == last => max,
                            k => (lmin + (lmax - lmin) * k as f64 / last as f64).exp(),
                        };
                        PrivilegedFrame::new(beta, chi_deg)
                    })
                    .collect()
            }
        }
    }

    fn coordinate(&self, frame: &PrivilegedFrame) -> f64 {
        match self {
            Sweep::Chi { .. } => frame.chi_deg(),
            Sweep::Beta { .. } => frame.beta(),
        }
    }
}

fn check_points(points: usize) -> Result<()> {
    if points < 2 {
        return Err(Error::invalid("sweep resolution", "need at least 2 points"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub geometry: BaselineGeometry,
    pub clock: RotationClock,
    pub sweep: Sweep,
    /// Known alignment; when set each point optimises its window for this
    /// `rho` and applies the exact closed form instead of the `rho_bar` bound.
    pub exact_rho: Option<f64>,
}

/// What licenses a bound claim: an observed violation over the whole
/// sidereal day, or an explicit waiver for pure-math sweeps.
#[derive(Debug, Clone, Copy)]
pub enum ViolationEvidence<'a> {
    Coverage(&'a CoverageReport),
    Waived,
}

impl ViolationEvidence<'_> {
    pub fn check(&self) -> Result<()> {
        match self {
            ViolationEvidence::Waived => Ok(()),
            ViolationEvidence::Coverage(report) if report.verdict => Ok(()),
            ViolationEvidence::Coverage(report) => Err(Error::Prerequisite(format!(
                "{} under-covered cells (need multiplicity {}), {} windows at or below threshold",
                report.under_covered_cells.len(),
                report.required_multiplicity,
                report.below_threshold.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// chi in degrees or beta, depending on the sweep
    pub coordinate: f64,
    pub beta: f64,
    pub chi_deg: f64,
    pub case: WindowCase,
    pub beta_parallel_bound: f64,
    pub window_center_phase: f64,
    /// lower bound on V_QI / c; infinite when unbounded
    pub vqi_over_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub sweep: Sweep,
    pub points: Vec<CurvePoint>,
    pub minimum: CurvePoint,
}

impl BoundCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CURVE_CSV_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.coordinate.to_string(),
                p.case.tag().to_string(),
                p.beta_parallel_bound.to_string(),
                p.vqi_over_c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bound for a single frame with the `rho_bar` worst case.
pub fn bound_for_frame(
    geometry: &BaselineGeometry,
    clock: &RotationClock,
    frame: &PrivilegedFrame,
) -> Result<CurvePoint> {
    let wb = bound_beta_parallel(frame, geometry, clock);
    let vqi = vqi_bound_worstcase(geometry.rho_bar(), frame.beta(), wb.beta_parallel_abs_bound)?;
    Ok(CurvePoint {
        coordinate: f64::NAN,
        beta: frame.beta(),
        chi_deg: frame.chi_deg(),
        case: wb.case,
        beta_parallel_bound: wb.beta_parallel_abs_bound,
        window_center_phase: wb.window_center_phase,
        vqi_over_c: vqi.value(),
    })
}

/// Bound for a single frame when the alignment `rho` is known exactly.
pub fn bound_for_frame_exact_rho(
    geometry: &BaselineGeometry,
    clock: &RotationClock,
    frame: &PrivilegedFrame,
    rho: f64,
) -> Result<CurvePoint> {
    let window = sampled_optimal_window(frame, geometry, clock, rho, EXACT_RHO_SAMPLES)?;
    let beta_par = window.worst_signed - rho;
    let vqi = vqi_bound_exact(rho, frame.beta(), beta_par)?;
    Ok(CurvePoint {
        coordinate: f64::NAN,
        beta: frame.beta(),
        chi_deg: frame.chi_deg(),
        case: classify_case(frame, geometry, clock),
        beta_parallel_bound: beta_par.abs(),
        window_center_phase: window.start_phase + 0.5 * clock.window_angle(),
        vqi_over_c: vqi.value(),
    })
}

/// Evaluate a sweep. Points are computed in parallel and returned in sweep
/// order.
pub fn run_scan(req: &ScanRequest, evidence: ViolationEvidence<'_>) -> Result<BoundCurve> {
    evidence.check()?;
    let frames = req.sweep.frames()?;
    let points = frames
        .par_iter()
        .map(|frame| {
            let mut p = match req.exact_rho {
                None => bound_for_frame(&req.geometry, &req.clock, frame)?,
                Some(rho) => bound_for_frame_exact_rho(&req.geometry, &req.clock, frame, rho)?,
            };
            p.coordinate = req.sweep.coordinate(frame);
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let minimum = *points
        .iter()
        .min_by(|a, b| a.vqi_over_c.total_cmp(&b.vqi_over_c))
        .expect("at least two points");
    Ok(BoundCurve {
        sweep: req.sweep,
        points,
        minimum,
    })
}

pub fn run_chi_scan(req: &ScanRequest, evidence: ViolationEvidence<'_>) -> Result<BoundCurve> {
    if !matches!(req.sweep, Sweep::Chi { .. }) {
        return Err(Error::invalid("sweep", "expected a chi sweep"));
    }
    run_scan(req, evidence)
}

pub fn run_beta_scan(req: &ScanRequest, evidence: ViolationEvidence<'_>) -> Result<BoundCurve> {
    if !matches!(req.sweep, Sweep::Beta { .. }) {
        return Err(Error::invalid("sweep", "expected a beta sweep"));
    }
    run_scan(req, evidence)
}

/// The least favourable frame at speed `beta`, with its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub geometry: BaselineGeometry,
    pub clock: RotationClock,
    pub beta: f64,
    pub chi_points: usize,
    pub worst: CurvePoint,
}

pub fn worst_case_report(
    geometry: &BaselineGeometry,
    clock: &RotationClock,
    beta: f64,
    chi_points: usize,
    evidence: ViolationEvidence<'_>,
) -> Result<WorstCaseReport> {
    let req = ScanRequest {
        geometry: *geometry,
        clock: *clock,
        sweep: Sweep::Chi {
            beta,
            start_deg: 0.0,
            end_deg: 180.0,
            points: chi_points,
        },
        exact_rho: None,
    };
    let curve = run_chi_scan(&req, evidence)?;
    Ok(WorstCaseReport {
        geometry: *geometry,
        clock: *clock,
        beta,
        chi_points,
        worst: curve.minimum,
    })
}
