//! JSON run configuration. Every section is optional and defaults to the
//! Geneva long-baseline setup; unknown keys are rejected.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use vqi_core::fringe::{PeriodMode, SlidingScan};
use vqi_core::kinematics::{BaselineGeometry, RotationClock};
use vqi_core::metrology::{
    alignment_budget, baseline_from_sites, AlignmentBudget, DispersionSpec, FiberPath,
    SiteCoordinates, DEFAULT_GROUP_INDEX,
};
use vqi_core::photon_sim::{PhaseScan, RunSpec, SourceModel};
use vqi_core::scan::{Sweep, DEFAULT_BETA_POINTS, DEFAULT_CHI_POINTS};
use vqi_core::CHSH_VISIBILITY_THRESHOLD;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub metrology: MetrologyConfig,
    pub source: SourceConfig,
    pub scan: ScanConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            metrology: MetrologyConfig::default(),
            source: SourceConfig::default(),
            scan: ScanConfig::default(),
            analysis: AnalysisConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Baseline geometry and alignment. `r_ab_m`/`alpha_deg` and `sites` are
/// alternatives, as are `rho_bar` and `alignment`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetrologyConfig {
    pub r_ab_m: Option<f64>,
    pub alpha_deg: Option<f64>,
    pub rho_bar: Option<f64>,
    pub sites: Option<SitesConfig>,
    pub alignment: Option<AlignmentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SitesConfig {
    pub a: SiteConfig,
    pub b: SiteConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub altitude_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    pub fiber_a: FiberConfig,
    pub fiber_b: FiberConfig,
    pub dispersion: DispersionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub length_m: f64,
    #[serde(default)]
    pub length_uncertainty_m: f64,
    #[serde(default = "default_group_index")]
    pub group_index: f64,
}

fn default_group_index() -> f64 {
    DEFAULT_GROUP_INDEX
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub coefficient_ps_per_nm_km: f64,
    pub spectral_half_width_nm: f64,
    pub fiber_length_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedMetrology {
    pub geometry: BaselineGeometry,
    pub budget: Option<AlignmentBudget>,
}

impl MetrologyConfig {
    pub fn resolve(&self) -> Result<ResolvedMetrology, String> {
        let (r_ab, alpha_deg) = match &self.sites {
            Some(_) if self.r_ab_m.is_some() || self.alpha_deg.is_some() => {
                return Err("metrology: give either sites or r_ab_m/alpha_deg, not both".into())
            }
            Some(sites) => {
                let site = |s: &SiteConfig| {
                    SiteCoordinates::new(s.latitude_deg, s.longitude_deg, s.altitude_m)
                };
                let a = site(&sites.a).map_err(|e| format!("metrology.sites.a: {e}"))?;
                let b = site(&sites.b).map_err(|e| format!("metrology.sites.b: {e}"))?;
                let base = baseline_from_sites(&a, &b).map_err(|e| format!("metrology.sites: {e}"))?;
                (base.r_ab, base.alpha_deg)
            }
            None => (self.r_ab_m.unwrap_or(18_000.0), self.alpha_deg.unwrap_or(5.8)),
        };
        let (rho_bar, budget) = match &self.alignment {
            Some(_) if self.rho_bar.is_some() => {
                return Err("metrology: give either rho_bar or alignment, not both".into())
            }
            Some(al) => {
                let fiber = |f: &FiberConfig| {
                    FiberPath::new(f.length_m, f.group_index, f.length_uncertainty_m)
                };
                let a = fiber(&al.fiber_a).map_err(|e| format!("metrology.alignment.fiber_a: {e}"))?;
                let b = fiber(&al.fiber_b).map_err(|e| format!("metrology.alignment.fiber_b: {e}"))?;
                let d = &al.dispersion;
                let disp = DispersionSpec::new(
                    d.coefficient_ps_per_nm_km,
                    d.spectral_half_width_nm,
                    d.fiber_length_km,
                )
                .map_err(|e| format!("metrology.alignment.dispersion: {e}"))?;
                let budget = alignment_budget(&a, &b, &disp, r_ab)
                    .map_err(|e| format!("metrology.alignment: {e}"))?;
                (budget.rho_bar, Some(budget))
            }
            None => (self.rho_bar.unwrap_or(5.4e-6), None),
        };
        let geometry = BaselineGeometry::new(r_ab, alpha_deg, rho_bar)
            .map_err(|e| format!("metrology: {e}"))?;
        Ok(ResolvedMetrology { geometry, budget })
    }
}

/// Rates per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub true_coincidence_rate: f64,
    pub accidental_rate: f64,
    pub source_visibility: f64,
    pub singles_rate_a: f64,
    pub singles_rate_b: f64,
    pub singles_drift_per_hour: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        let m = SourceModel::geneva();
        Self {
            true_coincidence_rate: m.true_coincidence_rate,
            accidental_rate: m.accidental_rate,
            source_visibility: m.source_visibility,
            singles_rate_a: m.singles_rate_a,
            singles_rate_b: m.singles_rate_b,
            singles_drift_per_hour: m.singles_drift_per_hour,
        }
    }
}

impl SourceConfig {
    pub fn model(&self) -> Result<SourceModel, String> {
        SourceModel::new(
            self.true_coincidence_rate,
            self.accidental_rate,
            self.source_visibility,
            self.singles_rate_a,
            self.singles_rate_b,
        )
        .and_then(|m| m.with_drift(self.singles_drift_per_hour))
        .map_err(|e| format!("source: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// seconds of scanning per fringe
    pub fringe_period_s: f64,
    pub bin_width_s: f64,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub start: DateTime<Utc>,
    pub duration_s: f64,
    #[serde(default)]
    pub initial_phase_rad: f64,
    /// `[start, end]` seconds since run start during which the ramp halts
    #[serde(default)]
    pub gaps_s: Vec<(f64, f64)>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            fringe_period_s: 360.0,
            bin_width_s: 60.0,
            runs: default_schedule(),
        }
    }
}

/// Four 13 h runs on consecutive days, each starting six hours later in the
/// day than the last, so every moment of the sidereal day is seen at least
/// twice. Each run halts its ramp for five minutes midway.
pub fn default_schedule() -> Vec<RunEntry> {
    let first = Utc.with_ymd_and_hms(2008, 6, 1, 0, 0, 0).unwrap();
    (0..4)
        .map(|k| RunEntry {
            start: first + Duration::days(k) + Duration::hours(6 * k),
            duration_s: 13.0 * 3600.0,
            initial_phase_rad: 0.0,
            gaps_s: vec![(23_400.0, 23_700.0)],
        })
        .collect()
}

impl ScanConfig {
    pub fn run_specs(&self) -> Result<Vec<RunSpec>, String> {
        self.runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if !r.duration_s.is_finite() || r.duration_s <= 0.0 {
                    return Err(format!("scan.runs[{i}]: duration_s must be positive"));
                }
                let scan = PhaseScan::with_gaps(
                    self.fringe_period_s,
                    r.initial_phase_rad,
                    r.duration_s,
                    &r.gaps_s,
                )
                .map_err(|e| format!("scan.runs[{i}]: {e}"))?;
                Ok(RunSpec {
                    start: r.start,
                    duration: r.duration_s,
                    scan,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// seconds; 1.5 fringe periods when absent
    pub window_length_s: Option<f64>,
    /// seconds; one bin when absent
    pub step_s: Option<f64>,
    pub threshold: f64,
    pub coverage_resolution_s: f64,
    pub required_multiplicity: u32,
    /// search the period of full-span fits instead of fixing it
    pub fit_period: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_length_s: None,
            step_s: None,
            threshold: CHSH_VISIBILITY_THRESHOLD,
            coverage_resolution_s: 300.0,
            required_multiplicity: 2,
            fit_period: false,
        }
    }
}

impl AnalysisConfig {
    pub fn sliding(&self, fringe_period_s: f64) -> SlidingScan {
        SlidingScan {
            period: PeriodMode::Fixed(fringe_period_s),
            window_length: self.window_length_s,
            step: self.step_s,
            threshold: self.threshold,
        }
    }

    pub fn full_span_period(&self, fringe_period_s: f64) -> PeriodMode {
        if self.fit_period {
            PeriodMode::Fitted(fringe_period_s)
        } else {
            PeriodMode::Fixed(fringe_period_s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub chi: ChiSweepConfig,
    pub beta: BetaSweepConfig,
    /// speed used by the worst-case report
    pub worst_case_beta: f64,
    /// seconds needed to establish a violation; the fringe period when absent
    pub window_t_s: Option<f64>,
    /// known alignment replacing the `rho_bar` worst case
    pub exact_rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChiSweepConfig {
    pub beta: f64,
    pub start_deg: f64,
    pub end_deg: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSweepConfig {
    pub chi_deg: f64,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            chi: ChiSweepConfig::default(),
            beta: BetaSweepConfig::default(),
            worst_case_beta: 1e-3,
            window_t_s: None,
            exact_rho: None,
        }
    }
}

impl Default for ChiSweepConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            start_deg: 0.0,
            end_deg: 180.0,
            points: DEFAULT_CHI_POINTS,
        }
    }
}

impl Default for BetaSweepConfig {
    fn default() -> Self {
        Self {
            chi_deg: 90.0,
            min: 1e-6,
            max: 1.0 - 1e-6,
            points: DEFAULT_BETA_POINTS,
        }
    }
}

impl SweepConfig {
    pub fn chi_sweep(&self) -> Sweep {
        let c = self.chi;
        Sweep::Chi {
            beta: c.beta,
            start_deg: c.start_deg,
            end_deg: c.end_deg,
            points: c.points,
        }
    }

    pub fn beta_sweep(&self) -> Sweep {
        let b = self.beta;
        Sweep::Beta {
            chi_deg: b.chi_deg,
            min: b.min,
            max: b.max,
            points: b.points,
        }
    }

    pub fn clock(&self, fringe_period_s: f64) -> Result<RotationClock, String> {
        RotationClock::sidereal(self.window_t_s.unwrap_or(fringe_period_s))
            .map_err(|e| format!("sweep: {e}"))
    }
}

/// A parsed configuration together with the bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self, CliError> {
        use sha2::{Digest, Sha256};
        let invalid = |reason: String| CliError::Config {
            path: origin.to_path_buf(),
            reason,
        };
        let config: RunConfig = serde_json::from_slice(bytes).map_err(|e| invalid(e.to_string()))?;
        config.validate().map_err(invalid)?;
        Ok(Self {
            config,
            sha256: hex::encode(Sha256::digest(bytes)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::ConfigNotFound(path.to_path_buf()))
            }
            Err(e) => {
                return Err(CliError::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
        };
        Self::from_bytes(&bytes, path)
    }
}

impl RunConfig {
    /// Check every section against the invariants of the types it builds.
    pub fn validate(&self) -> Result<(), String> {
        self.metrology.resolve()?;
        self.source.model()?;
        let s = &self.scan;
        if !s.bin_width_s.is_finite() || s.bin_width_s <= 0.0 {
            return Err("scan.bin_width_s must be positive".into());
        }
        s.run_specs()?;
        let a = &self.analysis;
        for (what, v) in [("analysis.window_length_s", a.window_length_s), ("analysis.step_s", a.step_s)] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    return Err(format!("{what} must be positive"));
                }
            }
        }
        if !a.coverage_resolution_s.is_finite() || a.coverage_resolution_s <= 0.0 {
            return Err("analysis.coverage_resolution_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&a.threshold) {
            return Err("analysis.threshold must lie in [0, 1]".into());
        }
        let w = &self.sweep;
        w.clock(s.fringe_period_s)?;
        w.chi_sweep().frames().map_err(|e| format!("sweep.chi: {e}"))?;
        w.beta_sweep().frames().map_err(|e| format!("sweep.beta: {e}"))?;
        if !(0.0..1.0).contains(&w.worst_case_beta) {
            return Err("sweep.worst_case_beta must lie in [0, 1)".into());
        }
        if let Some(rho) = w.exact_rho {
            if rho.is_nan() || rho.abs() >= 1.0 {
                return Err("sweep.exact_rho must satisfy |rho| < 1".into());
            }
        }
        Ok(())
    }
}
