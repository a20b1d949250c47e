//! Alignment budget and baseline geometry.
//!
//! The arrival-time uncertainty `t_AB` combines a fiber-length term and a
//! chromatic-dispersion term in quadrature; `rho_bar = c t_AB / r_AB` then
//! bounds the alignment of the two detections.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::BaselineGeometry;
use crate::{check_finite, Error, Result, SPEED_OF_LIGHT};

/// Group index that makes 1 cm of fiber correspond to 49 ps.
pub const DEFAULT_GROUP_INDEX: f64 = 1.468;

/// Mean Earth radius used for site geometry, metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

const PS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberPath {
    /// metres
    pub length: f64,
    pub group_index: f64,
    /// metres
    pub length_uncertainty: f64,
}

impl FiberPath {
    pub fn new(length: f64, group_index: f64, length_uncertainty: f64) -> Result<Self> {
        check_finite("fiber length", length)?;
        check_finite("group index", group_index)?;
        check_finite("fiber length uncertainty", length_uncertainty)?;
        if length < 0.0 {
            return Err(Error::invalid("fiber length", "must be non-negative"));
        }
        if group_index <= 1.0 {
            return Err(Error::invalid("group index", format!("{group_index} must exceed 1")));
        }
        if length_uncertainty < 0.0 {
            return Err(Error::invalid("fiber length uncertainty", "must be non-negative"));
        }
        Ok(Self {
            length,
            group_index,
            length_uncertainty,
        })
    }

    pub fn with_default_index(length: f64, length_uncertainty: f64) -> Result<Self> {
        Self::new(length, DEFAULT_GROUP_INDEX, length_uncertainty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    /// ps / (nm km)
    pub coefficient: f64,
    /// nm
    pub spectral_half_width: f64,
    /// km
    pub fiber_length_one_side: f64,
}

impl DispersionSpec {
    pub fn new(coefficient: f64, spectral_half_width: f64, fiber_length_one_side: f64) -> Result<Self> {
        for (what, v) in [
            ("dispersion coefficient", coefficient),
            ("spectral half width", spectral_half_width),
            ("fiber length", fiber_length_one_side),
        ] {
            check_finite(what, v)?;
            if v < 0.0 {
                return Err(Error::invalid(what, "must be non-negative"));
            }
        }
        Ok(Self {
            coefficient,
            spectral_half_width,
            fiber_length_one_side,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBudget {
    /// seconds
    pub length_term: f64,
    /// seconds
    pub dispersion_term: f64,
    /// seconds
    pub t_ab_total: f64,
    pub rho_bar: f64,
}

/// Arrival-time offset from the residual length difference and its
/// uncertainty, in seconds.
pub fn length_mismatch_time(path_a: &FiberPath, path_b: &FiberPath) -> f64 {
    let mismatch = (path_a.length - path_b.length).abs();
    let uncertainty = path_a.length_uncertainty.hypot(path_b.length_uncertainty);
    let index = 0.5 * (path_a.group_index + path_b.group_index);
    (mismatch + uncertainty) * index / SPEED_OF_LIGHT
}

/// Dispersion spread in seconds. Energy anticorrelation makes the two
/// photons' delays opposite, so both fiber lengths add.
pub fn dispersion_time(spec: &DispersionSpec) -> f64 {
    spec.coefficient * spec.spectral_half_width * 2.0 * spec.fiber_length_one_side * PS
}

/// Quadrature sum of the two terms and the resulting `rho_bar` for a
/// baseline of `r_ab` metres.
pub fn total_alignment(length_term: f64, dispersion_term: f64, r_ab: f64) -> Result<AlignmentBudget> {
    check_finite("length term", length_term)?;
    check_finite("dispersion term", dispersion_term)?;
    check_finite("r_ab", r_ab)?;
    if length_term < 0.0 || dispersion_term < 0.0 {
        return Err(Error::invalid("alignment terms", "must be non-negative"));
    }
    if r_ab <= 0.0 {
        return Err(Error::invalid("r_ab", "must be positive"));
    }
    let t_ab_total = length_term.hypot(dispersion_term);
    Ok(AlignmentBudget {
        length_term,
        dispersion_term,
        t_ab_total,
        rho_bar: SPEED_OF_LIGHT * t_ab_total / r_ab,
    })
}

/// Full budget from raw fiber and dispersion data.
pub fn alignment_budget(
    path_a: &FiberPath,
    path_b: &FiberPath,
    dispersion: &DispersionSpec,
    r_ab: f64,
) -> Result<AlignmentBudget> {
    total_alignment(
        length_mismatch_time(path_a, path_b),
        dispersion_time(dispersion),
        r_ab,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteCoordinates {
    /// degrees
    pub latitude: f64,
    /// degrees
    pub longitude: f64,
    /// metres
    pub altitude: f64,
}

impl SiteCoordinates {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self> {
        check_finite("latitude", latitude)?;
        check_finite("longitude", longitude)?;
        check_finite("altitude", altitude)?;
        if latitude.abs() > 90.0 {
            return Err(Error::invalid("latitude", format!("{latitude} outside [-90, 90]")));
        }
        if longitude.abs() > 180.0 {
            return Err(Error::invalid("longitude", format!("{longitude} outside [-180, 180]")));
        }
        Ok(Self {
            latitude,
            longitude,
            altitude,
        })
    }

    /// Earth-centred Cartesian position on a spherical Earth.
    pub fn to_cartesian(&self) -> Vector3<f64> {
        let r = EARTH_RADIUS_M + self.altitude;
        let (slat, clat) = self.latitude.to_radians().sin_cos();
        let (slon, clon) = self.longitude.to_radians().sin_cos();
        Vector3::new(r * clat * clon, r * clat * slon, r * slat)
    }
}

/// Baseline derived from two sites; `rho_bar` is attached separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteBaseline {
    /// chord length, metres
    pub r_ab: f64,
    /// angle above the equatorial plane, degrees
    pub alpha_deg: f64,
}

impl SiteBaseline {
    pub fn with_rho_bar(self, rho_bar: f64) -> Result<BaselineGeometry> {
        BaselineGeometry::new(self.r_ab, self.alpha_deg, rho_bar)
    }
}

pub fn baseline_from_sites(a: &SiteCoordinates, b: &SiteCoordinates) -> Result<SiteBaseline> {
    let delta = b.to_cartesian() - a.to_cartesian();
    let r_ab = delta.norm();
    if r_ab == 0.0 {
        return Err(Error::invalid("sites", "coincident sites"));
    }
    let alpha_deg = (delta.z.abs() / r_ab).min(1.0).asin().to_degrees();
    Ok(SiteBaseline { r_ab, alpha_deg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn length_term() {
        let a = FiberPath::with_default_index(17_550.0, 0.01).unwrap();
        let b = FiberPath::with_default_index(17_550.0, 0.0).unwrap();
        assert_relative_eq!(length_mismatch_time(&a, &b) / PS, 48.97, max_relative = 1e-3);
        assert_eq!(length_mismatch_time(&b, &b), 0.0);
        let a = FiberPath::new(1000.02, 1.5, 0.0).unwrap();
        let b = FiberPath::new(1000.0, 1.5, 0.0).unwrap();
        assert_relative_eq!(length_mismatch_time(&a, &b) / PS, 100.07, max_relative = 1e-3);
        assert!(FiberPath::new(1.0, 1.0, 0.0).is_err());
        assert!(FiberPath::new(-1.0, 1.5, 0.0).is_err());
    }

    #[test]
    fn dispersion_term() {
        let spec = DispersionSpec::new(18.2, 0.5, 17.55).unwrap();
        assert_relative_eq!(dispersion_time(&spec) / PS, 319.41, max_relative = 1e-9);
        let spec = DispersionSpec::new(18.2, 0.0, 17.55).unwrap();
        assert_eq!(dispersion_time(&spec), 0.0);
        let spec = DispersionSpec::new(17.0, 1.0, 10.0).unwrap();
        assert_relative_eq!(dispersion_time(&spec) / PS, 340.0, max_relative = 1e-12);
        assert!(DispersionSpec::new(-1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn quadrature_budget() {
        let b = total_alignment(49.0 * PS, 319.0 * PS, 18_000.0).unwrap();
        assert_relative_eq!(b.t_ab_total / PS, 322.74, max_relative = 1e-4);
        assert_relative_eq!(b.rho_bar, 5.38e-6, max_relative = 1e-3);
        let b = total_alignment(0.0, 0.0, 5.0).unwrap();
        assert_eq!((b.t_ab_total, b.rho_bar), (0.0, 0.0));
        let b = total_alignment(300.0 * PS, 400.0 * PS, 15_000.0).unwrap();
        assert_relative_eq!(b.t_ab_total / PS, 500.0, max_relative = 1e-12);
        assert_relative_eq!(b.rho_bar, 9.9931e-6, max_relative = 1e-4);
        assert!(b.t_ab_total >= b.length_term.max(b.dispersion_term));
        assert!(total_alignment(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn same_latitude_sites() {
        let a = SiteCoordinates::new(46.2, 6.0, 0.0).unwrap();
        let b = SiteCoordinates::new(46.2, 6.234, 0.0).unwrap();
        let base = baseline_from_sites(&a, &b).unwrap();
        assert!(base.alpha_deg.abs() < 1e-9);
        let chord = 2.0 * EARTH_RADIUS_M * 46.2f64.to_radians().cos() * (0.117f64.to_radians()).sin();
        assert_relative_eq!(base.r_ab, chord, max_relative = 1e-9);
        assert!((base.r_ab - 18_000.0).abs() < 100.0);
    }

    #[test]
    fn meridian_and_radial_sites() {
        // a chord between equal-radius points on one meridian is perpendicular
        // to the radius at the mean latitude
        let a = SiteCoordinates::new(46.1, 6.1, 0.0).unwrap();
        let b = SiteCoordinates::new(46.3, 6.1, 0.0).unwrap();
        let base = baseline_from_sites(&a, &b).unwrap();
        assert_relative_eq!(base.alpha_deg, 90.0 - 46.2, max_relative = 1e-9);

        let a = SiteCoordinates::new(46.2, 6.1, 0.0).unwrap();
        let b = SiteCoordinates::new(46.2, 6.1, 1000.0).unwrap();
        let base = baseline_from_sites(&a, &b).unwrap();
        assert_relative_eq!(base.r_ab, 1000.0, max_relative = 1e-9);
        assert_relative_eq!(base.alpha_deg, 46.2, max_relative = 1e-9);

        assert!(baseline_from_sites(&a, &a).is_err());
        assert!(SiteCoordinates::new(91.0, 0.0, 0.0).is_err());
    }
}
