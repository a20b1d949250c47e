//! Lower bounds on V_QI for a single privileged frame.
//!
//! Two routes are provided. [`vqi_from_events`] Lorentz-transforms a pair of
//! detection events into the privileged frame and takes the ratio of spatial
//! to temporal separation there. [`vqi_bound_exact`] and
//! [`vqi_bound_worstcase`] are the closed forms in terms of the alignment
//! `rho = c t_AB / r_AB`, the frame speed `beta` and the component `beta_par`
//! of the frame velocity along the A-B axis:
//!
//! ```text
//! (V/c)^2 = 1 + (1 - beta^2)(1 - rho^2) / (rho + beta_par)^2
//! ```
//!
//! All results are expressed in units of c.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{check_finite, Error, Result, SPEED_OF_LIGHT};

/// Relative slack on `|beta_par| <= beta` for rounding in callers that
/// project a velocity vector onto an axis.
const PROJECTION_SLACK: f64 = 1e-12;

/// A lower bound on V_QI / c. Frames in which both events are simultaneous
/// give no finite bound; that case is a result, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SpeedBound {
    Finite(f64),
    Unbounded,
}

impl SpeedBound {
    /// The bound as a float; `Unbounded` maps to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            SpeedBound::Finite(v) => v,
            SpeedBound::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, SpeedBound::Unbounded)
    }
}

/// A detection event in the Earth-centred inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacetimeEvent {
    /// Metres.
    pub position: Vector3<f64>,
    /// Seconds.
    pub time: f64,
}

impl SpacetimeEvent {
    pub fn new(position: [f64; 3], time: f64) -> Result<Self> {
        for x in position {
            check_finite("event position", x)?;
        }
        check_finite("event time", time)?;
        Ok(Self {
            position: Vector3::from(position),
            time,
        })
    }
}

/// Velocity of the Earth frame relative to the privileged frame, in units of c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVelocity(Vector3<f64>);

impl FrameVelocity {
    pub fn new(beta: [f64; 3]) -> Result<Self> {
        for x in beta {
            check_finite("frame velocity", x)?;
        }
        let v = Vector3::from(beta);
        let speed = v.norm();
        if speed >= 1.0 {
            return Err(Error::invalid(
                "frame velocity",
                format!("|beta| = {speed} must be below 1"),
            ));
        }
        Ok(Self(v))
    }

    pub fn beta(&self) -> Vector3<f64> {
        self.0
    }

    pub fn speed(&self) -> f64 {
        self.0.norm()
    }
}

/// A hypothetical privileged frame: the Earth's speed `beta` relative to it
/// and the zenith angle `chi` between that velocity and the rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedFrame {
    beta: f64,
    chi_deg: f64,
    #[serde(skip)]
    chi_rad: f64,
}

impl PrivilegedFrame {
    /// `beta` may be exactly 1 here; the closed forms accept it as a limit.
    pub fn new(beta: f64, chi_deg: f64) -> Result<Self> {
        check_finite("beta", beta)?;
        check_finite("chi", chi_deg)?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid("beta", format!("{beta} outside [0, 1]")));
        }
        if !(0.0..=180.0).contains(&chi_deg) {
            return Err(Error::invalid("chi", format!("{chi_deg} deg outside [0, 180]")));
        }
        Ok(Self {
            beta,
            chi_deg,
            chi_rad: chi_deg.to_radians(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn chi_deg(&self) -> f64 {
        self.chi_deg
    }

    pub fn chi_rad(&self) -> f64 {
        self.chi_rad
    }
}

/// Alignment of the two detections in the Earth frame, `rho = c t_AB / r_AB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRho {
    pub rho: f64,
    /// True when `rho` is an experimental upper bound on `|rho|`.
    pub is_bound: bool,
}

impl AlignmentRho {
    pub fn exact(rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(Self { rho, is_bound: false })
    }

    pub fn bound(rho_bar: f64) -> Result<Self> {
        check_rho(rho_bar)?;
        if rho_bar < 0.0 {
            return Err(Error::invalid("rho_bar", "must be non-negative"));
        }
        Ok(Self {
            rho: rho_bar,
            is_bound: true,
        })
    }

    /// `t_ab` in seconds, `r_ab` in metres.
    pub fn from_timing(t_ab: f64, r_ab: f64) -> Result<Self> {
        if r_ab.is_nan() || r_ab <= 0.0 {
            return Err(Error::invalid("r_ab", "must be positive"));
        }
        Self::exact(SPEED_OF_LIGHT * t_ab / r_ab)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    check_finite("rho", rho)?;
    if rho.abs() >= 1.0 {
        return Err(Error::NotSpaceLike { rho: rho.abs() });
    }
    Ok(())
}

fn check_beta_closed(beta: f64) -> Result<()> {
    check_finite("beta", beta)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} outside [0, 1]")));
    }
    Ok(())
}

/// V_QI / c from the Lorentz-transformed coordinates of two events.
///
/// The Earth frame moves at `v` relative to the privileged frame F, so an
/// Earth-frame separation `(dr, dt)` maps to
/// `dt' = gamma (dt + beta . dr / c)` and
/// `dr' = dr + (gamma - 1)(dr . n) n + gamma beta c dt` with `n = beta / |beta|`.
pub fn vqi_from_events(
    a: &SpacetimeEvent,
    b: &SpacetimeEvent,
    v: &FrameVelocity,
) -> Result<SpeedBound> {
    let dr = b.position - a.position;
    let dt = b.time - a.time;
    let r = dr.norm();
    if r == 0.0 {
        return Err(Error::NotSpaceLike { rho: f64::INFINITY });
    }
    let rho = SPEED_OF_LIGHT * dt / r;
    if rho.abs() >= 1.0 {
        return Err(Error::NotSpaceLike { rho: rho.abs() });
    }

    let beta = v.beta();
    let speed = beta.norm();
    let (dr_f, c_dt_f) = if speed == 0.0 {
        (dr, SPEED_OF_LIGHT * dt)
    } else {
        let gamma = 1.0 / (1.0 - speed * speed).sqrt();
        let n = beta / speed;
        let c_dt = SPEED_OF_LIGHT * dt;
        let along = dr.dot(&n);
        let dr_f = dr + n * ((gamma - 1.0) * along) + beta * (gamma * c_dt);
        let c_dt_f = gamma * (c_dt + beta.dot(&dr));
        (dr_f, c_dt_f)
    };

    if c_dt_f == 0.0 {
        return Ok(SpeedBound::Unbounded);
    }
    Ok(SpeedBound::Finite(dr_f.norm() / c_dt_f.abs()))
}

/// Closed-form bound for a known alignment `rho`.
///
/// `beta = 1` is accepted as the limiting case, where the bound is exactly 1.
pub fn vqi_bound_exact(rho: f64, beta: f64, beta_parallel: f64) -> Result<SpeedBound> {
    check_rho(rho)?;
    check_beta_closed(beta)?;
    check_finite("beta_parallel", beta_parallel)?;
    if beta_parallel.abs() > beta * (1.0 + PROJECTION_SLACK) {
        return Err(Error::invalid(
            "beta_parallel",
            format!("|{beta_parallel}| exceeds beta = {beta}"),
        ));
    }
    let denom = rho + beta_parallel;
    if denom == 0.0 {
        return Ok(SpeedBound::Unbounded);
    }
    let ratio = (1.0 - beta * beta) * (1.0 - rho * rho) / (denom * denom);
    Ok(SpeedBound::Finite((1.0 + ratio).sqrt()))
}

/// Worst-case bound over all alignments `|rho| <= rho_bar` and all parallel
/// components `|beta_par| <= beta_parallel_abs_bound`.
pub fn vqi_bound_worstcase(
    rho_bar: f64,
    beta: f64,
    beta_parallel_abs_bound: f64,
) -> Result<SpeedBound> {
    check_finite("rho_bar", rho_bar)?;
    if !(0.0..1.0).contains(&rho_bar) {
        return Err(Error::invalid("rho_bar", format!("{rho_bar} outside [0, 1)")));
    }
    check_beta_closed(beta)?;
    check_finite("beta_parallel bound", beta_parallel_abs_bound)?;
    if beta_parallel_abs_bound < 0.0 {
        return Err(Error::invalid("beta_parallel bound", "must be non-negative"));
    }
    let denom = rho_bar + beta_parallel_abs_bound;
    if denom == 0.0 {
        return Ok(SpeedBound::Unbounded);
    }
    let ratio = (1.0 - beta * beta) * (1.0 - rho_bar * rho_bar) / (denom * denom);
    Ok(SpeedBound::Finite((1.0 + ratio).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::SQRT_2;

    fn baseline_x() -> (SpacetimeEvent, SpacetimeEvent) {
        (
            SpacetimeEvent::new([0.0, 0.0, 0.0], 0.0).unwrap(),
            SpacetimeEvent::new([18_000.0, 0.0, 0.0], 0.0).unwrap(),
        )
    }

    #[test]
    fn boost_along_baseline() {
        let (a, b) = baseline_x();
        let v = FrameVelocity::new([0.5, 0.0, 0.0]).unwrap();
        let got = vqi_from_events(&a, &b, &v).unwrap().value();
        assert_relative_eq!(got, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn perpendicular_boost_is_unbounded() {
        let (a, b) = baseline_x();
        let v = FrameVelocity::new([0.0, 0.5, 0.0]).unwrap();
        assert_eq!(vqi_from_events(&a, &b, &v).unwrap(), SpeedBound::Unbounded);
    }

    #[test]
    fn oblique_boost_matches_closed_form() {
        // gamma^2 = 4/3; |dr'| = r sqrt((gamma^2 + 1) / 2); c dt' = gamma r / (2 sqrt 2)
        let (a, b) = baseline_x();
        let comp = 0.5 / SQRT_2;
        let v = FrameVelocity::new([comp, comp, 0.0]).unwrap();
        let events = vqi_from_events(&a, &b, &v).unwrap().value();
        assert_relative_eq!(events, 7f64.sqrt(), max_relative = 1e-12);
        let closed = vqi_bound_exact(0.0, 0.5, comp).unwrap().value();
        assert_relative_eq!(closed, events, max_relative = 1e-9);
    }

    #[test]
    fn rejects_superluminal_frames_and_timelike_events() {
        assert!(FrameVelocity::new([1.0, 0.0, 0.0]).is_err());
        assert!(FrameVelocity::new([0.8, 0.7, 0.0]).is_err());
        let a = SpacetimeEvent::new([0.0; 3], 0.0).unwrap();
        let b = SpacetimeEvent::new([18_000.0, 0.0, 0.0], 1e-4).unwrap();
        let v = FrameVelocity::new([0.1, 0.0, 0.0]).unwrap();
        assert!(matches!(
            vqi_from_events(&a, &b, &v),
            Err(Error::NotSpaceLike { .. })
        ));
        assert!(matches!(
            vqi_from_events(&a, &a, &v),
            Err(Error::NotSpaceLike { .. })
        ));
    }

    #[test]
    fn exact_bound_examples() {
        assert_relative_eq!(
            vqi_bound_exact(0.0, 0.5, 0.5).unwrap().value(),
            2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            vqi_bound_exact(0.3, 1.0, -0.2).unwrap().value(),
            1.0,
            max_relative = 1e-15
        );
        assert!(vqi_bound_exact(0.2, 0.5, -0.2).unwrap().is_unbounded());
        assert!(vqi_bound_exact(1.0, 0.5, 0.1).is_err());
        assert!(vqi_bound_exact(0.0, 0.5, 0.6).is_err());
        assert!(vqi_bound_exact(0.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn worstcase_bound_examples() {
        assert_relative_eq!(
            vqi_bound_worstcase(0.5, 0.0, 0.0).unwrap().value(),
            2.0,
            max_relative = 1e-12
        );
        let headline = vqi_bound_worstcase(5.4e-6, 1e-3, 1.306e-5).unwrap().value();
        assert!((headline / 54_000.0 - 1.0).abs() < 0.03, "{headline}");
        let limit = vqi_bound_worstcase(5.4e-6, 0.0, 0.0).unwrap().value();
        assert_relative_eq!(limit, 1.0 / 5.4e-6, max_relative = 1e-6);
        assert!(vqi_bound_worstcase(0.0, 0.5, 0.0).unwrap().is_unbounded());
        assert!(vqi_bound_worstcase(-0.1, 0.5, 0.0).is_err());
        assert!(vqi_bound_worstcase(0.1, 0.5, -1e-9).is_err());
    }

    #[test]
    fn frame_validation() {
        assert!(PrivilegedFrame::new(1e-3, 90.0).is_ok());
        assert!(PrivilegedFrame::new(1e-3, 180.5).is_err());
        assert!(PrivilegedFrame::new(-1e-3, 90.0).is_err());
        assert!(AlignmentRho::from_timing(323e-12, 18_000.0).unwrap().rho < 1e-5);
        assert!(AlignmentRho::from_timing(1e-3, 18_000.0).is_err());
    }
}
