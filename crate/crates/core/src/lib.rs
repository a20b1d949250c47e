//! Lower bounds on the speed of a hypothetical superluminal influence
//! ("speed of quantum information", V_QI) obtained from a long-distance,
//! roughly east-west two-photon Bell test running around the clock.
//!
//! The crate is organised bottom-up:
//!
//! * [`relativity`]: closed-form V_QI bounds and the Lorentz-boost oracle.
//! * [`kinematics`]: rotation of the baseline relative to a privileged frame
//!   and the per-window bounds on the parallel velocity component.
//! * [`metrology`]: alignment budget (fiber lengths, dispersion) and baseline
//!   geometry.
//! * [`photon_sim`]: seeded Poisson simulation of binned coincidence counts.
//! * [`fringe`]: sliding-window sinusoid fits, visibilities and day coverage.
//! * [`scan`]: sweeps over privileged frames producing bound curves.

pub mod error;
pub mod fringe;
pub mod kinematics;
pub mod metrology;
pub mod photon_sim;
pub mod relativity;
pub mod scan;
pub mod sidereal;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Length of the sidereal day, seconds.
pub const SIDEREAL_DAY_S: f64 = 86_164.090_5;

/// Earth's angular velocity relative to inertial space, rad/s.
pub const EARTH_OMEGA: f64 = std::f64::consts::TAU / SIDEREAL_DAY_S;

/// Visibility threshold of the CHSH inequality for two-photon fringes.
pub const CHSH_VISIBILITY_THRESHOLD: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(what, format!("must be finite, got {value}")))
    }
}
