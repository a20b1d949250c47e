//! Motion of the A-B baseline relative to a privileged frame as the Earth
//! turns.
//!
//! With `chi` the zenith angle of the frame velocity and `alpha` the angle of
//! the baseline above the equatorial plane, the parallel component is
//!
//! ```text
//! beta_par(t) = beta cos(chi) sin(alpha) + beta sin(chi) cos(alpha) cos(omega t)
//! ```
//!
//! A Bell violation needs a window of length `T`; what matters is the
//! smallest achievable maximum of `|beta_par|` over such a window.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};
use std::f64::consts::{PI, TAU};

use crate::relativity::PrivilegedFrame;
use crate::{check_finite, Error, Result, EARTH_OMEGA};

/// Geometry of the A-B axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineGeometry {
    r_ab: f64,
    alpha_deg: f64,
    rho_bar: f64,
    #[serde(skip)]
    alpha_rad: f64,
}

impl BaselineGeometry {
    /// `r_ab` in metres, `alpha_deg` in degrees.
    pub fn new(r_ab: f64, alpha_deg: f64, rho_bar: f64) -> Result<Self> {
        check_finite("r_ab", r_ab)?;
        check_finite("alpha", alpha_deg)?;
        check_finite("rho_bar", rho_bar)?;
        if r_ab <= 0.0 {
            return Err(Error::invalid("r_ab", "must be positive"));
        }
        if alpha_deg <= -90.0 || alpha_deg >= 90.0 {
            return Err(Error::invalid("alpha", format!("{alpha_deg} deg outside (-90, 90)")));
        }
        if !(0.0..1.0).contains(&rho_bar) {
            return Err(Error::invalid("rho_bar", format!("{rho_bar} outside [0, 1)")));
        }
        Ok(Self {
            r_ab,
            alpha_deg,
            rho_bar,
            alpha_rad: alpha_deg.to_radians(),
        })
    }

    /// 18.0 km, 5.8 deg above the equatorial plane, rho_bar = 5.4e-6.
    pub fn geneva() -> Self {
        Self::new(18_000.0, 5.8, 5.4e-6).expect("constants are valid")
    }

    pub fn with_rho_bar(self, rho_bar: f64) -> Result<Self> {
        Self::new(self.r_ab, self.alpha_deg, rho_bar)
    }

    pub fn r_ab(&self) -> f64 {
        self.r_ab
    }

    pub fn alpha_deg(&self) -> f64 {
        self.alpha_deg
    }

    pub fn alpha_rad(&self) -> f64 {
        self.alpha_rad
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }
}

/// Earth rotation rate and the integration window needed for one violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationClock {
    /// rad/s
    pub omega: f64,
    /// seconds
    pub window_t: f64,
}

impl RotationClock {
    pub fn new(omega: f64, window_t: f64) -> Result<Self> {
        check_finite("omega", omega)?;
        check_finite("window T", window_t)?;
        if omega <= 0.0 {
            return Err(Error::invalid("omega", "must be positive"));
        }
        if window_t <= 0.0 {
            return Err(Error::invalid("window T", "must be positive"));
        }
        if omega * window_t >= TAU {
            return Err(Error::invalid(
                "window T",
                "must be shorter than one revolution",
            ));
        }
        Ok(Self { omega, window_t })
    }

    /// Sidereal rotation rate with the given window.
    pub fn sidereal(window_t: f64) -> Result<Self> {
        Self::new(EARTH_OMEGA, window_t)
    }

    /// Rotation angle swept during one window, `omega T`.
    pub fn window_angle(&self) -> f64 {
        self.omega * self.window_t
    }

    /// `C_T = cos^2(omega T / 4)`.
    pub fn c_t(&self) -> f64 {
        (self.window_angle() / 4.0).cos().powi(2)
    }
}

/// Which of the two window constructions applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowCase {
    /// `beta_par` crosses zero during the day; the window straddles a crossing.
    Crossing,
    /// Frame velocity close to a pole; the window sits on the extremum of
    /// smallest `|beta_par|`.
    Polar,
}

impl WindowCase {
    pub fn tag(self) -> &'static str {
        match self {
            WindowCase::Crossing => "i",
            WindowCase::Polar => "ii",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBound {
    pub case: WindowCase,
    pub beta_parallel_abs_bound: f64,
    /// Rotation phase `omega t` at the centre of a window achieving the bound.
    pub window_center_phase: f64,
}

/// Coefficients `(constant, oscillating)` of `beta_par` in units of beta.
fn components(frame: &PrivilegedFrame, geom: &BaselineGeometry) -> (f64, f64) {
    let (sc, cc) = frame.chi_rad().sin_cos();
    let (sa, ca) = geom.alpha_rad().sin_cos();
    (cc * sa, sc * ca)
}

/// `beta_par` at rotation phase `omega t`.
pub fn beta_parallel_at_phase(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    phase: f64,
) -> f64 {
    let (constant, oscillating) = components(frame, geom);
    frame.beta() * (constant + oscillating * phase.cos())
}

pub fn beta_parallel_at(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    clock: &RotationClock,
    t: f64,
) -> f64 {
    beta_parallel_at_phase(frame, geom, clock.omega * t)
}

pub fn classify_case(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    clock: &RotationClock,
) -> WindowCase {
    if frame.chi_deg() == 90.0 {
        return WindowCase::Crossing;
    }
    if clock.c_t() * frame.chi_rad().tan().abs() > geom.alpha_rad().tan().abs() {
        WindowCase::Crossing
    } else {
        WindowCase::Polar
    }
}

/// Analytic bound on `|beta_par|` over the best window of length `T`.
pub fn bound_beta_parallel(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    clock: &RotationClock,
) -> WindowBound {
    let beta = frame.beta();
    let (constant, oscillating) = components(frame, geom);
    let half_window = clock.window_angle() / 2.0;
    match classify_case(frame, geom, clock) {
        WindowCase::Crossing => {
            let slope = (oscillating * oscillating - constant * constant).max(0.0).sqrt();
            let center = if oscillating == 0.0 {
                PI / 2.0
            } else {
                (-constant / oscillating).clamp(-1.0, 1.0).acos()
            };
            WindowBound {
                case: WindowCase::Crossing,
                beta_parallel_abs_bound: beta * slope * half_window,
                window_center_phase: center,
            }
        }
        WindowCase::Polar => {
            let raw = constant.abs() - oscillating.abs() * half_window.cos();
            // cos(omega t) = -sign(constant) pulls beta_par towards zero
            let center = if constant >= 0.0 { PI } else { 0.0 };
            WindowBound {
                case: WindowCase::Polar,
                beta_parallel_abs_bound: beta * raw.max(0.0),
                window_center_phase: center,
            }
        }
    }
}

/// Best window found by dense sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledWindow {
    /// smallest achievable maximum of `|offset + beta_par|` over a window
    pub max_abs: f64,
    /// `offset + beta_par` at the point where that maximum is reached
    pub worst_signed: f64,
    /// rotation phase at the window start
    pub start_phase: f64,
}

type Extreme = (f64, f64);

fn pick(best: Extreme, v: f64) -> Extreme {
    if v.abs() > best.0 {
        (v.abs(), v)
    } else {
        best
    }
}

/// `(|v|, v)` of the largest-magnitude value of `v` over the phase window
/// `[start, start + width]`, from the grid samples inside plus both exact
/// endpoints. Grid indices in `known.0..=known.1` are summarised by `known.2`.
fn window_extreme(
    samples: &[f64],
    eval: impl Fn(f64) -> f64,
    start: f64,
    width: f64,
    known: (i64, i64, Extreme),
) -> Extreme {
    let n = samples.len() as i64;
    let step = TAU / n as f64;
    let mut best = pick(pick(known.2, eval(start)), eval(start + width));
    let first = (start / step).ceil() as i64;
    let last = ((start + width) / step).floor() as i64;
    let (lo, hi, _) = known;
    for j in (first..=last.min(lo - 1)).chain((hi + 1).max(first)..=last) {
        best = pick(best, samples[j.rem_euclid(n) as usize]);
    }
    best
}

/// `cos(j 2 pi / n)` for `j` in `0..n`, shared between calls with equal `n`.
fn cosine_table(n: usize) -> Arc<[f64]> {
    static TABLES: OnceLock<Mutex<HashMap<usize, Arc<[f64]>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(Default::default);
    if let Some(t) = tables.lock().expect("table cache poisoned").get(&n) {
        return Arc::clone(t);
    }
    let step = TAU / n as f64;
    let table: Arc<[f64]> = (0..n).map(|j| (j as f64 * step).cos()).collect();
    let mut guard = tables.lock().expect("table cache poisoned");
    // keep a handful of resolutions; callers rarely use more than one or two
    if guard.len() >= 8 {
        guard.clear();
    }
    Arc::clone(guard.entry(n).or_insert(table))
}

/// Dense-sampling search for the window of length `T` minimising the
/// maximum of `|offset + beta_par|`.
///
/// Samples on `samples_per_period` equally spaced phases (rounded up to a
/// multiple of four so both extrema of the cosine lie on the grid), evaluates
/// every window starting on a grid point (window end evaluated exactly), and
/// refines the best start between its grid neighbours.
pub fn sampled_optimal_window(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    clock: &RotationClock,
    offset: f64,
    samples_per_period: usize,
) -> Result<SampledWindow> {
    if samples_per_period < 10_000 {
        return Err(Error::invalid(
            "samples_per_period",
            format!("{samples_per_period} below 10^4"),
        ));
    }
    check_finite("offset", offset)?;
    let n = samples_per_period.div_ceil(4) * 4;
    let step = TAU / n as f64;
    let eval = |phase: f64| offset + beta_parallel_at_phase(frame, geom, phase);
    let (constant, oscillating) = components(frame, geom);
    let (a, b) = (frame.beta() * constant, frame.beta() * oscillating);
    let cos = cosine_table(n);
    let samples: Vec<f64> = cos.iter().map(|&c| offset + (a + b * c)).collect();
    let width = clock.window_angle();
    let (sin_w, cos_w) = width.sin_cos();
    // value at grid phase j + width via the angle-sum identity; sin(j step)
    // is the cosine a quarter period earlier
    let quarter = n / 4;
    let end_value = |j: usize| {
        let (c, s) = (cos[j], cos[(j + n - quarter) % n]);
        offset + (a + b * (c * cos_w - s * sin_w))
    };
    // grid samples in [start, start + width]
    let span = ((width / step) * (1.0 + 1e-15)).floor() as usize + 1;

    // sliding maximum of |v| over the circular sample array
    let mut ext: Vec<f64> = Vec::with_capacity(n + span - 1);
    ext.extend(samples.iter().map(|v| v.abs()));
    ext.extend_from_within(..span - 1);
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut best = (f64::INFINITY, 0usize);
    for (k, &v) in ext.iter().enumerate() {
        while deque.back().is_some_and(|&b| ext[b] <= v) {
            deque.pop_back();
        }
        deque.push_back(k);
        if k + 1 < span {
            continue;
        }
        let start = k + 1 - span;
        if deque[0] < start {
            deque.pop_front();
        }
        let window_max = ext[deque[0]].max(end_value(start).abs());
        if window_max < best.0 {
            best = (window_max, start);
        }
    }

    // ternary refinement of the start between neighbouring grid points
    // grid points inside every candidate window are reduced once
    let jc = best.1 as i64;
    let inner = (jc + 1, (((jc - 1) as f64 * step + width) / step).floor() as i64);
    let core = (inner.0..=inner.1).fold((-1.0, 0.0), |acc, j| {
        pick(acc, samples[j.rem_euclid(n as i64) as usize])
    });
    let objective = |s: f64| window_extreme(&samples, eval, s, width, (inner.0, inner.1, core));
    let coarse_start = best.1 as f64 * step;
    let mut result = (objective(coarse_start), coarse_start);
    let mut lo = coarse_start - step;
    let mut hi = coarse_start + step;
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let (f1, f2) = (objective(m1), objective(m2));
        for (f, s) in [(f1, m1), (f2, m2)] {
            if f.0 < result.0 .0 {
                result = (f, s);
            }
        }
        if f1.0 <= f2.0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let ((max_abs, worst_signed), start) = result;
    Ok(SampledWindow {
        max_abs,
        worst_signed,
        start_phase: start.rem_euclid(TAU),
    })
}

/// Dense-sampling oracle for the optimal window bound on `|beta_par|`.
pub fn brute_force_window_bound(
    frame: &PrivilegedFrame,
    geom: &BaselineGeometry,
    clock: &RotationClock,
    samples_per_period: usize,
) -> Result<f64> {
    sampled_optimal_window(frame, geom, clock, 0.0, samples_per_period).map(|w| w.max_abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frame(beta: f64, chi: f64) -> PrivilegedFrame {
        PrivilegedFrame::new(beta, chi).unwrap()
    }

    fn geom(alpha: f64) -> BaselineGeometry {
        BaselineGeometry::new(18_000.0, alpha, 5.4e-6).unwrap()
    }

    #[test]
    fn beta_parallel_examples() {
        let clock = RotationClock::sidereal(360.0).unwrap();
        let f = frame(1e-3, 90.0);
        assert_relative_eq!(
            beta_parallel_at(&f, &geom(0.0), &clock, 0.0),
            1e-3,
            max_relative = 1e-12
        );
        let polar = frame(1e-3, 0.0);
        let g = geom(5.8);
        let expected = 1e-3 * 5.8f64.to_radians().sin();
        for t in [0.0, 1234.5, 40_000.0] {
            assert_relative_eq!(
                beta_parallel_at(&polar, &g, &clock, t),
                expected,
                max_relative = 1e-12
            );
        }
        // cos(pi/2) leaves only the constant term: 1e-3 cos 60 sin 5.8
        let t = (PI / 2.0) / clock.omega;
        let got = beta_parallel_at(&frame(1e-3, 60.0), &g, &clock, t);
        assert_relative_eq!(got, 5.0528e-5, max_relative = 1e-4);
    }

    #[test]
    fn classification_examples() {
        let clock = RotationClock::sidereal(360.0).unwrap();
        let g = geom(5.8);
        assert_eq!(classify_case(&frame(1e-3, 90.0), &g, &clock), WindowCase::Crossing);
        assert_eq!(classify_case(&frame(1e-3, 2.0), &g, &clock), WindowCase::Polar);
        assert_eq!(classify_case(&frame(1e-3, 0.0), &geom(0.0), &clock), WindowCase::Polar);
        for chi in [1.0, 5.0, 5.8, 6.0, 30.0, 89.0] {
            assert_eq!(
                classify_case(&frame(1e-3, chi), &g, &clock),
                classify_case(&frame(1e-3, 180.0 - chi), &g, &clock),
                "chi = {chi}"
            );
        }
    }

    #[test]
    fn window_bound_examples() {
        let clock = RotationClock::new(TAU / 86_164.0, 360.0).unwrap();
        let wb = bound_beta_parallel(&frame(1e-3, 90.0), &geom(5.8), &clock);
        assert_eq!(wb.case, WindowCase::Crossing);
        assert_relative_eq!(wb.beta_parallel_abs_bound, 1.306e-5, max_relative = 1e-3);
        assert_relative_eq!(wb.window_center_phase, PI / 2.0, max_relative = 1e-12);

        let wb = bound_beta_parallel(&frame(1e-3, 0.0), &geom(5.8), &clock);
        assert_eq!(wb.case, WindowCase::Polar);
        assert_relative_eq!(
            wb.beta_parallel_abs_bound,
            1e-3 * 5.8f64.to_radians().sin(),
            max_relative = 1e-12
        );

        let short = RotationClock::sidereal(1e-6).unwrap();
        let wb = bound_beta_parallel(&frame(1e-3, 90.0), &geom(0.0), &short);
        assert!(wb.beta_parallel_abs_bound < 1e-13);
    }

    #[test]
    fn reported_window_is_within_second_order_of_bound() {
        let clock = RotationClock::sidereal(900.0).unwrap();
        for alpha in [0.0, 5.8, 30.0] {
            for chi in (0..=180).step_by(3) {
                let f = frame(1e-3, chi as f64);
                let g = geom(alpha);
                let wb = bound_beta_parallel(&f, &g, &clock);
                let half = clock.window_angle() / 2.0;
                // the crossing-case bound is linear in the window; curvature
                // adds at most |constant term| h^2 / 2 on the centred window
                let curvature = match wb.case {
                    WindowCase::Crossing => {
                        (1e-3 * (chi as f64).to_radians().cos() * alpha.to_radians().sin()).abs() * half * half / 2.0
                    }
                    WindowCase::Polar => 0.0,
                };
                let worst = (0..=2000)
                    .map(|k| wb.window_center_phase - half + clock.window_angle() * k as f64 / 2000.0)
                    .map(|p| beta_parallel_at_phase(&f, &g, p).abs())
                    .fold(0.0, f64::max);
                assert!(
                    worst <= (wb.beta_parallel_abs_bound + curvature) * (1.0 + 1e-9) + 1e-18,
                    "alpha {alpha} chi {chi}: {worst} > {}",
                    wb.beta_parallel_abs_bound
                );
            }
        }
    }

    #[test]
    fn brute_force_examples() {
        let clock = RotationClock::sidereal(360.0).unwrap();
        let f = frame(1e-3, 90.0);
        let g = geom(0.0);
        let brute = brute_force_window_bound(&f, &g, &clock, 1_000_000).unwrap();
        let analytic = bound_beta_parallel(&f, &g, &clock).beta_parallel_abs_bound;
        assert!(brute <= analytic);
        assert_relative_eq!(brute, analytic, max_relative = 1e-3);

        let polar = frame(1e-3, 0.0);
        let g = geom(5.8);
        let brute = brute_force_window_bound(&polar, &g, &clock, 20_000).unwrap();
        assert_eq!(brute, 1e-3 * 5.8f64.to_radians().sin());

        assert!(brute_force_window_bound(&polar, &g, &clock, 9_999).is_err());
    }

    #[test]
    fn rotation_clock_validation() {
        assert!(RotationClock::sidereal(0.0).is_err());
        assert!(RotationClock::sidereal(86_164.090_5).is_err());
        assert!(RotationClock::new(-1.0, 10.0).is_err());
        assert!(BaselineGeometry::new(0.0, 5.8, 0.0).is_err());
        assert!(BaselineGeometry::new(1.0, 90.0, 0.0).is_err());
        assert!(BaselineGeometry::new(1.0, 5.8, 1.0).is_err());
    }
}
