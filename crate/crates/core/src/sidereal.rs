//! Sidereal phase of wall-clock instants.
//!
//! Phases are the Earth rotation angle, linear in UT1 (taken equal to UTC):
//! `theta = 2 pi (0.7790572732640 + 1.00273781191135448 D)` with `D` the
//! days elapsed since 2000-01-01T12:00:00Z. Only the topology of day
//! coverage depends on it, so the sub-second UT1-UTC offset is ignored.

use chrono::{DateTime, Utc};
use std::f64::consts::TAU;

/// The reference epoch, documented in every manifest.
pub const EPOCH_ISO8601: &str = "2000-01-01T12:00:00Z";

const EPOCH_UNIX_MS: i64 = 946_728_000_000;
const MS_PER_DAY: i64 = 86_400_000;
const ERA_AT_EPOCH: f64 = 0.779_057_273_264_0;
const ERA_TURNS_PER_DAY: f64 = 1.002_737_811_911_354_5;

/// Rotation rate in rad per second of wall-clock time.
pub const ERA_RATE: f64 = TAU * ERA_TURNS_PER_DAY / 86_400.0;

/// Rotation angle in `[0, 2 pi)` at `instant`.
pub fn rotation_angle(instant: DateTime<Utc>) -> f64 {
    let ms = instant.timestamp_millis() - EPOCH_UNIX_MS;
    let days = ms.div_euclid(MS_PER_DAY);
    let frac = ms.rem_euclid(MS_PER_DAY) as f64 / MS_PER_DAY as f64;
    // the integer part of days contributes only through the excess rate
    let excess = ((ERA_TURNS_PER_DAY - 1.0) * days as f64).rem_euclid(1.0);
    let turns = ERA_AT_EPOCH + excess + frac * ERA_TURNS_PER_DAY;
    wrap(turns.rem_euclid(1.0) * TAU)
}

/// Rotation angle `elapsed` seconds after `anchor`.
pub fn phase_at(anchor: DateTime<Utc>, elapsed: f64) -> f64 {
    wrap(rotation_angle(anchor) + ERA_RATE * elapsed)
}

/// Reduce an angle to `[0, 2 pi)`.
pub fn wrap(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}
