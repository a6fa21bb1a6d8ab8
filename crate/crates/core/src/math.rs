//! Scalar math routed through `libm` so results do not depend on the
//! platform's C library.

pub use libm::{exp, expm1, fabs, log, log10, log1p, pow, sqrt};

pub const LN_2: f64 = core::f64::consts::LN_2;

/// `log2(1 + x)` evaluated through `log1p`.
#[inline]
pub fn log2_1p(x: f64) -> f64 {
    log1p(x) / LN_2
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Decibels to a linear power ratio.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    pow(10.0, db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * log10(x)
}

/// dBm to watts.
#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
