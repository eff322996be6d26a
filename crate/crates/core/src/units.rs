//! Physical constants and dB helpers.

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Stand-in for -inf dB / dBm in reports (JSON has no infinities).
pub const DB_FLOOR: f64 = -300.0;

#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Power ratio to dB, clamped at [`DB_FLOOR`].
#[inline]
pub fn lin_to_db(lin: f64) -> f64 {
    if lin > 0.0 {
        (10.0 * lin.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_lin(dbm - 30.0)
}

#[inline]
pub fn watts_to_dbm(w: f64) -> f64 {
    if w > 0.0 {
        lin_to_db(w) + 30.0
    } else {
        DB_FLOOR
    }
}
