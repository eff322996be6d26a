//! Closed-form monostatic sensing range from the radar equation: how much
//! combined TX+RX beamforming gain a target at a given range needs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_channel::Target;
use crate::error::{Error, Result};
use crate::units::SPEED_OF_LIGHT;

/// How many times the shadowing loss applies on the echo path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowMode {
    OneWay,
    #[default]
    RoundTrip,
}

impl ShadowMode {
    fn factor(self) -> f64 {
        match self {
            ShadowMode::OneWay => 1.0,
            ShadowMode::RoundTrip => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetParams {
    pub tx_power_dbm: f64,
    /// TX plus RX beamforming gain.
    pub combined_gain_db: f64,
    pub sinr_target_db: f64,
    pub noise_floor_dbm: f64,
    pub nf_db: f64,
    pub rcs_m2: f64,
    pub ploss_exp: f64,
    pub shadow_db: f64,
    pub wavelength_m: f64,
    pub shadow_mode: ShadowMode,
    /// Ranges below this are outside the far-field model.
    pub min_range_m: f64,
    /// Reported ranges are capped here (unambiguous range of the numerology).
    pub max_range_m: f64,
}

impl Default for BudgetParams {
    fn default() -> Self {
        let t = Target::automobile(0.0, 1.0, 0.0);
        Self {
            tx_power_dbm: 30.0,
            combined_gain_db: 40.0,
            sinr_target_db: 10.0,
            noise_floor_dbm: -87.0,
            nf_db: 7.0,
            rcs_m2: t.rcs_m2,
            ploss_exp: t.ploss_exp,
            shadow_db: t.shadow_db,
            wavelength_m: SPEED_OF_LIGHT / 28e9,
            shadow_mode: ShadowMode::RoundTrip,
            min_range_m: 1.0,
            max_range_m: SPEED_OF_LIGHT / (2.0 * 120e3),
        }
    }
}

impl BudgetParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("combined_gain_db", self.combined_gain_db),
            ("noise_floor_dbm", self.noise_floor_dbm),
            ("nf_db", self.nf_db),
            ("shadow_db", self.shadow_db),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(format!("link_budget.{name}"), "must be finite"));
            }
        }
        if self.sinr_target_db.is_nan() {
            return Err(Error::config("link_budget.sinr_target_db", "must not be NaN"));
        }
        for (name, v) in [
            ("rcs_m2", self.rcs_m2),
            ("ploss_exp", self.ploss_exp),
            ("wavelength_m", self.wavelength_m),
            ("min_range_m", self.min_range_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("link_budget.{name}"), "must be > 0"));
            }
        }
        if !(self.max_range_m > self.min_range_m) {
            return Err(Error::config("link_budget.max_range_m", "must exceed min_range_m"));
        }
        Ok(())
    }

    /// 10·log10(λ²σ / ((4π)²·σ_s^k)): the path gain at 1 m.
    fn unit_range_gain_db(&self) -> f64 {
        let four_pi_sq = (4.0 * std::f64::consts::PI).powi(2);
        10.0 * (self.wavelength_m.powi(2) * self.rcs_m2 / four_pi_sq).log10() - self.shadow_mode.factor() * self.shadow_db
    }

    /// Echo path gain in dB at range `d`.
    pub fn path_gain_db(&self, range_m: f64) -> f64 {
        self.unit_range_gain_db() - 10.0 * self.ploss_exp * range_m.log10()
    }

    fn required_snr_margin_db(&self, sinr_db: f64) -> f64 {
        self.noise_floor_dbm + self.nf_db + sinr_db - self.tx_power_dbm
    }
}

/// Range at which `P + G + gain(d) = noise + NF + SINR`, capped at
/// `max_range_m`. Ranges below `min_range_m` mean the gain is too low for
/// the model and are reported as a domain error.
pub fn sensing_range(params: &BudgetParams) -> Result<f64> {
    params.validate()?;
    if params.sinr_target_db == f64::NEG_INFINITY {
        return Ok(params.max_range_m);
    }
    let exponent = (params.tx_power_dbm + params.combined_gain_db + params.unit_range_gain_db()
        - params.noise_floor_dbm
        - params.nf_db
        - params.sinr_target_db)
        / (10.0 * params.ploss_exp);
    let d = 10f64.powf(exponent);
    if d < params.min_range_m {
        return Err(Error::domain(format!(
            "gain {:.2} dB reaches only {d:.3e} m, below the {} m model limit",
            params.combined_gain_db, params.min_range_m
        )));
    }
    Ok(d.min(params.max_range_m))
}

/// Combined gain (dB) needed to reach `sinr_db` at `range_m`; the exact
/// inverse of [`sensing_range`] below the cap.
pub fn required_gain(range_m: f64, sinr_db: f64, params: &BudgetParams) -> Result<f64> {
    if !(range_m > 0.0) {
        return Err(Error::domain("range must be > 0"));
    }
    Ok(params.required_snr_margin_db(sinr_db) - params.path_gain_db(range_m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub gain_db: f64,
    pub sinr_db: f64,
    /// Empty when the gain cannot reach the minimum modelled range.
    pub range_m: Option<f64>,
    pub capped: bool,
}

/// Sensing range over a grid of gains for each SINR target.
pub fn range_table(params: &BudgetParams, gains_db: &[f64], sinrs_db: &[f64]) -> Result<Vec<BudgetRow>> {
    params.validate()?;
    let mut rows = Vec::with_capacity(gains_db.len() * sinrs_db.len());
    for &sinr_db in sinrs_db {
        for &gain_db in gains_db {
            let p = BudgetParams {
                combined_gain_db: gain_db,
                sinr_target_db: sinr_db,
                ..params.clone()
            };
            let range_m = match sensing_range(&p) {
                Ok(r) => Some(r),
                Err(Error::Domain(_)) => None,
                Err(e) => return Err(e),
            };
            rows.push(BudgetRow {
                gain_db,
                sinr_db,
                range_m,
                capped: range_m.is_some_and(|r| r >= params.max_range_m),
            });
        }
    }
    Ok(rows)
}

pub fn write_table_csv(path: &Path, rows: &[BudgetRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Path gain at 150 m evaluated term by term.
    fn alpha_150_db(shadow_factor: f64) -> f64 {
        let lambda = 299_792_458.0 / 28e9;
        let num = lambda * lambda * 100.0;
        let den = (4.0 * std::f64::consts::PI).powi(2) * 150f64.powf(2.86) * 10f64.powf(2.0 * shadow_factor);
        10.0 * (num / den).log10()
    }

    #[test]
    fn one_way_reference_point() {
        let p = BudgetParams {
            shadow_mode: ShadowMode::OneWay,
            ..BudgetParams::default()
        };
        assert!((alpha_150_db(1.0) + 123.6).abs() < 0.05);
        let g = required_gain(150.0, 10.0, &p).unwrap();
        assert!((g - (-80.0 + 10.0 - 30.0 - alpha_150_db(1.0))).abs() < 1e-9);
        assert!((g - 23.6).abs() < 0.1, "{g}");
    }

    #[test]
    fn round_trip_reference_point() {
        let p = BudgetParams::default();
        let g = required_gain(150.0, 10.0, &p).unwrap();
        assert!((g - (-80.0 + 10.0 - 30.0 - alpha_150_db(2.0))).abs() < 1e-9);
        assert!((g - 43.6).abs() < 0.1, "{g}");
        assert!((g - 40.0).abs() <= 4.0);
    }

    #[test]
    fn doubling_range_costs_np_log2() {
        for mode in [ShadowMode::OneWay, ShadowMode::RoundTrip] {
            let p = BudgetParams {
                shadow_mode: mode,
                ..BudgetParams::default()
            };
            for d in [2.0, 10.0, 75.0] {
                let diff = required_gain(2.0 * d, 10.0, &p).unwrap() - required_gain(d, 10.0, &p).unwrap();
                assert!((diff - 10.0 * 2.86 * 2f64.log10()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn infinite_sinr_slack_hits_the_cap() {
        let p = BudgetParams {
            sinr_target_db: f64::NEG_INFINITY,
            ..BudgetParams::default()
        };
        assert_eq!(sensing_range(&p).unwrap(), p.max_range_m);
        let huge = BudgetParams {
            combined_gain_db: 300.0,
            ..BudgetParams::default()
        };
        assert_eq!(sensing_range(&huge).unwrap(), huge.max_range_m);
    }

    #[test]
    fn too_little_gain_is_a_domain_error() {
        let p = BudgetParams {
            combined_gain_db: -60.0,
            ..BudgetParams::default()
        };
        assert!(matches!(sensing_range(&p), Err(Error::Domain(_))));
        assert!(required_gain(0.0, 10.0, &p).is_err());
    }

    #[test]
    fn table_shape() {
        let gains: Vec<f64> = (0..=12).map(|k| 5.0 * k as f64).collect();
        let rows = range_table(&BudgetParams::default(), &gains, &[0.0, 5.0, 10.0, 15.0]).unwrap();
        assert_eq!(rows.len(), 52);
        let at_10: Vec<&BudgetRow> = rows.iter().filter(|r| r.sinr_db == 10.0).collect();
        for w in at_10.windows(2) {
            if let (Some(a), Some(b)) = (w[0].range_m, w[1].range_m) {
                assert!(b >= a);
            }
        }
    }

    proptest! {
        #[test]
        fn range_and_gain_are_inverse(d in 1.0f64..1000.0, sinr in -10.0f64..30.0) {
            let p = BudgetParams::default();
            let g = required_gain(d, sinr, &p).unwrap();
            let back = sensing_range(&BudgetParams { combined_gain_db: g, sinr_target_db: sinr, ..p }).unwrap();
            prop_assert!((back / d - 1.0).abs() < 1e-9);
        }

        #[test]
        fn range_increases_with_gain_and_falls_with_sinr(g in 20.0f64..60.0, dg in 0.01f64..5.0, sinr in -5.0f64..20.0) {
            let base = BudgetParams { combined_gain_db: g, sinr_target_db: sinr, max_range_m: 1e12, ..BudgetParams::default() };
            let r0 = sensing_range(&base).unwrap();
            let r1 = sensing_range(&BudgetParams { combined_gain_db: g + dg, ..base.clone() }).unwrap();
            let r2 = sensing_range(&BudgetParams { sinr_target_db: sinr + dg, ..base }).unwrap();
            prop_assert!(r1 > r0);
            prop_assert!(r2 < r0);
        }
    }
}
