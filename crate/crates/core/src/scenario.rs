//! Experiment description loaded from TOML. Every field has a default taken
//! from the reference scenario, so an empty file is a complete scenario.
//!
//! ```toml
//! seed = 7
//!
//! [constraints]
//! tx_power_dbm = 35.0
//!
//! [targets]
//! count = 4
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_channel::{ArrayConfig, DirectSiParams, DlPath, EchoGainModel, OfdmParams, SiGeometry, Target};
use crate::cancellation::{SaturationMetric, SaturationSpec};
use crate::error::{Error, Result};
use crate::radar::{DetectionConfig, DoaConfig, RangeDopplerOptions};
use crate::rng;
use crate::units::dbm_to_watts;
use crate::waveform::QamOrder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub ofdm: OfdmParams,
    pub array: ArrayConfig,
    pub waveform: WaveformSection,
    pub targets: TargetsSection,
    pub user: UserSection,
    pub direct_si: DirectSiSection,
    pub noise: NoiseSection,
    pub constraints: ConstraintsSection,
    pub radar: RadarSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            ofdm: OfdmParams::default(),
            array: ArrayConfig::default(),
            waveform: WaveformSection::default(),
            targets: TargetsSection::default(),
            user: UserSection::default(),
            direct_si: DirectSiSection::default(),
            noise: NoiseSection::default(),
            constraints: ConstraintsSection::default(),
            radar: RadarSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub qam_order: QamOrder,
    /// Data streams `d`; at most min(N_ue, N_T^RF).
    pub n_streams: usize,
    /// Length of the target-free calibration frame the digital canceller
    /// is fitted on.
    pub calibration_symbols: usize,
}

impl Default for WaveformSection {
    fn default() -> Self {
        Self {
            qam_order: QamOrder::QAM16,
            n_streams: 4,
            calibration_symbols: 14,
        }
    }
}

/// Targets are either listed explicitly or drawn at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    pub count: usize,
    pub min_range_m: f64,
    pub max_range_m: f64,
    pub max_speed_mps: f64,
    pub max_angle_deg: f64,
    pub rcs_m2: f64,
    pub ploss_exp: f64,
    pub shadow_db: f64,
    pub echo_gain_model: EchoGainModel,
    /// When present, replaces the random draw and `count` is ignored.
    pub list: Option<Vec<Target>>,
}

impl Default for TargetsSection {
    fn default() -> Self {
        let t = Target::automobile(0.0, 1.0, 0.0);
        Self {
            count: 6,
            min_range_m: 5.0,
            max_range_m: 80.0,
            max_speed_mps: 27.7,
            max_angle_deg: 90.0,
            rcs_m2: t.rcs_m2,
            ploss_exp: t.ploss_exp,
            shadow_db: t.shadow_db,
            echo_gain_model: EchoGainModel::Power,
            list: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserSection {
    pub n_ue: usize,
    /// Generated paths depart along the first targets' directions.
    pub n_paths: usize,
    pub pathloss_db: f64,
    pub paths: Option<Vec<DlPath>>,
}

impl Default for UserSection {
    fn default() -> Self {
        Self {
            n_ue: 4,
            n_paths: 2,
            pathloss_db: 100.0,
            paths: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectSiSection {
    pub enabled: bool,
    pub pathloss_db: f64,
    pub rician_kappa_db: f64,
    pub geometry: SiGeometry,
}

impl Default for DirectSiSection {
    fn default() -> Self {
        let d = DirectSiParams::default();
        Self {
            enabled: true,
            pathloss_db: d.pathloss_db,
            rician_kappa_db: d.rician_kappa_db,
            geometry: d.geometry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub enabled: bool,
    /// Thermal floor per antenna and resource element.
    pub noise_floor_dbm: f64,
    pub nf_node_db: f64,
    pub nf_user_db: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            enabled: true,
            noise_floor_dbm: -87.0,
            nf_node_db: 7.0,
            nf_user_db: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Maximize the downlink rate subject to the sensing floor.
    #[default]
    Comm,
    /// Maximize the weakest target's SINR subject to a rate floor.
    Sensing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsSection {
    pub tx_power_dbm: f64,
    pub lambda_s_db: f64,
    pub lambda_sic_dbm: f64,
    /// Per-RX-chain ceilings; overrides `lambda_sic_dbm` when given.
    pub lambda_sic_per_chain_dbm: Option<Vec<f64>>,
    pub n_taps: usize,
    pub tap_max_gain: Option<f64>,
    pub tap_phase_bits: Option<u32>,
    pub saturation_metric: SaturationMetric,
    pub papr_db: f64,
    pub max_iters: usize,
    pub rate_tol: f64,
    pub objective: Objective,
    pub rate_floor_bps_hz: f64,
}

impl Default for ConstraintsSection {
    fn default() -> Self {
        Self {
            tx_power_dbm: 30.0,
            lambda_s_db: 10.0,
            lambda_sic_dbm: -10.0,
            lambda_sic_per_chain_dbm: None,
            n_taps: 8,
            tap_max_gain: None,
            tap_phase_bits: None,
            saturation_metric: SaturationMetric::Average,
            papr_db: 10.0,
            max_iters: 20,
            rate_tol: 1e-3,
            objective: Objective::Comm,
            rate_floor_bps_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarSection {
    /// Symbols per coherent processing interval (spans several frames).
    pub n_cpi: usize,
    pub codebook_bits: u32,
    /// Use the true target directions instead of a sweep frame.
    pub genie_doa: bool,
    /// Symbols transmitted per codebook beam in the sweep frame.
    pub sweep_symbols: usize,
    pub detection: DetectionConfig,
    pub doa: DoaConfig,
    pub range_doppler: RangeDopplerOptions,
}

impl Default for RadarSection {
    fn default() -> Self {
        Self {
            n_cpi: 1024,
            codebook_bits: 5,
            genie_doa: false,
            sweep_symbols: 28,
            detection: DetectionConfig::default(),
            doa: DoaConfig::default(),
            range_doppler: RangeDopplerOptions::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            Error::config(if path == "." { "<document>".to_string() } else { path }, message)
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.array.validate()?;

        let w = &self.waveform;
        if w.n_streams == 0 {
            return Err(Error::config("waveform.n_streams", "must be >= 1"));
        }
        if w.n_streams > self.user.n_ue.min(self.array.n_tx_rf) {
            return Err(Error::config(
                "waveform.n_streams",
                format!(
                    "{} streams exceed min(user.n_ue, array.n_tx_rf) = {}",
                    w.n_streams,
                    self.user.n_ue.min(self.array.n_tx_rf)
                ),
            ));
        }
        if w.calibration_symbols == 0 {
            return Err(Error::config("waveform.calibration_symbols", "must be >= 1"));
        }

        let t = &self.targets;
        if !(t.min_range_m > 0.0 && t.max_range_m >= t.min_range_m && t.max_range_m.is_finite()) {
            return Err(Error::config("targets.max_range_m", "need 0 < min_range_m <= max_range_m"));
        }
        if t.max_range_m > self.ofdm.unambiguous_range_m() {
            return Err(Error::config("targets.max_range_m", "beyond the unambiguous range"));
        }
        if !(t.max_speed_mps >= 0.0) || t.max_speed_mps > self.ofdm.max_unambiguous_velocity_mps() {
            return Err(Error::config(
                "targets.max_speed_mps",
                format!("must be in [0, {:.1}]", self.ofdm.max_unambiguous_velocity_mps()),
            ));
        }
        if !(t.max_angle_deg >= 0.0 && t.max_angle_deg <= 90.0) {
            return Err(Error::config("targets.max_angle_deg", "must be in [0, 90]"));
        }
        for (name, v) in [("rcs_m2", t.rcs_m2), ("ploss_exp", t.ploss_exp)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("targets.{name}"), "must be > 0"));
            }
        }
        if !t.shadow_db.is_finite() {
            return Err(Error::config("targets.shadow_db", "must be finite"));
        }
        if let Some(list) = &t.list {
            for (i, target) in list.iter().enumerate() {
                target
                    .validate()
                    .map_err(|e| Error::config(format!("targets.list[{i}]"), e.to_string()))?;
            }
        }

        let u = &self.user;
        if u.n_ue == 0 {
            return Err(Error::config("user.n_ue", "must be >= 1"));
        }
        match &u.paths {
            Some(p) if p.is_empty() => return Err(Error::config("user.paths", "must not be empty")),
            Some(p) => {
                for (i, path) in p.iter().enumerate() {
                    if !(path.aod_deg.abs() <= 90.0 && path.aoa_deg.abs() <= 90.0) {
                        return Err(Error::config(format!("user.paths[{i}]"), "angles must be in [-90, 90]"));
                    }
                    if !path.gain_db.is_finite() {
                        return Err(Error::config(format!("user.paths[{i}].gain_db"), "must be finite"));
                    }
                }
            }
            None if u.n_paths == 0 => return Err(Error::config("user.n_paths", "must be >= 1")),
            None => {}
        }
        if !u.pathloss_db.is_finite() {
            return Err(Error::config("user.pathloss_db", "must be finite"));
        }

        self.direct_si_params().validate()?;

        for (name, v) in [
            ("noise_floor_dbm", self.noise.noise_floor_dbm),
            ("nf_node_db", self.noise.nf_node_db),
            ("nf_user_db", self.noise.nf_user_db),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("noise.{name}"), "must be finite"));
            }
        }

        let c = &self.constraints;
        if !c.tx_power_dbm.is_finite() {
            return Err(Error::config("constraints.tx_power_dbm", "must be finite"));
        }
        if c.lambda_s_db.is_nan() {
            return Err(Error::config("constraints.lambda_s_db", "must not be NaN"));
        }
        if let Some(v) = &c.lambda_sic_per_chain_dbm {
            if v.len() != self.array.n_rx_rf {
                return Err(Error::config(
                    "constraints.lambda_sic_per_chain_dbm",
                    format!("needs one value per RX chain ({})", self.array.n_rx_rf),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("constraints.lambda_sic_per_chain_dbm", "must be finite"));
            }
        } else if !c.lambda_sic_dbm.is_finite() {
            return Err(Error::config("constraints.lambda_sic_dbm", "must be finite"));
        }
        if c.n_taps > self.array.n_tx_rf * self.array.n_rx_rf {
            return Err(Error::config("constraints.n_taps", "more taps than TX/RX chain pairs"));
        }
        if let Some(g) = c.tap_max_gain {
            if !(g > 0.0) {
                return Err(Error::config("constraints.tap_max_gain", "must be > 0"));
            }
        }
        if let Some(b) = c.tap_phase_bits {
            if b == 0 || b > 16 {
                return Err(Error::config("constraints.tap_phase_bits", "must be in 1..=16"));
            }
        }
        if c.max_iters == 0 {
            return Err(Error::config("constraints.max_iters", "must be >= 1"));
        }
        if !(c.rate_tol > 0.0) {
            return Err(Error::config("constraints.rate_tol", "must be > 0"));
        }
        if !(c.rate_floor_bps_hz >= 0.0) {
            return Err(Error::config("constraints.rate_floor_bps_hz", "must be >= 0"));
        }

        let r = &self.radar;
        if r.n_cpi == 0 {
            return Err(Error::config("radar.n_cpi", "must be >= 1"));
        }
        if r.sweep_symbols == 0 {
            return Err(Error::config("radar.sweep_symbols", "must be >= 1"));
        }
        if r.codebook_bits == 0 || r.codebook_bits > 16 {
            return Err(Error::config("radar.codebook_bits", "must be in 1..=16"));
        }
        if !(r.range_doppler.reference_floor >= 0.0) {
            return Err(Error::config("radar.range_doppler.reference_floor", "must be >= 0"));
        }
        Ok(())
    }

    /// The scenario's targets: the explicit list, or `count` draws from the
    /// target stream. Draws are sequential, so a smaller `count` with the
    /// same seed yields a prefix of a larger one.
    pub fn targets(&self) -> Vec<Target> {
        if let Some(list) = &self.targets.list {
            return list.clone();
        }
        let t = &self.targets;
        let mut r = rng::stream(self.seed, rng::tag::TARGETS);
        (0..t.count)
            .map(|_| {
                let angle_deg = r.gen_range(-t.max_angle_deg..=t.max_angle_deg);
                let range_m = r.gen_range(t.min_range_m..=t.max_range_m);
                let speed: f64 = r.gen_range(0.0..=t.max_speed_mps);
                let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                Target {
                    angle_deg,
                    range_m,
                    velocity_mps: sign * speed,
                    rcs_m2: t.rcs_m2,
                    ploss_exp: t.ploss_exp,
                    shadow_db: t.shadow_db,
                }
            })
            .collect()
    }

    /// Downlink paths: explicit, or departing along the first targets'
    /// directions (random directions when there are too few targets) with
    /// random arrival angles.
    pub fn user_paths(&self, targets: &[Target]) -> Vec<DlPath> {
        if let Some(p) = &self.user.paths {
            return p.clone();
        }
        let mut r = rng::substream(self.seed, rng::tag::USER, 0);
        (0..self.user.n_paths)
            .map(|i| {
                let drawn_aod = r.gen_range(-90.0..=90.0);
                let aoa_deg = r.gen_range(-90.0..=90.0);
                DlPath {
                    aod_deg: targets.get(i).map_or(drawn_aod, |t| t.angle_deg),
                    aoa_deg,
                    gain_db: -self.user.pathloss_db,
                    phase_rad: None,
                }
            })
            .collect()
    }

    pub fn direct_si_params(&self) -> DirectSiParams {
        DirectSiParams {
            pathloss_db: self.direct_si.pathloss_db,
            rician_kappa_db: self.direct_si.rician_kappa_db,
            seed: self.seed,
            geometry: self.direct_si.geometry,
        }
    }

    /// Node thermal noise per antenna and resource element, W (0 when
    /// noise is disabled).
    pub fn node_noise_w(&self) -> f64 {
        if self.noise.enabled {
            dbm_to_watts(self.noise.noise_floor_dbm + self.noise.nf_node_db)
        } else {
            0.0
        }
    }

    pub fn user_noise_w(&self) -> f64 {
        if self.noise.enabled {
            dbm_to_watts(self.noise.noise_floor_dbm + self.noise.nf_user_db)
        } else {
            0.0
        }
    }

    /// Noise power the optimizer designs for; the rate needs a strictly
    /// positive value even in noiseless simulations.
    pub fn design_user_noise_w(&self) -> f64 {
        dbm_to_watts(self.noise.noise_floor_dbm + self.noise.nf_user_db)
    }

    pub fn power_budget_w(&self) -> f64 {
        dbm_to_watts(self.constraints.tx_power_dbm)
    }

    pub fn saturation_spec(&self) -> SaturationSpec {
        let c = &self.constraints;
        SaturationSpec {
            lambda_sic_dbm: c
                .lambda_sic_per_chain_dbm
                .clone()
                .unwrap_or_else(|| vec![c.lambda_sic_dbm; self.array.n_rx_rf]),
            metric: c.saturation_metric,
            papr_db: c.papr_db,
        }
    }
}
