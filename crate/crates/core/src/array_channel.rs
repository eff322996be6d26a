//! Array geometry with its steering vectors and DFT codebooks, plus the
//! channel synthesis built on them.
//!
//! All channels are `rows = RX side`, `cols = TX side`. ULAs are indexed from
//! element 0 and the steering phase grows as `2π·i·spacing·sin θ`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, ZERO};
use crate::rng;
use crate::units::{db_to_lin, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub n_tx_antennas: usize,
    pub n_rx_antennas: usize,
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
    /// Antennas driven by each RF chain (partially-connected).
    pub subarray_size: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_tx_antennas: 128,
            n_rx_antennas: 128,
            n_tx_rf: 8,
            n_rx_rf: 8,
            subarray_size: 16,
            element_spacing: 0.5,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_tx_antennas", self.n_tx_antennas),
            ("n_rx_antennas", self.n_rx_antennas),
            ("n_tx_rf", self.n_tx_rf),
            ("n_rx_rf", self.n_rx_rf),
            ("subarray_size", self.subarray_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("array.{name}"), "must be >= 1"));
            }
        }
        if self.n_tx_antennas != self.n_tx_rf * self.subarray_size {
            return Err(Error::config(
                "array.n_tx_antennas",
                format!(
                    "{} != n_tx_rf ({}) x subarray_size ({})",
                    self.n_tx_antennas, self.n_tx_rf, self.subarray_size
                ),
            ));
        }
        if self.n_rx_antennas != self.n_rx_rf * self.subarray_size {
            return Err(Error::config(
                "array.n_rx_antennas",
                format!(
                    "{} != n_rx_rf ({}) x subarray_size ({})",
                    self.n_rx_antennas, self.n_rx_rf, self.subarray_size
                ),
            ));
        }
        if !(self.element_spacing.is_finite() && self.element_spacing > 0.0) {
            return Err(Error::config("array.element_spacing", "must be > 0"));
        }
        Ok(())
    }

    /// Full-aperture TX steering vector (length `n_tx_antennas`).
    pub fn tx_steering(&self, angle_deg: f64) -> Result<CVector> {
        steering_vector(angle_deg, self.n_tx_antennas, self.element_spacing)
    }

    pub fn rx_steering(&self, angle_deg: f64) -> Result<CVector> {
        steering_vector(angle_deg, self.n_rx_antennas, self.element_spacing)
    }

    /// Steering vector of a single subarray.
    pub fn subarray_steering(&self, angle_deg: f64) -> Result<CVector> {
        steering_vector(angle_deg, self.subarray_size, self.element_spacing)
    }
}

/// One passive point reflector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub angle_deg: f64,
    pub range_m: f64,
    /// Signed radial velocity; positive means the Doppler shift is positive.
    #[serde(default)]
    pub velocity_mps: f64,
    #[serde(default = "default_rcs")]
    pub rcs_m2: f64,
    #[serde(default = "default_ploss_exp")]
    pub ploss_exp: f64,
    /// Combined small- and large-scale fading loss.
    #[serde(default = "default_shadow_db")]
    pub shadow_db: f64,
}

fn default_rcs() -> f64 {
    100.0
}

fn default_ploss_exp() -> f64 {
    2.86
}

fn default_shadow_db() -> f64 {
    20.0
}

impl Target {
    /// Automobile template from the reference scenario at a given position.
    pub fn automobile(angle_deg: f64, range_m: f64, velocity_mps: f64) -> Self {
        Self {
            angle_deg,
            range_m,
            velocity_mps,
            rcs_m2: default_rcs(),
            ploss_exp: default_ploss_exp(),
            shadow_db: default_shadow_db(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_deg.abs() <= 90.0) {
            return Err(Error::domain(format!(
                "target angle {} deg outside [-90, 90]",
                self.angle_deg
            )));
        }
        if !(self.range_m > 0.0 && self.range_m.is_finite()) {
            return Err(Error::domain(format!(
                "target range must be > 0, got {}",
                self.range_m
            )));
        }
        if !(self.rcs_m2 > 0.0) || !(self.ploss_exp > 0.0) {
            return Err(Error::domain("target RCS and path-loss exponent must be > 0"));
        }
        if !self.velocity_mps.is_finite() || !self.shadow_db.is_finite() {
            return Err(Error::domain("target velocity and shadowing must be finite"));
        }
        Ok(())
    }

    /// Round-trip delay.
    pub fn delay_s(&self) -> f64 {
        2.0 * self.range_m / SPEED_OF_LIGHT
    }

    pub fn doppler_hz(&self, wavelength_m: f64) -> f64 {
        2.0 * self.velocity_mps / wavelength_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmParams {
    pub carrier_hz: f64,
    pub scs_hz: f64,
    /// Active subcarriers.
    pub n_subcarriers: usize,
    /// Symbols per frame.
    pub n_symbols: usize,
    /// Symbol duration including the cyclic prefix.
    pub symbol_duration_s: f64,
    /// Nominal channel bandwidth; only the noise floor refers to it.
    pub bandwidth_hz: f64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            scs_hz: 120e3,
            n_subcarriers: 792,
            n_symbols: 14,
            symbol_duration_s: 8.92e-6,
            bandwidth_hz: 500e6,
        }
    }
}

impl OfdmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) {
            return Err(Error::config("ofdm.carrier_hz", "must be > 0"));
        }
        if !(self.scs_hz > 0.0) {
            return Err(Error::config("ofdm.scs_hz", "must be > 0"));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::config("ofdm.n_subcarriers", "must be >= 1"));
        }
        if self.n_symbols == 0 {
            return Err(Error::config("ofdm.n_symbols", "must be >= 1"));
        }
        // Small slack: 1/120 kHz = 8.333 us must not reject 8.333e-6 typed by hand.
        if !(self.symbol_duration_s * self.scs_hz >= 1.0 - 1e-9) {
            return Err(Error::config(
                "ofdm.symbol_duration_s",
                "must be >= 1 / scs_hz (useful symbol plus cyclic prefix)",
            ));
        }
        if self.n_subcarriers as f64 * self.scs_hz > self.bandwidth_hz * (1.0 + 1e-12) {
            return Err(Error::config(
                "ofdm.bandwidth_hz",
                "active bandwidth n_subcarriers x scs_hz exceeds nominal bandwidth",
            ));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Subcarrier offset from DC for grid index `idx`, in `[-N/2, N/2)`.
    pub fn centered_subcarrier(&self, idx: usize) -> f64 {
        idx as f64 - (self.n_subcarriers / 2) as f64
    }

    /// Range per IDFT bin, `c / (2 N Δf)`.
    pub fn range_resolution_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.n_subcarriers as f64 * self.scs_hz)
    }

    pub fn unambiguous_range_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.scs_hz)
    }

    /// Velocity per Doppler bin for a CPI of `n_cpi` symbols.
    pub fn velocity_resolution_mps(&self, n_cpi: usize) -> f64 {
        self.wavelength_m() / (2.0 * n_cpi as f64 * self.symbol_duration_s)
    }

    pub fn max_unambiguous_velocity_mps(&self) -> f64 {
        self.wavelength_m() / (4.0 * self.symbol_duration_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Radar,
    DirectSi,
    CompositeSi,
    Downlink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub entries: CMatrix,
    pub kind: ChannelKind,
}

/// How the target gain enters the channel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoGainModel {
    /// Radar-equation power gain; the channel uses its square root.
    #[default]
    Power,
    /// The gain is used directly as the complex amplitude magnitude.
    Amplitude,
}

/// Deterministic (line-of-sight) part of the direct TX-to-RX coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiGeometry {
    /// Each RX element couples to its co-located TX element.
    #[default]
    CoLocated,
    /// Outer product of broadside steering vectors (all-ones matrix).
    Broadside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectSiParams {
    pub pathloss_db: f64,
    pub rician_kappa_db: f64,
    pub seed: u64,
    pub geometry: SiGeometry,
}

impl Default for DirectSiParams {
    fn default() -> Self {
        Self {
            pathloss_db: 40.0,
            rician_kappa_db: 35.0,
            seed: 0,
            geometry: SiGeometry::CoLocated,
        }
    }
}

impl DirectSiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_db >= 0.0) {
            return Err(Error::config("direct_si.pathloss_db", "must be >= 0"));
        }
        if !self.rician_kappa_db.is_finite() {
            return Err(Error::config("direct_si.rician_kappa_db", "must be finite"));
        }
        Ok(())
    }
}

pub fn steering_vector(angle_deg: f64, n_elements: usize, spacing_wavelengths: f64) -> Result<CVector> {
    if !(angle_deg.abs() <= 90.0) {
        return Err(Error::domain(format!("angle {angle_deg} deg outside [-90, 90]")));
    }
    if n_elements == 0 {
        return Err(Error::domain("steering vector needs at least one element"));
    }
    Ok(steering_from_sine(
        angle_deg.to_radians().sin(),
        n_elements,
        spacing_wavelengths,
    ))
}

pub(crate) fn steering_from_sine(sine: f64, n: usize, spacing: f64) -> CVector {
    CVector::from_iterator(n, (0..n).map(|i| cis(2.0 * PI * i as f64 * spacing * sine)))
}

/// Phase-only beams steering to uniformly spaced sines in `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct DftCodebook {
    pub n_elements: usize,
    pub spacing: f64,
    pub sines: Vec<f64>,
    pub beams: Vec<CVector>,
}

impl DftCodebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn angle_deg(&self, k: usize) -> f64 {
        self.sines[k].asin().to_degrees()
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.angle_deg(k)).collect()
    }

    /// Index of the beam with the largest gain toward `angle_deg`.
    pub fn best_beam(&self, angle_deg: f64) -> Result<usize> {
        let a = steering_vector(angle_deg, self.n_elements, self.spacing)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (k, b) in self.beams.iter().enumerate() {
            let g = crate::linalg::inner(b, &a).norm_sqr();
            if g > best.1 + 1e-9 {
                best = (k, g);
            }
        }
        Ok(best.0)
    }
}

pub fn dft_codebook(n_elements: usize, bits: u32, spacing: f64) -> Result<DftCodebook> {
    if bits == 0 || bits > 16 {
        return Err(Error::domain(format!("codebook bits must be in 1..=16, got {bits}")));
    }
    if n_elements == 0 {
        return Err(Error::domain("codebook needs at least one element"));
    }
    let size = 1usize << bits;
    let sines: Vec<f64> = (0..size)
        .map(|k| -1.0 + 2.0 * k as f64 / size as f64)
        .collect();
    let beams = sines
        .iter()
        .map(|&u| steering_from_sine(u, n_elements, spacing))
        .collect();
    Ok(DftCodebook {
        n_elements,
        spacing,
        sines,
        beams,
    })
}

/// Radar-equation path gain `λ² σ / ((4π)² d^n σ_s)` (linear, power domain).
pub fn target_amplitude(target: &Target, wavelength_m: f64) -> Result<f64> {
    if target.range_m == 0.0 {
        return Err(Error::domain("target at zero range (singular path gain)"));
    }
    target.validate()?;
    if !(wavelength_m > 0.0) {
        return Err(Error::domain("wavelength must be > 0"));
    }
    let shadow = db_to_lin(target.shadow_db);
    Ok(wavelength_m.powi(2) * target.rcs_m2
        / ((4.0 * PI).powi(2) * target.range_m.powf(target.ploss_exp) * shadow))
}

/// Power gain `|h|²` of the echo coefficient under `model`.
pub fn echo_power_gain(target: &Target, wavelength_m: f64, model: EchoGainModel) -> Result<f64> {
    let g = target_amplitude(target, wavelength_m)?;
    Ok(match model {
        EchoGainModel::Power => g,
        EchoGainModel::Amplitude => g * g,
    })
}

/// Per-target quantities the channel synthesis needs, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoPath {
    /// Magnitude of the channel coefficient.
    pub amplitude: f64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub angle_deg: f64,
}

impl EchoPath {
    pub fn new(target: &Target, ofdm: &OfdmParams, model: EchoGainModel) -> Result<Self> {
        let wavelength = ofdm.wavelength_m();
        let gain = target_amplitude(target, wavelength)?;
        Ok(Self {
            amplitude: match model {
                EchoGainModel::Power => gain.sqrt(),
                EchoGainModel::Amplitude => gain,
            },
            delay_s: target.delay_s(),
            doppler_hz: target.doppler_hz(wavelength),
            angle_deg: target.angle_deg,
        })
    }

    /// `exp(j2π(n·T_s·f_D − τ·(f_c + m·Δf)))` at grid indices (subcarrier, symbol).
    pub fn phase(&self, ofdm: &OfdmParams, subcarrier_idx: usize, symbol_idx: usize) -> num_complex::Complex64 {
        let m = ofdm.centered_subcarrier(subcarrier_idx);
        let doppler_cycles = symbol_idx as f64 * ofdm.symbol_duration_s * self.doppler_hz;
        let delay_cycles = self.delay_s * ofdm.carrier_hz + self.delay_s * m * ofdm.scs_hz;
        let cycles = doppler_cycles.fract() - delay_cycles.fract();
        cis(2.0 * PI * cycles)
    }

    /// Separable per-subcarrier factor `exp(−j2π τ (f_c + mΔf))`.
    pub fn subcarrier_factors(&self, ofdm: &OfdmParams) -> Vec<num_complex::Complex64> {
        (0..ofdm.n_subcarriers)
            .map(|idx| {
                let m = ofdm.centered_subcarrier(idx);
                let cycles = (self.delay_s * ofdm.carrier_hz).fract()
                    + (self.delay_s * m * ofdm.scs_hz).fract();
                cis(-2.0 * PI * cycles)
            })
            .collect()
    }

    /// Separable per-symbol factor `exp(j2π n T_s f_D)`.
    pub fn symbol_factors(&self, ofdm: &OfdmParams, n_symbols: usize) -> Vec<num_complex::Complex64> {
        (0..n_symbols)
            .map(|n| cis(2.0 * PI * (n as f64 * ofdm.symbol_duration_s * self.doppler_hz).fract()))
            .collect()
    }
}

pub fn radar_si_channel(
    targets: &[Target],
    array: &ArrayConfig,
    ofdm: &OfdmParams,
    subcarrier_idx: usize,
    symbol_idx: usize,
) -> Result<ChannelMatrix> {
    radar_si_channel_with(targets, array, ofdm, subcarrier_idx, symbol_idx, EchoGainModel::Power)
}

/// `H_radar` at one resource element. The symbol index is unbounded (a CPI
/// may span several frames); the subcarrier index must be on the grid.
pub fn radar_si_channel_with(
    targets: &[Target],
    array: &ArrayConfig,
    ofdm: &OfdmParams,
    subcarrier_idx: usize,
    symbol_idx: usize,
    model: EchoGainModel,
) -> Result<ChannelMatrix> {
    if subcarrier_idx >= ofdm.n_subcarriers {
        return Err(Error::domain(format!(
            "subcarrier index {subcarrier_idx} outside grid of {}",
            ofdm.n_subcarriers
        )));
    }
    let mut h = CMatrix::from_element(array.n_rx_antennas, array.n_tx_antennas, ZERO);
    for t in targets {
        let path = EchoPath::new(t, ofdm, model)?;
        let a_r = array.rx_steering(t.angle_deg)?;
        let a_t = array.tx_steering(t.angle_deg)?;
        let coef = path.phase(ofdm, subcarrier_idx, symbol_idx) * path.amplitude;
        h += (a_r * a_t.adjoint()) * coef;
    }
    Ok(ChannelMatrix {
        entries: h,
        kind: ChannelKind::Radar,
    })
}

/// Deterministic and scattered parts of the direct SI channel, already
/// scaled; their sum is [`direct_si_channel`].
pub fn direct_si_components(params: &DirectSiParams, array: &ArrayConfig) -> (CMatrix, CMatrix) {
    let (nr, nt) = (array.n_rx_antennas, array.n_tx_antennas);
    let pathloss = db_to_lin(-params.pathloss_db);
    let kappa = db_to_lin(params.rician_kappa_db);
    let los_weight = (pathloss * kappa / (kappa + 1.0)).sqrt();
    let nlos_weight = (pathloss / (kappa + 1.0)).sqrt();

    // Unit mean per-entry power before weighting.
    let los = match params.geometry {
        SiGeometry::Broadside => CMatrix::from_element(nr, nt, crate::linalg::ONE),
        SiGeometry::CoLocated => {
            let scale = ((nr * nt) as f64 / nr.min(nt) as f64).sqrt();
            let mut m = CMatrix::from_element(nr, nt, ZERO);
            for i in 0..nr.min(nt) {
                m[(i, i)] = num_complex::Complex64::new(scale, 0.0);
            }
            m
        }
    };

    let mut r = rng::stream(params.seed, rng::tag::DIRECT_SI);
    let scatter = CMatrix::from_fn(nr, nt, |_, _| rng::complex_normal(&mut r));
    (los.scale(los_weight), scatter.scale(nlos_weight))
}

/// Rician direct SI channel `H_{b,b}` with expected per-entry power
/// `10^(-pathloss/10)` and κ-factor split between the deterministic
/// geometry and i.i.d. complex Gaussian scattering.
pub fn direct_si_channel(params: &DirectSiParams, array: &ArrayConfig) -> ChannelMatrix {
    let (los, scatter) = direct_si_components(params, array);
    ChannelMatrix {
        entries: los + scatter,
        kind: ChannelKind::DirectSi,
    }
}

/// One geometric downlink path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlPath {
    /// Departure angle at the node.
    pub aod_deg: f64,
    /// Arrival angle at the user array.
    pub aoa_deg: f64,
    /// Per-antenna-pair power gain of the path, dB (negative pathloss).
    pub gain_db: f64,
    /// Fixed path phase; drawn from the seed when absent.
    pub phase_rad: Option<f64>,
}

/// `H_DL = Σ_l sqrt(g_l) e^{jφ_l} a_ue(φ_l) a_T^H(θ_l)` (N_ue × N_T).
pub fn downlink_channel(paths: &[DlPath], array: &ArrayConfig, n_ue: usize, seed: u64) -> Result<ChannelMatrix> {
    if paths.is_empty() {
        return Err(Error::domain("downlink channel needs at least one path"));
    }
    if n_ue == 0 {
        return Err(Error::domain("downlink user needs at least one antenna"));
    }
    let mut r = rng::stream(seed, rng::tag::USER);
    let mut h = CMatrix::from_element(n_ue, array.n_tx_antennas, ZERO);
    for p in paths {
        // Draw even when unused so adding a fixed phase does not shift later paths.
        let drawn: f64 = r.gen_range(0.0..2.0 * PI);
        let phase = p.phase_rad.unwrap_or(drawn);
        let a_ue = steering_vector(p.aoa_deg, n_ue, 0.5)?;
        let a_t = array.tx_steering(p.aod_deg)?;
        let coef = cis(phase) * db_to_lin(p.gain_db).sqrt();
        h += (a_ue * a_t.adjoint()) * coef;
    }
    Ok(ChannelMatrix {
        entries: h,
        kind: ChannelKind::Downlink,
    })
}
