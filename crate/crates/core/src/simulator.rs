//! End-to-end simulation of one scenario realization, from the DoA sweep
//! frame through the optimized data frame to CPI-long radar processing.
//! Monte-Carlo sweeps repeat that over seeds and a grid of one field.
//!
//! All node-side signals are simulated at RF-chain level. Because each RF
//! chain drives a disjoint subarray, the combined thermal noise on an RX
//! chain is `CN(0, subarray_size·σ²)` and independent across chains.

use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_channel::{
    dft_codebook, direct_si_channel, downlink_channel, DftCodebook, DlPath, EchoPath, Target,
};
use crate::beamforming::block_rf_matrix;
use crate::cancellation::place_taps;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, ZERO};
use crate::optimizer::{solve_op, Calibration, OpConstraints, OpProblem, OptimizedConfig};
use crate::radar::{
    detect_sweep_peaks, extract_targets, merge_estimates, range_doppler_from_ratio, RangeDopplerMap, SweepPeak,
    TargetEstimate,
};
use crate::rng;
use crate::scenario::Scenario;
use crate::units::watts_to_dbm;
use crate::waveform::{random_qam_grid_with, ResourceGrid};

/// One realization of every channel a scenario describes.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub targets: Vec<Target>,
    pub user_paths: Vec<DlPath>,
    pub comm_dirs_deg: Vec<f64>,
    pub h_dl: CMatrix,
    pub h_bb: CMatrix,
    pub codebook: DftCodebook,
    pub calibration: Calibration,
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let s = scenario;
        let targets = s.targets();
        let user_paths = s.user_paths(&targets);
        let h_dl = downlink_channel(&user_paths, &s.array, s.user.n_ue, s.seed)?.entries;
        let h_bb = if s.direct_si.enabled {
            direct_si_channel(&s.direct_si_params(), &s.array).entries
        } else {
            CMatrix::from_element(s.array.n_rx_antennas, s.array.n_tx_antennas, ZERO)
        };
        let codebook = dft_codebook(s.array.subarray_size, s.radar.codebook_bits, s.array.element_spacing)?;
        let chain_noise = s.node_noise_w() * s.array.subarray_size as f64;
        let calibration = Calibration::generate(
            s.ofdm.n_subcarriers,
            s.waveform.calibration_symbols,
            s.waveform.n_streams,
            s.array.n_rx_rf,
            chain_noise,
            s.waveform.qam_order,
            s.seed,
        )?;
        Ok(Self {
            scenario: s.clone(),
            comm_dirs_deg: user_paths.iter().map(|p| p.aod_deg).collect(),
            targets,
            user_paths,
            h_dl,
            h_bb,
            codebook,
            calibration,
        })
    }

    /// Noise power on one RX RF chain after analog combining.
    pub fn chain_noise_w(&self) -> f64 {
        self.scenario.node_noise_w() * self.scenario.array.subarray_size as f64
    }

    pub fn problem<'a>(&'a self, priors: &'a [Target]) -> OpProblem<'a> {
        let s = &self.scenario;
        OpProblem {
            array: &s.array,
            ofdm: &s.ofdm,
            codebook: &self.codebook,
            targets: &self.targets,
            priors,
            comm_dirs_deg: &self.comm_dirs_deg,
            h_dl: &self.h_dl,
            h_bb: &self.h_bb,
            node_noise_w: s.node_noise_w(),
            user_noise_w: s.design_user_noise_w(),
            n_streams: s.waveform.n_streams,
            n_cpi: s.radar.n_cpi,
            echo_model: s.targets.echo_gain_model,
            calibration: &self.calibration,
        }
    }

    /// Target template at a sensed position.
    fn prior(&self, angle_deg: f64, range_m: f64) -> Target {
        let t = &self.scenario.targets;
        Target {
            angle_deg,
            range_m,
            velocity_mps: 0.0,
            rcs_m2: t.rcs_m2,
            ploss_exp: t.ploss_exp,
            shadow_db: t.shadow_db,
        }
    }
}

fn echo_paths(world: &World) -> Result<Vec<EchoPath>> {
    world
        .targets
        .iter()
        .map(|t| EchoPath::new(t, &world.scenario.ofdm, world.scenario.targets.echo_gain_model))
        .collect()
}

/// `a_T^H(θ)·F` for a TX precoder `F` (N_T × n).
fn tx_response(world: &World, angle_deg: f64, f: &CMatrix) -> Result<CMatrix> {
    let a = world.scenario.array.tx_steering(angle_deg)?;
    Ok(CMatrix::from_iterator(1, a.len(), a.iter().map(|z| z.conj())) * f)
}

/// Per-target echo streams `amp·e^{jφ(m, n+offset)}·(r·x)` over a grid,
/// symbol-major like a [`ResourceGrid`] stream.
fn echo_streams(world: &World, paths: &[EchoPath], rows: &[CMatrix], x: &ResourceGrid, offset: usize) -> Vec<Vec<Complex64>> {
    let ofdm = &world.scenario.ofdm;
    let (n_sc, n_sym, d) = x.dims();
    paths
        .iter()
        .zip(rows)
        .map(|(p, r)| {
            let fm = p.subcarrier_factors(ofdm);
            let gn = p.symbol_factors(ofdm, offset + n_sym);
            let mut out = vec![ZERO; n_sc * n_sym];
            for a in 0..d {
                let coef = r[(0, a)];
                for (o, xv) in out.iter_mut().zip(x.stream(a)) {
                    *o += coef * xv;
                }
            }
            for n in 0..n_sym {
                let g = gn[offset + n] * p.amplitude;
                for (m, o) in out[n * n_sc..(n + 1) * n_sc].iter_mut().enumerate() {
                    *o *= fm[m] * g;
                }
            }
            out
        })
        .collect()
}

/// `Σ_a row[a]·x_a` over the grid.
fn combine(row: &[Complex64], x: &ResourceGrid, out: &mut [Complex64]) {
    for (a, &coef) in row.iter().enumerate() {
        if coef == ZERO {
            continue;
        }
        for (o, xv) in out.iter_mut().zip(x.stream(a)) {
            *o += coef * xv;
        }
    }
}

fn add_noise(out: &mut [Complex64], rng: &mut rng::SimRng, sd: f64) {
    for o in out.iter_mut() {
        *o += rng::complex_normal(rng) * sd;
    }
}

/// Modulation removal against a reference with a relative floor.
fn reciprocal(y: &[Complex64], reference: &[Complex64], floor: f64) -> Vec<Complex64> {
    let mean = reference.iter().map(|z| z.norm_sqr()).sum::<f64>() / reference.len().max(1) as f64;
    let lo = floor * mean;
    y.iter()
        .zip(reference)
        .map(|(yy, u)| {
            let den = u.norm_sqr().max(lo);
            if den > 0.0 {
                yy * u.conj() / den
            } else {
                ZERO
            }
        })
        .collect()
}

/// Result of the preliminary codebook sweep.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// One map per beam, summed over the RX chains.
    pub cube: Vec<RangeDopplerMap>,
    pub peaks: Vec<SweepPeak>,
}

/// Preliminary sweep: for every codeword, TX chain 0 radiates it at full
/// power while all RX chains listen through it. Each beam's direct SI is
/// handled by analog taps on the one active TX chain plus a per-beam
/// least-squares canceller; the echo maps are then searched for
/// (direction, range) pairs.
pub fn sweep_frame(world: &World) -> Result<SweepResult> {
    let s = &world.scenario;
    let array = &s.array;
    let ofdm = &s.ofdm;
    let n_sc = ofdm.n_subcarriers;
    let n_sym = s.radar.sweep_symbols;
    let power = s.power_budget_w();
    let v0 = Complex64::new((power / array.subarray_size as f64).sqrt(), 0.0);
    let sd = world.chain_noise_w().sqrt();
    let paths = echo_paths(world)?;
    let opts = crate::radar::RangeDopplerOptions {
        keep_grid: false,
        ..s.radar.range_doppler
    };

    let mut cube = Vec::with_capacity(world.codebook.len());
    for (b, beam) in world.codebook.beams.iter().enumerate() {
        let v_rf = block_rf_matrix(&vec![beam.clone(); array.n_tx_rf], array.subarray_size)?;
        let w_rf = block_rf_matrix(&vec![beam.clone(); array.n_rx_rf], array.subarray_size)?;
        let f = v_rf.column(0) * v0;
        let f = CMatrix::from_column_slice(f.len(), 1, f.as_slice());

        let coupled = w_rf.adjoint() * &world.h_bb * &v_rf;
        let mut active = CMatrix::from_element(array.n_rx_rf, array.n_tx_rf, ZERO);
        active.set_column(0, &coupled.column(0));
        let taps = place_taps(&active, s.constraints.n_taps, s.constraints.tap_max_gain, s.constraints.tap_phase_bits);
        let g: Vec<Complex64> = (0..array.n_rx_rf)
            .map(|i| (coupled[(i, 0)] + taps.effective_matrix()[(i, 0)]) * v0)
            .collect();

        let mut data_rng = rng::substream(s.seed, rng::tag::SWEEP, 2 * b as u64);
        let x = random_qam_grid_with(n_sc, n_sym, 1, s.waveform.qam_order.get(), &mut data_rng)?;
        let rows: Vec<CMatrix> = world
            .targets
            .iter()
            .map(|t| tx_response(world, t.angle_deg, &f))
            .collect::<Result<_>>()?;
        let echoes = echo_streams(world, &paths, &rows, &x, 0);
        let rx_resp: Vec<CVector> = world
            .targets
            .iter()
            .map(|t| Ok(w_rf.adjoint() * array.rx_steering(t.angle_deg)?))
            .collect::<Result<_>>()?;
        let reference_gain = tx_response(world, world.codebook.angle_deg(b), &f)?[(0, 0)];
        let reference: Vec<Complex64> = x.stream(0).iter().map(|z| z * reference_gain).collect();
        let x_energy: f64 = x.stream(0).iter().map(|z| z.norm_sqr()).sum();

        let mut noise_rng = rng::substream(s.seed, rng::tag::SWEEP, 2 * b as u64 + 1);
        let mut acc = RangeDopplerMap::zeros(n_sc, n_sym, ofdm.range_resolution_m(), ofdm.velocity_resolution_mps(n_sym));
        for i in 0..array.n_rx_rf {
            let mut y = vec![ZERO; n_sc * n_sym];
            for (k, e) in echoes.iter().enumerate() {
                let c = rx_resp[k][i];
                for (yy, ee) in y.iter_mut().zip(e) {
                    *yy += c * ee;
                }
            }
            combine(&[g[i]], &x, &mut y);
            add_noise(&mut y, &mut noise_rng, sd);
            let d_i: Complex64 = y.iter().zip(x.stream(0)).map(|(yy, xx)| yy * xx.conj()).sum::<Complex64>() / x_energy;
            for (yy, xx) in y.iter_mut().zip(x.stream(0)) {
                *yy -= d_i * xx;
            }
            let ratio = reciprocal(&y, &reference, opts.reference_floor);
            acc.accumulate(&range_doppler_from_ratio(&ratio, n_sc, n_sym, ofdm, &opts))?;
        }
        cube.push(acc);
    }
    let peaks = detect_sweep_peaks(&cube, &world.codebook, &s.radar.detection, &s.radar.doa)?;
    Ok(SweepResult { cube, peaks })
}

/// DoA priors for the optimizer plus the sweep peaks used later for angle
/// association: the true targets in genie mode, otherwise a sweep frame.
pub fn doa_priors(world: &World) -> Result<(Vec<Target>, Vec<SweepPeak>)> {
    if world.scenario.radar.genie_doa {
        let priors: Vec<Target> = world.targets.iter().map(|t| world.prior(t.angle_deg, t.range_m)).collect();
        let peaks = world
            .targets
            .iter()
            .map(|t| SweepPeak {
                angle_deg: t.angle_deg,
                range_m: t.range_m,
                power_db: 0.0,
            })
            .collect();
        return Ok((priors, peaks));
    }
    let sweep = sweep_frame(world)?;
    let priors = sweep.peaks.iter().map(|p| world.prior(p.angle_deg, p.range_m)).collect();
    Ok((priors, sweep.peaks))
}

/// Linear node-side model for an optimized configuration.
struct NodeModel {
    paths: Vec<EchoPath>,
    /// `c_k V_BB` per target (1 × d).
    tx_rows: Vec<CMatrix>,
    /// `W_RF^H a_R(θ_k)` per target.
    rx_resp: Vec<CVector>,
    /// Direct SI after the analog taps (N_R^RF × d).
    g: CMatrix,
    /// What remains of `g` after the digital canceller.
    e: CMatrix,
    /// Radar reference `a_T^H(θ_i) V_RF V_BB` per RX chain.
    refs: Vec<CMatrix>,
}

impl NodeModel {
    fn new(world: &World, config: &OptimizedConfig, opts: FrameOptions) -> Result<Self> {
        let bf = &config.beamformer;
        let f = &bf.v_rf * &bf.v_bb;
        let d = bf.v_bb.ncols();
        let n_rx = bf.w_rf.ncols();
        if config.digital.d_matrix.shape() != (n_rx, d) {
            return Err(Error::dims("digital canceller does not match the configuration"));
        }
        let mut g = CMatrix::from_element(n_rx, d, ZERO);
        if opts.direct_si {
            g += bf.w_rf.adjoint() * &world.h_bb * &f;
        }
        let mut e = g.clone();
        if opts.cancellers {
            let a = config.analog.effective_matrix() * &bf.v_bb;
            g += &a;
            e += a - &config.digital.d_matrix;
        }
        let tx_rows = world
            .targets
            .iter()
            .map(|t| tx_response(world, t.angle_deg, &f))
            .collect::<Result<_>>()?;
        let rx_resp = world
            .targets
            .iter()
            .map(|t| Ok(bf.w_rf.adjoint() * world.scenario.array.rx_steering(t.angle_deg)?))
            .collect::<Result<_>>()?;
        let refs = config
            .beams
            .rx_angles_deg
            .iter()
            .map(|&a| tx_response(world, a, &f))
            .collect::<Result<_>>()?;
        Ok(Self {
            paths: echo_paths(world)?,
            tx_rows,
            rx_resp,
            g,
            e,
            refs,
        })
    }
}

fn row_of(m: &CMatrix, i: usize) -> Vec<Complex64> {
    m.row(i).iter().copied().collect()
}

/// Which contributions [`simulate_frame_with`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameOptions {
    pub noise: bool,
    /// Direct coupling `H_bb` between the arrays.
    pub direct_si: bool,
    pub echoes: bool,
    /// Analog taps and the digital canceller.
    pub cancellers: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            noise: true,
            direct_si: true,
            echoes: true,
            cancellers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub rate_bps_hz: f64,
    pub target_sinr_db: Vec<f64>,
    /// Direct SI at each RX chain input after the analog taps, measured.
    pub residual_si_dbm: Vec<f64>,
    /// Direct SI left after the digital canceller, measured.
    pub residual_after_digital_dbm: Vec<f64>,
    pub user_rx_power_dbm: f64,
    /// `‖H_DL V_RF V_BB‖_F²` in dBm: the received power the link budget predicts.
    pub expected_user_rx_power_dbm: f64,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub known: ResourceGrid,
    /// RX chain samples before digital cancellation.
    pub rx_before: ResourceGrid,
    pub rx_after: ResourceGrid,
    pub rx_user: ResourceGrid,
    pub metrics: FrameMetrics,
}

pub fn simulate_frame(world: &World, config: &OptimizedConfig) -> Result<FrameResult> {
    simulate_frame_with(world, config, FrameOptions::default())
}

/// One data frame of `ofdm.n_symbols` symbols through every channel.
pub fn simulate_frame_with(world: &World, config: &OptimizedConfig, opts: FrameOptions) -> Result<FrameResult> {
    let s = &world.scenario;
    let bf = &config.beamformer;
    let (n_sc, n_sym) = (s.ofdm.n_subcarriers, s.ofdm.n_symbols);
    let d = bf.v_bb.ncols();
    let n_rx = bf.w_rf.ncols();
    let mut data_rng = rng::substream(s.seed, rng::tag::DATA, 1);
    let x = random_qam_grid_with(n_sc, n_sym, d, s.waveform.qam_order.get(), &mut data_rng)?;
    let model = NodeModel::new(world, config, opts)?;
    let echoes = if opts.echoes {
        echo_streams(world, &model.paths, &model.tx_rows, &x, 0)
    } else {
        Vec::new()
    };

    let sd = if opts.noise { world.chain_noise_w().sqrt() } else { 0.0 };
    let mut before = ResourceGrid::zeros(n_sc, n_sym, n_rx);
    let mut after = ResourceGrid::zeros(n_sc, n_sym, n_rx);
    let mut residual_si_dbm = Vec::with_capacity(n_rx);
    let mut residual_after_dbm = Vec::with_capacity(n_rx);
    for i in 0..n_rx {
        let mut common = vec![ZERO; n_sc * n_sym];
        for (k, e) in echoes.iter().enumerate() {
            let c = model.rx_resp[k][i];
            for (o, ee) in common.iter_mut().zip(e) {
                *o += c * ee;
            }
        }
        if sd > 0.0 {
            let mut noise_rng = rng::substream(s.seed, rng::tag::NOISE_NODE, 1000 + i as u64);
            add_noise(&mut common, &mut noise_rng, sd);
        }
        let mut si = vec![ZERO; n_sc * n_sym];
        combine(&row_of(&model.g, i), &x, &mut si);
        let mut si_left = vec![ZERO; n_sc * n_sym];
        combine(&row_of(&model.e, i), &x, &mut si_left);
        residual_si_dbm.push(watts_to_dbm(mean_power(&si)));
        residual_after_dbm.push(watts_to_dbm(mean_power(&si_left)));
        for ((dst, c), v) in before.stream_mut(i).iter_mut().zip(&common).zip(&si) {
            *dst = c + v;
        }
        for ((dst, c), v) in after.stream_mut(i).iter_mut().zip(&common).zip(&si_left) {
            *dst = c + v;
        }
    }

    let g_user = &world.h_dl * &bf.v_rf * &bf.v_bb;
    let n_ue = g_user.nrows();
    let mut user = ResourceGrid::zeros(n_sc, n_sym, n_ue);
    let user_sd = if opts.noise { s.user_noise_w().sqrt() } else { 0.0 };
    let mut user_rng = rng::stream(s.seed, rng::tag::NOISE_USER);
    let mut user_signal_energy = 0.0;
    for j in 0..n_ue {
        let mut y = vec![ZERO; n_sc * n_sym];
        combine(&row_of(&g_user, j), &x, &mut y);
        user_signal_energy += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if user_sd > 0.0 {
            add_noise(&mut y, &mut user_rng, user_sd);
        }
        user.stream_mut(j).copy_from_slice(&y);
    }
    let n_re = (n_sc * n_sym) as f64;

    let metrics = FrameMetrics {
        rate_bps_hz: config.achieved_rate,
        target_sinr_db: config.target_sinr_db.clone(),
        residual_si_dbm,
        residual_after_digital_dbm: residual_after_dbm,
        user_rx_power_dbm: watts_to_dbm(user_signal_energy / n_re),
        expected_user_rx_power_dbm: watts_to_dbm(crate::linalg::frobenius_sq(&g_user)),
    };
    Ok(FrameResult {
        known: x,
        rx_before: before,
        rx_after: after,
        rx_user: user,
        metrics,
    })
}

fn mean_power(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct SensingOutput {
    pub estimates: Vec<TargetEstimate>,
    /// Per-RX-chain range-Doppler maps, when requested.
    pub maps: Option<Vec<RangeDopplerMap>>,
}

/// Radar processing over a full CPI of `radar.n_cpi` symbols: each RX
/// chain's cleaned samples are divided by the signal transmitted toward
/// that chain's direction, transformed to a range-Doppler map and searched
/// for targets; detections from all chains are then merged.
pub fn sense_cpi(world: &World, config: &OptimizedConfig, sweep_peaks: &[SweepPeak], keep_maps: bool) -> Result<SensingOutput> {
    let s = &world.scenario;
    let ofdm = &s.ofdm;
    let bf = &config.beamformer;
    let (n_sc, n_sym) = (ofdm.n_subcarriers, s.radar.n_cpi);
    let d = bf.v_bb.ncols();
    let n_rx = bf.w_rf.ncols();
    let mut data_rng = rng::stream(s.seed, rng::tag::DATA);
    let x = random_qam_grid_with(n_sc, n_sym, d, s.waveform.qam_order.get(), &mut data_rng)?;
    let model = NodeModel::new(world, config, FrameOptions::default())?;
    let echoes = echo_streams(world, &model.paths, &model.tx_rows, &x, 0);
    let sd = world.chain_noise_w().sqrt();
    let opts = s.radar.range_doppler;

    let beam_width = 1.0 / (world.codebook.n_elements as f64 * world.codebook.spacing);
    let mut all = Vec::new();
    let mut maps = keep_maps.then(Vec::new);
    for i in 0..n_rx {
        let mut y = vec![ZERO; n_sc * n_sym];
        for (k, e) in echoes.iter().enumerate() {
            let c = model.rx_resp[k][i];
            for (o, ee) in y.iter_mut().zip(e) {
                *o += c * ee;
            }
        }
        combine(&row_of(&model.e, i), &x, &mut y);
        if sd > 0.0 {
            let mut noise_rng = rng::substream(s.seed, rng::tag::NOISE_NODE, i as u64);
            add_noise(&mut y, &mut noise_rng, sd);
        }
        let mut reference = vec![ZERO; n_sc * n_sym];
        combine(&row_of(&model.refs[i], 0), &x, &mut reference);
        let ratio = reciprocal(&y, &reference, opts.reference_floor);
        let reference_db = 10.0 * mean_power(&reference).max(f64::MIN_POSITIVE).log10();
        drop(y);
        drop(reference);
        let map = range_doppler_from_ratio(&ratio, n_sc, n_sym, ofdm, &opts);
        drop(ratio);
        let chain_angle = config.beams.rx_angles_deg[i];
        all.extend(extract_targets(
            &map,
            i,
            chain_angle,
            sweep_peaks,
            beam_width,
            reference_db,
            &s.radar.detection,
        ));
        if let Some(m) = maps.as_mut() {
            m.push(map);
        }
    }
    let range_gate = 2.0 * ofdm.range_resolution_m();
    let vel_gate = 2.0 * ofdm.velocity_resolution_mps(n_sym);
    Ok(SensingOutput {
        estimates: merge_estimates(all, range_gate, vel_gate),
        maps,
    })
}

/// Association gates between estimates and true targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchGates {
    pub range_m: f64,
    pub velocity_mps: f64,
}

impl MatchGates {
    /// Three resolution cells in range and Doppler.
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            range_m: 3.0 * s.ofdm.range_resolution_m(),
            velocity_mps: 3.0 * s.ofdm.velocity_resolution_mps(s.radar.n_cpi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetMatch {
    pub truth: usize,
    pub estimate: usize,
    pub range_error_m: f64,
    pub velocity_error_mps: f64,
    pub angle_error_deg: f64,
}

/// Greedy one-to-one association: closest (normalized range/velocity
/// distance) admissible pairs first.
pub fn match_estimates(truth: &[Target], estimates: &[TargetEstimate], gates: MatchGates) -> Vec<TargetMatch> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, tr) in truth.iter().enumerate() {
        for (e, est) in estimates.iter().enumerate() {
            let dr = (est.range_m - tr.range_m).abs();
            let dv = (est.velocity_mps - tr.velocity_mps).abs();
            if dr <= gates.range_m && dv <= gates.velocity_mps {
                let cost = (dr / gates.range_m).powi(2) + (dv / gates.velocity_mps).powi(2);
                pairs.push((cost, t, e));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; estimates.len()];
    let mut out = Vec::new();
    for (_, t, e) in pairs {
        if used_t[t] || used_e[e] {
            continue;
        }
        used_t[t] = true;
        used_e[e] = true;
        out.push(TargetMatch {
            truth: t,
            estimate: e,
            range_error_m: estimates[e].range_m - truth[t].range_m,
            velocity_error_mps: estimates[e].velocity_mps - truth[t].velocity_mps,
            angle_error_deg: estimates[e].angle_deg - truth[t].angle_deg,
        });
    }
    out.sort_by_key(|m| m.truth);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accuracy {
    pub n_targets: usize,
    pub detected: usize,
    pub false_alarms: usize,
    pub range_rmse_m: Option<f64>,
    /// RMS of range error relative to true range.
    pub range_rel_rmse: Option<f64>,
    pub velocity_rmse_mps: Option<f64>,
    pub angle_rmse_deg: Option<f64>,
}

impl Accuracy {
    pub fn from_matches(truth: &[Target], n_estimates: usize, matches: &[TargetMatch]) -> Self {
        let n = matches.len();
        let rms = |f: &dyn Fn(&TargetMatch) -> f64| (n > 0).then(|| (matches.iter().map(|m| f(m).powi(2)).sum::<f64>() / n as f64).sqrt());
        Self {
            n_targets: truth.len(),
            detected: n,
            false_alarms: n_estimates - n,
            range_rmse_m: rms(&|m| m.range_error_m),
            range_rel_rmse: rms(&|m| m.range_error_m / truth[m.truth].range_m),
            velocity_rmse_mps: rms(&|m| m.velocity_error_mps),
            angle_rmse_deg: rms(&|m| m.angle_error_deg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// Run the CPI radar processing (the expensive part).
    pub sense: bool,
    pub keep_maps: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            sense: true,
            keep_maps: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub world: World,
    pub priors: Vec<Target>,
    pub sweep_peaks: Vec<SweepPeak>,
    pub config: OptimizedConfig,
    pub frame: FrameMetrics,
    pub estimates: Vec<TargetEstimate>,
    pub matches: Vec<TargetMatch>,
    pub accuracy: Option<Accuracy>,
    pub maps: Option<Vec<RangeDopplerMap>>,
}

/// Sweep (or genie priors), optimization, one data frame and, when asked,
/// the CPI radar processing with estimate-to-truth matching.
pub fn run_experiment(scenario: &Scenario, opts: ExperimentOptions) -> Result<ExperimentResult> {
    let world = World::build(scenario)?;
    let (priors, sweep_peaks) = doa_priors(&world)?;
    let cons = OpConstraints::from_scenario(scenario);
    let config = solve_op(&world.problem(&priors), &cons)?;
    let frame = simulate_frame(&world, &config)?.metrics;
    let (estimates, matches, accuracy, maps) = if opts.sense {
        let out = sense_cpi(&world, &config, &sweep_peaks, opts.keep_maps)?;
        let matches = match_estimates(&world.targets, &out.estimates, MatchGates::for_scenario(scenario));
        let acc = Accuracy::from_matches(&world.targets, out.estimates.len(), &matches);
        (out.estimates, matches, Some(acc), out.maps)
    } else {
        (Vec::new(), Vec::new(), None, None)
    };
    Ok(ExperimentResult {
        world,
        priors,
        sweep_peaks,
        config,
        frame,
        estimates,
        matches,
        accuracy,
        maps,
    })
}

/// Scenario field a Monte-Carlo sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepField {
    TxPowerDbm,
    NTargets,
    LambdaSDb,
    LambdaSicDbm,
    NTaps,
}

impl FromStr for SweepField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "power" | "tx_power_dbm" => SweepField::TxPowerDbm,
            "k" | "targets" | "n_targets" => SweepField::NTargets,
            "lambda_s" | "lambda_s_db" => SweepField::LambdaSDb,
            "lambda_sic" | "lambda_sic_dbm" => SweepField::LambdaSicDbm,
            "taps" | "n_taps" => SweepField::NTaps,
            other => {
                return Err(Error::config(
                    "sweep.field",
                    format!("unknown field `{other}` (power, k, lambda_s, lambda_sic, taps)"),
                ))
            }
        })
    }
}

impl SweepField {
    pub fn name(self) -> &'static str {
        match self {
            SweepField::TxPowerDbm => "tx_power_dbm",
            SweepField::NTargets => "n_targets",
            SweepField::LambdaSDb => "lambda_s_db",
            SweepField::LambdaSicDbm => "lambda_sic_dbm",
            SweepField::NTaps => "n_taps",
        }
    }

    /// A copy of `base` with the field set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::config(format!("sweep.{}", self.name()), format!("{v} is not a count")))
            }
        };
        match self {
            SweepField::TxPowerDbm => s.constraints.tx_power_dbm = value,
            SweepField::NTargets => {
                s.targets.count = count(value)?;
                s.targets.list = None;
            }
            SweepField::LambdaSDb => s.constraints.lambda_s_db = value,
            SweepField::LambdaSicDbm => {
                s.constraints.lambda_sic_dbm = value;
                s.constraints.lambda_sic_per_chain_dbm = None;
            }
            SweepField::NTaps => s.constraints.n_taps = count(value)?,
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub field: SweepField,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// Parses `start:step:stop` (inclusive) or a comma-separated list.
    pub fn parse(field: &str, grid: &str) -> Result<Self> {
        let field = SweepField::from_str(field)?;
        let values = parse_grid(grid)?;
        Ok(Self { field, values })
    }
}

pub fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::config("sweep.grid", m.to_string());
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(&format!("`{t}` is not a number")));
    let values: Vec<f64> = if grid.contains(':') {
        let parts: Vec<&str> = grid.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("range grids are start:step:stop"));
        }
        let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| a + k as f64 * step).collect()
    } else {
        grid.split(',').filter(|t| !t.trim().is_empty()).map(num).collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(bad("empty grid"));
    }
    Ok(values)
}

/// One (sweep point, run) outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub point: usize,
    pub value: f64,
    pub run: usize,
    pub seed: u64,
    pub feasible: bool,
    pub infeasibility: Option<String>,
    pub rate_bps_hz: Option<f64>,
    pub min_sinr_db: Option<f64>,
    pub n_targets: usize,
    pub detected: Option<usize>,
    pub false_alarms: Option<usize>,
    pub range_rmse_m: Option<f64>,
    pub velocity_rmse_mps: Option<f64>,
}

/// Aggregate over the runs of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPoint {
    pub point: usize,
    pub value: f64,
    pub n_runs: usize,
    pub n_feasible: usize,
    pub rate_mean: Option<f64>,
    pub rate_std: Option<f64>,
    pub detection_rate: Option<f64>,
    pub range_rmse_m: Option<f64>,
    pub velocity_rmse_mps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub field: SweepField,
    pub rows: Vec<McRow>,
    pub points: Vec<McPoint>,
}

/// Runs `n_runs` seeds (`scenario.seed + run`) at each sweep value. Work
/// units run in parallel; rows are ordered by (point, run) regardless of
/// completion order. Infeasible runs are kept as rows.
pub fn run_monte_carlo(scenario: &Scenario, spec: &SweepSpec, n_runs: usize, opts: ExperimentOptions) -> Result<MonteCarlo> {
    if n_runs == 0 {
        return Err(Error::config("sweep.runs", "must be >= 1"));
    }
    if spec.values.is_empty() {
        return Err(Error::config("sweep.grid", "empty grid"));
    }
    let scenarios: Vec<Scenario> = spec
        .values
        .iter()
        .map(|&v| spec.field.apply(scenario, v))
        .collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|p| (0..n_runs).map(move |r| (p, r))).collect();
    let rows: Vec<McRow> = units
        .par_iter()
        .map(|&(p, r)| {
            let mut s = scenarios[p].clone();
            s.seed = scenario.seed.wrapping_add(r as u64);
            let n_targets = s.targets();
            let base = McRow {
                point: p,
                value: spec.values[p],
                run: r,
                seed: s.seed,
                feasible: false,
                infeasibility: None,
                rate_bps_hz: None,
                min_sinr_db: None,
                n_targets: n_targets.len(),
                detected: None,
                false_alarms: None,
                range_rmse_m: None,
                velocity_rmse_mps: None,
            };
            match run_experiment(&s, opts) {
                Ok(res) => Ok(McRow {
                    feasible: true,
                    rate_bps_hz: Some(res.config.achieved_rate),
                    min_sinr_db: res.config.min_target_sinr_db,
                    detected: res.accuracy.as_ref().map(|a| a.detected),
                    false_alarms: res.accuracy.as_ref().map(|a| a.false_alarms),
                    range_rmse_m: res.accuracy.as_ref().and_then(|a| a.range_rmse_m),
                    velocity_rmse_mps: res.accuracy.as_ref().and_then(|a| a.velocity_rmse_mps),
                    ..base
                }),
                Err(Error::Infeasible(why)) => Ok(McRow {
                    infeasibility: Some(why.to_string()),
                    ..base
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let points = (0..scenarios.len())
        .map(|p| {
            let rs: Vec<&McRow> = rows.iter().filter(|r| r.point == p).collect();
            let rates: Vec<f64> = rs.iter().filter_map(|r| r.rate_bps_hz).collect();
            let (mean, std) = mean_std(&rates);
            let targets: usize = rs.iter().filter(|r| r.detected.is_some()).map(|r| r.n_targets).sum();
            let detected: usize = rs.iter().filter_map(|r| r.detected).sum();
            let pooled = |f: &dyn Fn(&McRow) -> Option<f64>| {
                let mut sum = 0.0;
                let mut n = 0usize;
                for r in &rs {
                    if let (Some(v), Some(k)) = (f(r), r.detected) {
                        sum += v * v * k as f64;
                        n += k;
                    }
                }
                (n > 0).then(|| (sum / n as f64).sqrt())
            };
            McPoint {
                point: p,
                value: spec.values[p],
                n_runs,
                n_feasible: rates.len(),
                rate_mean: mean,
                rate_std: std,
                detection_rate: (targets > 0).then(|| detected as f64 / targets as f64),
                range_rmse_m: pooled(&|r| r.range_rmse_m),
                velocity_rmse_mps: pooled(&|r| r.velocity_rmse_mps),
            }
        })
        .collect();
    Ok(MonteCarlo {
        field: spec.field,
        rows,
        points,
    })
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}
