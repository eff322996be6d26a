//! Joint design of the hybrid beamformer and the SI cancellers.
//!
//! The problem maximizes the downlink rate over `(V_RF, V_BB, A, D)`
//! subject to
//!
//! - C1: `‖V_RF V_BB‖_F² ≤ P`;
//! - C2: the analog canceller uses at most `n_taps` taps on distinct chain
//!   pairs, and the RF matrices are phase-only and partially connected;
//! - C3: the residual SI at every RX chain input stays below its ceiling;
//! - C4: every target's sensing SINR is at least `λ_S`.
//!
//! [`solve_op`] alternates between beam selection, tap placement,
//! waterfilling, a scalar blend toward a sensing precoder and a
//! least-squares digital canceller. [`check_constraints`] re-evaluates
//! C1–C4 from the full-dimension matrices without touching any solver
//! state.

use num_complex::Complex64;
use serde::Serialize;

use crate::array_channel::{
    echo_power_gain, radar_si_channel_with, ArrayConfig, DftCodebook, EchoGainModel, OfdmParams, Target,
};
use crate::beamforming::{
    achievable_rate, check_rf_structure, select_analog_beams, waterfilling_precoder, AnalogBeams, HybridBeamformer,
};
use crate::cancellation::{
    design_analog_canceller, design_digital_canceller, residual_rf_power, AnalogCanceller, AnalogOptions,
    DigitalCanceller, SaturationMetric, SaturationSpec,
};
use crate::error::{Error, Infeasibility, Result};
use crate::linalg::{frobenius_sq, CMatrix, CVector, ZERO};
use crate::radar::{sensing_sinr, SensingScene};
use crate::rng;
use crate::scenario::{Objective, Scenario};
use crate::units::{lin_to_db, watts_to_dbm, DB_FLOOR};
use crate::waveform::{random_qam_grid_with, QamOrder, ResourceGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpConstraints {
    pub power_budget_w: f64,
    pub lambda_s_db: f64,
    pub saturation: SaturationSpec,
    pub n_taps: usize,
    pub tap_max_gain: Option<f64>,
    pub tap_phase_bits: Option<u32>,
    pub max_iters: usize,
    pub rate_tol: f64,
    pub objective: Objective,
    pub rate_floor_bps_hz: f64,
}

impl OpConstraints {
    pub fn from_scenario(s: &Scenario) -> Self {
        let c = &s.constraints;
        Self {
            power_budget_w: s.power_budget_w(),
            lambda_s_db: c.lambda_s_db,
            saturation: s.saturation_spec(),
            n_taps: c.n_taps,
            tap_max_gain: c.tap_max_gain,
            tap_phase_bits: c.tap_phase_bits,
            max_iters: c.max_iters,
            rate_tol: c.rate_tol,
            objective: c.objective,
            rate_floor_bps_hz: c.rate_floor_bps_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_budget_w >= 0.0 && self.power_budget_w.is_finite()) {
            return Err(Error::domain("power budget must be finite and >= 0"));
        }
        if self.max_iters == 0 || !(self.rate_tol > 0.0) {
            return Err(Error::domain("solver needs max_iters >= 1 and rate_tol > 0"));
        }
        Ok(())
    }
}

/// A known calibration frame: the transmitted streams and the RX-chain
/// noise that accompanies them. The digital canceller is fitted on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub known: ResourceGrid,
    /// Per-RX-chain noise, already scaled to the chain noise power.
    pub noise: ResourceGrid,
    pub chain_noise_w: f64,
}

impl Calibration {
    pub fn generate(
        n_subcarriers: usize,
        n_symbols: usize,
        n_streams: usize,
        n_rx_rf: usize,
        chain_noise_w: f64,
        qam: QamOrder,
        seed: u64,
    ) -> Result<Self> {
        let mut data_rng = rng::substream(seed, rng::tag::CALIBRATION, 0);
        let known = random_qam_grid_with(n_subcarriers, n_symbols, n_streams, qam.get(), &mut data_rng)?;
        let mut noise_rng = rng::substream(seed, rng::tag::CALIBRATION, 1);
        let sd = chain_noise_w.sqrt();
        let noise = ResourceGrid::from_fn(n_subcarriers, n_symbols, n_rx_rf, |_, _, _| {
            rng::complex_normal(&mut noise_rng) * sd
        });
        Ok(Self {
            known,
            noise,
            chain_noise_w,
        })
    }

    /// Received calibration frame `G·x + noise` for a stream-to-chain
    /// coupling `g` (N_R^RF × d).
    pub fn received(&self, g: &CMatrix) -> Result<ResourceGrid> {
        let (n_sc, n_sym, d) = self.known.dims();
        if g.shape() != (self.noise.n_streams(), d) {
            return Err(Error::dims("calibration coupling / frame dimensions"));
        }
        let mut y = self.noise.clone();
        for i in 0..g.nrows() {
            let dst = y.stream_mut(i);
            for a in 0..d {
                let coef = g[(i, a)];
                for (yy, x) in dst.iter_mut().zip(self.known.stream(a)) {
                    *yy += coef * x;
                }
            }
        }
        debug_assert_eq!(y.dims(), (n_sc, n_sym, g.nrows()));
        Ok(y)
    }

    /// Expected per-chain residual after an LS fit, before any fit exists.
    pub fn ls_floor_w(&self) -> f64 {
        let (n_sc, n_sym, d) = self.known.dims();
        self.chain_noise_w * d as f64 / (n_sc * n_sym) as f64
    }
}

/// Everything the solver may look at.
#[derive(Debug, Clone)]
pub struct OpProblem<'a> {
    pub array: &'a ArrayConfig,
    pub ofdm: &'a OfdmParams,
    pub codebook: &'a DftCodebook,
    /// True targets: the C4 constraint is enforced on these.
    pub targets: &'a [Target],
    /// The node's belief about the targets (direction and range), used for
    /// beam selection and the sensing precoder.
    pub priors: &'a [Target],
    /// Departure directions of the downlink paths.
    pub comm_dirs_deg: &'a [f64],
    pub h_dl: &'a CMatrix,
    /// Direct SI channel (the canceller design uses it as its estimate).
    pub h_bb: &'a CMatrix,
    pub node_noise_w: f64,
    pub user_noise_w: f64,
    pub n_streams: usize,
    pub n_cpi: usize,
    pub echo_model: EchoGainModel,
    pub calibration: &'a Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualModel {
    /// Expected LS error before a digital canceller has been fitted.
    LsFloor,
    /// Exact mismatch of the fitted digital canceller.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub rho: f64,
    pub rate_bps_hz: f64,
    pub min_sinr_db: Option<f64>,
    pub max_residual_dbm: f64,
    pub residual_model: ResidualModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub pass: bool,
    /// Distance to the bound; positive when satisfied.
    pub margin: f64,
    pub unit: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub c1_power: Check,
    pub c2_hardware: Check,
    pub c3_saturation: Check,
    pub c4_sensing: Check,
    /// Only checked under the sensing objective.
    pub rate_floor: Option<Check>,
    pub residual_dbm: Vec<f64>,
    pub target_sinr_db: Vec<f64>,
    pub rate_bps_hz: f64,
}

impl ConstraintReport {
    pub fn all_pass(&self) -> bool {
        self.c1_power.pass
            && self.c2_hardware.pass
            && self.c3_saturation.pass
            && self.c4_sensing.pass
            && self.rate_floor.as_ref().map_or(true, |c| c.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedConfig {
    pub beamformer: HybridBeamformer,
    pub beams: AnalogBeams,
    pub analog: AnalogCanceller,
    pub digital: DigitalCanceller,
    pub achieved_rate: f64,
    /// Rate of the comm-only waterfilling precoder through the same beams.
    pub waterfilling_rate: f64,
    /// Weight of the sensing precoder in the final blend.
    pub rho: f64,
    pub target_sinr_db: Vec<f64>,
    /// `None` when there are no targets.
    pub min_target_sinr_db: Option<f64>,
    pub constraint_report: ConstraintReport,
    pub trace: Vec<TraceEntry>,
}

/// The analog-stage coupling between TX and RX RF chains at the first
/// resource element: direct SI plus the targets' echoes.
fn coupled_si(problem: &OpProblem<'_>, beams: &AnalogBeams) -> Result<(CMatrix, CMatrix)> {
    let direct = beams.w_rf.adjoint() * problem.h_bb * &beams.v_rf;
    let echo = radar_si_channel_with(problem.targets, problem.array, problem.ofdm, 0, 0, problem.echo_model)?;
    let echo = beams.w_rf.adjoint() * echo.entries * &beams.v_rf;
    Ok((direct, echo))
}

/// Power-weighted conjugate beamformer toward the prior directions, in the
/// stream column the comm precoder loads least, scaled to the budget.
fn sensing_precoder(problem: &OpProblem<'_>, beams: &AnalogBeams, v_comm: &CMatrix, power: f64) -> Result<CMatrix> {
    let lambda = problem.ofdm.wavelength_m();
    let n_rf = beams.v_rf.ncols();
    let mut v = CVector::from_element(n_rf, ZERO);
    for prior in problem.priors {
        let c = (problem.array.tx_steering(prior.angle_deg)?.adjoint() * &beams.v_rf).adjoint();
        let b = beams.w_rf.adjoint() * problem.array.rx_steering(prior.angle_deg)?;
        let gain = echo_power_gain(prior, lambda, problem.echo_model)?;
        let (cn, bn) = (c.norm_squared(), b.norm());
        if cn == 0.0 || bn == 0.0 || gain == 0.0 {
            continue;
        }
        v += c.scale(1.0 / (gain.sqrt() * bn * cn));
    }
    let mut out = CMatrix::from_element(n_rf, v_comm.ncols(), ZERO);
    let col = (0..v_comm.ncols())
        .map(|j| (j, v_comm.column(j).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(j, _)| j);
    out.set_column(col, &v);
    Ok(normalize_power(out, &beams.v_rf, power))
}

fn normalize_power(v_bb: CMatrix, v_rf: &CMatrix, power: f64) -> CMatrix {
    let p = frobenius_sq(&(v_rf * &v_bb));
    if p > 0.0 {
        v_bb.scale((power / p).sqrt())
    } else {
        v_bb
    }
}

struct Evaluator<'p, 'a> {
    problem: &'p OpProblem<'a>,
    beams: &'p AnalogBeams,
    v_comm: &'p CMatrix,
    v_sense: &'p CMatrix,
    power: f64,
}

impl Evaluator<'_, '_> {
    fn blend(&self, rho: f64) -> CMatrix {
        let v = self.v_comm.scale(1.0 - rho) + self.v_sense.scale(rho);
        normalize_power(v, &self.beams.v_rf, self.power)
    }

    fn sinrs(&self, v_bb: &CMatrix, residual_cov: &CMatrix) -> Result<Vec<f64>> {
        sensing_sinr(&SensingScene {
            targets: self.problem.targets,
            array: self.problem.array,
            ofdm: self.problem.ofdm,
            w_rf: &self.beams.w_rf,
            v_rf: &self.beams.v_rf,
            v_bb,
            residual_cov,
            noise_power: self.problem.node_noise_w,
            n_cpi: self.problem.n_cpi,
            echo_model: self.problem.echo_model,
        })
    }

    fn min_sinr(&self, rho: f64, residual_cov: &CMatrix) -> Result<f64> {
        let s = self.sinrs(&self.blend(rho), residual_cov)?;
        Ok(s.into_iter().fold(f64::INFINITY, f64::min))
    }

    fn rate(&self, rho: f64) -> Result<f64> {
        self.rate_of(&self.blend(rho))
    }

    fn rate_of(&self, v_bb: &CMatrix) -> Result<f64> {
        let bf = HybridBeamformer {
            v_rf: self.beams.v_rf.clone(),
            v_bb: v_bb.clone(),
            w_rf: self.beams.w_rf.clone(),
            w_bb: None,
        };
        achievable_rate(self.problem.h_dl, &bf, self.problem.user_noise_w)
    }
}

/// Smallest sensing margin (dB) the blend aims for above `λ_S`, so that
/// refitting the digital canceller cannot push the result under the floor.
const SINR_AIM_DB: f64 = 0.005;
/// Bisection stops once the achieved SINR is within this of the floor.
const SINR_TIGHT_DB: f64 = 0.05;

/// Smallest ρ whose weakest target reaches `λ_S` (plus a small aim
/// margin). Falls back to a grid when the SINR is not monotone in ρ.
fn rho_for_sensing(ev: &Evaluator<'_, '_>, lambda_s_db: f64, residual_cov: &CMatrix) -> Result<std::result::Result<f64, f64>> {
    let goal = lambda_s_db + SINR_AIM_DB;
    let at0 = ev.min_sinr(0.0, residual_cov)?;
    if at0 >= goal {
        return Ok(Ok(0.0));
    }
    let at1 = ev.min_sinr(1.0, residual_cov)?;
    if at1 < goal {
        return Ok(match grid_search(ev, residual_cov, |s, _| s >= goal)? {
            Some(rho) => {
                let s = ev.min_sinr(rho, residual_cov)?;
                Ok(bisect_rho(ev, residual_cov, goal, rho - GRID_STEP, rho, s)?)
            }
            None => Err(at1.max(at0)),
        });
    }
    Ok(Ok(bisect_rho(ev, residual_cov, goal, 0.0, 1.0, at1)?))
}

/// Shrinks `[lo, hi]` (SINR below `goal` at `lo`, at or above it at `hi`)
/// until the SINR at `hi` is within the tightness tolerance.
fn bisect_rho(ev: &Evaluator<'_, '_>, residual_cov: &CMatrix, goal: f64, mut lo: f64, mut hi: f64, mut s_hi: f64) -> Result<f64> {
    for _ in 0..100 {
        if s_hi - goal <= SINR_TIGHT_DB || hi - lo < 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let s = ev.min_sinr(mid, residual_cov)?;
        if s >= goal {
            hi = mid;
            s_hi = s;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

const GRID_STEP: f64 = 0.01;

/// Smallest grid ρ (step 0.01) satisfying `accept(min_sinr, rate)`.
fn grid_search(
    ev: &Evaluator<'_, '_>,
    residual_cov: &CMatrix,
    accept: impl Fn(f64, f64) -> bool,
) -> Result<Option<f64>> {
    for k in 0..=100 {
        let rho = k as f64 * GRID_STEP;
        let s = ev.min_sinr(rho, residual_cov)?;
        let r = ev.rate(rho)?;
        if accept(s, r) {
            return Ok(Some(rho));
        }
    }
    Ok(None)
}

/// Largest ρ keeping the rate at or above the floor (sensing objective).
fn rho_for_rate_floor(ev: &Evaluator<'_, '_>, floor: f64, residual_cov: &CMatrix) -> Result<Option<f64>> {
    let r0 = ev.rate(0.0)?;
    if r0 < floor {
        return Ok(None);
    }
    if ev.rate(1.0)? >= floor {
        return Ok(Some(1.0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ev.rate(mid)? >= floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Sensing SINR is usually increasing in ρ, but check the grid for a
    // better admissible point when it is not.
    let mut best = (lo, ev.min_sinr(lo, residual_cov)?);
    for k in 0..=100 {
        let rho = k as f64 * GRID_STEP;
        if rho > lo {
            break;
        }
        let s = ev.min_sinr(rho, residual_cov)?;
        if s > best.1 + 1e-9 {
            best = (rho, s);
        }
    }
    Ok(Some(best.0))
}

fn worst_target(sinrs: &[f64]) -> (usize, f64) {
    sinrs
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY))
}

/// Alternating optimization of the beamformer and the cancellers. When the
/// residual at an RX chain input exceeds its ceiling, the transmit power is
/// backed off by the shortfall and the design repeated. Returns an
/// infeasibility error naming the first violated constraint when no
/// admissible operating point is found.
pub fn solve_op(problem: &OpProblem<'_>, cons: &OpConstraints) -> Result<OptimizedConfig> {
    cons.validate()?;
    let d = problem.n_streams;
    if d == 0 || d > problem.array.n_tx_rf || d > problem.h_dl.nrows() {
        return Err(Error::dims("stream count must be in 1..=min(N_ue, N_T^RF)"));
    }
    let mut power = cons.power_budget_w;
    if !(power > 0.0) {
        if problem.targets.is_empty() {
            return Err(Error::domain("zero power budget"));
        }
        return Err(Error::Infeasible(Infeasibility::Sensing {
            worst_target: 0,
            sinr_db: DB_FLOOR,
            required_db: cons.lambda_s_db,
        }));
    }
    let mut first_violation = None;
    let mut saturating = power;
    for _ in 0..MAX_BACKOFF_STEPS {
        match solve_at_power(problem, cons, power) {
            Ok(config) if first_violation.is_none() => return Ok(config),
            Ok(config) => return Ok(largest_feasible_power(problem, cons, power, saturating, config)),
            Err(Error::Infeasible(v @ Infeasibility::Saturation { shortfall_db, .. })) => {
                saturating = power;
                power *= 10f64.powf(-(shortfall_db + BACKOFF_EXTRA_DB) / 10.0);
                first_violation.get_or_insert(v);
            }
            Err(Error::Infeasible(v)) => return Err(Error::Infeasible(first_violation.unwrap_or(v))),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(first_violation.expect("loop ran")))
}

/// Transmit-power back-off attempts when the ADC ceiling binds.
const MAX_BACKOFF_STEPS: usize = 8;
/// Extra back-off per step beyond the measured shortfall.
const BACKOFF_EXTRA_DB: f64 = 0.01;
/// Resolution of the search for the largest admissible power.
const POWER_TOL_DB: f64 = 1e-6;

/// Bisection (in dB) between a feasible and a saturating power.
fn largest_feasible_power(
    problem: &OpProblem<'_>,
    cons: &OpConstraints,
    mut lo: f64,
    mut hi: f64,
    mut best: OptimizedConfig,
) -> OptimizedConfig {
    while 10.0 * (hi / lo).log10() > POWER_TOL_DB {
        let mid = (lo * hi).sqrt();
        match solve_at_power(problem, cons, mid) {
            Ok(config) => {
                lo = mid;
                best = config;
            }
            Err(_) => hi = mid,
        }
    }
    best
}

/// One solve with the precoder normalized to `power` (at most the budget:
/// C1 is an inequality, so the caller may trade power for C3 slack).
fn solve_at_power(problem: &OpProblem<'_>, cons: &OpConstraints, power: f64) -> Result<OptimizedConfig> {
    let array = problem.array;
    let d = problem.n_streams;

    let prior_dirs: Vec<f64> = problem.priors.iter().map(|t| t.angle_deg).collect();
    let beams = select_analog_beams(problem.codebook, problem.comm_dirs_deg, &prior_dirs, array)?;
    let (direct, echo) = coupled_si(problem, &beams)?;

    let iso = CMatrix::from_diagonal_element(
        array.n_tx_rf,
        array.n_tx_rf,
        Complex64::new(power / (array.subarray_size * array.n_tx_rf) as f64, 0.0),
    );
    let opts = AnalogOptions {
        n_taps: cons.n_taps,
        max_gain: cons.tap_max_gain,
        phase_bits: cons.tap_phase_bits,
        saturation: &cons.saturation,
    };
    let design = design_analog_canceller(problem.h_bb, &beams.v_rf, &beams.w_rf, &iso, Some(&echo), &opts)?;
    let analog = design.canceller;
    let m_eff = &direct + analog.effective_matrix();

    // ‖V_RF v‖² = sub·‖v‖² for block-diagonal phase-only V_RF, so
    // waterfilling runs on the rescaled channel with the full budget.
    let scale = (array.subarray_size as f64).sqrt();
    let h_eff = (problem.h_dl * &beams.v_rf).unscale(scale);
    let (v_prime, wf_rate) = waterfilling_precoder(&h_eff, d, power, problem.user_noise_w)?;
    let v_comm = v_prime.unscale(scale);
    let v_sense = sensing_precoder(problem, &beams, &v_comm, power)?;
    let ev = Evaluator {
        problem,
        beams: &beams,
        v_comm: &v_comm,
        v_sense: &v_sense,
        power,
    };

    let n_rx = array.n_rx_rf;
    let mut residual_cov = CMatrix::from_diagonal_element(n_rx, n_rx, Complex64::new(problem.calibration.ls_floor_w(), 0.0));
    let mut model = ResidualModel::LsFloor;
    let mut trace = Vec::new();
    let mut prev_rate = f64::NEG_INFINITY;
    let mut last: Option<(f64, CMatrix, DigitalCanceller, Vec<f64>, f64)> = None;
    let has_targets = !problem.targets.is_empty();

    for iteration in 0..cons.max_iters {
        let rho = match cons.objective {
            Objective::Comm if !has_targets => 0.0,
            Objective::Comm => match rho_for_sensing(&ev, cons.lambda_s_db, &residual_cov)? {
                Ok(rho) => rho,
                Err(best) => {
                    let sinrs = ev.sinrs(&ev.blend(1.0), &residual_cov)?;
                    let (worst, _) = worst_target(&sinrs);
                    return Err(Error::Infeasible(Infeasibility::Sensing {
                        worst_target: worst,
                        sinr_db: best,
                        required_db: cons.lambda_s_db,
                    }));
                }
            },
            Objective::Sensing => match rho_for_rate_floor(&ev, cons.rate_floor_bps_hz, &residual_cov)? {
                Some(rho) => rho,
                None => {
                    return Err(Error::Infeasible(Infeasibility::RateFloor {
                        rate_bps_hz: ev.rate(0.0)?,
                        required_bps_hz: cons.rate_floor_bps_hz,
                    }))
                }
            },
        };
        let v_bb = ev.blend(rho);

        let h_si_first = &direct + &echo;
        let coupled_cov = &v_bb * v_bb.adjoint();
        let residual_dbm =
            crate::cancellation::coupled_residual_dbm(&h_si_first, &analog, &coupled_cov, &cons.saturation);
        if let Some(v) = cons.saturation.check(&residual_dbm) {
            return Err(Error::Infeasible(v));
        }

        let g = &m_eff * &v_bb;
        let digital = design_digital_canceller(&problem.calibration.received(&g)?, &problem.calibration.known)?;
        let e = &g - &digital.d_matrix;
        residual_cov = &e * e.adjoint();
        let sinrs = ev.sinrs(&v_bb, &residual_cov)?;
        let rate = ev.rate_of(&v_bb)?;
        let min_sinr = has_targets.then(|| worst_target(&sinrs).1);
        trace.push(TraceEntry {
            iteration,
            rho,
            rate_bps_hz: rate,
            min_sinr_db: min_sinr,
            max_residual_dbm: residual_dbm.iter().copied().fold(DB_FLOOR, f64::max),
            residual_model: model,
        });
        model = ResidualModel::Calibrated;

        let sensing_ok = match cons.objective {
            Objective::Comm => min_sinr.map_or(true, |s| s >= cons.lambda_s_db),
            Objective::Sensing => true,
        };
        let converged = (rate - prev_rate).abs() < cons.rate_tol && sensing_ok;
        prev_rate = rate;
        last = Some((rho, v_bb, digital, sinrs, rate));
        if converged {
            break;
        }
    }

    let (rho, v_bb, digital, sinrs, rate) = last.expect("at least one iteration");
    let min_target_sinr_db = has_targets.then(|| worst_target(&sinrs).1);
    if let Some(s) = min_target_sinr_db {
        if s < cons.lambda_s_db {
            return Err(Error::Infeasible(Infeasibility::Sensing {
                worst_target: worst_target(&sinrs).0,
                sinr_db: s,
                required_db: cons.lambda_s_db,
            }));
        }
    }

    let beamformer = HybridBeamformer {
        v_rf: beams.v_rf.clone(),
        v_bb,
        w_rf: beams.w_rf.clone(),
        w_bb: None,
    };
    let mut config = OptimizedConfig {
        beamformer,
        beams,
        analog,
        digital,
        achieved_rate: rate,
        waterfilling_rate: wf_rate,
        rho,
        target_sinr_db: sinrs,
        min_target_sinr_db,
        constraint_report: empty_report(),
        trace,
    };
    config.constraint_report = check_constraints(&config, problem, cons)?;
    Ok(config)
}

fn empty_report() -> ConstraintReport {
    let blank = Check {
        pass: false,
        margin: 0.0,
        unit: "",
    };
    ConstraintReport {
        c1_power: blank.clone(),
        c2_hardware: blank.clone(),
        c3_saturation: blank.clone(),
        c4_sensing: blank,
        rate_floor: None,
        residual_dbm: Vec::new(),
        target_sinr_db: Vec::new(),
        rate_bps_hz: 0.0,
    }
}

/// Relative slack on the power budget for round-off.
const POWER_SLACK: f64 = 1e-9;

/// Evaluates C1–C4 (and the rate floor under the sensing objective) from
/// the configuration and the true channels only.
pub fn check_constraints(config: &OptimizedConfig, problem: &OpProblem<'_>, cons: &OpConstraints) -> Result<ConstraintReport> {
    let bf = &config.beamformer;
    let array = problem.array;
    let f = &bf.v_rf * &bf.v_bb;
    if f.nrows() != array.n_tx_antennas || bf.w_rf.nrows() != array.n_rx_antennas {
        return Err(Error::dims("configuration does not match the array"));
    }

    // C1
    let tx_power: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    let c1 = Check {
        pass: tx_power <= cons.power_budget_w * (1.0 + POWER_SLACK),
        margin: cons.power_budget_w - tx_power,
        unit: "W",
    };

    // C2
    let structure_ok = check_rf_structure(&bf.v_rf, array.n_tx_rf, array.subarray_size).is_ok()
        && check_rf_structure(&bf.w_rf, array.n_rx_rf, array.subarray_size).is_ok()
        && config.analog.validate().is_ok()
        && config.analog.n_tx_rf == array.n_tx_rf
        && config.analog.n_rx_rf == array.n_rx_rf;
    let c2 = Check {
        pass: structure_ok && config.analog.n_taps() <= cons.n_taps,
        margin: cons.n_taps as f64 - config.analog.n_taps() as f64,
        unit: "taps",
    };

    // C3: the analog-stage residual at the first resource element.
    let echo = radar_si_channel_with(problem.targets, array, problem.ofdm, 0, 0, problem.echo_model)?;
    let h_si = problem.h_bb + &echo.entries;
    let at_rf_inputs = bf.w_rf.adjoint() * &h_si * &f + config.analog.effective_matrix() * &bf.v_bb;
    let offset = match cons.saturation.metric {
        SaturationMetric::Average => 0.0,
        SaturationMetric::Peak => cons.saturation.papr_db,
    };
    let residual_dbm: Vec<f64> = (0..at_rf_inputs.nrows())
        .map(|i| {
            let p: f64 = at_rf_inputs.row(i).iter().map(|z| z.norm_sqr()).sum();
            watts_to_dbm(p) + offset
        })
        .collect();
    let c3_margin = residual_dbm
        .iter()
        .zip(&cons.saturation.lambda_sic_dbm)
        .map(|(r, l)| l - r)
        .fold(f64::INFINITY, f64::min);
    let c3 = Check {
        pass: c3_margin >= 0.0,
        margin: c3_margin,
        unit: "dB",
    };

    // C4: MRC over the RX chains of each target's own echo.
    let lambda = problem.ofdm.wavelength_m();
    let direct_after_digital =
        bf.w_rf.adjoint() * problem.h_bb * &f + config.analog.effective_matrix() * &bf.v_bb - &config.digital.d_matrix;
    let dr = problem.ofdm.range_resolution_m();
    let dv = problem.ofdm.velocity_resolution_mps(problem.n_cpi);
    let mut echo_terms = Vec::with_capacity(problem.targets.len());
    for t in problem.targets {
        let a_r = array.rx_steering(t.angle_deg)?;
        let a_t = array.tx_steering(t.angle_deg)?;
        let gain = echo_power_gain(t, lambda, problem.echo_model)?;
        let h = (&a_r * a_t.adjoint()).scale(gain.sqrt());
        echo_terms.push((bf.w_rf.adjoint() * &h * &f, bf.w_rf.adjoint() * a_r));
    }
    let mut sinrs = Vec::with_capacity(problem.targets.len());
    for (k, t) in problem.targets.iter().enumerate() {
        let (g_k, resp) = &echo_terms[k];
        let nrm = resp.norm();
        if nrm == 0.0 {
            sinrs.push(DB_FLOOR);
            continue;
        }
        let u = resp.unscale(nrm);
        let project = |m: &CMatrix| -> f64 { (u.adjoint() * m).iter().map(|z| z.norm_sqr()).sum() };
        let signal = project(g_k);
        let noise = problem.node_noise_w * (&bf.w_rf * &u).norm_squared();
        let residual = project(&direct_after_digital);
        let leakage: f64 = problem
            .targets
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != k && (o.range_m - t.range_m).abs() < dr && (o.velocity_mps - t.velocity_mps).abs() < dv)
            .map(|(j, _)| project(&echo_terms[j].0))
            .sum();
        sinrs.push(lin_to_db(signal / (noise + residual + leakage)));
    }
    let c4_margin = sinrs.iter().map(|s| s - cons.lambda_s_db).fold(f64::INFINITY, f64::min);
    let c4 = Check {
        pass: c4_margin >= -1e-6,
        margin: if sinrs.is_empty() { f64::MAX } else { c4_margin },
        unit: "dB",
    };

    let g = problem.h_dl * &f;
    let rate = crate::beamforming::rate_of_effective(&g, problem.user_noise_w);
    let rate_floor = (cons.objective == Objective::Sensing).then_some(Check {
        pass: rate >= cons.rate_floor_bps_hz - 1e-9,
        margin: rate - cons.rate_floor_bps_hz,
        unit: "bps/Hz",
    });

    Ok(ConstraintReport {
        c1_power: c1,
        c2_hardware: c2,
        c3_saturation: c3,
        c4_sensing: c4,
        rate_floor,
        residual_dbm,
        target_sinr_db: sinrs,
        rate_bps_hz: rate,
    })
}

/// Residual per RX chain for a configuration, dBm, as the analog stage
/// sees it; convenience wrapper for reports.
pub fn analog_residual_dbm(config: &OptimizedConfig, h_si: &CMatrix, spec: &SaturationSpec) -> Result<Vec<f64>> {
    residual_rf_power(
        h_si,
        &config.analog,
        &config.beamformer.w_rf,
        &config.beamformer.v_rf,
        &config.beamformer.v_bb,
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{doa_priors, World};

    fn genie(seed: u64, k: usize) -> (World, Vec<Target>) {
        let mut s = Scenario::default();
        s.seed = seed;
        s.targets.count = k;
        s.radar.genie_doa = true;
        let world = World::build(&s).unwrap();
        let (priors, _) = doa_priors(&world).unwrap();
        (world, priors)
    }

    fn solve(world: &World, priors: &[Target], cons: &OpConstraints) -> Result<OptimizedConfig> {
        solve_op(&world.problem(priors), cons)
    }

    #[test]
    fn without_targets_the_rate_is_the_waterfilling_rate() {
        for seed in 1..=5 {
            let (w, p) = genie(seed, 0);
            let cfg = solve(&w, &p, &OpConstraints::from_scenario(&w.scenario)).unwrap();
            assert_eq!(cfg.rho, 0.0);
            assert!((cfg.achieved_rate - cfg.waterfilling_rate).abs() < 1e-6);
            assert!(cfg.min_target_sinr_db.is_none());
            assert!(cfg.constraint_report.all_pass());
        }
    }

    #[test]
    fn zero_power_cannot_sense() {
        let (w, p) = genie(1, 6);
        let cons = OpConstraints {
            power_budget_w: 0.0,
            ..OpConstraints::from_scenario(&w.scenario)
        };
        match solve(&w, &p, &cons) {
            Err(Error::Infeasible(Infeasibility::Sensing { .. })) => {}
            other => panic!("{other:?}"),
        }
        let (w0, p0) = genie(1, 0);
        assert!(matches!(solve(&w0, &p0, &cons), Err(Error::Domain(_))));
    }

    #[test]
    fn weak_power_fails_on_sensing() {
        let (w, p) = genie(1, 6);
        let cons = OpConstraints {
            power_budget_w: crate::units::dbm_to_watts(0.0),
            ..OpConstraints::from_scenario(&w.scenario)
        };
        assert!(matches!(
            solve(&w, &p, &cons),
            Err(Error::Infeasible(Infeasibility::Sensing { .. }))
        ));
    }

    #[test]
    fn active_sensing_constraint_is_met_tightly() {
        let mut active = 0;
        for seed in 1..=8 {
            let (w, p) = genie(seed, 6);
            let cons = OpConstraints::from_scenario(&w.scenario);
            let cfg = solve(&w, &p, &cons).unwrap();
            let min = cfg.min_target_sinr_db.unwrap();
            assert!(min >= cons.lambda_s_db);
            if cfg.rho > 0.0 {
                active += 1;
                assert!(min - cons.lambda_s_db <= 0.1, "seed {seed}: {min}");
            }
            assert!(cfg.achieved_rate <= cfg.waterfilling_rate + 1e-9);
        }
        assert!(active >= 4);
    }

    #[test]
    fn tighter_sensing_floor_never_raises_the_rate() {
        let (w, p) = genie(2, 6);
        let base = OpConstraints::from_scenario(&w.scenario);
        let mut prev = f64::INFINITY;
        let mut infeasible = false;
        for lambda in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
            let cons = OpConstraints {
                lambda_s_db: lambda,
                ..base.clone()
            };
            match solve(&w, &p, &cons) {
                Ok(cfg) => {
                    assert!(!infeasible, "feasible again at {lambda} dB");
                    assert!(cfg.achieved_rate <= prev + 1e-9, "{lambda}: {} > {prev}", cfg.achieved_rate);
                    prev = cfg.achieved_rate;
                }
                Err(Error::Infeasible(_)) => infeasible = true,
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn checker_flags_each_kind_of_violation() {
        let (w, p) = genie(3, 6);
        let cons = OpConstraints::from_scenario(&w.scenario);
        let problem = w.problem(&p);
        let cfg = solve_op(&problem, &cons).unwrap();
        assert!(cfg.constraint_report.all_pass());

        let mut loud = cfg.clone();
        loud.beamformer.v_bb = loud.beamformer.v_bb.scale(1.1);
        let r = check_constraints(&loud, &problem, &cons).unwrap();
        assert!(!r.c1_power.pass && r.c1_power.margin < 0.0);

        let mut bare = cfg.clone();
        bare.analog = AnalogCanceller::none(8, 8);
        let r = check_constraints(&bare, &problem, &cons).unwrap();
        assert!(!r.c3_saturation.pass);

        let strict = OpConstraints {
            lambda_s_db: cfg.min_target_sinr_db.unwrap() + 1.0,
            ..cons.clone()
        };
        let r = check_constraints(&cfg, &problem, &strict).unwrap();
        assert!(!r.c4_sensing.pass);
        assert!((r.c4_sensing.margin + 1.0).abs() < 0.05, "{}", r.c4_sensing.margin);

        let few = OpConstraints { n_taps: 4, ..cons };
        let r = check_constraints(&cfg, &problem, &few).unwrap();
        assert!(!r.c2_hardware.pass);
    }

    #[test]
    fn saturation_backs_off_power() {
        let (mut w, _) = genie(7, 6);
        w.scenario.constraints.tx_power_dbm = 40.0;
        let priors: Vec<Target> = w.targets.clone();
        let cons = OpConstraints::from_scenario(&w.scenario);
        let cfg = solve(&w, &priors, &cons).unwrap();
        let r = &cfg.constraint_report;
        assert!(r.all_pass());
        assert!(r.c1_power.margin > 0.0);
        let worst = r.residual_dbm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= -10.0 + 1e-6 && worst > -10.1, "{worst}");
    }

    #[test]
    fn sensing_objective_respects_the_rate_floor() {
        let (w, p) = genie(4, 6);
        let comm = solve(&w, &p, &OpConstraints::from_scenario(&w.scenario)).unwrap();
        let floor = comm.achieved_rate - 1.0;
        let cons = OpConstraints {
            objective: Objective::Sensing,
            rate_floor_bps_hz: floor,
            ..OpConstraints::from_scenario(&w.scenario)
        };
        let cfg = solve(&w, &p, &cons).unwrap();
        assert!(cfg.achieved_rate >= floor - 1e-6);
        assert!(cfg.min_target_sinr_db.unwrap() > comm.min_target_sinr_db.unwrap());
        assert!(cfg.constraint_report.rate_floor.as_ref().unwrap().pass);

        let impossible = OpConstraints {
            rate_floor_bps_hz: comm.waterfilling_rate + 1.0,
            ..cons
        };
        assert!(matches!(
            solve(&w, &p, &impossible),
            Err(Error::Infeasible(Infeasibility::RateFloor { .. }))
        ));
    }

    #[test]
    fn trace_is_ordered_and_serializable() {
        let (w, p) = genie(5, 4);
        let cfg = solve(&w, &p, &OpConstraints::from_scenario(&w.scenario)).unwrap();
        assert!(!cfg.trace.is_empty());
        assert_eq!(cfg.trace[0].residual_model, ResidualModel::LsFloor);
        for (i, t) in cfg.trace.iter().enumerate() {
            assert_eq!(t.iteration, i);
        }
        let json = serde_json::to_string(&cfg.trace).unwrap();
        assert!(json.contains("rate_bps_hz"));
    }

    #[test]
    fn calibration_is_reproducible() {
        let a = Calibration::generate(64, 4, 2, 3, 1e-9, QamOrder::QAM16, 9).unwrap();
        let b = Calibration::generate(64, 4, 2, 3, 1e-9, QamOrder::QAM16, 9).unwrap();
        assert_eq!(a.known, b.known);
        let g = CMatrix::from_element(3, 2, Complex64::new(0.5, -0.1));
        assert_eq!(a.received(&g).unwrap(), b.received(&g).unwrap());
        assert!((a.ls_floor_w() - 1e-9 * 2.0 / (64.0 * 4.0)).abs() < 1e-20);
    }
}
