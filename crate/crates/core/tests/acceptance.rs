//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fdisac::array_channel::OfdmParams;
use fdisac::beamforming::{achievable_rate, waterfilling_precoder};
use fdisac::cancellation::{coupled_residual_dbm, place_taps};
use fdisac::linalg::CMatrix;
use fdisac::link_budget::{required_gain, BudgetParams, ShadowMode};
use fdisac::optimizer::{check_constraints, solve_op, OpConstraints};
use fdisac::radar::{detect_peaks, range_doppler_map, DetectionConfig, RangeDopplerOptions};
use fdisac::scenario::Scenario;
use fdisac::simulator::{doa_priors, run_experiment, simulate_frame_with, ExperimentOptions, FrameOptions, World};
use fdisac::units::{dbm_to_watts, SPEED_OF_LIGHT};
use fdisac::waveform::{random_qam_grid_with, ResourceGrid};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
    let r = (-u1.ln()).sqrt();
    Complex64::from_polar(r, 2.0 * PI * u2)
}

fn frob_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Water level by bisection; returns the allocated rate in bits.
fn waterfilling_oracle(gains: &[f64], power: f64) -> f64 {
    let active: Vec<f64> = gains.iter().copied().filter(|&g| g > 0.0).collect();
    let (mut lo, mut hi) = (0.0, power + active.iter().map(|g| 1.0 / g).sum::<f64>());
    for _ in 0..200 {
        let mu = 0.5 * (lo + hi);
        let used: f64 = active.iter().map(|g| (mu - 1.0 / g).max(0.0)).sum();
        if used > power {
            hi = mu;
        } else {
            lo = mu;
        }
    }
    active.iter().map(|g| (1.0 + (lo - 1.0 / g).max(0.0) * g).log2()).sum()
}

/// Eigenvalues of `h h^H` (the squared singular values of `h`).
fn squared_singular_values(h: &CMatrix) -> Vec<f64> {
    let gram = h * h.adjoint();
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn genie_scenario(seed: u64, k: usize, power_dbm: f64) -> Scenario {
    let mut s = Scenario::default();
    s.seed = seed;
    s.targets.count = k;
    s.constraints.tx_power_dbm = power_dbm;
    s.radar.genie_doa = true;
    s
}

fn solve_genie(s: &Scenario) -> fdisac::error::Result<(World, fdisac::optimizer::OptimizedConfig)> {
    let world = World::build(s)?;
    let (priors, _) = doa_priors(&world)?;
    let cfg = solve_op(&world.problem(&priors), &OpConstraints::from_scenario(s))?;
    Ok((world, cfg))
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let params = BudgetParams {
        tx_power_dbm: 30.0,
        noise_floor_dbm: -87.0,
        nf_db: 7.0,
        rcs_m2: 100.0,
        ploss_exp: 2.86,
        shadow_db: 20.0,
        wavelength_m: SPEED_OF_LIGHT / 28e9,
        shadow_mode: ShadowMode::RoundTrip,
        ..BudgetParams::default()
    };
    let gain = match required_gain(150.0, 10.0, &params) {
        Ok(g) => g,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    // SINR = P G λ² σ / ((4π)² d^n S² N F), solved for G in linear units.
    let lambda = SPEED_OF_LIGHT / 28e9;
    let p = 1e-3 * 10f64.powf(30.0 / 10.0);
    let noise = 1e-3 * 10f64.powf((-87.0 + 7.0) / 10.0);
    let shadow = 10f64.powf(2.0 * 20.0 / 10.0);
    let g_lin = 10.0 * noise * (4.0 * PI).powi(2) * 150f64.powf(2.86) * shadow / (p * lambda * lambda * 100.0);
    let oracle = 10.0 * g_lin.log10();
    let secs = t0.elapsed().as_secs_f64();
    let pass = (gain - oracle).abs() < 1e-9 && (gain - 43.6).abs() <= 0.1 && (gain - 40.0).abs() <= 4.0 && secs < 1.0;
    outcome(
        pass,
        format!("required gain {gain:.3} dB, closed form {oracle:.3} dB, 150 m at 10 dB SINR, {secs:.3} s"),
    )
}

/// Echo of a point target built from the delay and Doppler phase ramps.
fn on_grid_echo(tx: &ResourceGrid, ofdm: &OfdmParams, range_m: f64, velocity_mps: f64, amp: Complex64) -> ResourceGrid {
    let tau = 2.0 * range_m / SPEED_OF_LIGHT;
    let fd = 2.0 * velocity_mps / ofdm.wavelength_m();
    ResourceGrid::from_fn(tx.n_subcarriers(), tx.n_symbols(), 1, |m, n, _| {
        let phase = -2.0 * PI * m as f64 * ofdm.scs_hz * tau + 2.0 * PI * fd * n as f64 * ofdm.symbol_duration_s;
        tx.get(m, n, 0) * amp * Complex64::from_polar(1.0, phase)
    })
}

fn recovers(ofdm: &OfdmParams, tx: &ResourceGrid, range_bin: usize, doppler_bin: i64, amp: Complex64) -> bool {
    let n_cpi = tx.n_symbols();
    let range_m = range_bin as f64 * SPEED_OF_LIGHT / (2.0 * ofdm.n_subcarriers as f64 * ofdm.scs_hz);
    let velocity = doppler_bin as f64 * ofdm.wavelength_m() / (2.0 * n_cpi as f64 * ofdm.symbol_duration_s);
    let rx = on_grid_echo(tx, ofdm, range_m, velocity, amp);
    let Ok(map) = range_doppler_map(&rx, tx, ofdm, &RangeDopplerOptions::default()) else {
        return false;
    };
    let (r, v) = map.argmax();
    let peaks = detect_peaks(&map, &DetectionConfig::default());
    r == range_bin
        && map.signed_doppler(v as f64) == doppler_bin as f64
        && peaks.len() == 1
        && (peaks[0].range_bin_f - range_bin as f64).abs() < 1e-6
        && (peaks[0].doppler_bin_f - doppler_bin as f64).abs() < 1e-6
        && (peaks[0].range_m(&map) - range_m).abs() < 1e-5
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let ofdm = OfdmParams::default();
    let n_cpi = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tx = random_qam_grid_with(ofdm.n_subcarriers, n_cpi, 1, 16, &mut rng).unwrap();
    let bin30 = recovers(&ofdm, &tx, 30, 0, Complex64::new(1e-4, 0.0));
    let placements: Vec<(usize, i64, Complex64)> = (0..100)
        .map(|_| {
            let r = rng.gen_range(3..ofdm.n_subcarriers / 2);
            let v = rng.gen_range(-(n_cpi as i64) / 2 + 1..n_cpi as i64 / 2);
            let amp = complex_normal(&mut rng) * 10f64.powf(-rng.gen_range(2.0..6.0));
            (r, v, amp)
        })
        .collect();
    let ok = placements.par_iter().filter(|&&(r, v, a)| recovers(&ofdm, &tx, r, v, a)).count();
    let secs = t0.elapsed().as_secs_f64();
    let bin_m = SPEED_OF_LIGHT / (2.0 * ofdm.n_subcarriers as f64 * ofdm.scs_hz);
    outcome(
        bin30 && ok == 100 && secs < 10.0,
        format!(
            "bin 30 ({:.2} m) {}, random on-grid placements {ok}/100, {secs:.1} s",
            30.0 * bin_m,
            if bin30 { "exact" } else { "missed" }
        ),
    )
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let run = |seed: u64| {
        let mut s = Scenario::default();
        s.seed = seed;
        (seed, run_experiment(&s, ExperimentOptions::default()))
    };
    // Seeds without any operating point that meets the sensing floor have
    // no estimation run; further seeds are drawn until 50 runs exist.
    let mut results: Vec<_> = (1..=50u64).into_par_iter().map(run).collect();
    let mut next = 51u64;
    while results.iter().filter(|r| r.1.is_ok()).count() < 50 && next <= 100 {
        results.push(run(next));
        next += 1;
    }
    let skipped: Vec<u64> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    let (mut rel_sq, mut vel_sq, mut n) = (0.0, 0.0, 0usize);
    let (mut near, mut missed, mut false_alarms, mut infeasible, mut min_sinr) = (0, 0, 0, 0, f64::INFINITY);
    for (_, r) in &results {
        let Ok(r) = r else {
            infeasible += 1;
            continue;
        };
        min_sinr = r.config.target_sinr_db.iter().copied().fold(min_sinr, f64::min);
        false_alarms += r.accuracy.as_ref().map_or(0, |a| a.false_alarms);
        for (t, truth) in r.world.targets.iter().enumerate() {
            if truth.range_m > 60.0 {
                continue;
            }
            near += 1;
            match r.matches.iter().find(|m| m.truth == t) {
                Some(m) => {
                    rel_sq += (m.range_error_m / truth.range_m).powi(2);
                    vel_sq += m.velocity_error_mps.powi(2);
                    n += 1;
                }
                None => missed += 1,
            }
        }
    }
    let feasible = results.len() - infeasible;
    let rel = (rel_sq / n.max(1) as f64).sqrt();
    let vel = (vel_sq / n.max(1) as f64).sqrt();
    let secs = t0.elapsed().as_secs_f64();
    let pass = feasible >= 50 && n > 0 && missed == 0 && rel < 0.01 && vel < 1.0 && min_sinr >= 10.0 - 1e-6 && secs < 300.0;
    outcome(
        pass,
        format!(
            "{feasible} runs (infeasible seeds skipped: {skipped:?}), {near} targets <= 60 m ({missed} missed, {false_alarms} false alarms), \
             range RMSE {:.4}% of range, velocity RMSE {vel:.4} m/s, min predicted SINR {min_sinr:.2} dB, {secs:.0} s",
            100.0 * rel
        ),
    )
}

fn criterion_4() -> Outcome {
    let seeds: Vec<u64> = (1..=20).collect();
    let per_seed: Vec<Result<(bool, bool, bool, bool), String>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = Scenario::default();
            s.seed = seed;
            let opts = ExperimentOptions {
                sense: false,
                keep_maps: false,
            };
            let r = run_experiment(&s, opts).map_err(|e| format!("seed {seed}: {e}"))?;
            let cfg = &r.config;
            let cons = OpConstraints::from_scenario(&s);
            let report = check_constraints(cfg, &r.world.problem(&r.priors), &cons).map_err(|e| e.to_string())?;
            let c3 = report.c3_saturation.pass && cfg.analog.n_taps() == 8;

            let bf = &cfg.beamformer;
            let m = bf.w_rf.adjoint() * &r.world.h_bb * &bf.v_rf;
            let full = &m + place_taps(&m, 64, None, None).effective_matrix();
            let exact_zero = full.iter().all(|z| z.re == 0.0 && z.im == 0.0);

            let cov = &bf.v_bb * bf.v_bb.adjoint();
            let spec = s.saturation_spec();
            let mut frob_mono = true;
            let mut power_mono = true;
            let (mut prev_rows, mut prev_p) = (vec![f64::INFINITY; m.nrows()], f64::INFINITY);
            for n in 0..=64 {
                let c = place_taps(&m, n, None, None);
                let residual = &m + c.effective_matrix();
                let rows: Vec<f64> = residual.row_iter().map(|r| r.norm_squared()).collect();
                let p: f64 = coupled_residual_dbm(&m, &c, &cov, &spec).iter().map(|&d| dbm_to_watts(d)).sum();
                frob_mono &= rows.iter().zip(&prev_rows).all(|(r, q)| r <= q);
                power_mono &= p <= prev_p * (1.0 + 1e-12);
                prev_rows = rows;
                prev_p = p;
            }
            Ok((c3, exact_zero, frob_mono, power_mono))
        })
        .collect();
    let errors: Vec<&String> = per_seed.iter().filter_map(|r| r.as_ref().err()).collect();
    let ok: Vec<&(bool, bool, bool, bool)> = per_seed.iter().filter_map(|r| r.as_ref().ok()).collect();
    let c3 = ok.iter().filter(|r| r.0).count();
    let zero = ok.iter().filter(|r| r.1).count();
    let frob = ok.iter().filter(|r| r.2).count();
    let power = ok.iter().filter(|r| r.3).count();
    let pass = errors.is_empty() && c3 == 20 && zero == 20 && frob == 20;
    let mut detail = format!(
        "8-tap canceller (12.5% of 64) meets C3 on {c3}/20 seeds, 64 taps leave an exactly zero coupled matrix on {zero}/20, \
         coupled-matrix residual of every chain non-increasing in taps on {frob}/20; \
         for information, chain power under the final precoder covariance is non-increasing on {power}/20"
    );
    if let Some(e) = errors.first() {
        detail.push_str(&format!("; {e}"));
    }
    outcome(pass, detail)
}

fn echo_relative_gap(seed: u64) -> Result<(f64, f64), String> {
    let quiet = FrameOptions {
        noise: false,
        ..FrameOptions::default()
    };
    let mut s = genie_scenario(seed, 6, 30.0);
    s.direct_si.enabled = false;
    let (world, cfg) = solve_genie(&s).map_err(|e| e.to_string())?;
    let on = simulate_frame_with(&world, &cfg, quiet).map_err(|e| e.to_string())?;
    let off = simulate_frame_with(
        &world,
        &cfg,
        FrameOptions {
            cancellers: false,
            ..quiet
        },
    )
    .map_err(|e| e.to_string())?;
    let (e_on, e_off) = (on.rx_before.energy(), off.rx_before.energy());
    let si_free = (e_on - e_off).abs() / e_off;

    // With direct SI present, the echo component behind the analog taps
    // (difference of frames with and without echoes) against bare echoes.
    let s = genie_scenario(seed, 6, 30.0);
    let (world, cfg) = solve_genie(&s).map_err(|e| e.to_string())?;
    let frame = |echoes, direct_si, cancellers| {
        simulate_frame_with(
            &world,
            &cfg,
            FrameOptions {
                noise: false,
                direct_si,
                echoes,
                cancellers,
            },
        )
        .map(|f| f.rx_before)
    };
    let with = frame(true, true, true).map_err(|e| e.to_string())?;
    let without = frame(false, true, true).map_err(|e| e.to_string())?;
    let bare = frame(true, false, false).map_err(|e| e.to_string())?;
    let component = with.sub(&without).map_err(|e| e.to_string())?;
    let behind_taps = (component.energy() - bare.energy()).abs() / bare.energy();
    Ok((si_free, behind_taps))
}

fn criterion_5() -> Outcome {
    let gaps: Vec<Result<(f64, f64), String>> = (1..=5u64).into_par_iter().map(echo_relative_gap).collect();
    if let Some(Err(e)) = gaps.iter().find(|g| g.is_err()) {
        return outcome(false, format!("error: {e}"));
    }
    let gaps: Vec<(f64, f64)> = gaps.into_iter().map(Result::unwrap).collect();
    let worst_free = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
    let worst_taps = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    outcome(
        worst_free <= 1e-12 && worst_taps <= 1e-9,
        format!(
            "echo energy, analog canceller on vs off without direct SI: worst relative gap {worst_free:.1e} over 5 seeds; \
             echo component behind the taps with direct SI present: {worst_taps:.1e}"
        ),
    )
}

fn criterion_6() -> Outcome {
    // (a) no targets: the solution rate equals waterfilling through its own beams.
    let a: Vec<Result<f64, String>> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let s = genie_scenario(seed, 0, 30.0);
            let (world, cfg) = solve_genie(&s).map_err(|e| e.to_string())?;
            let bf = &cfg.beamformer;
            let gram = bf.v_rf.adjoint() * &bf.v_rf;
            let c = gram[(0, 0)].re;
            let h_eff = (&world.h_dl * &bf.v_rf).unscale(c.sqrt());
            let noise = s.user_noise_w();
            let gains: Vec<f64> = squared_singular_values(&h_eff).iter().map(|l| l / noise).collect();
            let oracle = waterfilling_oracle(&gains, s.power_budget_w());
            let evaluated = achievable_rate(&world.h_dl, bf, noise).map_err(|e| e.to_string())?;
            Ok((cfg.achieved_rate - oracle).abs().max((evaluated - oracle).abs()))
        })
        .collect();
    let a_err = a.iter().map(|r| r.as_ref().map_or(f64::INFINITY, |&v| v)).fold(0.0, f64::max);
    let a_pass = a_err <= 1e-6;

    // (b) random feasible solves against the independent checker.
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let draws: Vec<Scenario> = (0..300)
        .map(|i| {
            let mut s = genie_scenario(1000 + i, rng.gen_range(0..=6), rng.gen_range(20.0..40.0));
            s.constraints.lambda_s_db = rng.gen_range(5.0..15.0);
            s.constraints.lambda_sic_dbm = rng.gen_range(-20.0..0.0);
            s.constraints.n_taps = [8, 16, 32, 64][rng.gen_range(0..4)];
            s
        })
        .collect();
    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut attempted = 0usize;
    for chunk in draws.chunks(20) {
        if checked >= 100 {
            break;
        }
        let res: Vec<Option<bool>> = chunk
            .par_iter()
            .map(|s| {
                let world = World::build(s).ok()?;
                let (priors, _) = doa_priors(&world).ok()?;
                let problem = world.problem(&priors);
                let cons = OpConstraints::from_scenario(s);
                let cfg = solve_op(&problem, &cons).ok()?;
                let report = check_constraints(&cfg, &problem, &cons).ok()?;
                let power_ok = cfg.beamformer.transmit_power() <= s.power_budget_w() * (1.0 + 1e-9);
                Some(report.all_pass() && power_ok)
            })
            .collect();
        for r in res {
            attempted += 1;
            if let Some(ok) = r {
                if checked < 100 {
                    checked += 1;
                    failures += usize::from(!ok);
                }
            }
        }
    }
    let b_pass = checked == 100 && failures == 0;

    // (c) rate against the number of targets and against power.
    let seeds: Vec<u64> = (1..=20).collect();
    let mut mean = BTreeMap::new();
    let mut c_infeasible = 0;
    for k in [2usize, 4, 6] {
        let rates: Vec<Option<f64>> = seeds
            .par_iter()
            .map(|&seed| solve_genie(&genie_scenario(seed, k, 30.0)).ok().map(|(_, c)| c.achieved_rate))
            .collect();
        c_infeasible += rates.iter().filter(|r| r.is_none()).count();
        let ok: Vec<f64> = rates.into_iter().flatten().collect();
        mean.insert(k, ok.iter().sum::<f64>() / ok.len().max(1) as f64);
    }
    let powers = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];
    let monotone: Vec<bool> = seeds
        .par_iter()
        .map(|&seed| {
            let rates: Vec<Option<f64>> = powers
                .iter()
                .map(|&p| solve_genie(&genie_scenario(seed, 6, p)).ok().map(|(_, c)| c.achieved_rate))
                .collect();
            let first = rates.iter().position(Option::is_some);
            let feasible_tail = first.is_some_and(|i| rates[i..].iter().all(Option::is_some));
            let values: Vec<f64> = rates.iter().flatten().copied().collect();
            feasible_tail && values.windows(2).all(|w| w[1] >= w[0] - 1e-9)
        })
        .collect();
    let mono = monotone.iter().filter(|&&m| m).count();
    let (r2, r4, r6) = (mean[&2], mean[&4], mean[&6]);
    let c_pass = c_infeasible == 0 && r2 >= r4 && r4 >= r6 && r4 - r6 > 0.0 && mono == 20;

    outcome(
        a_pass && b_pass && c_pass,
        format!(
            "(a) K=0 vs waterfilling max |diff| {a_err:.1e} bps/Hz over 20 seeds; \
             (b) {checked} feasible random solves ({attempted} drawn), {failures} failing the checker; \
             (c) mean rate K=2 {r2:.3}, K=4 {r4:.3}, K=6 {r6:.3} bps/Hz ({c_infeasible} infeasible), \
             gap K=4 vs 6 {:.3}, rate non-decreasing over 10-40 dBm on {mono}/20 seeds",
            r4 - r6
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let channels: Vec<(CMatrix, f64)> = (0..50)
        .map(|_| {
            let h = CMatrix::from_fn(4, 8, |_, _| complex_normal(&mut rng));
            (h, 10f64.powf(rng.gen_range(-1.5..0.5)))
        })
        .collect();
    let power = 1.0;
    let steps = 100usize;
    let results: Vec<Result<(f64, bool), String>> = channels
        .par_iter()
        .map(|(h, noise)| {
            let (v_bb, rate) = waterfilling_precoder(h, 4, power, *noise).map_err(|e| e.to_string())?;
            let g = h * &v_bb;
            let direct = log2_det_i_plus(&(&g * g.adjoint()).unscale(*noise));
            let precoder_ok = frob_sq(&v_bb) <= power * (1.0 + 1e-9) && (direct - rate).abs() < 1e-9;
            let gains: Vec<f64> = squared_singular_values(h).iter().map(|l| l / noise).collect();
            let mut best = f64::NEG_INFINITY;
            for a in 0..=steps {
                for b in 0..=steps - a {
                    for c in 0..=steps - a - b {
                        let d = steps - a - b - c;
                        let r: f64 = [a, b, c, d]
                            .iter()
                            .zip(&gains)
                            .map(|(&k, g)| (1.0 + power * k as f64 / steps as f64 * g).log2())
                            .sum();
                        best = best.max(r);
                    }
                }
            }
            Ok((rate - best, precoder_ok && best <= rate + 1e-9))
        })
        .collect();
    if let Some(Err(e)) = results.iter().find(|r| r.is_err()) {
        return outcome(false, format!("error: {e}"));
    }
    let worst = results.iter().map(|r| r.as_ref().unwrap().0.abs()).fold(0.0, f64::max);
    let consistent = results.iter().all(|r| r.as_ref().unwrap().1);
    outcome(
        worst <= 0.01 && consistent,
        format!("50 random 4x8 channels, max |waterfilling - grid search| {worst:.2e} bps/Hz (grid step 1% of P)"),
    )
}

fn log2_det_i_plus(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let a: DMatrix<Complex64> = DMatrix::identity(n, n) + m;
    a.determinant().re.log2()
}

fn criterion_8() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_fdisac");
    let root = std::env::temp_dir().join(format!("fdisac-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let mut s = Scenario::default();
    s.seed = 8;
    let config = root.join("scenario.toml");
    std::fs::write(&config, s.to_toml_string().unwrap()).unwrap();
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let status = Command::new(exe)
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output();
        match status {
            Ok(o) if o.status.success() => dirs.push(out),
            Ok(o) => return outcome(false, format!("simulate failed: {}", String::from_utf8_lossy(&o.stderr))),
            Err(e) => return outcome(false, format!("cannot run simulate: {e}")),
        }
    }
    let listing = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.json")
            .collect();
        v.sort();
        v
    };
    let (la, lb) = (listing(&dirs[0]), listing(&dirs[1]));
    let identical = la == lb
        && la
            .iter()
            .all(|f| std::fs::read(dirs[0].join(f)).unwrap() == std::fs::read(dirs[1].join(f)).unwrap());
    let manifest = |d: &Path| -> serde_json::Value {
        serde_json::from_slice::<serde_json::Value>(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap()["files"].clone()
    };
    let manifests_agree = manifest(&dirs[0]) == manifest(&dirs[1]);
    std::fs::remove_dir_all(&root).ok();
    outcome(
        identical && manifests_agree && la.len() >= 7,
        format!(
            "{} data files from two simulate runs {}, manifest hashes {}",
            la.len(),
            if identical { "byte-identical" } else { "differ" },
            if manifests_agree { "agree" } else { "differ" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("link budget", criterion_1),
        ("radar bin oracle", criterion_2),
        ("estimation accuracy", criterion_3),
        ("canceller complexity", criterion_4),
        ("echo preservation", criterion_5),
        ("optimizer", criterion_6),
        ("waterfilling oracle", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.pass);
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
