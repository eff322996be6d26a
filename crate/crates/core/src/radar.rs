//! Monostatic sensing from OFDM echoes. Codebook-sweep DoA spectra and
//! range-Doppler maps feed the target extractor; the per-target sensing
//! SINR used by the optimizer lives here as well.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array_channel::{echo_power_gain, ArrayConfig, DftCodebook, EchoGainModel, OfdmParams, Target};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, ZERO};
use crate::units::{lin_to_db, SPEED_OF_LIGHT};
use crate::waveform::{reciprocal_filter, ResourceGrid};

/// Hann window `0.5 − 0.5·cos(2π(i + ½)/N)`, symmetric about the centre.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Vertex offset of the parabola through (−1, a), (0, b), (1, c), clamped
/// to half a bin.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den >= 0.0 || !den.is_finite() {
        return 0.0;
    }
    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoaConfig {
    /// Peaks must exceed the noise floor by this much.
    pub threshold_db: f64,
    /// Per-beam noise energy; the spectrum median is used when absent.
    pub noise_floor: Option<f64>,
    /// Peaks more than this far below the strongest one are dropped.
    pub guard_db: f64,
    /// A peak must exceed the predicted sidelobe energy of the stronger
    /// peaks by this much.
    pub sidelobe_margin_db: f64,
}

impl Default for DoaConfig {
    fn default() -> Self {
        Self {
            threshold_db: 10.0,
            noise_floor: None,
            guard_db: 20.0,
            sidelobe_margin_db: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoaPeak {
    pub angle_deg: f64,
    pub beam: usize,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaSpectrum {
    pub spectrum_db: Vec<f64>,
    pub peaks: Vec<DoaPeak>,
}

/// |Σ_i exp(j2π·spacing·i·Δu)|² for an `n`-element array.
fn array_factor(n: usize, spacing: f64, du: f64) -> f64 {
    (0..n)
        .map(|i| cis(2.0 * PI * spacing * i as f64 * du))
        .sum::<Complex64>()
        .norm_sqr()
}

/// Peaks of a per-beam sweep energy profile, refined by 3-point quadratic
/// interpolation of the dB values in sine space. The sine grid is treated as
/// circular (spatial frequency wraps for half-wavelength spacing). Local
/// maxima explained by the sidelobes of stronger peaks are discarded.
pub fn doa_spectrum(energies: &[f64], codebook: &DftCodebook, cfg: &DoaConfig) -> Result<DoaSpectrum> {
    let sines = &codebook.sines;
    let n = energies.len();
    if n != sines.len() {
        return Err(Error::dims(format!("{n} sweep energies for {} beams", sines.len())));
    }
    let spectrum_db: Vec<f64> = energies.iter().map(|&e| lin_to_db(e)).collect();
    if n < 3 {
        return Ok(DoaSpectrum { spectrum_db, peaks: Vec::new() });
    }
    let floor = lin_to_db(cfg.noise_floor.unwrap_or_else(|| median(&mut energies.to_vec())));
    let strongest = spectrum_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = sines[1] - sines[0];

    let mut cands: Vec<(usize, f64)> = Vec::new();
    for k in 0..n {
        let (a, b, c) = (spectrum_db[(k + n - 1) % n], spectrum_db[k], spectrum_db[(k + 1) % n]);
        if !(b > a && b >= c) || b < floor + cfg.threshold_db || b < strongest - cfg.guard_db {
            continue;
        }
        cands.push((k, sines[k] + parabolic_offset(a, b, c) * step));
    }
    cands.sort_by(|x, y| energies[y.0].total_cmp(&energies[x.0]));

    let af = |du: f64| array_factor(codebook.n_elements, codebook.spacing, du);
    let margin = 10f64.powf(cfg.sidelobe_margin_db / 10.0);
    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for &(k, u) in &cands {
        let predicted: f64 = accepted
            .iter()
            .map(|&(ka, ua)| energies[ka] * af(sines[k] - ua) / af(sines[ka] - ua).max(f64::MIN_POSITIVE))
            .sum();
        if energies[k] > predicted * margin {
            accepted.push((k, u));
        }
    }
    accepted.sort_by(|x, y| x.1.total_cmp(&y.1));

    let peaks = accepted
        .into_iter()
        .map(|(k, mut u)| {
            if u < -1.0 {
                u += 2.0;
            } else if u >= 1.0 {
                u -= 2.0;
            }
            DoaPeak {
                angle_deg: u.clamp(-1.0, 1.0).asin().to_degrees(),
                beam: k,
                power_db: spectrum_db[k],
            }
        })
        .collect();
    Ok(DoaSpectrum { spectrum_db, peaks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeDopplerOptions {
    pub window: bool,
    /// Reference-power floor of the reciprocal filter, relative to the mean;
    /// 0 selects exact element division.
    pub reference_floor: f64,
    /// Keep the windowed, modulation-removed grid for sub-bin refinement.
    pub keep_grid: bool,
}

impl Default for RangeDopplerOptions {
    fn default() -> Self {
        Self {
            window: true,
            reference_floor: 0.01,
            keep_grid: true,
        }
    }
}

/// Power over (range bin, Doppler bin). Doppler bins are fft-shifted: index
/// `v` holds signed bin `v − n_doppler/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub n_range: usize,
    pub n_doppler: usize,
    pub range_bin_m: f64,
    pub velocity_bin_mps: f64,
    power: Vec<f64>,
    grid: Option<Vec<Complex64>>,
}

impl RangeDopplerMap {
    pub fn zeros(n_range: usize, n_doppler: usize, range_bin_m: f64, velocity_bin_mps: f64) -> Self {
        Self {
            n_range,
            n_doppler,
            range_bin_m,
            velocity_bin_mps,
            power: vec![0.0; n_range * n_doppler],
            grid: None,
        }
    }

    #[inline]
    pub fn power(&self, r: usize, v: usize) -> f64 {
        self.power[r * self.n_doppler + v]
    }

    pub fn power_db(&self, r: usize, v: usize) -> f64 {
        lin_to_db(self.power(r, v))
    }

    pub fn total_energy(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn signed_doppler(&self, v: f64) -> f64 {
        v - (self.n_doppler / 2) as f64
    }

    /// Incoherent sum with another map of the same shape.
    pub fn accumulate(&mut self, other: &RangeDopplerMap) -> Result<()> {
        if (self.n_range, self.n_doppler) != (other.n_range, other.n_doppler) {
            return Err(Error::dims("range-Doppler maps differ in shape"));
        }
        self.power.iter_mut().zip(&other.power).for_each(|(a, b)| *a += b);
        self.grid = None;
        Ok(())
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (i / self.n_doppler, i % self.n_doppler)
    }

    /// Periodogram of the retained grid at fractional (range, signed
    /// Doppler) bins; `None` when the grid was not kept.
    pub fn zoom_power(&self, range_bin: f64, doppler_bin: f64) -> Option<f64> {
        let g = self.grid.as_ref()?;
        let col = self.doppler_projection(g, doppler_bin);
        Some(range_dtft(&col, range_bin).norm_sqr())
    }

    fn doppler_projection(&self, g: &[Complex64], doppler_bin: f64) -> Vec<Complex64> {
        let (n_sc, n_sym) = (self.n_range, self.n_doppler);
        let mut col = vec![ZERO; n_sc];
        for n in 0..n_sym {
            let w = cis(-2.0 * PI * (n as f64 * doppler_bin / n_sym as f64).fract());
            for (c, z) in col.iter_mut().zip(&g[n * n_sc..(n + 1) * n_sc]) {
                *c += z * w;
            }
        }
        col
    }

    fn range_projection(&self, g: &[Complex64], range_bin: f64) -> Vec<Complex64> {
        let (n_sc, n_sym) = (self.n_range, self.n_doppler);
        let phasors: Vec<Complex64> = (0..n_sc)
            .map(|m| cis(2.0 * PI * (m as f64 * range_bin / n_sc as f64).fract()))
            .collect();
        (0..n_sym)
            .map(|n| g[n * n_sc..(n + 1) * n_sc].iter().zip(&phasors).map(|(z, p)| z * p).sum())
            .collect()
    }

    fn polish(&self, range_bin: f64, doppler_bin: f64) -> (f64, f64) {
        let Some(g) = self.grid.as_ref() else {
            return (range_bin, doppler_bin);
        };
        let (mut r, mut v) = (range_bin, doppler_bin);
        for _ in 0..3 {
            let col = self.doppler_projection(g, v);
            r = golden_max(|x| range_dtft(&col, x).norm_sqr(), r - 0.6, r + 0.6);
            let row = self.range_projection(g, r);
            v = golden_max(|x| doppler_dtft(&row, x).norm_sqr(), v - 0.6, v + 0.6);
        }
        (r, v)
    }
}

fn range_dtft(col: &[Complex64], range_bin: f64) -> Complex64 {
    let n = col.len() as f64;
    col.iter()
        .enumerate()
        .map(|(m, z)| z * cis(2.0 * PI * (m as f64 * range_bin / n).fract()))
        .sum()
}

fn doppler_dtft(row: &[Complex64], doppler_bin: f64) -> Complex64 {
    let n = row.len() as f64;
    row.iter()
        .enumerate()
        .map(|(k, z)| z * cis(-2.0 * PI * (k as f64 * doppler_bin / n).fract()))
        .sum()
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Reciprocal filter, optional 2-D Hann window, inverse DFT across
/// subcarriers (range) and DFT across symbols (Doppler), magnitude squared.
/// Both grids must be single-stream; scaling is unitary so, without the
/// window, map energy equals the energy of the modulation-removed grid.
pub fn range_doppler_map(
    cleaned: &ResourceGrid,
    reference: &ResourceGrid,
    ofdm: &OfdmParams,
    opts: &RangeDopplerOptions,
) -> Result<RangeDopplerMap> {
    if cleaned.n_streams() != 1 || reference.n_streams() != 1 {
        return Err(Error::dims("range-Doppler processing takes single-stream grids"));
    }
    let z = reciprocal_filter(cleaned, reference, opts.reference_floor)?;
    Ok(range_doppler_from_ratio(z.stream(0), cleaned.n_subcarriers(), cleaned.n_symbols(), ofdm, opts))
}

/// Range-Doppler map of an already modulation-removed grid, laid out
/// symbol-major (`n_symbols` blocks of `n_subcarriers`).
pub fn range_doppler_from_ratio(
    ratio: &[Complex64],
    n_sc: usize,
    n_sym: usize,
    ofdm: &OfdmParams,
    opts: &RangeDopplerOptions,
) -> RangeDopplerMap {
    let mut g = ratio.to_vec();
    if opts.window {
        let (wm, wn) = (hann(n_sc), hann(n_sym));
        for n in 0..n_sym {
            for m in 0..n_sc {
                g[n * n_sc + m] *= wm[m] * wn[n];
            }
        }
    }
    let kept = opts.keep_grid.then(|| g.clone());

    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n_sc).process(&mut g);
    // Transpose to range-major for the Doppler transform.
    let mut t = vec![ZERO; n_sc * n_sym];
    for n in 0..n_sym {
        for r in 0..n_sc {
            t[r * n_sym + n] = g[n * n_sc + r];
        }
    }
    planner.plan_fft_forward(n_sym).process(&mut t);
    let scale = 1.0 / (n_sc * n_sym) as f64;
    let half = n_sym / 2;
    let mut power = vec![0.0; n_sc * n_sym];
    for r in 0..n_sc {
        for k in 0..n_sym {
            power[r * n_sym + (k + half) % n_sym] = t[r * n_sym + k].norm_sqr() * scale;
        }
    }
    RangeDopplerMap {
        n_range: n_sc,
        n_doppler: n_sym,
        range_bin_m: ofdm.range_resolution_m(),
        velocity_bin_mps: ofdm.velocity_resolution_mps(n_sym),
        power,
        grid: kept,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Offset above the map median.
    pub threshold_db: f64,
    /// Non-maximum suppression half-width in bins.
    pub nms_radius: usize,
    /// Slack above the Hann sidelobe envelope of a stronger peak.
    pub sidelobe_margin_db: f64,
    /// Range bins closer than this are ignored (direct-SI / canceller zone).
    pub min_range_m: f64,
    /// Defaults to half the unambiguous range; the upper half of the range
    /// axis holds wrapped leakage from near-zero delays.
    pub max_range_m: Option<f64>,
    pub refine: bool,
    /// Cells further than this below the map maximum are never detected;
    /// keeps noiseless maps from reporting round-off as targets.
    pub dynamic_range_db: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold_db: 16.0,
            nms_radius: 3,
            sidelobe_margin_db: 3.0,
            min_range_m: 4.0,
            max_range_m: None,
            refine: true,
            dynamic_range_db: 150.0,
        }
    }
}

/// Upper bound (dB, relative to the peak) on Hann sidelobes `delta` bins
/// away. Inside the main lobe it is −∞: neighbours there are left to
/// non-maximum suppression.
pub fn hann_sidelobe_envelope_db(delta: f64) -> f64 {
    let d = (delta.abs() - 0.5).max(0.0);
    if d <= 2.5 {
        f64::NEG_INFINITY
    } else {
        -31.5 - 60.0 * (d / 2.5).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPeak {
    pub range_bin: usize,
    /// Fft-shifted Doppler index.
    pub doppler_index: usize,
    pub power_db: f64,
    pub range_bin_f: f64,
    /// Signed fractional Doppler bin.
    pub doppler_bin_f: f64,
}

impl MapPeak {
    pub fn range_m(&self, map: &RangeDopplerMap) -> f64 {
        self.range_bin_f * map.range_bin_m
    }

    pub fn velocity_mps(&self, map: &RangeDopplerMap) -> f64 {
        self.doppler_bin_f * map.velocity_bin_mps
    }
}

/// Local maxima above `median + threshold`, cleared of Hann sidelobes of
/// stronger peaks, refined to sub-bin precision.
pub fn detect_peaks(map: &RangeDopplerMap, cfg: &DetectionConfig) -> Vec<MapPeak> {
    let (nr, nd) = (map.n_range, map.n_doppler);
    let floor = median(&mut map.power.clone());
    let peak = map.power.iter().copied().fold(0.0, f64::max);
    let threshold = (floor * 10f64.powf(cfg.threshold_db / 10.0)).max(peak * 10f64.powf(-cfg.dynamic_range_db / 10.0));
    let r_min = (cfg.min_range_m / map.range_bin_m).ceil() as usize;
    let r_max = cfg
        .max_range_m
        .map_or(nr / 2, |m| ((m / map.range_bin_m).ceil() as usize + 2).min(nr));
    let rad = cfg.nms_radius as isize;

    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for r in r_min..r_max {
        for v in 0..nd {
            let p = map.power(r, v);
            if !(p > threshold) {
                continue;
            }
            let mut is_max = true;
            'nms: for dr in -rad..=rad {
                let rr = r as isize + dr;
                if rr < 0 || rr >= nr as isize {
                    continue;
                }
                for dv in -rad..=rad {
                    if dr == 0 && dv == 0 {
                        continue;
                    }
                    let vv = (v as isize + dv).rem_euclid(nd as isize) as usize;
                    let q = map.power(rr as usize, vv);
                    // Ties resolve toward the lower index.
                    if q > p || (q == p && (dr < 0 || (dr == 0 && dv < 0))) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                cands.push((r, v, p));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2));

    let mut accepted: Vec<(usize, usize, f64)> = Vec::new();
    for &(r, v, p) in &cands {
        let masked = accepted.iter().any(|&(ra, va, pa)| {
            let dr = r as f64 - ra as f64;
            let dv_raw = (v as isize - va as isize).rem_euclid(nd as isize);
            let dv = dv_raw.min(nd as isize - dv_raw) as f64;
            let env = hann_sidelobe_envelope_db(dr) + hann_sidelobe_envelope_db(dv);
            lin_to_db(p) <= lin_to_db(pa) + env + cfg.sidelobe_margin_db
        });
        if !masked {
            accepted.push((r, v, p));
        }
    }

    accepted
        .into_iter()
        .map(|(r, v, p)| {
            let mut rf = r as f64;
            let mut vf = map.signed_doppler(v as f64);
            if cfg.refine {
                let db = |rr: usize, vv: usize| lin_to_db(map.power(rr, vv));
                if r > 0 && r + 1 < nr {
                    rf += parabolic_offset(db(r - 1, v), db(r, v), db(r + 1, v));
                }
                if nd >= 3 {
                    vf += parabolic_offset(db(r, (v + nd - 1) % nd), db(r, v), db(r, (v + 1) % nd));
                }
                let (pr, pv) = map.polish(rf, vf);
                if (pr - r as f64).abs() <= 1.0 && (pv - map.signed_doppler(v as f64)).abs() <= 1.0 {
                    rf = pr;
                    vf = pv;
                }
            }
            MapPeak {
                range_bin: r,
                doppler_index: v,
                power_db: lin_to_db(p),
                range_bin_f: rf,
                doppler_bin_f: vf,
            }
        })
        .collect()
}

/// Coarse (angle, range) detection from the codebook sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPeak {
    pub angle_deg: f64,
    pub range_m: f64,
    pub power_db: f64,
}

/// Detections on every beam map of a sweep cube. Each detected cell is
/// resolved into directions by its DoA spectrum across beams; duplicates
/// within one range bin and one degree keep the strongest.
pub fn detect_sweep_peaks(
    cube: &[RangeDopplerMap],
    codebook: &DftCodebook,
    detection: &DetectionConfig,
    doa: &DoaConfig,
) -> Result<Vec<SweepPeak>> {
    let Some(first) = cube.first() else {
        return Ok(Vec::new());
    };
    if cube.len() != codebook.len() {
        return Err(Error::dims("one sweep map per codebook beam"));
    }
    let cfg = DetectionConfig { refine: true, ..*detection };
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for map in cube {
        for peak in detect_peaks(map, &cfg) {
            let range_m = peak.range_m(map);
            match cells.iter_mut().find(|c| c.0 == peak.range_bin && c.1 == peak.doppler_index) {
                Some(_) => {}
                None => cells.push((peak.range_bin, peak.doppler_index, range_m)),
            }
        }
    }
    let mut out: Vec<SweepPeak> = Vec::new();
    let angle_gate = 1.0;
    for (r, v, range_m) in cells {
        let energies: Vec<f64> = cube.iter().map(|m| m.power(r, v)).collect();
        for d in doa_spectrum(&energies, codebook, doa)?.peaks {
            let dup = out.iter_mut().find(|p| {
                (p.range_m - range_m).abs() <= first.range_bin_m && (p.angle_deg - d.angle_deg).abs() <= angle_gate
            });
            match dup {
                Some(p) if p.power_db >= d.power_db => {}
                Some(p) => {
                    *p = SweepPeak { angle_deg: d.angle_deg, range_m, power_db: d.power_db };
                }
                None => out.push(SweepPeak { angle_deg: d.angle_deg, range_m, power_db: d.power_db }),
            }
        }
    }
    out.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub angle_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub peak_power_db: f64,
    /// RX chain whose map produced the detection.
    pub rx_chain: usize,
}

/// Angle for a range-Doppler detection on a chain steered to
/// `chain_angle_deg`: the sweep direction minimizing a joint distance of
/// range (in units of `range_gate_m / 2`) and direction sine (in units of
/// `beam_width_sine`), among peaks within the range gate. Falls back to the
/// chain direction when no sweep peak is close in range.
pub fn associate_angle(
    range_m: f64,
    chain_angle_deg: f64,
    sweep: &[SweepPeak],
    range_gate_m: f64,
    beam_width_sine: f64,
) -> f64 {
    let chain_sine = chain_angle_deg.to_radians().sin();
    let cost = |p: &SweepPeak| {
        let dr = 2.0 * (p.range_m - range_m) / range_gate_m;
        let ds = (p.angle_deg.to_radians().sin() - chain_sine) / beam_width_sine;
        dr * dr + ds * ds
    };
    sweep
        .iter()
        .filter(|p| (p.range_m - range_m).abs() <= range_gate_m)
        .min_by(|a, b| cost(a).total_cmp(&cost(b)))
        .map_or(chain_angle_deg, |p| p.angle_deg)
}

/// Detections of one RX chain's map converted to physical units, with
/// angles taken from the sweep peaks. `power_offset_db` is added to every
/// peak power (for example to undo reference normalization).
pub fn extract_targets(
    map: &RangeDopplerMap,
    rx_chain: usize,
    chain_angle_deg: f64,
    doa_peaks: &[SweepPeak],
    beam_width_sine: f64,
    power_offset_db: f64,
    cfg: &DetectionConfig,
) -> Vec<TargetEstimate> {
    detect_peaks(map, cfg)
        .into_iter()
        .map(|p| {
            let range_m = p.range_m(map);
            TargetEstimate {
                angle_deg: associate_angle(range_m, chain_angle_deg, doa_peaks, 2.0 * map.range_bin_m, beam_width_sine),
                range_m,
                velocity_mps: p.velocity_mps(map),
                peak_power_db: p.power_db + power_offset_db,
                rx_chain,
            }
        })
        .collect()
}

/// Merges per-chain detections of the same target (within `range_gate_m`
/// and `velocity_gate_mps`), keeping the strongest.
pub fn merge_estimates(mut all: Vec<TargetEstimate>, range_gate_m: f64, velocity_gate_mps: f64) -> Vec<TargetEstimate> {
    all.sort_by(|a, b| b.peak_power_db.total_cmp(&a.peak_power_db));
    let mut kept: Vec<TargetEstimate> = Vec::new();
    for e in all {
        let dup = kept.iter().any(|k| {
            (k.range_m - e.range_m).abs() <= range_gate_m && (k.velocity_mps - e.velocity_mps).abs() <= velocity_gate_mps
        });
        if !dup {
            kept.push(e);
        }
    }
    kept.sort_by(|a, b| a.range_m.total_cmp(&b.range_m));
    kept
}

/// Inputs of the per-target sensing SINR.
#[derive(Debug, Clone)]
pub struct SensingScene<'a> {
    pub targets: &'a [Target],
    pub array: &'a ArrayConfig,
    pub ofdm: &'a OfdmParams,
    pub w_rf: &'a CMatrix,
    pub v_rf: &'a CMatrix,
    pub v_bb: &'a CMatrix,
    /// Covariance of the post-cancellation direct-SI residual at the RX
    /// chains (N_R^RF × N_R^RF).
    pub residual_cov: &'a CMatrix,
    /// Thermal noise per antenna per resource element, W.
    pub noise_power: f64,
    /// Symbols integrated for Doppler, which sets the velocity cell.
    pub n_cpi: usize,
    pub echo_model: EchoGainModel,
}

/// Per-target post-combining SINR (dB) with maximum-ratio combining over
/// the RX chains. Other targets count as interference only when they share
/// the same range-Doppler resolution cell.
pub fn sensing_sinr(scene: &SensingScene<'_>) -> Result<Vec<f64>> {
    let lambda = scene.ofdm.wavelength_m();
    let n_rx = scene.w_rf.ncols();
    if scene.residual_cov.shape() != (n_rx, n_rx) {
        return Err(Error::dims("residual covariance must match the RX chain count"));
    }
    let mut rx_resp: Vec<CVector> = Vec::with_capacity(scene.targets.len());
    let mut tx_power: Vec<f64> = Vec::with_capacity(scene.targets.len());
    let mut alpha = Vec::with_capacity(scene.targets.len());
    for t in scene.targets {
        rx_resp.push(scene.w_rf.adjoint() * scene.array.rx_steering(t.angle_deg)?);
        let c = scene.array.tx_steering(t.angle_deg)?.adjoint() * scene.v_rf * scene.v_bb;
        tx_power.push(c.iter().map(|z| z.norm_sqr()).sum());
        alpha.push(echo_power_gain(t, lambda, scene.echo_model)?);
    }
    let gram = scene.w_rf.adjoint() * scene.w_rf;
    let dr = scene.ofdm.range_resolution_m();
    let dv = scene.ofdm.velocity_resolution_mps(scene.n_cpi);

    let mut out = Vec::with_capacity(scene.targets.len());
    for (k, t) in scene.targets.iter().enumerate() {
        let b = &rx_resp[k];
        let bn = b.norm();
        if bn == 0.0 {
            out.push(crate::units::DB_FLOOR);
            continue;
        }
        let u = b.unscale(bn);
        let signal = alpha[k] * bn * bn * tx_power[k];
        let noise = scene.noise_power * (u.adjoint() * &gram * &u)[(0, 0)].re;
        let residual = (u.adjoint() * scene.residual_cov * &u)[(0, 0)].re.max(0.0);
        let leakage: f64 = scene
            .targets
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != k && (o.range_m - t.range_m).abs() < dr && (o.velocity_mps - t.velocity_mps).abs() < dv)
            .map(|(j, _)| alpha[j] * crate::linalg::inner(&u, &rx_resp[j]).norm_sqr() * tx_power[j])
            .sum();
        let denom = noise + residual + leakage;
        out.push(if denom.is_finite() { lin_to_db(signal / denom) } else { crate::units::DB_FLOOR });
    }
    Ok(out)
}

/// Writes the map as a dB matrix (one row per range bin) plus two axis
/// files: `<stem>_range.csv` and `<stem>_velocity.csv`.
pub fn write_map_csv(map: &RangeDopplerMap, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
    let main = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&main)?;
    for r in 0..map.n_range {
        w.write_record((0..map.n_doppler).map(|v| format!("{:.6}", map.power_db(r, v))))?;
    }
    w.flush()?;
    let range = dir.join(format!("{stem}_range.csv"));
    let mut w = csv::Writer::from_path(&range)?;
    w.write_record(["bin", "range_m"])?;
    for r in 0..map.n_range {
        w.write_record([r.to_string(), format!("{:.6}", r as f64 * map.range_bin_m)])?;
    }
    w.flush()?;
    let vel = dir.join(format!("{stem}_velocity.csv"));
    let mut w = csv::Writer::from_path(&vel)?;
    w.write_record(["index", "velocity_mps"])?;
    for v in 0..map.n_doppler {
        w.write_record([v.to_string(), format!("{:.6}", map.signed_doppler(v as f64) * map.velocity_bin_mps)])?;
    }
    w.flush()?;
    Ok(vec![main, range, vel])
}

/// Range of a bin, for callers that only hold OFDM parameters.
pub fn range_of_bin(ofdm: &OfdmParams, bin: f64) -> f64 {
    bin * SPEED_OF_LIGHT / (2.0 * ofdm.n_subcarriers as f64 * ofdm.scs_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_channel::{dft_codebook, steering_vector, EchoGainModel, EchoPath};
    use crate::waveform::random_qam_grid_with;
    use crate::{linalg, rng};

    fn synth(targets: &[Target], ofdm: &OfdmParams, n_cpi: usize, seed: u64) -> (ResourceGrid, ResourceGrid) {
        let mut r = rng::stream(seed, rng::tag::DATA);
        let tx = random_qam_grid_with(ofdm.n_subcarriers, n_cpi, 1, 4, &mut r).unwrap();
        let mut rx = ResourceGrid::zeros(ofdm.n_subcarriers, n_cpi, 1);
        for t in targets {
            let p = EchoPath::new(t, ofdm, EchoGainModel::Power).unwrap();
            let f = p.subcarrier_factors(ofdm);
            let g = p.symbol_factors(ofdm, n_cpi);
            for n in 0..n_cpi {
                for m in 0..ofdm.n_subcarriers {
                    let v = rx.get(m, n, 0) + tx.get(m, n, 0) * f[m] * g[n] * p.amplitude;
                    rx.set(m, n, 0, v);
                }
            }
        }
        (rx, tx)
    }

    fn on_grid_target(ofdm: &OfdmParams, n_cpi: usize, r: f64, v: f64) -> Target {
        let range = r * ofdm.range_resolution_m();
        let vel = v * ofdm.velocity_resolution_mps(n_cpi);
        Target::automobile(0.0, range, vel)
    }

    #[test]
    fn bin_arithmetic() {
        let ofdm = OfdmParams::default();
        assert!((ofdm.range_resolution_m() - 1.5772).abs() < 1e-3);
        assert!((30.0 * ofdm.range_resolution_m() - 47.32).abs() < 0.06);
        let fd = 2.0 * 27.7 / ofdm.wavelength_m();
        assert!((fd - 5174.0).abs() < 2.0);
        assert_eq!((fd * 1024.0 * ofdm.symbol_duration_s).round(), 47.0);
    }

    #[test]
    fn static_target_on_bin_thirty() {
        let ofdm = OfdmParams::default();
        let n_cpi = 64;
        let t = on_grid_target(&ofdm, n_cpi, 30.0, 0.0);
        let (rx, tx) = synth(&[t], &ofdm, n_cpi, 1);
        let map = range_doppler_map(&rx, &tx, &ofdm, &RangeDopplerOptions::default()).unwrap();
        let (r, v) = map.argmax();
        assert_eq!((r, map.signed_doppler(v as f64)), (30, 0.0));
        let peaks = detect_peaks(&map, &DetectionConfig::default());
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].range_bin_f - 30.0).abs() < 1e-6);
        assert!(peaks[0].doppler_bin_f.abs() < 1e-6);
    }

    #[test]
    fn fastest_target_lands_on_expected_doppler_bin() {
        let ofdm = OfdmParams::default();
        let n_cpi = 1024;
        let t = Target::automobile(0.0, 20.0, 27.7);
        let (rx, tx) = synth(std::slice::from_ref(&t), &ofdm, n_cpi, 2);
        let map = range_doppler_map(&rx, &tx, &ofdm, &RangeDopplerOptions::default()).unwrap();
        let (_, v) = map.argmax();
        let want = (t.doppler_hz(ofdm.wavelength_m()) * n_cpi as f64 * ofdm.symbol_duration_s).round();
        assert_eq!(map.signed_doppler(v as f64), want);
    }

    #[test]
    fn parseval_without_window() {
        let ofdm = OfdmParams {
            n_subcarriers: 120,
            ..OfdmParams::default()
        };
        let (rx, tx) = synth(&[Target::automobile(0.0, 30.0, 5.0)], &ofdm, 32, 3);
        let opts = RangeDopplerOptions {
            window: false,
            reference_floor: 0.0,
            keep_grid: false,
        };
        let map = range_doppler_map(&rx, &tx, &ofdm, &opts).unwrap();
        let z = crate::waveform::element_division(&rx, &tx).unwrap();
        assert!((map.total_energy() / z.energy() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_only_map_has_no_detections() {
        let ofdm = OfdmParams::default();
        let mut r = rng::stream(4, rng::tag::NOISE_NODE);
        let rx = ResourceGrid::from_fn(792, 64, 1, |_, _, _| rng::complex_normal(&mut r));
        let mut r = rng::stream(4, rng::tag::DATA);
        let tx = random_qam_grid_with(792, 64, 1, 16, &mut r).unwrap();
        let map = range_doppler_map(&rx, &tx, &ofdm, &RangeDopplerOptions::default()).unwrap();
        assert!(detect_peaks(&map, &DetectionConfig::default()).is_empty());
    }

    #[test]
    fn two_targets_two_bins_apart() {
        let ofdm = OfdmParams::default();
        let n_cpi = 64;
        let a = on_grid_target(&ofdm, n_cpi, 20.0, 3.0);
        let b = on_grid_target(&ofdm, n_cpi, 22.0, 3.0);
        let (rx, tx) = synth(&[a, b], &ofdm, n_cpi, 5);
        let map = range_doppler_map(&rx, &tx, &ofdm, &RangeDopplerOptions::default()).unwrap();
        let cfg = DetectionConfig {
            nms_radius: 1,
            ..DetectionConfig::default()
        };
        let mut bins: Vec<usize> = detect_peaks(&map, &cfg).iter().map(|p| p.range_bin).collect();
        bins.sort();
        assert_eq!(bins, vec![20, 22]);
    }

    #[test]
    fn off_grid_target_at_twenty_db_snr() {
        let ofdm = OfdmParams::default();
        let n_cpi = 64;
        let t = Target::automobile(0.0, 33.3, 4.1);
        let (mut rx, tx) = synth(std::slice::from_ref(&t), &ofdm, n_cpi, 6);
        let signal = rx.mean_power();
        let sigma = (signal / 100.0).sqrt();
        let mut r = rng::stream(6, rng::tag::NOISE_NODE);
        let noise = ResourceGrid::from_fn(792, n_cpi, 1, |_, _, _| rng::complex_normal(&mut r) * sigma);
        rx = rx.add(&noise).unwrap();
        let map = range_doppler_map(&rx, &tx, &ofdm, &RangeDopplerOptions::default()).unwrap();
        let est = extract_targets(&map, 0, 0.0, &[], 0.125, 0.0, &DetectionConfig::default());
        assert_eq!(est.len(), 1);
        assert!((est[0].range_m - t.range_m).abs() <= 0.79);
        assert!((est[0].range_m - t.range_m).abs() / t.range_m < 0.01);
    }

    #[test]
    fn doa_on_codeword_and_between() {
        let cb = dft_codebook(16, 5, 0.5).unwrap();
        let energies = |angle: f64| -> Vec<f64> {
            let a = steering_vector(angle, 16, 0.5).unwrap();
            cb.beams.iter().map(|b| linalg::inner(b, &a).norm_sqr()).collect()
        };
        let cfg = DoaConfig::default();
        let exact = cb.angle_deg(20);
        let s = doa_spectrum(&energies(exact), &cb, &cfg).unwrap();
        assert_eq!(s.peaks.len(), 1);
        assert!((s.peaks[0].angle_deg - exact).abs() < 1e-9);

        let mid = ((cb.sines[20] + cb.sines[21]) / 2.0).asin().to_degrees();
        let s = doa_spectrum(&energies(mid), &cb, &cfg).unwrap();
        assert_eq!(s.peaks.len(), 1);
        assert!((s.peaks[0].angle_deg - mid).abs() < 1.0);

        for k in 0..200 {
            let angle = -60.0 + 0.6 * k as f64;
            let s = doa_spectrum(&energies(angle), &cb, &cfg).unwrap();
            assert!(!s.peaks.is_empty());
            let best = s.peaks.iter().max_by(|a, b| a.power_db.total_cmp(&b.power_db)).unwrap();
            assert!((best.angle_deg - angle).abs() < 1.0, "{angle}: {}", best.angle_deg);
        }
    }

    #[test]
    fn doa_six_separated_targets() {
        let cb = dft_codebook(16, 5, 0.5).unwrap();
        let angles = [-50.0, -30.0, -10.0, 10.0, 30.0, 50.0];
        let energies: Vec<f64> = cb
            .beams
            .iter()
            .map(|b| {
                angles
                    .iter()
                    .map(|&a| linalg::inner(b, &steering_vector(a, 16, 0.5).unwrap()).norm_sqr())
                    .sum()
            })
            .collect();
        let cfg = DoaConfig {
            noise_floor: Some(1.0),
            ..DoaConfig::default()
        };
        let s = doa_spectrum(&energies, &cb, &cfg).unwrap();
        assert_eq!(s.peaks.len(), 6, "{:?}", s.peaks);
        for (p, want) in s.peaks.iter().zip(angles) {
            assert!((p.angle_deg - want).abs() < 1.0);
        }
    }

    #[test]
    fn doa_noise_only_is_empty() {
        let cb = dft_codebook(16, 5, 0.5).unwrap();
        let mut r = rng::stream(9, 1);
        for _ in 0..50 {
            let e: Vec<f64> = (0..32).map(|_| rng::complex_normal(&mut r).norm_sqr()).collect();
            let s = doa_spectrum(&e, &cb, &DoaConfig { threshold_db: 13.0, ..DoaConfig::default() }).unwrap();
            assert!(s.peaks.is_empty());
        }
    }

    fn matched_scene_sinr(p: f64, sigma2: f64, t: &Target) -> f64 {
        let array = ArrayConfig::default();
        let ofdm = OfdmParams::default();
        let cb = dft_codebook(16, 5, 0.5).unwrap();
        let k = cb.best_beam(t.angle_deg).unwrap();
        let beams = vec![cb.beams[k].clone(); 8];
        let rf = crate::beamforming::block_rf_matrix(&beams, 16).unwrap();
        // Co-phase the subarrays so the whole array is matched.
        let a = array.tx_steering(t.angle_deg).unwrap();
        let c = a.adjoint() * &rf;
        let v_bb = CMatrix::from_fn(8, 1, |i, _| c[(0, i)].conj() / c[(0, i)].norm() * (p / 128.0).sqrt());
        let zero = CMatrix::zeros(8, 8);
        let scene = SensingScene {
            targets: std::slice::from_ref(t),
            array: &array,
            ofdm: &ofdm,
            w_rf: &rf,
            v_rf: &rf,
            v_bb: &v_bb,
            residual_cov: &zero,
            noise_power: sigma2,
            n_cpi: 1024,
            echo_model: EchoGainModel::Power,
        };
        sensing_sinr(&scene).unwrap()[0]
    }

    #[test]
    fn matched_single_target_closed_form() {
        let ofdm = OfdmParams::default();
        let t = Target::automobile(0.0, 40.0, 0.0);
        let alpha = crate::array_channel::target_amplitude(&t, ofdm.wavelength_m()).unwrap();
        let (p, sigma2) = (1.0, 1e-11);
        let want = 10.0 * (p * 128.0 * 128.0 * alpha / sigma2).log10();
        assert!((matched_scene_sinr(p, sigma2, &t) - want).abs() < 1e-9);
        assert_eq!(matched_scene_sinr(p, f64::INFINITY, &t), crate::units::DB_FLOOR);
    }

    #[test]
    fn envelope_bounds_hann_sidelobes() {
        let n = 256;
        let w = hann(n);
        let spectrum = |f: f64| -> f64 {
            w.iter()
                .enumerate()
                .map(|(i, &x)| cis(2.0 * PI * i as f64 * f / n as f64) * x)
                .sum::<Complex64>()
                .norm_sqr()
        };
        let peak = spectrum(0.0);
        for k in 13..240 {
            let d = 0.25 * k as f64;
            let side = lin_to_db(spectrum(d) / peak);
            assert!(side <= hann_sidelobe_envelope_db(d) + 0.5, "{d}: {side}");
        }
    }
}
