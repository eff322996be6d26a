//! Hybrid analog/digital beamforming for the partially-connected node.
//! Analog beams come from a DFT codebook; the digital precoder is
//! waterfilling over the effective downlink channel.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::array_channel::{steering_vector, ArrayConfig, DftCodebook};
use crate::error::{Error, Result};
use crate::linalg::{log2_det_identity_plus, right_singular, CMatrix, CVector, ZERO};
use crate::units::lin_to_db;

/// Analog TX/RX matrices with the directions and codewords they realize.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBeams {
    pub v_rf: CMatrix,
    pub w_rf: CMatrix,
    pub tx_angles_deg: Vec<f64>,
    pub rx_angles_deg: Vec<f64>,
    pub tx_codewords: Vec<usize>,
    pub rx_codewords: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer {
    pub v_rf: CMatrix,
    pub v_bb: CMatrix,
    pub w_rf: CMatrix,
    /// Digital RX combiner; the radar path uses the RF-chain samples directly.
    pub w_bb: Option<CMatrix>,
}

impl HybridBeamformer {
    /// trace(V_RF V_BB V_BB^H V_RF^H)
    pub fn transmit_power(&self) -> f64 {
        crate::linalg::frobenius_sq(&(&self.v_rf * &self.v_bb))
    }

    pub fn n_streams(&self) -> usize {
        self.v_bb.ncols()
    }
}

/// Block-diagonal RF matrix: chain `i` drives antennas
/// `i·sub .. (i+1)·sub` with weights `beams[i]`.
pub fn block_rf_matrix(beams: &[CVector], subarray_size: usize) -> Result<CMatrix> {
    let n_rf = beams.len();
    let mut m = CMatrix::from_element(n_rf * subarray_size, n_rf, ZERO);
    for (i, b) in beams.iter().enumerate() {
        if b.len() != subarray_size {
            return Err(Error::dims(format!("beam {i} has {} weights, subarray has {subarray_size}", b.len())));
        }
        for (k, w) in b.iter().enumerate() {
            m[(i * subarray_size + k, i)] = *w;
        }
    }
    Ok(m)
}

/// Verifies the partially-connected structure: every column has exactly
/// `subarray_size` unit-modulus entries on its own block and zeros elsewhere.
pub fn check_rf_structure(rf: &CMatrix, n_rf: usize, subarray_size: usize) -> Result<()> {
    if rf.nrows() != n_rf * subarray_size || rf.ncols() != n_rf {
        return Err(Error::dims(format!(
            "RF matrix is {}x{}, expected {}x{}",
            rf.nrows(),
            rf.ncols(),
            n_rf * subarray_size,
            n_rf
        )));
    }
    for c in 0..n_rf {
        for r in 0..rf.nrows() {
            let z = rf[(r, c)];
            let on_block = r / subarray_size == c;
            let ok = if on_block { (z.norm() - 1.0).abs() < 1e-9 } else { z == ZERO };
            if !ok {
                return Err(Error::domain(format!(
                    "RF matrix entry ({r},{c}) = {z} breaks the partially-connected unit-modulus structure"
                )));
            }
        }
    }
    Ok(())
}

/// Maps a direction list onto `n_chains` chains. Fewer directions than
/// chains are repeated cyclically; more are clustered by k-means on their
/// sines. An empty list gives broadside.
pub fn assign_directions(dirs_deg: &[f64], n_chains: usize) -> Vec<f64> {
    let mut unique: Vec<f64> = Vec::new();
    for &d in dirs_deg {
        if !unique.iter().any(|u| (u - d).abs() < 1e-9) {
            unique.push(d);
        }
    }
    if unique.is_empty() {
        return vec![0.0; n_chains];
    }
    if unique.len() <= n_chains {
        return (0..n_chains).map(|i| unique[i % unique.len()]).collect();
    }
    let sines: Vec<f64> = unique.iter().map(|a| a.to_radians().sin()).collect();
    kmeans_1d(&sines, n_chains)
        .into_iter()
        .map(|s| s.clamp(-1.0, 1.0).asin().to_degrees())
        .collect()
}

/// Lloyd iterations on scalars, seeded at evenly spaced order statistics.
fn kmeans_1d(values: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers: Vec<f64> = (0..k).map(|j| sorted[(2 * j + 1) * n / (2 * k)]).collect();
    for _ in 0..100 {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for &v in &sorted {
            let j = nearest(&centers, v);
            sum[j] += v;
            count[j] += 1;
        }
        let mut moved = false;
        for j in 0..k {
            if count[j] > 0 {
                let c = sum[j] / count[j] as f64;
                moved |= (c - centers[j]).abs() > 1e-15;
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }
    centers
}

fn nearest(centers: &[f64], v: f64) -> usize {
    centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map(|(j, _)| j)
        .unwrap_or(0)
}

/// TX chains split across comm ∪ target directions (comm first, so spare
/// chains reinforce the user); RX chains point only at targets.
pub fn select_analog_beams(
    codebook: &DftCodebook,
    comm_dirs_deg: &[f64],
    target_dirs_deg: &[f64],
    array: &ArrayConfig,
) -> Result<AnalogBeams> {
    if codebook.n_elements != array.subarray_size {
        return Err(Error::dims(format!(
            "codebook has {} elements, subarray has {}",
            codebook.n_elements, array.subarray_size
        )));
    }
    let tx_dirs: Vec<f64> = comm_dirs_deg.iter().chain(target_dirs_deg).copied().collect();
    let tx_angles = assign_directions(&tx_dirs, array.n_tx_rf);
    let rx_angles = assign_directions(target_dirs_deg, array.n_rx_rf);
    let tx_codewords = tx_angles.iter().map(|&a| codebook.best_beam(a)).collect::<Result<Vec<_>>>()?;
    let rx_codewords = rx_angles.iter().map(|&a| codebook.best_beam(a)).collect::<Result<Vec<_>>>()?;
    let pick = |idx: &[usize]| idx.iter().map(|&k| codebook.beams[k].clone()).collect::<Vec<_>>();
    Ok(AnalogBeams {
        v_rf: block_rf_matrix(&pick(&tx_codewords), array.subarray_size)?,
        w_rf: block_rf_matrix(&pick(&rx_codewords), array.subarray_size)?,
        tx_angles_deg: tx_angles,
        rx_angles_deg: rx_angles,
        tx_codewords,
        rx_codewords,
    })
}

/// `10·log10 Σ_chains |column^H a(θ)|²` for each angle, with `a` the full
/// array steering vector (per-chain magnitudes equal the subarray response).
pub fn beam_gain_pattern(rf: &CMatrix, spacing: f64, angles_deg: &[f64]) -> Result<Vec<f64>> {
    angles_deg
        .iter()
        .map(|&a| {
            let s = steering_vector(a, rf.nrows(), spacing)?;
            let g: f64 = (rf.adjoint() * s).iter().map(|z| z.norm_sqr()).sum();
            Ok(lin_to_db(g))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct PatternRow {
    angle_deg: f64,
    gain_db: f64,
}

pub fn write_pattern_csv(path: &Path, angles_deg: &[f64], gains_db: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (&angle_deg, &gain_db) in angles_deg.iter().zip(gains_db) {
        w.serialize(PatternRow { angle_deg, gain_db })?;
    }
    w.flush()?;
    Ok(())
}

/// Waterfilling over parallel channels with power gains `gains` (already
/// divided by the noise power). Returns the per-channel powers summing to
/// `power`; channels with zero gain get nothing.
pub fn waterfill(gains: &[f64], power: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut out = vec![0.0; gains.len()];
    if order.is_empty() || power <= 0.0 {
        return out;
    }
    // Largest active set whose water level clears every member's floor.
    let mut level = 0.0;
    let mut active = 0;
    let mut inv_sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let mu = (power + inv_sum) / (k + 1) as f64;
        if mu > 1.0 / gains[i] {
            level = mu;
            active = k + 1;
        } else {
            break;
        }
    }
    for &i in &order[..active] {
        out[i] = level - 1.0 / gains[i];
    }
    out
}

/// Capacity-achieving digital precoder for `h_eff` (N_ue × N_T^RF) with
/// `n_streams` columns and ‖V_BB‖_F² = `power`.
pub fn waterfilling_precoder(h_eff: &CMatrix, n_streams: usize, power: f64, noise_power: f64) -> Result<(CMatrix, f64)> {
    if !(power > 0.0) || !(noise_power > 0.0) {
        return Err(Error::domain("waterfilling needs positive power and noise"));
    }
    let n_rf = h_eff.ncols();
    let (singular, vectors) = right_singular(h_eff);
    let rank = h_eff.nrows().min(n_rf);
    let gains: Vec<f64> = (0..rank.min(n_streams))
        .map(|i| singular[i].powi(2) / noise_power)
        .collect();
    let powers = waterfill(&gains, power);
    let mut v_bb = CMatrix::from_element(n_rf, n_streams, ZERO);
    let mut rate = 0.0;
    for (i, &p) in powers.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        rate += (1.0 + p * gains[i]).log2();
        let col = vectors.column(i) * Complex64::new(p.sqrt(), 0.0);
        v_bb.set_column(i, &col);
    }
    Ok((v_bb, rate))
}

/// `log2 det(I + H_eff Q H_eff^H / σ²)` with `H_eff = h_dl V_RF` and
/// `Q = V_BB V_BB^H` (optimal combining at the user).
pub fn achievable_rate(h_dl: &CMatrix, bf: &HybridBeamformer, noise_power: f64) -> Result<f64> {
    if h_dl.ncols() != bf.v_rf.nrows() || bf.v_rf.ncols() != bf.v_bb.nrows() {
        return Err(Error::dims("downlink channel / beamformer dimensions"));
    }
    let g = h_dl * &bf.v_rf * &bf.v_bb;
    Ok(rate_of_effective(&g, noise_power))
}

/// `log2 det(I + G G^H / σ²)` for the end-to-end stream channel `G`.
pub fn rate_of_effective(g: &CMatrix, noise_power: f64) -> f64 {
    let gram = (g * g.adjoint()).unscale(noise_power);
    log2_det_identity_plus(&gram).max(0.0)
}
