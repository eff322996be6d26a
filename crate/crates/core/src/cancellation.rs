//! Self-interference cancellation at node b: a reduced-complexity analog
//! tap canceller between TX and RX RF chains, followed by a least-squares
//! digital canceller on the RF-chain samples.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::linalg::{CMatrix, ZERO};
use crate::units::watts_to_dbm;
use crate::waveform::ResourceGrid;

/// One analog tap: a frequency-flat complex gain from a TX RF chain output
/// to an RX RF chain input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub tx_chain: usize,
    pub rx_chain: usize,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogCanceller {
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
    pub taps: Vec<Tap>,
    /// Attenuator ceiling on |gain|, if the hardware has one.
    pub max_gain: Option<f64>,
    /// Phase-shifter resolution, if quantized.
    pub phase_bits: Option<u32>,
}

impl AnalogCanceller {
    pub fn none(n_tx_rf: usize, n_rx_rf: usize) -> Self {
        Self {
            n_tx_rf,
            n_rx_rf,
            taps: Vec::new(),
            max_gain: None,
            phase_bits: None,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    /// The matrix `A` (N_R^RF × N_T^RF), zero where no tap is routed.
    pub fn effective_matrix(&self) -> CMatrix {
        let mut a = CMatrix::from_element(self.n_rx_rf, self.n_tx_rf, ZERO);
        for t in &self.taps {
            a[(t.rx_chain, t.tx_chain)] += t.gain;
        }
        a
    }

    /// Hardware structure: tap count, injective routing, gain ceiling.
    pub fn validate(&self) -> Result<()> {
        if self.taps.len() > self.n_tx_rf * self.n_rx_rf {
            return Err(Error::domain(format!(
                "{} taps exceed the {} TX/RX chain pairs",
                self.taps.len(),
                self.n_tx_rf * self.n_rx_rf
            )));
        }
        let mut used = vec![false; self.n_tx_rf * self.n_rx_rf];
        for t in &self.taps {
            if t.tx_chain >= self.n_tx_rf || t.rx_chain >= self.n_rx_rf {
                return Err(Error::domain(format!("tap ({}, {}) outside the chain grid", t.tx_chain, t.rx_chain)));
            }
            let slot = &mut used[t.rx_chain * self.n_tx_rf + t.tx_chain];
            if *slot {
                return Err(Error::domain(format!("two taps on chain pair ({}, {})", t.tx_chain, t.rx_chain)));
            }
            *slot = true;
            if !t.gain.re.is_finite() || !t.gain.im.is_finite() {
                return Err(Error::domain("non-finite tap gain"));
            }
            if let Some(g) = self.max_gain {
                if t.gain.norm() > g * (1.0 + 1e-12) {
                    return Err(Error::domain(format!("tap gain {} above ceiling {g}", t.gain.norm())));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

fn quantize_phase(z: Complex64, bits: u32) -> Complex64 {
    let step = 2.0 * PI / (1u64 << bits) as f64;
    Complex64::from_polar(z.norm(), (z.arg() / step).round() * step)
}

/// Greedy placement: taps at the `n_taps` largest-|entry| positions of the
/// coupled matrix `m`, each with gain `−entry` (clipped to the ceiling,
/// phase-quantized when requested).
pub fn place_taps(m: &CMatrix, n_taps: usize, max_gain: Option<f64>, phase_bits: Option<u32>) -> AnalogCanceller {
    let (n_rx, n_tx) = m.shape();
    let mut cells: Vec<(usize, usize)> = (0..n_rx).flat_map(|r| (0..n_tx).map(move |c| (r, c))).collect();
    // Stable sort keeps row-major order among equal magnitudes.
    cells.sort_by(|a, b| m[*b].norm_sqr().total_cmp(&m[*a].norm_sqr()));
    let taps = cells
        .into_iter()
        .take(n_taps)
        .map(|(r, c)| {
            let mut gain = -m[(r, c)];
            if let Some(g) = max_gain {
                if gain.norm() > g {
                    gain *= g / gain.norm();
                }
            }
            if let Some(bits) = phase_bits {
                gain = quantize_phase(gain, bits);
            }
            Tap {
                tx_chain: c,
                rx_chain: r,
                gain,
            }
        })
        .collect();
    AnalogCanceller {
        n_tx_rf: n_tx,
        n_rx_rf: n_rx,
        taps,
        max_gain,
        phase_bits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationMetric {
    /// Average residual power per chain over the frame.
    #[default]
    Average,
    /// Average plus the waveform's PAPR.
    Peak,
}

/// Per-RX-chain residual ceilings (the C3 right-hand side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSpec {
    pub lambda_sic_dbm: Vec<f64>,
    pub metric: SaturationMetric,
    pub papr_db: f64,
}

impl SaturationSpec {
    pub fn uniform(n_rx_rf: usize, lambda_sic_dbm: f64) -> Self {
        Self {
            lambda_sic_dbm: vec![lambda_sic_dbm; n_rx_rf],
            metric: SaturationMetric::Average,
            papr_db: 10.0,
        }
    }

    fn offset_db(&self) -> f64 {
        match self.metric {
            SaturationMetric::Average => 0.0,
            SaturationMetric::Peak => self.papr_db,
        }
    }

    /// First violated chain, if any, as an infeasibility record.
    pub fn check(&self, residual_dbm: &[f64]) -> Option<Infeasibility> {
        let mut worst: Option<(usize, f64)> = None;
        for (i, (&r, &ceil)) in residual_dbm.iter().zip(&self.lambda_sic_dbm).enumerate() {
            let excess = r - ceil;
            if excess > 0.0 && worst.map_or(true, |(_, e)| excess > e) {
                worst = Some((i, excess));
            }
        }
        worst.map(|(i, excess)| Infeasibility::Saturation {
            rx_chain: i,
            residual_dbm: residual_dbm[i],
            ceiling_dbm: self.lambda_sic_dbm[i],
            shortfall_db: excess,
        })
    }
}

/// Per-chain power (dBm) of `(coupled + A)·s` for RF-chain transmit
/// covariance `tx_cov = E[s s^H]`, with the metric's PAPR offset.
pub fn coupled_residual_dbm(coupled: &CMatrix, canceller: &AnalogCanceller, tx_cov: &CMatrix, spec: &SaturationSpec) -> Vec<f64> {
    let e = coupled + canceller.effective_matrix();
    let r = &e * tx_cov * e.adjoint();
    (0..r.nrows()).map(|i| watts_to_dbm(r[(i, i)].re.max(0.0)) + spec.offset_db()).collect()
}

/// Per-RX-chain residual SI (dBm) at the RF-chain inputs after analog
/// cancellation: `W_RF^H H_SI V_RF V_BB x + A V_BB x` averaged over
/// unit-power, independent streams. `h_si` may include echoes, which the
/// taps do not remove.
pub fn residual_rf_power(
    h_si: &CMatrix,
    canceller: &AnalogCanceller,
    w_rf: &CMatrix,
    v_rf: &CMatrix,
    v_bb: &CMatrix,
    spec: &SaturationSpec,
) -> Result<Vec<f64>> {
    if h_si.nrows() != w_rf.nrows() || h_si.ncols() != v_rf.nrows() || v_rf.ncols() != v_bb.nrows() {
        return Err(Error::dims("residual power: channel / beamformer dimensions"));
    }
    let coupled = w_rf.adjoint() * h_si * v_rf;
    if coupled.shape() != (canceller.n_rx_rf, canceller.n_tx_rf) {
        return Err(Error::dims("residual power: canceller size"));
    }
    let cov = v_bb * v_bb.adjoint();
    Ok(coupled_residual_dbm(&coupled, canceller, &cov, spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogDesign {
    pub canceller: AnalogCanceller,
    /// Per-chain residual under the design covariance, dBm.
    pub residual_dbm: Vec<f64>,
}

/// Options for [`design_analog_canceller`].
#[derive(Debug, Clone)]
pub struct AnalogOptions<'a> {
    pub n_taps: usize,
    pub max_gain: Option<f64>,
    pub phase_bits: Option<u32>,
    pub saturation: &'a SaturationSpec,
}

/// Greedy tap design against the direct-SI estimate, then a C3 check of the
/// residual under transmit covariance `tx_cov`. `echo_coupling` (RF-chain
/// domain) is added to the residual but never targeted by taps.
pub fn design_analog_canceller(
    h_bb_est: &CMatrix,
    v_rf: &CMatrix,
    w_rf: &CMatrix,
    tx_cov: &CMatrix,
    echo_coupling: Option<&CMatrix>,
    opts: &AnalogOptions<'_>,
) -> Result<AnalogDesign> {
    if h_bb_est.nrows() != w_rf.nrows() || h_bb_est.ncols() != v_rf.nrows() {
        return Err(Error::dims("analog canceller: SI estimate / RF matrix dimensions"));
    }
    let m = w_rf.adjoint() * h_bb_est * v_rf;
    let canceller = place_taps(&m, opts.n_taps, opts.max_gain, opts.phase_bits);
    let coupled = match echo_coupling {
        Some(e) => &m + e,
        None => m,
    };
    let residual_dbm = coupled_residual_dbm(&coupled, &canceller, tx_cov, opts.saturation);
    if let Some(v) = opts.saturation.check(&residual_dbm) {
        return Err(Error::Infeasible(v));
    }
    Ok(AnalogDesign { canceller, residual_dbm })
}

/// Digital SI canceller: `D` maps the known stream samples to the RF-chain
/// residual, `y_clean = y − D·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalCanceller {
    #[serde(with = "crate::linalg::serde_rows")]
    pub d_matrix: CMatrix,
}

impl DigitalCanceller {
    pub fn zero(n_rx_rf: usize, n_streams: usize) -> Self {
        Self {
            d_matrix: CMatrix::from_element(n_rx_rf, n_streams, ZERO),
        }
    }
}

/// Relative ridge added to `X X^H` before inversion.
pub const LS_RIDGE: f64 = 1e-9;

/// Least-squares fit `D = Y X^H (X X^H + εI)^{-1}` over every resource
/// element of a calibration frame, with `ε = LS_RIDGE·tr(X X^H)/d`.
pub fn design_digital_canceller(residual: &ResourceGrid, known: &ResourceGrid) -> Result<DigitalCanceller> {
    let (n_sc, n_sym, n_rx) = residual.dims();
    let (k_sc, k_sym, d) = known.dims();
    if (n_sc, n_sym) != (k_sc, k_sym) {
        return Err(Error::dims("digital canceller: calibration grids differ in size"));
    }
    let mut xx = CMatrix::from_element(d, d, ZERO);
    let mut yx = CMatrix::from_element(n_rx, d, ZERO);
    for a in 0..d {
        let xa = known.stream(a);
        for b in 0..d {
            xx[(a, b)] = xa.iter().zip(known.stream(b)).map(|(p, q)| p * q.conj()).sum();
        }
        for i in 0..n_rx {
            yx[(i, a)] = residual.stream(i).iter().zip(xa).map(|(y, x)| y * x.conj()).sum();
        }
    }
    let trace: f64 = (0..d).map(|a| xx[(a, a)].re).sum();
    if trace <= 0.0 {
        return Ok(DigitalCanceller::zero(n_rx, d));
    }
    let ridge = LS_RIDGE * trace / d as f64;
    for a in 0..d {
        xx[(a, a)] += ridge;
    }
    let inv = xx
        .try_inverse()
        .ok_or_else(|| Error::domain("digital canceller: singular calibration covariance"))?;
    Ok(DigitalCanceller { d_matrix: yx * inv })
}

/// `rx − D·known` on every resource element.
pub fn apply_cancellation(rx: &ResourceGrid, canceller: &DigitalCanceller, known: &ResourceGrid) -> Result<ResourceGrid> {
    let (n_sc, n_sym, n_rx) = rx.dims();
    let (k_sc, k_sym, d) = known.dims();
    if (n_sc, n_sym) != (k_sc, k_sym) || canceller.d_matrix.shape() != (n_rx, d) {
        return Err(Error::dims("digital cancellation: grid / canceller dimensions"));
    }
    let mut out = rx.clone();
    for i in 0..n_rx {
        let row: Vec<Complex64> = (0..d).map(|a| canceller.d_matrix[(i, a)]).collect();
        let dst = out.stream_mut(i);
        for (a, &coef) in row.iter().enumerate() {
            if coef == ZERO {
                continue;
            }
            for (y, x) in dst.iter_mut().zip(known.stream(a)) {
                *y -= coef * x;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::units::DB_FLOOR;
    use crate::waveform::random_qam_grid_with;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut r = rng::stream(seed, 77);
        CMatrix::from_fn(rows, cols, |_, _| rng::complex_normal(&mut r))
    }

    fn loose() -> SaturationSpec {
        SaturationSpec::uniform(8, 100.0)
    }

    #[test]
    fn full_taps_cancel_exactly() {
        let m = random_matrix(8, 8, 1);
        let c = place_taps(&m, 64, None, None);
        c.validate().unwrap();
        assert!((&m + c.effective_matrix()).iter().all(|z| *z == ZERO));
    }

    #[test]
    fn no_taps_leave_coupling() {
        let m = random_matrix(8, 8, 2);
        let c = place_taps(&m, 0, None, None);
        assert!(c.effective_matrix().iter().all(|z| *z == ZERO));
        let cov = CMatrix::identity(8, 8);
        let r = coupled_residual_dbm(&m, &c, &cov, &loose());
        for (i, &p) in r.iter().enumerate() {
            assert!((p - watts_to_dbm(crate::linalg::row_norm_sq(&m, i))).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_channel_reports_floor() {
        let c = AnalogCanceller::none(2, 2);
        let r = residual_rf_power(
            &CMatrix::zeros(4, 4),
            &c,
            &CMatrix::identity(4, 2),
            &CMatrix::identity(4, 2),
            &CMatrix::identity(2, 2),
            &SaturationSpec::uniform(2, -10.0),
        )
        .unwrap();
        assert_eq!(r, vec![DB_FLOOR; 2]);
    }

    #[test]
    fn residual_non_increasing_in_taps() {
        for seed in 0..10 {
            let m = random_matrix(8, 8, seed);
            let cov = CMatrix::from_fn(8, 8, |i, j| {
                if i == j {
                    Complex64::new(1.0 + i as f64, 0.0)
                } else {
                    ZERO
                }
            });
            let mut last = f64::INFINITY;
            for n in 0..=64 {
                let c = place_taps(&m, n, None, None);
                let e = &m + c.effective_matrix();
                let total = (&e * &cov * e.adjoint()).trace().re;
                assert!(total <= last * (1.0 + 1e-12) + 1e-15, "seed {seed} taps {n}");
                last = total;
            }
        }
    }

    #[test]
    fn gain_ceiling_and_phase_bits() {
        let m = random_matrix(4, 4, 9) * Complex64::new(10.0, 0.0);
        let c = place_taps(&m, 16, Some(1.0), Some(3));
        c.validate().unwrap();
        let step = 2.0 * PI / 8.0;
        for t in &c.taps {
            assert!(t.gain.norm() <= 1.0 + 1e-12);
            let k = t.gain.arg() / step;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn canceller_json_round_trip() {
        let c = place_taps(&random_matrix(8, 8, 4), 8, None, None);
        let back = AnalogCanceller::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn routing_must_be_injective() {
        let mut c = place_taps(&random_matrix(2, 2, 4), 2, None, None);
        c.taps[1].tx_chain = c.taps[0].tx_chain;
        c.taps[1].rx_chain = c.taps[0].rx_chain;
        assert!(c.validate().is_err());
    }

    #[test]
    fn design_reports_shortfall() {
        let h = random_matrix(16, 16, 5);
        let v = CMatrix::identity(16, 4);
        let spec = SaturationSpec::uniform(4, -60.0);
        let opts = AnalogOptions {
            n_taps: 2,
            max_gain: None,
            phase_bits: None,
            saturation: &spec,
        };
        match design_analog_canceller(&h, &v, &v, &CMatrix::identity(4, 4), None, &opts) {
            Err(Error::Infeasible(Infeasibility::Saturation { shortfall_db, .. })) => assert!(shortfall_db > 0.0),
            other => panic!("expected saturation infeasibility, got {other:?}"),
        }
        let opts = AnalogOptions { n_taps: 16, ..opts };
        let d = design_analog_canceller(&h, &v, &v, &CMatrix::identity(4, 4), None, &opts).unwrap();
        assert!(d.residual_dbm.iter().all(|&r| r == DB_FLOOR));
    }

    fn known_grid(d: usize, seed: u64) -> ResourceGrid {
        let mut r = rng::stream(seed, rng::tag::CALIBRATION);
        random_qam_grid_with(96, 14, d, 16, &mut r).unwrap()
    }

    fn apply_matrix(g: &CMatrix, x: &ResourceGrid) -> ResourceGrid {
        let (n_sc, n_sym, d) = x.dims();
        let mut buf = vec![ZERO; d];
        let mut out = ResourceGrid::zeros(n_sc, n_sym, g.nrows());
        for n in 0..n_sym {
            for m in 0..n_sc {
                x.element(m, n, &mut buf);
                for i in 0..g.nrows() {
                    let v: Complex64 = (0..d).map(|a| g[(i, a)] * buf[a]).sum();
                    out.set(m, n, i, v);
                }
            }
        }
        out
    }

    #[test]
    fn noiseless_ls_recovers_coupling() {
        let x = known_grid(4, 1);
        let g = random_matrix(8, 4, 3);
        let y = apply_matrix(&g, &x);
        let dc = design_digital_canceller(&y, &x).unwrap();
        assert!((&dc.d_matrix - &g).iter().all(|z| z.norm() < 1e-7));
        let clean = apply_cancellation(&y, &dc, &x).unwrap();
        assert!(clean.energy() < 1e-12 * y.energy());
    }

    #[test]
    fn noisy_ls_leaves_noise_floor() {
        let x = known_grid(4, 2);
        let g = random_matrix(8, 4, 4);
        let mut y = apply_matrix(&g, &x);
        let sigma2: f64 = 1e-3;
        let mut r = rng::stream(5, rng::tag::NOISE_NODE);
        let noise = ResourceGrid::from_fn(96, 14, 8, |_, _, _| rng::complex_normal(&mut r) * sigma2.sqrt());
        y = y.add(&noise).unwrap();
        let dc = design_digital_canceller(&y, &x).unwrap();
        let clean = apply_cancellation(&y, &dc, &x).unwrap();
        let ratio_db = 10.0 * (clean.mean_power() / sigma2).log10();
        assert!(ratio_db.abs() < 0.5, "{ratio_db}");
    }

    #[test]
    fn zero_residual_gives_zero_canceller() {
        let x = known_grid(2, 3);
        let y = ResourceGrid::zeros(96, 14, 8);
        let dc = design_digital_canceller(&y, &x).unwrap();
        assert!(dc.d_matrix.iter().all(|z| *z == ZERO));
        let same = apply_cancellation(&x, &DigitalCanceller::zero(2, 2), &x).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn cancellation_is_linear_in_uncorrelated_component() {
        let x = known_grid(2, 4);
        let g = random_matrix(3, 2, 8);
        let a = apply_matrix(&g, &x);
        let mut r = rng::stream(6, 11);
        let b = ResourceGrid::from_fn(96, 14, 3, |_, _, _| rng::complex_normal(&mut r));
        let dc = design_digital_canceller(&a, &x).unwrap();
        let lhs = apply_cancellation(&a.add(&b).unwrap(), &dc, &x).unwrap();
        let rhs = apply_cancellation(&a, &dc, &x).unwrap().add(&b).unwrap();
        assert!(lhs.sub(&rhs).unwrap().energy() < 1e-20 * b.energy());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn more_taps_never_leave_more_coupling(seed in 0u64..10_000, rows in 1usize..9, cols in 1usize..9) {
                let m = random_matrix(rows, cols, seed);
                let mut prev: Vec<f64> = vec![f64::INFINITY; rows];
                for n in 0..=rows * cols {
                    let c = place_taps(&m, n, None, None);
                    prop_assert_eq!(c.n_taps(), n);
                    let residual = &m + c.effective_matrix();
                    let norms: Vec<f64> = residual.row_iter().map(|r| r.norm_squared()).collect();
                    for (now, before) in norms.iter().zip(&prev) {
                        prop_assert!(now <= before);
                    }
                    prev = norms;
                }
                prop_assert!(prev.iter().all(|&x| x == 0.0));
            }

            #[test]
            fn clipped_and_quantized_taps_respect_their_limits(seed in 0u64..10_000, cap in 0.1f64..2.0, bits in 1u32..8) {
                let m = random_matrix(4, 4, seed);
                let c = place_taps(&m, 16, Some(cap), Some(bits));
                let step = 2.0 * PI / (1u64 << bits) as f64;
                for t in &c.taps {
                    prop_assert!(t.gain.norm() <= cap * (1.0 + 1e-12));
                    let k = t.gain.arg() / step;
                    prop_assert!((k - k.round()).abs() < 1e-9);
                }
            }
        }
    }
}
