//! OFDM resource grids with random QAM data, plus the reciprocal
//! (modulation-removal) filter used by the radar receiver.

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array_channel::OfdmParams;
use crate::error::{Error, Result};
use crate::linalg::ZERO;
use crate::rng;

/// Complex samples indexed by (subcarrier m, symbol n, stream s).
///
/// Storage is stream-major, then symbol, then subcarrier, so one OFDM symbol
/// of one stream is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    n_subcarriers: usize,
    n_symbols: usize,
    n_streams: usize,
    data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(n_subcarriers: usize, n_symbols: usize, n_streams: usize) -> Self {
        Self {
            n_subcarriers,
            n_symbols,
            n_streams,
            data: vec![ZERO; n_subcarriers * n_symbols * n_streams],
        }
    }

    pub fn from_fn(
        n_subcarriers: usize,
        n_symbols: usize,
        n_streams: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut g = Self::zeros(n_subcarriers, n_symbols, n_streams);
        for s in 0..n_streams {
            for n in 0..n_symbols {
                for m in 0..n_subcarriers {
                    let i = g.index(m, n, s);
                    g.data[i] = f(m, n, s);
                }
            }
        }
        g
    }

    /// (subcarriers, symbols, streams)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_subcarriers, self.n_symbols, self.n_streams)
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    #[inline]
    fn index(&self, m: usize, n: usize, s: usize) -> usize {
        (s * self.n_symbols + n) * self.n_subcarriers + m
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, s: usize) -> Complex64 {
        self.data[self.index(m, n, s)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, s: usize, value: Complex64) {
        let i = self.index(m, n, s);
        self.data[i] = value;
    }

    /// All (symbol, subcarrier) samples of one stream, symbol-major.
    pub fn stream(&self, s: usize) -> &[Complex64] {
        let len = self.n_subcarriers * self.n_symbols;
        &self.data[s * len..(s + 1) * len]
    }

    pub fn stream_mut(&mut self, s: usize) -> &mut [Complex64] {
        let len = self.n_subcarriers * self.n_symbols;
        &mut self.data[s * len..(s + 1) * len]
    }

    /// One OFDM symbol of one stream across all subcarriers.
    pub fn symbol(&self, n: usize, s: usize) -> &[Complex64] {
        let start = self.index(0, n, s);
        &self.data[start..start + self.n_subcarriers]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// The per-stream sample vector at one resource element.
    pub fn element(&self, m: usize, n: usize, out: &mut [Complex64]) {
        for (s, o) in out.iter_mut().enumerate().take(self.n_streams) {
            *o = self.get(m, n, s);
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.energy() / self.data.len() as f64
        }
    }

    pub fn scale(&mut self, a: Complex64) {
        self.data.iter_mut().for_each(|z| *z *= a);
    }

    fn check_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(format!(
                "{what}: grid {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other, "subtraction")?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other, "addition")?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QamOrder(u32);

impl QamOrder {
    pub const QPSK: QamOrder = QamOrder(4);
    pub const QAM16: QamOrder = QamOrder(16);

    pub fn new(order: u32) -> Result<Self> {
        match order {
            4 | 16 | 64 | 256 => Ok(QamOrder(order)),
            other => Err(Error::UnsupportedQamOrder(other)),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Unit-average-power constellation, row-major over (I, Q) levels.
    pub fn constellation(self) -> Vec<Complex64> {
        let side = (self.0 as f64).sqrt().round() as i32;
        let norm = (2.0 * (self.0 as f64 - 1.0) / 3.0).sqrt();
        let level = |i: i32| (2 * i - (side - 1)) as f64 / norm;
        let mut points = Vec::with_capacity(self.0 as usize);
        for i in 0..side {
            for q in 0..side {
                points.push(Complex64::new(level(i), level(q)));
            }
        }
        points
    }
}

impl TryFrom<u32> for QamOrder {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        QamOrder::new(v)
    }
}

impl From<QamOrder> for u32 {
    fn from(q: QamOrder) -> u32 {
        q.0
    }
}

/// A frame of i.i.d. uniformly drawn QAM symbols on every active resource
/// element, drawn from the data stream of `seed`.
pub fn random_qam_grid(ofdm: &OfdmParams, n_streams: usize, qam_order: u32, seed: u64) -> Result<ResourceGrid> {
    let mut r = rng::stream(seed, rng::tag::DATA);
    random_qam_grid_with(ofdm.n_subcarriers, ofdm.n_symbols, n_streams, qam_order, &mut r)
}

pub fn random_qam_grid_with<R: Rng + ?Sized>(
    n_subcarriers: usize,
    n_symbols: usize,
    n_streams: usize,
    qam_order: u32,
    rng: &mut R,
) -> Result<ResourceGrid> {
    let points = QamOrder::new(qam_order)?.constellation();
    let mut g = ResourceGrid::zeros(n_subcarriers, n_symbols, n_streams);
    for z in g.data.iter_mut() {
        *z = points[rng.gen_range(0..points.len())];
    }
    Ok(g)
}

/// 10·log10(peak / mean) instantaneous power of a time-domain signal.
pub fn papr_db(signal: &[Complex64]) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::domain("PAPR of an empty signal"));
    }
    let powers = signal.iter().map(|z| z.norm_sqr());
    let (peak, sum) = powers.fold((0.0f64, 0.0f64), |(p, s), x| (p.max(x), s + x));
    if sum == 0.0 {
        return Err(Error::domain("PAPR of an all-zero signal"));
    }
    Ok(10.0 * (peak * signal.len() as f64 / sum).log10())
}

/// Time-domain samples of one OFDM symbol (no cyclic prefix).
///
/// Active subcarrier `idx` sits at centered frequency index `idx − N_sc/2`,
/// mapped onto an IFFT of `fft_size` points (must be ≥ the active count).
pub fn ofdm_modulate_symbol(grid: &ResourceGrid, symbol: usize, stream: usize, fft_size: usize) -> Result<Vec<Complex64>> {
    let n_sc = grid.n_subcarriers();
    if fft_size < n_sc {
        return Err(Error::domain(format!("IFFT size {fft_size} below {n_sc} active subcarriers")));
    }
    if symbol >= grid.n_symbols() || stream >= grid.n_streams() {
        return Err(Error::dims("symbol or stream index outside grid"));
    }
    let mut buf = vec![ZERO; fft_size];
    for (idx, z) in grid.symbol(symbol, stream).iter().enumerate() {
        let m = idx as isize - (n_sc / 2) as isize;
        buf[m.rem_euclid(fft_size as isize) as usize] = *z;
    }
    FftPlanner::new().plan_fft_inverse(fft_size).process(&mut buf);
    let scale = 1.0 / (fft_size as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    Ok(buf)
}

/// Entry-wise `rx / tx`. Every `tx` entry must be nonzero.
pub fn element_division(rx: &ResourceGrid, tx: &ResourceGrid) -> Result<ResourceGrid> {
    rx.check_same_dims(tx, "element division")?;
    if tx.data.iter().any(|z| z.norm_sqr() == 0.0) {
        return Err(Error::domain("element division by a zero transmit sample"));
    }
    let mut out = rx.clone();
    out.data.iter_mut().zip(&tx.data).for_each(|(y, x)| *y /= x);
    Ok(out)
}

/// Regularized reciprocal filter `rx·conj(tx) / max(|tx|², floor·mean|tx|²)`.
///
/// With `relative_floor = 0` and a zero-free reference this is exactly
/// [`element_division`]. The floor is evaluated per stream.
pub fn reciprocal_filter(rx: &ResourceGrid, tx: &ResourceGrid, relative_floor: f64) -> Result<ResourceGrid> {
    rx.check_same_dims(tx, "reciprocal filter")?;
    if relative_floor <= 0.0 {
        return element_division(rx, tx);
    }
    let mut out = rx.clone();
    for s in 0..tx.n_streams() {
        let reference = tx.stream(s);
        let mean = reference.iter().map(|z| z.norm_sqr()).sum::<f64>() / reference.len().max(1) as f64;
        let floor = relative_floor * mean;
        for (y, x) in out.stream_mut(s).iter_mut().zip(reference) {
            let p = x.norm_sqr().max(floor);
            *y = if p > 0.0 { *y * x.conj() / p } else { ZERO };
        }
    }
    Ok(out)
}
