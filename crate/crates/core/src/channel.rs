//! Multipath Rayleigh block-fading channel and OFDM modem.
//!
//! Grids are stored symbol-major: entry `(k, i)` (subcarrier `k`, OFDM symbol `i`)
//! lives at `i * K + k`. DFTs use unitary `1/sqrt(K)` scaling in both directions.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::config::{ChannelParams, OfdmParams};
use crate::error::{Error, Result};
use crate::seed::Rng;

pub type C64 = Complex64;

/// Complex `K x S` grid, symbol-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub subcarriers: usize,
    pub symbols: usize,
    pub data: Vec<C64>,
}

impl Grid {
    pub fn zeros(subcarriers: usize, symbols: usize) -> Self {
        Self {
            subcarriers,
            symbols,
            data: vec![C64::new(0.0, 0.0); subcarriers * symbols],
        }
    }

    pub fn from_vec(subcarriers: usize, symbols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != subcarriers * symbols {
            return Err(Error::DimensionMismatch {
                expected: subcarriers * symbols,
                got: data.len(),
            });
        }
        Ok(Self {
            subcarriers,
            symbols,
            data,
        })
    }

    pub fn at(&self, k: usize, i: usize) -> C64 {
        self.data[i * self.subcarriers + k]
    }

    pub fn symbol(&self, i: usize) -> &[C64] {
        &self.data[i * self.subcarriers..(i + 1) * self.subcarriers]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Channel taps and their `K`-point frequency response.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<C64>,
    pub freq: Vec<C64>,
}

impl ChannelRealization {
    /// `H[k] = sum_l h_l exp(-j 2 pi l k / K)`.
    pub fn from_taps(taps: Vec<C64>, subcarriers: usize) -> Self {
        let mut buf = vec![C64::new(0.0, 0.0); subcarriers];
        buf[..taps.len()].copy_from_slice(&taps);
        FftPlanner::new().plan_fft_forward(subcarriers).process(&mut buf);
        Self { taps, freq: buf }
    }

    pub fn identity(subcarriers: usize) -> Self {
        Self::from_taps(vec![C64::new(1.0, 0.0)], subcarriers)
    }
}

/// Circular complex Gaussian sample with variance `var`.
pub fn complex_normal(rng: &mut Rng, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Independent taps `h_l ~ CN(0, p_l)` with the normalized exponential profile.
pub fn sample_channel(params: &ChannelParams, subcarriers: usize, rng: &mut Rng) -> ChannelRealization {
    let taps = params.tap_profile().into_iter().map(|p| complex_normal(rng, p)).collect();
    ChannelRealization::from_taps(taps, subcarriers)
}

/// Scale `z` to unit average power, `|z|^2 / len = 1`.
pub fn normalize_power(z: &[C64]) -> Result<Vec<C64>> {
    let energy: f64 = z.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 || !energy.is_finite() {
        return Err(Error::ZeroVector);
    }
    let k = (z.len() as f64 / energy).sqrt();
    Ok(z.iter().map(|v| v * k).collect())
}

/// Pilot grid of QPSK points `(+-1 +- j)/sqrt(2)` drawn from a binary sequence.
pub fn pilot_grid(ofdm: &OfdmParams, rng: &mut Rng) -> Grid {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let n = ofdm.subcarriers * ofdm.pilot_symbols;
    let data = (0..n)
        .map(|_| {
            let (b0, b1): (bool, bool) = (rng.gen(), rng.gen());
            C64::new(if b0 { a } else { -a }, if b1 { a } else { -a })
        })
        .collect();
    Grid::from_vec(ofdm.subcarriers, ofdm.pilot_symbols, data).expect("pilot shape")
}

/// OFDM modulator/demodulator with cached FFT plans.
#[derive(Clone)]
pub struct Modem {
    pub params: OfdmParams,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Modem {
    pub fn new(params: OfdmParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params,
            fft: planner.plan_fft_forward(params.subcarriers),
            ifft: planner.plan_fft_inverse(params.subcarriers),
        }
    }

    fn check(&self, g: &Grid, symbols: usize) -> Result<()> {
        if g.subcarriers != self.params.subcarriers || g.symbols != symbols {
            return Err(Error::DimensionMismatch {
                expected: self.params.subcarriers * symbols,
                got: g.subcarriers * g.symbols,
            });
        }
        Ok(())
    }

    /// Time-domain frame: pilot symbols first, then data symbols; each symbol is a
    /// unitary IDFT with the last `cp_len` samples prepended.
    pub fn modulate(&self, data: &Grid, pilots: &Grid) -> Result<Vec<C64>> {
        let p = &self.params;
        self.check(data, p.data_symbols)?;
        self.check(pilots, p.pilot_symbols)?;
        let k = p.subcarriers;
        let scale = 1.0 / (k as f64).sqrt();
        let mut out = Vec::with_capacity(p.frame_samples());
        let symbols = (0..p.pilot_symbols).map(|i| pilots.symbol(i)).chain((0..p.data_symbols).map(|i| data.symbol(i)));
        for sym in symbols {
            let mut buf = sym.to_vec();
            self.ifft.process(&mut buf);
            buf.iter_mut().for_each(|v| *v *= scale);
            out.extend_from_slice(&buf[k - p.cp_len..]);
            out.extend_from_slice(&buf);
        }
        Ok(out)
    }

    /// Inverse of [`Modem::modulate`]: strip CPs, unitary DFT, split pilots from data.
    pub fn demodulate(&self, samples: &[C64]) -> Result<(Grid, Grid)> {
        let p = &self.params;
        if samples.len() != p.frame_samples() {
            return Err(Error::DimensionMismatch {
                expected: p.frame_samples(),
                got: samples.len(),
            });
        }
        let k = p.subcarriers;
        let scale = 1.0 / (k as f64).sqrt();
        let mut freq = Vec::with_capacity(k * (p.pilot_symbols + p.data_symbols));
        for sym in samples.chunks_exact(k + p.cp_len) {
            let mut buf = sym[p.cp_len..].to_vec();
            self.fft.process(&mut buf);
            buf.iter_mut().for_each(|v| *v *= scale);
            freq.extend(buf);
        }
        let data = freq.split_off(k * p.pilot_symbols);
        Ok((
            Grid::from_vec(k, p.data_symbols, data)?,
            Grid::from_vec(k, p.pilot_symbols, freq)?,
        ))
    }
}

/// Linear convolution with the taps (truncated to the input length) plus
/// `CN(0, noise_var)` noise per sample.
pub fn transmit_time(c_in: &[C64], taps: &[C64], noise_var: f64, rng: &mut Rng) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); c_in.len()];
    for (n, o) in out.iter_mut().enumerate() {
        for (l, h) in taps.iter().enumerate().take(n + 1) {
            *o += h * c_in[n - l];
        }
    }
    if noise_var > 0.0 {
        for o in out.iter_mut() {
            *o += complex_normal(rng, noise_var);
        }
    }
    out
}

/// Per-subcarrier model `Y[k, i] = H[k] X[k, i] + N[k, i]`, `N ~ CN(0, noise_var)`.
pub fn transmit_freq(data: &Grid, pilots: &Grid, freq: &[C64], noise_var: f64, rng: &mut Rng) -> (Grid, Grid) {
    let pass = |g: &Grid, rng: &mut Rng| {
        let mut out = g.clone();
        for (idx, v) in out.data.iter_mut().enumerate() {
            *v *= freq[idx % g.subcarriers];
            if noise_var > 0.0 {
                *v += complex_normal(rng, noise_var);
            }
        }
        out
    };
    let d = pass(data, rng);
    let p = pass(pilots, rng);
    (d, p)
}

/// Noise variance giving average SNR `snr_db` over the data grid:
/// `sum |H[k] Z[k, i]|^2 / (K S 10^(snr/10))`.
pub fn calibrate_noise(freq: &[C64], data: &Grid, snr_db: f64) -> f64 {
    let k = data.subcarriers;
    let signal: f64 = data
        .data
        .iter()
        .enumerate()
        .map(|(idx, z)| (freq[idx % k] * z).norm_sqr())
        .sum();
    signal / (data.data.len() as f64 * 10f64.powf(snr_db / 10.0))
}

/// Least-squares estimate averaged over pilot symbols.
pub fn ls_estimate(rx_pilots: &Grid, pilots: &Grid) -> Result<Vec<C64>> {
    let (k, np) = (pilots.subcarriers, pilots.symbols);
    let mut est = vec![C64::new(0.0, 0.0); k];
    for j in 0..np {
        for (sc, e) in est.iter_mut().enumerate() {
            let p = pilots.at(sc, j);
            if p.norm_sqr() == 0.0 {
                return Err(Error::ZeroPilot {
                    subcarrier: sc,
                    symbol: j,
                });
            }
            *e += rx_pilots.at(sc, j) / p;
        }
    }
    est.iter_mut().for_each(|e| *e /= np as f64);
    Ok(est)
}

/// `conj(H) Y / (|H|^2 + noise_var)` per entry (unit-power symbol prior).
pub fn mmse_equalize(rx: &Grid, est: &[C64], noise_var: f64) -> Grid {
    let mut out = rx.clone();
    for (idx, v) in out.data.iter_mut().enumerate() {
        let h = est[idx % rx.subcarriers];
        *v = h.conj() * *v / (h.norm_sqr() + noise_var);
    }
    out
}

/// Write a grid as CSV rows `subcarrier,symbol,re,im` for cross-implementation checks.
pub fn write_grid_csv(path: &Path, grid: &Grid) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "subcarrier,symbol,re,im")?;
    for i in 0..grid.symbols {
        for k in 0..grid.subcarriers {
            let v = grid.at(k, i);
            writeln!(f, "{k},{i},{:?},{:?}", v.re, v.im)?;
        }
    }
    Ok(())
}
