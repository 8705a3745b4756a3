//! Digital comparison systems: mu-law quantization, 8-QAM, a pluggable channel code
//! and the hybrid semantic-plus-digital link over time-domain OFDM.

use num_complex::Complex64;
use num_rational::Rational64;
use rand::seq::SliceRandom;

use crate::channel::{calibrate_noise, ls_estimate, mmse_equalize, sample_channel, transmit_time, Grid, Modem};
use crate::config::{ChannelParams, OfdmParams};
use crate::error::{Error, Result};
use crate::seed::Rng;

// ---- mu-law ----

pub const MU: f64 = 255.0;
const LEVELS: f64 = 255.0;

fn compress(v: f64) -> f64 {
    v.signum() * (1.0 + MU * v.abs()).ln() / (1.0 + MU).ln()
}

fn expand(y: f64) -> f64 {
    y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU
}

/// 8-bit mu-law quantizer clipping at `+-bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuLaw {
    pub bound: f64,
}

impl MuLaw {
    pub fn new(bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidConfig(vec![format!("mu-law bound must be positive, got {bound}")]));
        }
        Ok(Self { bound })
    }

    /// Bound at `sigmas` standard deviations of the given feature values.
    pub fn from_features(values: &[f64], sigmas: f64) -> Result<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self::new(sigmas * var.sqrt())
    }

    /// Clip, compand and round half away from zero onto 256 levels.
    pub fn encode(&self, x: f64) -> u8 {
        let v = x.clamp(-self.bound, self.bound) / self.bound;
        ((compress(v) + 1.0) / 2.0 * LEVELS).round() as u8
    }

    pub fn decode(&self, code: u8) -> f64 {
        self.bound * expand(code as f64 / LEVELS * 2.0 - 1.0)
    }

    pub fn saturates(&self, x: f64) -> bool {
        x.abs() > self.bound
    }

    /// Codes for a whole vector plus the number of clipped entries.
    pub fn encode_all(&self, xs: &[f64]) -> (Vec<u8>, usize) {
        let sat = xs.iter().filter(|&&x| self.saturates(x)).count();
        (xs.iter().map(|&x| self.encode(x)).collect(), sat)
    }

    pub fn roundtrip(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }
}

// ---- 8-QAM ----

/// In-phase level for two Gray-coded bits: 00, 01, 11, 10 map to -3, -1, 1, 3.
const I_LEVELS: [(u8, u8, f64); 4] = [(0, 0, -3.0), (0, 1, -1.0), (1, 1, 1.0), (1, 0, 3.0)];

/// Rectangular 4x2 constellation with unit average energy. Bits `b0 b1` pick the
/// in-phase level, `b2` the quadrature sign (0 is negative).
pub fn qam8_point(b0: u8, b1: u8, b2: u8) -> Complex64 {
    let re = I_LEVELS.iter().find(|(x, y, _)| *x == b0 && *y == b1).expect("bits are 0 or 1").2;
    let im = if b2 == 1 { 1.0 } else { -1.0 };
    Complex64::new(re, im) / 6f64.sqrt()
}

/// Full table in label order 000..111.
pub fn qam8_table() -> [Complex64; 8] {
    std::array::from_fn(|l| qam8_point((l >> 2) as u8 & 1, (l >> 1) as u8 & 1, l as u8 & 1))
}

pub fn qam8_map(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 3 != 0 {
        return Err(Error::LengthError(format!("{} bits do not fill 3-bit symbols", bits.len())));
    }
    Ok(bits.chunks_exact(3).map(|c| qam8_point(c[0], c[1], c[2])).collect())
}

/// Hard-decision nearest-point demapping.
pub fn qam8_demap(symbols: &[Complex64]) -> Vec<u8> {
    let table = qam8_table();
    let mut out = Vec::with_capacity(3 * symbols.len());
    for s in symbols {
        let label = (0..8)
            .min_by(|&a, &b| (s - table[a]).norm_sqr().total_cmp(&(s - table[b]).norm_sqr()))
            .expect("nonempty table");
        out.extend([(label >> 2) as u8 & 1, (label >> 1) as u8 & 1, label as u8 & 1]);
    }
    out
}

// ---- channel codes ----

/// Block channel code. Bits are 0/1 bytes; LLRs are positive for a likely 0.
pub trait ChannelCode {
    fn rate(&self) -> Rational64;
    /// Message bits per block.
    fn message_len(&self) -> usize;
    /// Encode whole blocks; the message is zero-padded to a multiple of the block length.
    fn encode(&self, message: &[u8]) -> Vec<u8>;
    /// Decode whole codewords back to message blocks (padding included).
    fn decode(&self, llrs: &[f64]) -> Result<Vec<u8>>;
}

/// Rate-1 identity code.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullCode;

impl ChannelCode for NullCode {
    fn rate(&self) -> Rational64 {
        Rational64::from_integer(1)
    }

    fn message_len(&self) -> usize {
        1
    }

    fn encode(&self, message: &[u8]) -> Vec<u8> {
        message.to_vec()
    }

    fn decode(&self, llrs: &[f64]) -> Result<Vec<u8>> {
        Ok(llrs.iter().map(|&l| u8::from(l < 0.0)).collect())
    }
}

/// Regular LDPC code with a random column-weight-`wc` parity-check matrix, systematic
/// encoding on the free columns of its row-reduced form and normalized min-sum decoding.
#[derive(Debug, Clone)]
pub struct RegularLdpc {
    n: usize,
    /// Column indices of the ones in each parity row.
    checks: Vec<Vec<usize>>,
    /// Row-reduced rows as (pivot column, dense row bits).
    reduced: Vec<(usize, Vec<u64>)>,
    free: Vec<usize>,
    pub max_iters: usize,
    pub scale: f64,
}

impl RegularLdpc {
    /// `m x n` parity-check matrix with `wc` ones per column and `n wc / m` per row.
    pub fn new(n: usize, m: usize, wc: usize, rng: &mut Rng) -> Result<Self> {
        if m == 0 || m >= n || (n * wc) % m != 0 {
            return Err(Error::InvalidConfig(vec![format!("no regular {m}x{n} code with column weight {wc}")]));
        }
        // Socket permutation; duplicate edges cancel mod 2 and are dropped.
        let mut sockets: Vec<usize> = (0..n * wc).map(|s| s % m).collect();
        sockets.shuffle(rng);
        let mut checks = vec![vec![]; m];
        for (edge, &row) in sockets.iter().enumerate() {
            let col = edge / wc;
            if let Some(pos) = checks[row].iter().position(|&c| c == col) {
                checks[row].swap_remove(pos);
            } else {
                checks[row].push(col);
            }
        }
        checks.iter_mut().for_each(|r| r.sort_unstable());
        let words = n.div_ceil(64);
        let mut rows: Vec<Vec<u64>> = checks
            .iter()
            .map(|r| {
                let mut bits = vec![0u64; words];
                r.iter().for_each(|&c| bits[c / 64] |= 1 << (c % 64));
                bits
            })
            .collect();
        let bit = |row: &[u64], c: usize| row[c / 64] >> (c % 64) & 1 == 1;
        let mut reduced = vec![];
        let mut next = 0;
        for col in 0..n {
            let Some(p) = (next..rows.len()).find(|&r| bit(&rows[r], col)) else { continue };
            rows.swap(next, p);
            let pivot = rows[next].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != next && bit(row, col) {
                    row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
                }
            }
            reduced.push((col, next));
            next += 1;
        }
        let pivots: std::collections::HashSet<usize> = reduced.iter().map(|&(c, _)| c).collect();
        let free = (0..n).filter(|c| !pivots.contains(c)).collect();
        let reduced = reduced.into_iter().map(|(c, r)| (c, rows[r].clone())).collect();
        Ok(Self {
            n,
            checks,
            reduced,
            free,
            max_iters: 50,
            scale: 0.8,
        })
    }

    pub fn block_len(&self) -> usize {
        self.n
    }

    fn encode_block(&self, message: &[u8]) -> Vec<u8> {
        let mut cw = vec![0u8; self.n];
        for (&c, &b) in self.free.iter().zip(message) {
            cw[c] = b;
        }
        for (pivot, row) in &self.reduced {
            let parity = self.free.iter().filter(|&&c| row[c / 64] >> (c % 64) & 1 == 1).fold(0, |acc, &c| acc ^ cw[c]);
            cw[*pivot] = parity;
        }
        cw
    }

    pub fn syndrome_ok(&self, cw: &[u8]) -> bool {
        self.checks.iter().all(|r| r.iter().fold(0, |acc, &c| acc ^ cw[c]) == 0)
    }

    fn decode_block(&self, llr: &[f64]) -> Vec<u8> {
        // messages check -> variable, stored per (row, position)
        let mut c2v: Vec<Vec<f64>> = self.checks.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut hard: Vec<u8> = llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        for _ in 0..self.max_iters {
            if self.syndrome_ok(&hard) {
                break;
            }
            let mut total = llr.to_vec();
            for (r, row) in self.checks.iter().enumerate() {
                for (p, &c) in row.iter().enumerate() {
                    total[c] += c2v[r][p];
                }
            }
            for (r, row) in self.checks.iter().enumerate() {
                let v2c: Vec<f64> = row.iter().enumerate().map(|(p, &c)| total[c] - c2v[r][p]).collect();
                let sign: f64 = v2c.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).product();
                let (mut min1, mut min2, mut at) = (f64::INFINITY, f64::INFINITY, 0);
                for (p, v) in v2c.iter().enumerate() {
                    let a = v.abs();
                    if a < min1 {
                        (min2, min1, at) = (min1, a, p);
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for (p, v) in v2c.iter().enumerate() {
                    let own = if *v < 0.0 { -1.0 } else { 1.0 };
                    let mag = if p == at { min2 } else { min1 };
                    c2v[r][p] = self.scale * sign * own * mag;
                }
            }
            let mut post = llr.to_vec();
            for (r, row) in self.checks.iter().enumerate() {
                for (p, &c) in row.iter().enumerate() {
                    post[c] += c2v[r][p];
                }
            }
            hard = post.iter().map(|&l| u8::from(l < 0.0)).collect();
        }
        self.free.iter().map(|&c| hard[c]).collect()
    }
}

impl ChannelCode for RegularLdpc {
    fn rate(&self) -> Rational64 {
        Rational64::new(self.free.len() as i64, self.n as i64)
    }

    fn message_len(&self) -> usize {
        self.free.len()
    }

    fn encode(&self, message: &[u8]) -> Vec<u8> {
        let k = self.message_len();
        let mut out = vec![];
        for block in message.chunks(k) {
            let mut b = block.to_vec();
            b.resize(k, 0);
            out.extend(self.encode_block(&b));
        }
        out
    }

    fn decode(&self, llrs: &[f64]) -> Result<Vec<u8>> {
        if llrs.len() % self.n != 0 {
            return Err(Error::LengthError(format!("{} LLRs are not whole {}-bit codewords", llrs.len(), self.n)));
        }
        Ok(llrs.chunks_exact(self.n).flat_map(|b| self.decode_block(b)).collect())
    }
}

// ---- hybrid link ----

/// QAM symbols needed for one image: `ceil(8 L_s / rate / 3)`.
pub fn hybrid_symbols(source_len: usize, rate: Rational64) -> usize {
    let coded = Rational64::from_integer(8 * source_len as i64) / rate;
    (coded / 3).ceil().to_integer() as usize
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|b| (0..8).rev().map(move |i| b >> i & 1)).collect()
}

pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().fold(0u8, |acc, &b| acc << 1 | b)).collect()
}

/// Time-domain OFDM link used by the digital baselines.
pub struct DigitalLink {
    pub modem: Modem,
    pub pilots: Grid,
    pub channel: ChannelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub x_hat: Vec<f64>,
    pub symbols: usize,
    pub frames: usize,
    pub saturated: usize,
}

impl DigitalLink {
    pub fn new(ofdm: OfdmParams, pilots: Grid, channel: ChannelParams) -> Self {
        Self {
            modem: Modem::new(ofdm),
            pilots,
            channel,
        }
    }

    /// Send QAM symbols frame by frame, each over a fresh realization. `snr_db = None`
    /// is a noiseless channel. Returns equalized symbols (padding removed).
    pub fn send(&self, symbols: &[Complex64], snr_db: Option<f64>, rng: &mut Rng) -> Result<(Vec<Complex64>, usize)> {
        let p = self.modem.params;
        let slots = p.data_slots();
        let frames = symbols.len().div_ceil(slots).max(1);
        let mut out = Vec::with_capacity(frames * slots);
        for f in 0..frames {
            let mut chunk: Vec<Complex64> = symbols[(f * slots).min(symbols.len())..((f + 1) * slots).min(symbols.len())].to_vec();
            chunk.resize(slots, qam8_point(0, 0, 0));
            let grid = Grid::from_vec(p.subcarriers, p.data_symbols, chunk)?;
            let realization = sample_channel(&self.channel, p.subcarriers, rng);
            let noise_var = snr_db.map_or(0.0, |s| calibrate_noise(&realization.freq, &grid, s));
            let tx = self.modem.modulate(&grid, &self.pilots)?;
            let rx = transmit_time(&tx, &realization.taps, noise_var, rng);
            let (data, pilots) = self.modem.demodulate(&rx)?;
            let est = ls_estimate(&pilots, &self.pilots)?;
            out.extend(mmse_equalize(&data, &est, noise_var).data);
        }
        out.truncate(symbols.len());
        Ok((out, frames))
    }
}

/// Quantize, encode, modulate, transmit and recover one semantic vector.
pub fn hybrid_transmit(
    x: &[f64],
    quant: &MuLaw,
    code: &dyn ChannelCode,
    link: &DigitalLink,
    snr_db: Option<f64>,
    rng: &mut Rng,
) -> Result<HybridOutput> {
    let (codes, saturated) = quant.encode_all(x);
    let bits = bytes_to_bits(&codes);
    let mut coded = code.encode(&bits);
    let coded_len = coded.len();
    coded.resize(coded_len.div_ceil(3) * 3, 0);
    let symbols = qam8_map(&coded)?;
    let (rx, frames) = link.send(&symbols, snr_db, rng)?;
    let mut hard = qam8_demap(&rx);
    hard.truncate(coded_len);
    let llrs: Vec<f64> = hard.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
    let mut decoded = code.decode(&llrs)?;
    decoded.truncate(bits.len());
    let x_hat = bits_to_bytes(&decoded).into_iter().map(|c| quant.decode(c)).collect();
    Ok(HybridOutput {
        x_hat,
        symbols: symbols.len(),
        frames,
        saturated,
    })
}

/// Image codec plugged in front of the conventional digital pipeline. No codec
/// ships with the crate; [`RawBypass`] sends pixels uncompressed.
pub trait ImageCodec {
    fn compress(&self, pixels: &[u8]) -> Result<Vec<u8>>;
    fn decompress(&self, bytes: &[u8], len: usize) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RawBypass;

impl ImageCodec for RawBypass {
    fn compress(&self, pixels: &[u8]) -> Result<Vec<u8>> {
        Ok(pixels.to_vec())
    }

    fn decompress(&self, bytes: &[u8], len: usize) -> Result<Vec<u8>> {
        if bytes.len() < len {
            return Err(Error::LengthError(format!("{} bytes for a {len}-byte image", bytes.len())));
        }
        Ok(bytes[..len].to_vec())
    }
}

/// Conventional pipeline: codec bytes through the channel code, 8-QAM and OFDM.
pub fn conventional_transmit(
    pixels: &[u8],
    codec: &dyn ImageCodec,
    code: &dyn ChannelCode,
    link: &DigitalLink,
    snr_db: Option<f64>,
    rng: &mut Rng,
) -> Result<(Vec<u8>, usize)> {
    let bits = bytes_to_bits(&codec.compress(pixels)?);
    let mut coded = code.encode(&bits);
    let coded_len = coded.len();
    coded.resize(coded_len.div_ceil(3) * 3, 0);
    let symbols = qam8_map(&coded)?;
    let (rx, _) = link.send(&symbols, snr_db, rng)?;
    let mut hard = qam8_demap(&rx);
    hard.truncate(coded_len);
    let llrs: Vec<f64> = hard.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
    let mut decoded = code.decode(&llrs)?;
    decoded.truncate(bits.len());
    Ok((codec.decompress(&bits_to_bytes(&decoded), pixels.len())?, symbols.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::pilot_grid;
    use crate::seed::derive_rng;
    use rand::Rng as _;

    #[test]
    fn mulaw_endpoints() {
        let q = MuLaw::new(2.0).unwrap();
        assert_eq!(q.encode(0.0), 128);
        assert_eq!(q.encode(2.0), 255);
        assert_eq!(q.encode(-2.0), 0);
        assert_eq!(q.encode(7.0), 255);
        assert_eq!(q.decode(255), 2.0);
        assert_eq!(q.encode_all(&[3.0, -3.0, 0.1]).1, 2);
    }

    #[test]
    fn qam_table_properties() {
        let t = qam8_table();
        let energy: f64 = t.iter().map(|p| p.norm_sqr()).sum::<f64>() / 8.0;
        assert!((energy - 1.0).abs() < 1e-12);
        for l in 0..8usize {
            let bits = [(l >> 2) as u8 & 1, (l >> 1) as u8 & 1, l as u8 & 1];
            assert_eq!(qam8_demap(&qam8_map(&bits).unwrap()), bits);
        }
        assert!(matches!(qam8_map(&[0, 1]), Err(Error::LengthError(_))));
    }

    #[test]
    fn ldpc_roundtrip_and_correction() {
        let mut rng = derive_rng(5, "ldpc");
        let code = RegularLdpc::new(96, 32, 3, &mut rng).unwrap();
        let k = code.message_len();
        assert!(k >= 64);
        let msg: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
        let cw = code.encode(&msg);
        assert!(code.syndrome_ok(&cw));
        let mut llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 2.0 } else { -2.0 }).collect();
        assert_eq!(code.decode(&llr).unwrap(), msg);
        llr[7] = -llr[7] * 0.5;
        assert_eq!(code.decode(&llr).unwrap(), msg);
    }

    #[test]
    fn hybrid_noiseless_identity() {
        let ofdm = OfdmParams::default();
        let mut rng = derive_rng(2, "hybrid");
        let link = DigitalLink::new(ofdm, pilot_grid(&ofdm, &mut rng), ChannelParams { paths: 8, decay: 0.25, snr_db: 0.0 });
        let q = MuLaw::new(3.0).unwrap();
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let out = hybrid_transmit(&x, &q, &NullCode, &link, None, &mut rng).unwrap();
        let expect: Vec<f64> = x.iter().map(|&v| q.roundtrip(v)).collect();
        assert_eq!(out.x_hat, expect);
        assert_eq!(out.symbols, hybrid_symbols(200, NullCode.rate()));
    }
}
