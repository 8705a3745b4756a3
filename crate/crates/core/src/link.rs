//! Differentiable frequency-domain link used in training and evaluation: maps JSCC
//! symbols onto OFDM frames, applies per-frame fading and noise, and assembles the
//! decoder's input planes.

use num_complex::Complex64;
use slscom_autograd::{Tensor, Var};

use crate::channel::{calibrate_noise, complex_normal, ls_estimate, pilot_grid, sample_channel, Grid};
use crate::config::{ChannelParams, ExperimentConfig, OfdmParams};
use crate::error::Result;
use crate::nn::DECODER_PLANES;
use crate::seed::{derive_rng, Rng};

/// Fixed link geometry and the experiment-wide pilot grid.
#[derive(Debug, Clone)]
pub struct Link {
    pub ofdm: OfdmParams,
    pub channel_len: usize,
    pub frames: usize,
    pub pilots: Grid,
    pub paths: usize,
    pub decay: f64,
}

/// Random quantities of one batch transmission: fading per frame and unit-variance
/// noise. Holding a draw fixed makes the link a deterministic function of the symbols.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub freq: Vec<Vec<Complex64>>,
    pub data_noise: Vec<Vec<Complex64>>,
    pub pilot_noise: Vec<Vec<Complex64>>,
}

/// Output of one pass: decoder planes `[n, 5, K, F N_s]` and the per-frame noise variances.
pub struct Received<'t> {
    pub planes: Var<'t>,
    pub noise_vars: Vec<f64>,
}

impl Link {
    /// Pilots are drawn once from the experiment's channel stream and then frozen.
    pub fn new(cfg: &ExperimentConfig, channel_len: usize, frames: usize) -> Self {
        let mut rng = derive_rng(cfg.seed, "channel/pilots");
        Self {
            ofdm: cfg.ofdm,
            channel_len,
            frames,
            pilots: pilot_grid(&cfg.ofdm, &mut rng),
            paths: cfg.paths,
            decay: cfg.decay,
        }
    }

    fn slots(&self) -> usize {
        self.ofdm.data_slots()
    }

    /// Planes width: data symbols of all frames side by side.
    pub fn plane_hw(&self) -> (usize, usize) {
        (self.ofdm.subcarriers, self.ofdm.data_symbols * self.frames)
    }

    /// Real column of `z` feeding each interleaved slot value: slot `j` carries symbol
    /// `j mod L_c`, so trailing slots repeat the leading symbols.
    fn slot_index(&self) -> Vec<usize> {
        let total = self.frames * self.slots();
        (0..total)
            .flat_map(|j| {
                let s = j % self.channel_len;
                [2 * s, 2 * s + 1]
            })
            .collect()
    }

    /// Permutation from per-frame interleaved slots to `[re plane, im plane]`, each plane
    /// `K x (F N_s)` row-major with column `f N_s + i`.
    fn plane_index(&self) -> Vec<usize> {
        let (k, ns) = (self.ofdm.subcarriers, self.ofdm.data_symbols);
        let width = ns * self.frames;
        let mut out = Vec::with_capacity(2 * k * width);
        for part in 0..2 {
            for sc in 0..k {
                for col in 0..width {
                    let (f, i) = (col / ns, col % ns);
                    out.push(2 * (f * self.slots() + i * k + sc) + part);
                }
            }
        }
        out
    }

    pub fn sample(&self, images: usize, channel_rng: &mut Rng, noise_rng: &mut Rng) -> ChannelDraw {
        let params = ChannelParams {
            paths: self.paths,
            decay: self.decay,
            snr_db: 0.0,
        };
        let n = images * self.frames;
        let k = self.ofdm.subcarriers;
        let freq = (0..n).map(|_| sample_channel(&params, k, channel_rng).freq).collect();
        let unit = |len: usize, rng: &mut Rng| (0..len).map(|_| complex_normal(rng, 1.0)).collect::<Vec<_>>();
        let data_noise = (0..n).map(|_| unit(self.slots(), noise_rng)).collect();
        let pilot_noise = (0..n).map(|_| unit(k * self.ofdm.pilot_symbols, noise_rng)).collect();
        ChannelDraw {
            freq,
            data_noise,
            pilot_noise,
        }
    }

    /// Transmit `[n, 2 L_c]` symbols at `snr_db`. The noise variance of each frame is
    /// calibrated from the symbol values unless `noise_vars` pins it; either way it is
    /// a constant for differentiation, as are fading and noise.
    pub fn transmit<'t>(
        &self,
        z: Var<'t>,
        snr_db: f64,
        draw: &ChannelDraw,
        noise_vars: Option<&[f64]>,
    ) -> Result<Received<'t>> {
        let n = z.shape()[0];
        let (k, s) = (self.ofdm.subcarriers, self.slots());
        let frames = n * self.frames;
        let tape = z.tape();
        let slots = z.gather_cols(&self.slot_index()).reshape(&[frames, 2 * s]);
        let sv = slots.value();

        let mut gain = vec![0.0; frames * 2 * s];
        let mut offset = vec![0.0; frames * 2 * s];
        let mut vars = Vec::with_capacity(frames);
        let mut est_planes = vec![0.0; n * 3 * k * self.ofdm.data_symbols * self.frames];
        let width = self.ofdm.data_symbols * self.frames;
        for fr in 0..frames {
            let h = &draw.freq[fr];
            let row = &sv.data()[fr * 2 * s..(fr + 1) * 2 * s];
            let grid = Grid::from_vec(k, self.ofdm.data_symbols, row.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())?;
            let var = match noise_vars {
                Some(v) => v[fr],
                None => calibrate_noise(h, &grid, snr_db),
            };
            vars.push(var);
            let sd = var.sqrt();
            for j in 0..s {
                let hk = h[j % k];
                let nz = draw.data_noise[fr][j] * sd;
                let o = fr * 2 * s + 2 * j;
                gain[o] = hk.re;
                gain[o + 1] = hk.im;
                offset[o] = nz.re;
                offset[o + 1] = nz.im;
            }
            // received pilots and LS estimate (constants)
            let mut rx_p = self.pilots.clone();
            for (idx, v) in rx_p.data.iter_mut().enumerate() {
                *v = *v * h[idx % k] + draw.pilot_noise[fr][idx] * sd;
            }
            let est = ls_estimate(&rx_p, &self.pilots)?;
            let (img, f) = (fr / self.frames, fr % self.frames);
            let base = img * 3 * k * width;
            for sc in 0..k {
                for i in 0..self.ofdm.data_symbols {
                    let col = f * self.ofdm.data_symbols + i;
                    est_planes[base + sc * width + col] = est[sc].re;
                    est_planes[base + k * width + sc * width + col] = est[sc].im;
                    est_planes[base + 2 * k * width + sc * width + col] = var;
                }
            }
        }
        let shape = [frames, 2 * s];
        let rx = slots.complex_affine(
            &Tensor::from_vec(&shape, gain)?,
            &Tensor::from_vec(&shape, offset)?,
        );
        let rx_planes = rx.reshape(&[n, frames / n * 2 * s]).gather_cols(&self.plane_index());
        let side = tape.constant(Tensor::from_vec(&[n, 3 * k * width], est_planes)?);
        let planes = slscom_autograd::Var::concat_cols(&[rx_planes, side]).reshape(&[n, DECODER_PLANES, k, width]);
        Ok(Received {
            planes,
            noise_vars: vars,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::transmit_freq;
    use slscom_autograd::Tape;

    fn link(cfg: &ExperimentConfig) -> Link {
        let d = cfg.dims().unwrap();
        Link::new(cfg, d.channel_len, d.frames_per_image)
    }

    #[test]
    fn matches_grid_transmission_and_plane_layout() {
        let cfg = ExperimentConfig::paper_r34();
        let l = link(&cfg);
        let mut rng = derive_rng(0, "z");
        let zs: Vec<f64> = (0..2 * 2 * 384).map(|_| complex_normal(&mut rng, 1.0).re).collect();
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_vec(&[2, 768], zs.clone()).unwrap());
        let draw = l.sample(2, &mut derive_rng(0, "c"), &mut derive_rng(0, "n"));
        let rec = l.transmit(z, 5.0, &draw, None).unwrap();
        assert_eq!(rec.planes.shape(), vec![2, 5, 64, 6]);
        let planes = rec.planes.value();
        // image 1, subcarrier 3, symbol 4
        let (img, sc, i) = (1, 3, 4);
        let sym = Complex64::new(zs[img * 768 + 2 * (i * 64 + sc)], zs[img * 768 + 2 * (i * 64 + sc) + 1]);
        let fr = img;
        let expect = draw.freq[fr][sc] * sym + draw.data_noise[fr][i * 64 + sc] * rec.noise_vars[fr].sqrt();
        let at = |c: usize| planes.data()[img * 5 * 384 + c * 384 + sc * 6 + i];
        assert!((at(0) - expect.re).abs() < 1e-12 && (at(1) - expect.im).abs() < 1e-12);
        assert_eq!(at(4), rec.noise_vars[fr]);
        // Same frame through the grid-level model, using the same randomness.
        let grid = Grid::from_vec(64, 6, zs[768..].chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()).unwrap();
        let (clean, _) = transmit_freq(&grid, &l.pilots, &draw.freq[1], 0.0, &mut derive_rng(9, "unused"));
        assert!((clean.at(sc, i) - draw.freq[1][sc] * sym).norm() < 1e-12);
    }

    #[test]
    fn symbols_repeat_when_frame_is_larger() {
        let cfg = ExperimentConfig::desk();
        let l = link(&cfg);
        assert_eq!((l.channel_len, l.frames), (64, 1));
        let idx = l.slot_index();
        assert_eq!(idx.len(), 2 * 384);
        assert_eq!(idx[2 * 64], 0);
        assert_eq!(idx[2 * 65 + 1], 3);
    }

    #[test]
    fn two_frame_layout_for_long_codewords() {
        let cfg = ExperimentConfig::paper_r50();
        let l = link(&cfg);
        assert_eq!((l.channel_len, l.frames, l.plane_hw()), (768, 2, (64, 12)));
    }
}
