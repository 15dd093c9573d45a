use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::framing::{frame_count, padded_segment};
use crate::wav::Waveform;
use crate::{DspError, Result, HOP_LENGTH, N_MELS, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            win_length: 400,
            hop_length: HOP_LENGTH,
            n_fft: 1024,
            n_mels: N_MELS,
            f_min: 80.0,
            f_max: 7600.0,
            log_floor: 1e-5,
        }
    }
}

/// `n_frames × n_mels` natural-log mel energies, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    n_frames: usize,
    n_mels: usize,
    data: Vec<f64>,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
}

impl MelSpectrogram {
    pub fn new(n_frames: usize, n_mels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_frames * n_mels {
            return Err(DspError::LengthMismatch {
                what: "mel data",
                expected: n_frames * n_mels,
                got: data.len(),
            });
        }
        let cfg = MelConfig::default();
        Ok(Self {
            n_frames,
            n_mels,
            data,
            frame_hop_s: cfg.hop_length as f64 / cfg.sample_rate as f64,
            frame_len_s: cfg.win_length as f64 / cfg.sample_rate as f64,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_mels)
    }
}

/// Linear STFT magnitudes, `n_frames × n_bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

impl Spectrum {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// STFT framing plus area-normalized triangular mel filterbank.
///
/// Frame `t` is centred on sample `t * hop`; the windowed samples occupy the
/// first `win_length` entries of the FFT buffer, the rest is zero.
#[derive(Clone)]
pub struct MelAnalyzer {
    cfg: MelConfig,
    window: Vec<f64>,
    filterbank: Vec<f64>,
    band_edges_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelAnalyzer").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Default for MelAnalyzer {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Self {
        assert!(cfg.win_length <= cfg.n_fft && cfg.n_mels >= 1);
        let window = hann(cfg.win_length);
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut filterbank = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                filterbank[m * n_bins + k] = w * norm;
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(cfg.n_fft);
        let ifft = planner.plan_fft_inverse(cfg.n_fft);
        Self { cfg, window, filterbank, band_edges_hz: edges, fft, ifft }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn n_bins(&self) -> usize {
        self.cfg.n_fft / 2 + 1
    }

    /// Row-major `n_mels × n_bins` filter weights.
    pub fn filterbank(&self) -> &[f64] {
        &self.filterbank
    }

    /// Peak frequency of each triangular filter.
    pub fn band_centers_hz(&self) -> &[f64] {
        &self.band_edges_hz[1..=self.cfg.n_mels]
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn n_frames(&self, len: usize) -> usize {
        frame_count(len, self.cfg.hop_length)
    }

    pub(crate) fn frame_start(&self, t: usize) -> isize {
        (t * self.cfg.hop_length) as isize - (self.cfg.win_length / 2) as isize
    }

    pub(crate) fn ifft(&self) -> &Arc<dyn Fft<f64>> {
        &self.ifft
    }

    /// Complex spectrum of frame `t`, written into `buf` (length `n_fft`).
    pub(crate) fn frame_spectrum(&self, x: &[f64], t: usize, seg: &mut [f64], buf: &mut [Complex<f64>]) {
        padded_segment(x, self.frame_start(t), seg);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < seg.len() {
                Complex::new(seg[k] * self.window[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        self.fft.process(buf);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.cfg.win_length {
            return Err(DspError::TooShort { len, min: self.cfg.win_length });
        }
        Ok(())
    }

    pub fn magnitudes(&self, x: &[f64]) -> Result<Spectrum> {
        self.check_len(x.len())?;
        let n_frames = self.n_frames(x.len());
        let n_bins = self.n_bins();
        let mut seg = vec![0.0; self.cfg.win_length];
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut data = Vec::with_capacity(n_frames * n_bins);
        for t in 0..n_frames {
            self.frame_spectrum(x, t, &mut seg, &mut buf);
            data.extend(buf[..n_bins].iter().map(|c| c.norm()));
        }
        Ok(Spectrum { n_frames, n_bins, data })
    }

    /// Linear mel energies of one magnitude row.
    pub fn mel_energies(&self, mag: &[f64], out: &mut [f64]) {
        let n_bins = self.n_bins();
        for (m, o) in out.iter_mut().enumerate() {
            let fb = &self.filterbank[m * n_bins..(m + 1) * n_bins];
            *o = fb.iter().zip(mag).map(|(w, a)| w * a).sum();
        }
    }

    pub fn log_mel(&self, spec: &Spectrum) -> MelSpectrogram {
        let n_mels = self.cfg.n_mels;
        let mut data = vec![0.0; spec.n_frames * n_mels];
        for t in 0..spec.n_frames {
            let out = &mut data[t * n_mels..(t + 1) * n_mels];
            self.mel_energies(spec.row(t), out);
            for v in out.iter_mut() {
                *v = v.max(self.cfg.log_floor).ln();
            }
        }
        let mut mel = MelSpectrogram::new(spec.n_frames, n_mels, data).expect("sized above");
        mel.frame_hop_s = self.cfg.hop_length as f64 / self.cfg.sample_rate as f64;
        mel.frame_len_s = self.cfg.win_length as f64 / self.cfg.sample_rate as f64;
        mel
    }

    pub fn mel_spectrogram(&self, w: &Waveform) -> Result<MelSpectrogram> {
        w.require_rate()?;
        Ok(self.log_mel(&self.magnitudes(w.samples())?))
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel spectrogram with the default analysis settings.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    MelAnalyzer::default().mel_spectrogram(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 80.0, 500.0, 1000.0, 3000.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_have_unit_area_in_hz() {
        let a = MelAnalyzer::default();
        let bin_hz = 16000.0 / 1024.0;
        let n_bins = a.n_bins();
        // wide high bands are sampled finely enough for the Riemann sum
        for m in [40, 60, 79] {
            let area: f64 = a.filterbank()[m * n_bins..(m + 1) * n_bins].iter().sum::<f64>() * bin_hz;
            assert!((area - 1.0).abs() < 0.05, "band {m}: {area}");
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let a = MelAnalyzer::default();
        assert!(matches!(a.magnitudes(&[0.0; 399]), Err(DspError::TooShort { len: 399, min: 400 })));
    }
}
