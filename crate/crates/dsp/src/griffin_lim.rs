use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use crate::mel::{MelAnalyzer, MelSpectrogram, Spectrum};
use crate::wav::Waveform;
use crate::Result;

/// Mel-to-waveform inversion: clamped pseudo-inverse of the filterbank, then
/// Griffin-Lim phase retrieval from a zero-phase start.
#[derive(Clone, Debug)]
pub struct GriffinLim {
    analyzer: MelAnalyzer,
    /// `n_bins × n_mels`.
    pinv: Vec<f64>,
    pub iterations: usize,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self::new(MelAnalyzer::default(), 60)
    }
}

impl GriffinLim {
    pub fn new(analyzer: MelAnalyzer, iterations: usize) -> Self {
        let n_mels = analyzer.config().n_mels;
        let n_bins = analyzer.n_bins();
        let fb = DMatrix::from_row_slice(n_mels, n_bins, analyzer.filterbank());
        let p = fb.pseudo_inverse(1e-10).expect("non-negative epsilon");
        let mut pinv = vec![0.0; n_bins * n_mels];
        for k in 0..n_bins {
            for m in 0..n_mels {
                pinv[k * n_mels + m] = p[(k, m)];
            }
        }
        Self { analyzer, pinv, iterations }
    }

    /// Linear magnitudes implied by a log-mel spectrogram, clamped at zero.
    pub fn linear_magnitudes(&self, mel: &MelSpectrogram) -> Spectrum {
        let n_mels = mel.n_mels();
        let n_bins = self.analyzer.n_bins();
        let mut data = Vec::with_capacity(mel.n_frames() * n_bins);
        let mut lin = vec![0.0; n_mels];
        for row in mel.rows() {
            for (l, v) in lin.iter_mut().zip(row) {
                *l = v.exp();
            }
            for k in 0..n_bins {
                let p = &self.pinv[k * n_mels..(k + 1) * n_mels];
                data.push(p.iter().zip(&lin).map(|(a, b)| a * b).sum::<f64>().max(0.0));
            }
        }
        Spectrum { n_frames: mel.n_frames(), n_bins, data }
    }

    pub fn invert(&self, mel: &MelSpectrogram) -> Result<Waveform> {
        let target = self.linear_magnitudes(mel);
        let cfg = self.analyzer.config();
        let len = mel.n_frames() * cfg.hop_length;
        let mut spectra: Vec<Complex<f64>> = target.data.iter().map(|&m| Complex::new(m, 0.0)).collect();
        let mut x = self.istft(&spectra, target.n_frames);
        let n_bins = target.n_bins;
        let mut seg = vec![0.0; cfg.win_length];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for _ in 0..self.iterations {
            for t in 0..target.n_frames {
                self.analyzer.frame_spectrum(&x, t, &mut seg, &mut buf);
                for k in 0..n_bins {
                    let c = buf[k];
                    let norm = c.norm();
                    let phase = if norm > 1e-12 { c / norm } else { Complex::new(1.0, 0.0) };
                    spectra[t * n_bins + k] = phase * target.data[t * n_bins + k];
                }
            }
            x = self.istft(&spectra, target.n_frames);
        }
        debug_assert_eq!(x.len(), len);
        Waveform::new(x, cfg.sample_rate)
    }

    /// Weighted overlap-add of half-spectra (`n_frames × n_bins`), length `n_frames * hop`.
    fn istft(&self, spectra: &[Complex<f64>], n_frames: usize) -> Vec<f64> {
        let cfg = self.analyzer.config();
        let n_bins = self.analyzer.n_bins();
        let len = n_frames * cfg.hop_length;
        let window = self.analyzer.window();
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let scale = 1.0 / cfg.n_fft as f64;
        for t in 0..n_frames {
            let row = &spectra[t * n_bins..(t + 1) * n_bins];
            buf[..n_bins].copy_from_slice(row);
            for k in n_bins..cfg.n_fft {
                buf[k] = row[cfg.n_fft - k].conj();
            }
            self.analyzer.ifft().process(&mut buf);
            let start = self.analyzer.frame_start(t);
            for (j, w) in window.iter().enumerate() {
                let i = start + j as isize;
                if i >= 0 && (i as usize) < len {
                    out[i as usize] += buf[j].re * scale * w;
                    norm[i as usize] += w * w;
                }
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}

/// Griffin-Lim resynthesis with default settings (60 iterations).
pub fn griffin_lim(mel: &MelSpectrogram) -> Result<Waveform> {
    GriffinLim::default().invert(mel)
}
