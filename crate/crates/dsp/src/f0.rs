use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::framing::{frame_count, padded_segment};
use crate::wav::Waveform;
use crate::{DspError, Result, HOP_LENGTH, SAMPLE_RATE};

/// Per-frame fundamental frequency in Hz; `0.0` marks an unvoiced frame.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Contour {
    pub values_hz: Vec<f64>,
}

impl F0Contour {
    pub fn new(values_hz: Vec<f64>) -> Self {
        Self { values_hz }
    }

    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn voiced_mask(&self) -> Vec<bool> {
        self.values_hz.iter().map(|&f| f > 0.0).collect()
    }

    pub fn n_voiced(&self) -> usize {
        self.values_hz.iter().filter(|&&f| f > 0.0).count()
    }

    /// Voiced values only, in frame order.
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.values_hz.iter().copied().filter(|&f| f > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct YinConfig {
    pub sample_rate: u32,
    pub hop_length: usize,
    pub window: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
    /// Frames whose RMS falls below this are unvoiced without analysis.
    pub silence_rms: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            hop_length: HOP_LENGTH,
            window: 1024,
            f_min: 50.0,
            f_max: 600.0,
            threshold: 0.15,
            silence_rms: 1e-4,
        }
    }
}

/// YIN pitch tracker on the STFT frame grid.
///
/// The difference function sums over the first `window - tau_max` samples of
/// each frame, so every lag up to `tau_max` stays inside the frame.
#[derive(Clone)]
pub struct PitchTracker {
    cfg: YinConfig,
    tau_min: usize,
    tau_max: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    n_fft: usize,
}

impl std::fmt::Debug for PitchTracker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PitchTracker").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Default for PitchTracker {
    fn default() -> Self {
        Self::new(YinConfig::default())
    }
}

impl PitchTracker {
    pub fn new(cfg: YinConfig) -> Self {
        let sr = cfg.sample_rate as f64;
        let tau_min = (sr / cfg.f_max).ceil() as usize;
        let tau_max = (sr / cfg.f_min).floor() as usize;
        assert!(tau_min >= 2 && tau_max < cfg.window, "lag range must fit the window");
        let n_fft = (2 * cfg.window).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let ifft = planner.plan_fft_inverse(n_fft);
        Self { cfg, tau_min, tau_max, fft, ifft, n_fft }
    }

    pub fn config(&self) -> &YinConfig {
        &self.cfg
    }

    pub fn lag_range(&self) -> (usize, usize) {
        (self.tau_min, self.tau_max)
    }

    pub fn integration_window(&self) -> usize {
        self.cfg.window - self.tau_max
    }

    /// Difference function `d(tau)` for `tau` in `0..=tau_max` over one frame.
    pub fn difference(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.cfg.window);
        let w = self.integration_window();
        let mut a = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut b = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (j, &s) in frame.iter().enumerate() {
            b[j].re = s;
            if j < w {
                a[j].re = s;
            }
        }
        self.fft.process(&mut a);
        self.fft.process(&mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x = x.conj() * y;
        }
        self.ifft.process(&mut a);
        let scale = 1.0 / self.n_fft as f64;

        let mut prefix = Vec::with_capacity(frame.len() + 1);
        prefix.push(0.0);
        for &s in frame {
            prefix.push(prefix.last().unwrap() + s * s);
        }
        let e0 = prefix[w];
        (0..=self.tau_max)
            .map(|tau| {
                let e_tau = prefix[tau + w] - prefix[tau];
                (e0 + e_tau - 2.0 * a[tau].re * scale).max(0.0)
            })
            .collect()
    }

    /// F0 of one frame, or 0.0 when unvoiced.
    pub fn frame_f0(&self, frame: &[f64]) -> f64 {
        let rms = (frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64).sqrt();
        if rms < self.cfg.silence_rms {
            return 0.0;
        }
        let d = self.difference(frame);
        let cmnd = cumulative_mean_normalized(&d);
        let mut tau = self.tau_min;
        while tau <= self.tau_max && cmnd[tau] >= self.cfg.threshold {
            tau += 1;
        }
        if tau > self.tau_max {
            return 0.0;
        }
        while tau < self.tau_max && cmnd[tau + 1] < cmnd[tau] {
            tau += 1;
        }
        let refined = if tau > 0 && tau < self.tau_max {
            let (l, c, r) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = l - 2.0 * c + r;
            if denom.abs() > 1e-12 {
                tau as f64 + (0.5 * (l - r) / denom).clamp(-1.0, 1.0)
            } else {
                tau as f64
            }
        } else {
            tau as f64
        };
        let f0 = self.cfg.sample_rate as f64 / refined;
        if (self.cfg.f_min..=self.cfg.f_max).contains(&f0) {
            f0
        } else {
            0.0
        }
    }

    pub fn track(&self, x: &[f64]) -> F0Contour {
        let n_frames = frame_count(x.len(), self.cfg.hop_length);
        if x.is_empty() {
            return F0Contour::new(vec![0.0; n_frames]);
        }
        let mut frame = vec![0.0; self.cfg.window];
        let half = (self.cfg.window / 2) as isize;
        let values = (0..n_frames)
            .map(|t| {
                padded_segment(x, (t * self.cfg.hop_length) as isize - half, &mut frame);
                self.frame_f0(&frame)
            })
            .collect();
        F0Contour::new(values)
    }

    pub fn extract(&self, w: &Waveform) -> Result<F0Contour> {
        w.require_rate()?;
        Ok(self.track(w.samples()))
    }
}

fn cumulative_mean_normalized(d: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; d.len()];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        out[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    out
}

/// YIN F0 with the default settings.
pub fn extract_f0(w: &Waveform) -> Result<F0Contour> {
    PitchTracker::default().extract(w)
}

pub const STD_FLOOR: f64 = 1e-3;

/// Pooled voiced log-F0 moments (population standard deviation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeakerF0Stats {
    pub mean_log_f0: f64,
    pub std_log_f0: f64,
    pub n_voiced_frames: usize,
    /// Set when the empirical deviation fell below [`STD_FLOOR`] and was raised to it.
    pub floored: bool,
}

impl SpeakerF0Stats {
    pub fn from_contours<'a, I>(contours: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a F0Contour>,
    {
        let logs: Vec<f64> = contours
            .into_iter()
            .flat_map(|c| c.voiced().map(f64::ln))
            .collect();
        Self::from_log_values(&logs)
    }

    pub fn from_log_values(logs: &[f64]) -> Result<Self> {
        if logs.is_empty() {
            return Err(DspError::NoVoicedFrames);
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let floored = !(std >= STD_FLOOR);
        Ok(Self {
            mean_log_f0: mean,
            std_log_f0: if floored { STD_FLOOR } else { std },
            n_voiced_frames: logs.len(),
            floored,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.mean_log_f0.is_finite() && self.std_log_f0.is_finite() && self.std_log_f0 > 0.0
    }

    fn validate(&self, role: &str) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(DspError::InvalidStats(format!(
                "{role}: mean {} std {}",
                self.mean_log_f0, self.std_log_f0
            )))
        }
    }
}

/// Frame-level pitch embedding: standardized log-F0 on voiced frames, 0 elsewhere.
pub fn log_normalize_f0(f0: &F0Contour, stats: &SpeakerF0Stats) -> Result<Vec<f64>> {
    stats.validate("stats")?;
    Ok(f0
        .values_hz
        .iter()
        .map(|&f| {
            if f > 0.0 {
                (f.ln() - stats.mean_log_f0) / stats.std_log_f0
            } else {
                0.0
            }
        })
        .collect())
}

/// Inverse of [`log_normalize_f0`] on the frames marked voiced.
pub fn denormalize_f0(z: &[f64], voiced: &[bool], stats: &SpeakerF0Stats) -> Result<F0Contour> {
    stats.validate("stats")?;
    if z.len() != voiced.len() {
        return Err(DspError::LengthMismatch { what: "voicing mask", expected: z.len(), got: voiced.len() });
    }
    Ok(F0Contour::new(
        z.iter()
            .zip(voiced)
            .map(|(&v, &on)| if on { (v * stats.std_log_f0 + stats.mean_log_f0).exp() } else { 0.0 })
            .collect(),
    ))
}

/// Log-Gaussian transfer of voiced F0 from source to target statistics.
pub fn lg_convert_f0(src: &F0Contour, src_stats: &SpeakerF0Stats, tgt_stats: &SpeakerF0Stats) -> Result<F0Contour> {
    src_stats.validate("source stats")?;
    tgt_stats.validate("target stats")?;
    let ratio = tgt_stats.std_log_f0 / src_stats.std_log_f0;
    Ok(F0Contour::new(
        src.values_hz
            .iter()
            .map(|&f| {
                if f > 0.0 {
                    ((f.ln() - src_stats.mean_log_f0) * ratio + tgt_stats.mean_log_f0).exp()
                } else {
                    0.0
                }
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, std: f64) -> SpeakerF0Stats {
        SpeakerF0Stats { mean_log_f0: mean, std_log_f0: std, n_voiced_frames: 10, floored: false }
    }

    #[test]
    fn normalization_closed_forms() {
        let s = stats(5.0, 0.2);
        let f0 = F0Contour::new(vec![5f64.exp(), 5.2f64.exp(), 0.0]);
        let z = log_normalize_f0(&f0, &s).unwrap();
        assert!(z[0].abs() < 1e-12);
        assert!((z[1] - 1.0).abs() < 1e-12);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn lg_maps_200_to_100() {
        let src = stats(200f64.ln(), 0.1);
        let tgt = stats(100f64.ln(), 0.1);
        let out = lg_convert_f0(&F0Contour::new(vec![200.0, 0.0]), &src, &tgt).unwrap();
        assert!((out.values_hz[0] - 100.0).abs() < 1e-9);
        assert_eq!(out.values_hz[1], 0.0);
    }

    #[test]
    fn constant_contour_is_floored() {
        let s = SpeakerF0Stats::from_contours([&F0Contour::new(vec![200.0; 8])]).unwrap();
        assert!((s.mean_log_f0 - 200f64.ln()).abs() < 1e-12);
        assert!(s.floored);
        assert_eq!(s.std_log_f0, STD_FLOOR);
        assert_eq!(s.n_voiced_frames, 8);
    }

    #[test]
    fn invalid_stats_are_rejected() {
        let bad = stats(5.0, 0.0);
        assert!(matches!(
            log_normalize_f0(&F0Contour::new(vec![100.0]), &bad),
            Err(DspError::InvalidStats(_))
        ));
        assert!(matches!(
            SpeakerF0Stats::from_contours([&F0Contour::new(vec![0.0; 4])]),
            Err(DspError::NoVoicedFrames)
        ));
    }

    #[test]
    fn silence_is_unvoiced() {
        let c = PitchTracker::default().track(&vec![0.0; 4000]);
        assert_eq!(c.len(), 26);
        assert_eq!(c.n_voiced(), 0);
    }
}
