mod common;

use std::f64::consts::PI;

use common::{noise, pearson, sine, speech_like};
use dvc_dsp::{extract_f0, griffin_lim, mel_spectrogram, MelAnalyzer, Waveform, SAMPLE_RATE};
use proptest::prelude::*;

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, SAMPLE_RATE).unwrap()
}

#[test]
fn silence_sits_exactly_on_the_floor() {
    let mel = mel_spectrogram(&wave(vec![0.0; 8000])).unwrap();
    assert_eq!(mel.n_mels(), 80);
    assert_eq!(mel.n_frames(), 50);
    assert!(mel.data().iter().all(|&v| v == 1e-5f64.ln()));
}

#[test]
fn sine_peaks_in_the_band_centred_nearest_its_frequency() {
    let a = MelAnalyzer::default();
    let expected = a
        .band_centers_hz()
        .iter()
        .enumerate()
        .min_by(|x, y| (x.1 - 1000.0).abs().total_cmp(&(y.1 - 1000.0).abs()))
        .unwrap()
        .0;
    let mel = a.mel_spectrogram(&wave(sine(1000.0, 0.5, 16_000))).unwrap();
    for t in 3..mel.n_frames() - 3 {
        let row = mel.row(t);
        let argmax = (0..80).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        assert_eq!(argmax, expected, "frame {t}");
    }
}

/// Direct O(N^2) DFT power of a Hann-windowed, reflect-padded frame.
fn naive_frame_power(x: &[f64], t: usize) -> f64 {
    let (win, n_fft, hop) = (400usize, 1024usize, 160usize);
    let start = (t * hop) as isize - 200;
    let frame: Vec<f64> = (0..win)
        .map(|j| {
            let mut i = start + j as isize;
            if i < 0 {
                i = -i;
            }
            let len = x.len() as isize;
            if i >= len {
                i = 2 * (len - 1) - i;
            }
            let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / win as f64).cos();
            x[i as usize] * w
        })
        .collect();
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in frame.iter().enumerate() {
                let ang = -2.0 * PI * (k * j) as f64 / n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .sum()
}

#[test]
fn stft_energy_matches_naive_dft() {
    let x = noise(0.3, 4000, 7);
    let spec = MelAnalyzer::default().magnitudes(&x).unwrap();
    for t in [0, 11, spec.n_frames - 1] {
        let fast: f64 = spec.row(t).iter().map(|m| m * m).sum();
        let slow = naive_frame_power(&x, t);
        assert!((fast - slow).abs() / slow < 0.05, "frame {t}: {fast} vs {slow}");
    }
}

#[test]
fn analysis_is_pure() {
    let w = wave(speech_like(6000));
    assert_eq!(mel_spectrogram(&w).unwrap(), mel_spectrogram(&w).unwrap());
    assert_eq!(extract_f0(&w).unwrap(), extract_f0(&w).unwrap());
}

#[test]
fn griffin_lim_of_silence_is_quiet() {
    let mel = mel_spectrogram(&wave(vec![0.0; 8000])).unwrap();
    let out = griffin_lim(&mel).unwrap();
    assert_eq!(out.len(), mel.n_frames() * 160);
    assert!(out.rms() < 1e-3, "rms {}", out.rms());
}

#[test]
fn griffin_lim_preserves_a_sine_peak() {
    let mel = mel_spectrogram(&wave(sine(1000.0, 0.5, 16_000))).unwrap();
    let out = griffin_lim(&mel).unwrap();
    let mid = &out.samples()[4000..4000 + 1024];
    // 1024-point bins are 15.625 Hz wide; 1 kHz is bin 64
    let power: Vec<f64> = (0..=512)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in mid.iter().enumerate() {
                let ang = -2.0 * PI * (k * j) as f64 / 1024.0;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect();
    let peak = (0..power.len()).max_by(|&i, &j| power[i].total_cmp(&power[j])).unwrap();
    assert!((peak as i64 - 64).abs() <= 1, "peak bin {peak}");
}

#[test]
fn griffin_lim_round_trip_tracks_the_input() {
    let mel = mel_spectrogram(&wave(speech_like(16_000))).unwrap();
    let back = mel_spectrogram(&griffin_lim(&mel).unwrap()).unwrap();
    assert_eq!(back.n_frames(), mel.n_frames());
    for t in 2..mel.n_frames() - 2 {
        let r = pearson(mel.row(t), back.row(t));
        assert!(r > 0.9, "frame {t}: r = {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mel_and_f0_share_the_frame_grid(len in 400usize..5000, seed in 0u64..1000) {
        let w = wave(noise(0.2, len, seed));
        let mel = mel_spectrogram(&w).unwrap();
        let f0 = extract_f0(&w).unwrap();
        prop_assert_eq!(mel.n_frames(), f0.len());
        prop_assert_eq!(mel.n_frames() % 2, 0);
        prop_assert!(mel.n_frames() >= 2);
        prop_assert!(mel.data().iter().all(|&v| v >= 1e-5f64.ln()));
    }
}
