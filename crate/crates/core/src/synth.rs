//! Synthetic multi-speaker, multi-style corpus with known factors.
//!
//! A speaker is a fixed three-formant envelope plus a base pitch. A style is
//! a pitch-contour family (level shift, vibrato, slope) plus an amplitude
//! modulation. Content is a sequence of held segments, each one of eight
//! symbols that reweight the formants and add a high resonance; the formant
//! centres themselves never move.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use dvc_dsp::{extract_f0, frame_count, load_wav, mel_spectrogram, save_wav, Features, Waveform, HOP_LENGTH, SAMPLE_RATE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::parse_pairs;
use crate::error::CoreError;
use crate::pipeline::manifest::{Manifest, ManifestEntry, Split};
use crate::Result;

pub const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 1800.0), (1800.0, 3000.0)];
pub const PITCH_RANGE: (f64, f64) = (100.0, 260.0);
pub const N_SYMBOLS: usize = 8;
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 140.0];
const FORMANT_TILT: [f64; 3] = [1.0, 0.7, 0.5];
const HIGH_RANGE: (f64, f64) = (3200.0, 6500.0);
const HIGH_BANDWIDTH: f64 = 400.0;
const HARMONIC_CEILING_HZ: f64 = 7600.0;
const PAD_S: f64 = 0.05;
const EDGE_FADE_S: f64 = 0.01;
const CROSSFADE_S: f64 = 0.02;
const VIBRATO_HZ: f64 = 5.5;
/// Range of the per-speaker source roll-off corner: harmonic amplitude falls
/// as `tilt / (tilt + f)`.
pub const TILT_RANGE: (f64, f64) = (250.0, 900.0);
/// Width of the low-frequency source resonance that keeps the fundamental strong.
const GLOTTAL_HZ: f64 = 250.0;
const OUTPUT_GAIN: f64 = 0.1;
/// Amplitude and pitch are evaluated every this many samples and interpolated.
const CONTROL_BLOCK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub n_styles: usize,
    pub train_per_cell: usize,
    pub val_per_cell: usize,
    pub test_per_cell: usize,
    pub utt_len_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_speakers: 4, n_styles: 3, train_per_cell: 20, val_per_cell: 5, test_per_cell: 5, utt_len_s: 1.0, seed: 0 }
    }
}

pub const SPEC_KEYS: &[(&str, &str)] = &[
    ("n_speakers", "number of speakers (at least 2)"),
    ("n_styles", "number of styles (at least 2)"),
    ("train_per_cell", "training utterances per speaker and style"),
    ("val_per_cell", "validation utterances per speaker and style"),
    ("test_per_cell", "test utterances per speaker and style"),
    ("utt_len_s", "utterance length in seconds, silence pads included"),
    ("seed", "generator seed"),
];

impl SynthSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || CoreError::Config(format!("spec key `{key}`: cannot parse `{value}`"));
        match key {
            "n_speakers" => self.n_speakers = value.parse().map_err(|_| bad())?,
            "n_styles" => self.n_styles = value.parse().map_err(|_| bad())?,
            "train_per_cell" => self.train_per_cell = value.parse().map_err(|_| bad())?,
            "val_per_cell" => self.val_per_cell = value.parse().map_err(|_| bad())?,
            "test_per_cell" => self.test_per_cell = value.parse().map_err(|_| bad())?,
            "utt_len_s" => self.utt_len_s = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(CoreError::Config(format!("unknown spec key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_speakers" => self.n_speakers.to_string(),
            "n_styles" => self.n_styles.to_string(),
            "train_per_cell" => self.train_per_cell.to_string(),
            "val_per_cell" => self.val_per_cell.to_string(),
            "test_per_cell" => self.test_per_cell.to_string(),
            "utt_len_s" => self.utt_len_s.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let pairs = parse_pairs(text)?;
        for (i, (k, v)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|(p, _)| p == k) {
                return Err(CoreError::Config(format!("duplicate spec key `{k}`")));
            }
            spec.set(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CoreError::io(path))?;
        Self::from_text(&text)
    }

    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, _) in SPEC_KEYS {
            writeln!(out, "{k} = {}", self.get(k).expect("listed key")).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 || self.n_styles < 2 {
            return Err(CoreError::Config("synthetic corpus needs at least 2 speakers and 2 styles".into()));
        }
        if self.train_per_cell == 0 || self.val_per_cell == 0 || self.test_per_cell == 0 {
            return Err(CoreError::Config("every split needs at least one utterance per cell".into()));
        }
        let voiced = self.utt_len_s - 2.0 * PAD_S;
        if !(self.utt_len_s.is_finite() && voiced >= 0.2) {
            return Err(CoreError::Config(format!("utt_len_s must be at least {}", 0.2 + 2.0 * PAD_S)));
        }
        Ok(())
    }

    pub fn per_cell(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_cell,
            Split::Val => self.val_per_cell,
            Split::Test => self.test_per_cell,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerFactor {
    pub formants_hz: [f64; 3],
    pub base_f0_hz: f64,
    pub tilt_hz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleFactor {
    /// Multiplicative level change, in log units.
    pub log_shift: f64,
    /// Relative vibrato depth.
    pub vibrato_depth: f64,
    /// Log-F0 change per second about the utterance midpoint.
    pub slope_per_s: f64,
    pub energy_depth: f64,
    pub energy_rate_hz: f64,
}

/// `n` draws from `[lo, hi]`, one per equal-width stratum, in shuffled order.
fn stratified(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + w * (i as f64 + rng.random_range(0.15..0.85))).collect();
    v.shuffle(rng);
    v
}

pub fn speaker_factors(spec: &SynthSpec) -> Vec<SpeakerFactor> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_speakers;
    let f: Vec<Vec<f64>> = FORMANT_RANGES.iter().map(|&(lo, hi)| stratified(&mut rng, n, lo, hi)).collect();
    let p = stratified(&mut rng, n, PITCH_RANGE.0, PITCH_RANGE.1);
    let tilt = stratified(&mut rng, n, TILT_RANGE.0, TILT_RANGE.1);
    (0..n)
        .map(|s| SpeakerFactor { formants_hz: [f[0][s], f[1][s], f[2][s]], base_f0_hz: p[s], tilt_hz: tilt[s] })
        .collect()
}

pub fn style_factors(spec: &SynthSpec) -> Vec<StyleFactor> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let n = spec.n_styles;
    let shift = stratified(&mut rng, n, -0.06, 0.06);
    let depth = stratified(&mut rng, n, 0.0, 0.008);
    let slope = stratified(&mut rng, n, -0.15, 0.15);
    let energy = stratified(&mut rng, n, 0.0, 0.4);
    let rate = stratified(&mut rng, n, 2.0, 5.0);
    (0..n)
        .map(|e| StyleFactor {
            log_shift: shift[e],
            vibrato_depth: depth[e],
            slope_per_s: slope[e],
            energy_depth: energy[e],
            energy_rate_hz: rate[e],
        })
        .collect()
}

/// `(formant gains, high resonance centre)` of a content symbol.
pub fn symbol_shape(k: usize) -> ([f64; 3], f64) {
    let gains = std::array::from_fn(|j| FORMANT_TILT[j] * if k >> j & 1 == 1 { 1.0 } else { 0.3 });
    let high = HIGH_RANGE.0 + (HIGH_RANGE.1 - HIGH_RANGE.0) * k as f64 / (N_SYMBOLS - 1) as f64;
    (gains, high)
}

fn resonance(f: f64, centre: f64, bw: f64) -> f64 {
    let x = (f - centre) / bw;
    1.0 / (1.0 + x * x)
}

/// Spectral envelope magnitude of `speaker` at `f` under content symbol `k`.
pub fn envelope(speaker: &SpeakerFactor, k: usize, f: f64) -> f64 {
    let (gains, high) = symbol_shape(k);
    let mut e = 0.01 + 0.5 * resonance(f, high, HIGH_BANDWIDTH) + 0.6 * resonance(f, 0.0, GLOTTAL_HZ);
    for j in 0..3 {
        e += gains[j] * resonance(f, speaker.formants_hz[j], BANDWIDTHS[j]);
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub style: usize,
    pub split: Split,
    pub content: Vec<usize>,
    pub wav: Waveform,
    /// Generator pitch at each analysis frame centre; 0 in the silence pads.
    pub true_f0: Vec<f64>,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s}")
}

pub fn style_id(e: usize) -> String {
    format!("sty{e}")
}

/// Synthesize one utterance. `stream` selects an independent random stream.
pub fn synthesize(
    spec: &SynthSpec,
    speaker: &SpeakerFactor,
    style: &StyleFactor,
    stream: u64,
) -> Result<(Waveform, Vec<usize>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream + 2);
    let sr = SAMPLE_RATE as f64;
    let n = (spec.utt_len_s * sr).round() as usize;
    let pad = (PAD_S * sr).round() as usize;
    let voiced_len = n - 2 * pad;
    let dur = voiced_len as f64 / sr;

    let n_seg = rng.random_range(3..=6);
    let content: Vec<usize> = (0..n_seg).map(|_| rng.random_range(0..N_SYMBOLS)).collect();
    // segment boundaries: equal split with jitter of a quarter segment
    let seg = dur / n_seg as f64;
    let bounds: Vec<f64> = (1..n_seg).map(|i| seg * (i as f64 + rng.random_range(-0.25..0.25))).collect();
    let level = rng.random_range(-0.03..0.03);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let en_phase = rng.random_range(0.0..2.0 * PI);

    let f0_at = |t: f64| {
        let log = speaker.base_f0_hz.ln() + style.log_shift + level + style.slope_per_s * (t - dur / 2.0);
        log.exp() * (1.0 + style.vibrato_depth * (2.0 * PI * VIBRATO_HZ * t + vib_phase).sin())
    };
    // symbol weights at time t: (index, weight) pairs summing to 1
    let symbols_at = |t: f64| -> [(usize, f64); 2] {
        let i = bounds.iter().filter(|&&b| b <= t).count();
        if let Some(&b) = bounds.get(i) {
            let w = ((t - (b - CROSSFADE_S / 2.0)) / CROSSFADE_S).clamp(0.0, 1.0);
            if w > 0.0 {
                return [(content[i], 1.0 - w), (content[i + 1], w)];
            }
        }
        if i > 0 {
            let b = bounds[i - 1];
            let w = ((t - (b - CROSSFADE_S / 2.0)) / CROSSFADE_S).clamp(0.0, 1.0);
            if w < 1.0 {
                return [(content[i - 1], 1.0 - w), (content[i], w)];
            }
        }
        [(content[i], 1.0), (content[i], 0.0)]
    };
    let gain_at = |t: f64| {
        let fade = (t / EDGE_FADE_S).min((dur - t) / EDGE_FADE_S).clamp(0.0, 1.0);
        let energy = 1.0 + style.energy_depth * (2.0 * PI * style.energy_rate_hz * t + en_phase).sin();
        OUTPUT_GAIN * fade * energy
    };
    let max_harmonics = (HARMONIC_CEILING_HZ / 40.0) as usize;
    let amplitudes_at = |t: f64, f0: f64| -> Vec<f64> {
        let h = ((HARMONIC_CEILING_HZ / f0) as usize).clamp(1, max_harmonics);
        let sym = symbols_at(t);
        let mut a: Vec<f64> = (1..=h)
            .map(|k| {
                let f = k as f64 * f0;
                let e: f64 = sym.iter().map(|&(s, w)| w * envelope(speaker, s, f)).sum();
                e * speaker.tilt_hz / (speaker.tilt_hz + f)
            })
            .collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = gain_at(t) / norm;
        a.iter_mut().for_each(|v| *v *= g);
        a
    };

    let mut samples = vec![0.0; n];
    let n_blocks = voiced_len.div_ceil(CONTROL_BLOCK);
    let mut ctrl: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n_blocks + 1);
    for b in 0..=n_blocks {
        let t = (b * CONTROL_BLOCK).min(voiced_len) as f64 / sr;
        let f0 = f0_at(t);
        ctrl.push((f0, amplitudes_at(t, f0)));
    }
    let mut phase = 0.0;
    for i in 0..voiced_len {
        let b = i / CONTROL_BLOCK;
        let w = (i % CONTROL_BLOCK) as f64 / CONTROL_BLOCK as f64;
        let (f_a, a_a) = &ctrl[b];
        let (f_b, a_b) = &ctrl[b + 1];
        let f0 = f_a + w * (f_b - f_a);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let h = a_a.len().min(a_b.len());
        // sin(kφ) by the recurrence sin((k+1)φ) = 2cos φ sin(kφ) − sin((k−1)φ)
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut x = 0.0;
        for k in 0..h {
            x += (a_a[k] + w * (a_b[k] - a_a[k])) * cur;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        samples[pad + i] = x;
    }

    let frames = frame_count(n, HOP_LENGTH);
    let true_f0 = (0..frames)
        .map(|t| {
            let c = t * HOP_LENGTH;
            if c >= pad && c < pad + voiced_len {
                f0_at((c - pad) as f64 / sr)
            } else {
                0.0
            }
        })
        .collect();
    Ok((Waveform::new(samples, SAMPLE_RATE)?, content, true_f0))
}

/// Every utterance of the corpus in manifest order: split, speaker, style, index.
pub fn utterances(spec: &SynthSpec) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    let speakers = speaker_factors(spec);
    let styles = style_factors(spec);
    let mut out = Vec::new();
    let mut stream = 0u64;
    for split in [Split::Train, Split::Val, Split::Test] {
        for (s, sp) in speakers.iter().enumerate() {
            for (e, st) in styles.iter().enumerate() {
                for i in 0..spec.per_cell(split) {
                    let (wav, content, true_f0) = synthesize(spec, sp, st, stream)?;
                    stream += 1;
                    out.push(SynthUtterance {
                        id: format!("s{s}_e{e}_{}_{i:02}", split.as_str()),
                        speaker: s,
                        style: e,
                        split,
                        content,
                        wav,
                        true_f0,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub const TRUTH_HEADER: &str = "utt_id,speaker_id,style_id,split,content,true_f0_hz";

/// Write `wav/`, `features/`, `manifest.tsv`, `truth.csv` and `spec.txt` under `out_dir`.
/// Features are computed from the written 16-bit files.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let utts = utterances(spec)?;
    let wav_dir = out_dir.join("wav");
    let feat_dir = out_dir.join("features");
    for d in [&wav_dir, &feat_dir] {
        std::fs::create_dir_all(d).map_err(CoreError::io(d))?;
    }
    let mut entries = Vec::with_capacity(utts.len());
    let mut truth = format!("{TRUTH_HEADER}\n");
    for u in &utts {
        let wav_path = wav_dir.join(format!("{}.wav", u.id));
        save_wav(&u.wav, &wav_path)?;
        let w = load_wav(&wav_path)?;
        let feats = Features::new(mel_spectrogram(&w)?, Some(extract_f0(&w)?))?;
        let rel = format!("features/{}.dvc", u.id);
        feats.write(out_dir.join(&rel))?;
        entries.push(ManifestEntry { speaker: speaker_id(u.speaker), style: style_id(u.style), split: u.split, feature_path: rel });
        let content: Vec<String> = u.content.iter().map(usize::to_string).collect();
        let f0: Vec<String> = u.true_f0.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(
            truth,
            "{},{},{},{},{},{}",
            u.id,
            speaker_id(u.speaker),
            style_id(u.style),
            u.split.as_str(),
            content.join(" "),
            f0.join(" ")
        )
        .unwrap();
    }
    let manifest = Manifest { entries, base_dir: out_dir.to_path_buf() };
    for (name, body) in [("manifest.tsv", manifest.to_text()), ("truth.csv", truth), ("spec.txt", spec.echo())] {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(CoreError::io(&p))?;
    }
    Ok(manifest)
}
