//! Line-based `key = value` configuration with presets.
//!
//! Resolution order: built-in defaults, then the `preset` key, then every
//! other key from the file, then command-line overrides.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

/// Network sizes. Every field is a documented config key.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub d_style: usize,
    pub d_speaker: usize,
    pub code_dim: usize,
    pub n_codes: usize,
    pub style_channels: Vec<usize>,
    pub style_gru: usize,
    pub style_fc: usize,
    pub content_conv: usize,
    pub content_linear: usize,
    pub content_rnn: usize,
    pub speaker_bank_kernels: usize,
    pub speaker_bank_channels: usize,
    pub speaker_conv_channels: usize,
    pub speaker_conv_layers: usize,
    pub speaker_linear: usize,
    pub decoder_lstm: usize,
    pub decoder_conv: usize,
    pub decoder_post_lstm: usize,
    pub mi_hidden: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            n_mels: 80,
            d_style: 16,
            d_speaker: 16,
            code_dim: 16,
            n_codes: 64,
            style_channels: vec![8, 8, 16, 16, 32, 32],
            style_gru: 32,
            style_fc: 32,
            content_conv: 64,
            content_linear: 64,
            content_rnn: 32,
            speaker_bank_kernels: 8,
            speaker_bank_channels: 8,
            speaker_conv_channels: 32,
            speaker_conv_layers: 12,
            speaker_linear: 64,
            decoder_lstm: 128,
            decoder_conv: 64,
            decoder_post_lstm: 64,
            mi_hidden: 64,
        }
    }

    pub fn paper() -> Self {
        Self {
            n_mels: 80,
            d_style: 256,
            d_speaker: 256,
            code_dim: 64,
            n_codes: 512,
            style_channels: vec![32, 32, 64, 64, 128, 128],
            style_gru: 256,
            style_fc: 256,
            content_conv: 512,
            content_linear: 512,
            content_rnn: 256,
            speaker_bank_kernels: 8,
            speaker_bank_channels: 128,
            speaker_conv_channels: 256,
            speaker_conv_layers: 12,
            speaker_linear: 256,
            decoder_lstm: 1024,
            decoder_conv: 512,
            decoder_post_lstm: 1024,
            mi_hidden: 512,
        }
    }

    /// Width of the decoder input: content, speaker, style and one pitch channel.
    pub fn decoder_input(&self) -> usize {
        self.code_dim + self.d_speaker + self.d_style + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiWeights {
    pub sp: f64,
    pub sc: f64,
    pub sf: f64,
    pub pc: f64,
    pub pf: f64,
    pub cf: f64,
}

impl MiWeights {
    pub fn uniform(w: f64) -> Self {
        Self { sp: w, sc: w, sf: w, pc: w, pf: w, cf: w }
    }

    /// Weights in pair order `sp, sc, sf, pc, pf, cf`.
    pub fn as_array(&self) -> [f64; 6] {
        [self.sp, self.sc, self.sf, self.pc, self.pf, self.cf]
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&w| w == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsMode {
    /// One F0 table row per speaker.
    Speaker,
    /// One row per speaker and style, keyed `speaker:style`.
    SpeakerStyle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub halve_every: usize,
    pub mi_warmup_epochs: usize,
    pub mi_weights: MiWeights,
    pub vq_beta: f64,
    pub ema_decay: f64,
    pub f0_stats: StatsMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            crop_frames: 128,
            base_lr: 1e-3,
            warmup_epochs: 15,
            halve_every: 100,
            mi_warmup_epochs: 15,
            mi_weights: MiWeights::uniform(0.01),
            vq_beta: 0.25,
            ema_decay: 0.99,
            f0_stats: StatsMode::Speaker,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self { epochs: 500, batch_size: 128, crop_frames: 256, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(CoreError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config(format!(
                "batch_size {} is too small: the vCLUB estimate needs N >= 2 paired samples per batch",
                self.batch_size
            )));
        }
        if self.crop_frames < 4 || self.crop_frames % 2 != 0 {
            return Err(CoreError::Config("crop_frames must be even and at least 4".into()));
        }
        if self.warmup_epochs < 1 || self.halve_every < 1 {
            return Err(CoreError::Config("warmup_epochs and halve_every must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0) {
            return Err(CoreError::Config("base_lr must be non-negative".into()));
        }
        if self.mi_weights.as_array().iter().any(|w| !(*w >= 0.0)) {
            return Err(CoreError::Config("MI weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(CoreError::Config("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Effective configuration of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub yin_threshold: f64,
    pub gl_iterations: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self::for_preset(Preset::Desk)
    }
}

/// Every key with its one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "size preset, desk or paper; sets every model and schedule default below"),
    ("seed", "seed for initialization, batching and cropping"),
    ("epochs", "training epochs"),
    ("batch_size", "utterances per step (at least 2)"),
    ("crop_frames", "training crop length in frames (even)"),
    ("base_lr", "peak learning rate"),
    ("warmup_epochs", "linear learning-rate warm-up length"),
    ("halve_every", "learning rate halves every this many epochs"),
    ("mi_warmup_epochs", "epochs before the MI penalty enters the loss"),
    ("lambda_sp", "MI weight, style vs speaker"),
    ("lambda_sc", "MI weight, style vs content"),
    ("lambda_sf", "MI weight, style vs pitch"),
    ("lambda_pc", "MI weight, speaker vs content"),
    ("lambda_pf", "MI weight, speaker vs pitch"),
    ("lambda_cf", "MI weight, content vs pitch"),
    ("vq_beta", "commitment weight"),
    ("ema_decay", "codebook moving-average decay"),
    ("f0_stats", "target F0 statistics table: speaker or speaker_style"),
    ("d_style", "style embedding size"),
    ("d_speaker", "speaker embedding size"),
    ("code_dim", "code vector size"),
    ("n_codes", "codebook entries"),
    ("style_channels", "comma-separated channels of the six 2-D convolutions"),
    ("style_gru", "style GRU width"),
    ("style_fc", "style hidden fully connected width"),
    ("content_conv", "content strided convolution channels"),
    ("content_linear", "content per-frame linear width"),
    ("content_rnn", "content context GRU width"),
    ("speaker_bank_kernels", "largest ConvBank kernel (kernels 1..K)"),
    ("speaker_bank_channels", "channels per ConvBank kernel"),
    ("speaker_conv_channels", "speaker convolution stack channels"),
    ("speaker_conv_layers", "speaker convolution stack depth"),
    ("speaker_linear", "speaker hidden linear width"),
    ("decoder_lstm", "first decoder LSTM width"),
    ("decoder_conv", "decoder convolution channels"),
    ("decoder_post_lstm", "width of the two final decoder LSTMs"),
    ("mi_hidden", "hidden width of each variational network"),
    ("yin_threshold", "YIN voicing threshold"),
    ("gl_iterations", "Griffin-Lim iterations"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CoreError::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = parse(key, value)?;
    if v == 0 {
        return Err(CoreError::Config(format!("key `{key}` must be positive")));
    }
    Ok(v)
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn for_preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (ModelConfig::paper(), TrainConfig::paper()),
        };
        Self { preset, model, train, yin_threshold: 0.15, gl_iterations: 60 }
    }

    /// Apply one key. `preset` resets everything to that preset's defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => {
                let p = match value {
                    "desk" => Preset::Desk,
                    "paper" => Preset::Paper,
                    _ => return Err(CoreError::Config(format!("unknown preset `{value}`"))),
                };
                *self = Self::for_preset(p);
            }
            "seed" => t.seed = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "crop_frames" => t.crop_frames = parse(key, value)?,
            "base_lr" => t.base_lr = parse(key, value)?,
            "warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "halve_every" => t.halve_every = parse(key, value)?,
            "mi_warmup_epochs" => t.mi_warmup_epochs = parse(key, value)?,
            "lambda_sp" => t.mi_weights.sp = parse(key, value)?,
            "lambda_sc" => t.mi_weights.sc = parse(key, value)?,
            "lambda_sf" => t.mi_weights.sf = parse(key, value)?,
            "lambda_pc" => t.mi_weights.pc = parse(key, value)?,
            "lambda_pf" => t.mi_weights.pf = parse(key, value)?,
            "lambda_cf" => t.mi_weights.cf = parse(key, value)?,
            "vq_beta" => t.vq_beta = parse(key, value)?,
            "ema_decay" => t.ema_decay = parse(key, value)?,
            "f0_stats" => {
                t.f0_stats = match value {
                    "speaker" => StatsMode::Speaker,
                    "speaker_style" => StatsMode::SpeakerStyle,
                    _ => return Err(CoreError::Config(format!("unknown f0_stats mode `{value}`"))),
                }
            }
            "d_style" => m.d_style = positive(key, value)?,
            "d_speaker" => m.d_speaker = positive(key, value)?,
            "code_dim" => m.code_dim = positive(key, value)?,
            "n_codes" => {
                m.n_codes = parse(key, value)?;
                if m.n_codes < 2 {
                    return Err(CoreError::Config("n_codes must be at least 2".into()));
                }
            }
            "style_channels" => {
                let chans = value
                    .split(',')
                    .map(|c| positive(key, c.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if chans.len() != 6 {
                    return Err(CoreError::Config(format!("style_channels needs 6 entries, got {}", chans.len())));
                }
                m.style_channels = chans;
            }
            "style_gru" => m.style_gru = positive(key, value)?,
            "style_fc" => m.style_fc = positive(key, value)?,
            "content_conv" => m.content_conv = positive(key, value)?,
            "content_linear" => m.content_linear = positive(key, value)?,
            "content_rnn" => m.content_rnn = positive(key, value)?,
            "speaker_bank_kernels" => m.speaker_bank_kernels = positive(key, value)?,
            "speaker_bank_channels" => m.speaker_bank_channels = positive(key, value)?,
            "speaker_conv_channels" => m.speaker_conv_channels = positive(key, value)?,
            "speaker_conv_layers" => m.speaker_conv_layers = positive(key, value)?,
            "speaker_linear" => m.speaker_linear = positive(key, value)?,
            "decoder_lstm" => m.decoder_lstm = positive(key, value)?,
            "decoder_conv" => m.decoder_conv = positive(key, value)?,
            "decoder_post_lstm" => m.decoder_post_lstm = positive(key, value)?,
            "mi_hidden" => m.mi_hidden = positive(key, value)?,
            "yin_threshold" => self.yin_threshold = parse(key, value)?,
            "gl_iterations" => self.gl_iterations = parse(key, value)?,
            _ => return Err(CoreError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let w = &t.mi_weights;
        Some(match key {
            "preset" => self.preset.as_str().to_string(),
            "seed" => t.seed.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "crop_frames" => t.crop_frames.to_string(),
            "base_lr" => format!("{:?}", t.base_lr),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "halve_every" => t.halve_every.to_string(),
            "mi_warmup_epochs" => t.mi_warmup_epochs.to_string(),
            "lambda_sp" => format!("{:?}", w.sp),
            "lambda_sc" => format!("{:?}", w.sc),
            "lambda_sf" => format!("{:?}", w.sf),
            "lambda_pc" => format!("{:?}", w.pc),
            "lambda_pf" => format!("{:?}", w.pf),
            "lambda_cf" => format!("{:?}", w.cf),
            "vq_beta" => format!("{:?}", t.vq_beta),
            "ema_decay" => format!("{:?}", t.ema_decay),
            "f0_stats" => match t.f0_stats {
                StatsMode::Speaker => "speaker".into(),
                StatsMode::SpeakerStyle => "speaker_style".into(),
            },
            "d_style" => m.d_style.to_string(),
            "d_speaker" => m.d_speaker.to_string(),
            "code_dim" => m.code_dim.to_string(),
            "n_codes" => m.n_codes.to_string(),
            "style_channels" => join(&m.style_channels),
            "style_gru" => m.style_gru.to_string(),
            "style_fc" => m.style_fc.to_string(),
            "content_conv" => m.content_conv.to_string(),
            "content_linear" => m.content_linear.to_string(),
            "content_rnn" => m.content_rnn.to_string(),
            "speaker_bank_kernels" => m.speaker_bank_kernels.to_string(),
            "speaker_bank_channels" => m.speaker_bank_channels.to_string(),
            "speaker_conv_channels" => m.speaker_conv_channels.to_string(),
            "speaker_conv_layers" => m.speaker_conv_layers.to_string(),
            "speaker_linear" => m.speaker_linear.to_string(),
            "decoder_lstm" => m.decoder_lstm.to_string(),
            "decoder_conv" => m.decoder_conv.to_string(),
            "decoder_post_lstm" => m.decoder_post_lstm.to_string(),
            "mi_hidden" => m.mi_hidden.to_string(),
            "yin_threshold" => format!("{:?}", self.yin_threshold),
            "gl_iterations" => self.gl_iterations.to_string(),
            _ => return None,
        })
    }

    /// Apply parsed `(key, value)` pairs, `preset` first. A repeated key is an error.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (i, (k, _)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|(p, _)| p == k) {
                return Err(CoreError::Config(format!("duplicate config key `{k}`")));
            }
        }
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "preset") {
            self.set("preset", v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            self.set(k, v)?;
        }
        self.train.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_pairs(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CoreError::io(path))?;
        Self::from_text(&text)
    }

    /// Canonical `key = value` listing of every key; parses back to an equal config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            writeln!(out, "{k} = {}", self.get(k).expect("listed key")).unwrap();
        }
        out
    }

    /// Single-line form of [`Config::echo`] for CSV and JSON sidecars.
    pub fn echo_pairs(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }
}

/// Split `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(CoreError::Config(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parse a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CoreError::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Help text listing every key with its desk default.
pub fn key_help() -> String {
    let cfg = Config::default();
    let mut out = String::new();
    for (k, doc) in KEYS {
        writeln!(out, "  {k:<22} {:<18} {doc}", cfg.get(k).unwrap()).unwrap();
    }
    out
}
