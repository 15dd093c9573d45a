//! Style, content and speaker encoders, the decoder, and the model that ties
//! them to one parameter store.
//!
//! Batched tensors are `[batch, time, channels]`; mel input has 80 channels.

use dvc_dsp::MelSpectrogram;
use dvc_tensor::init::Initializer;
use dvc_tensor::layers::{BatchNorm, Conv1d, Conv2d, ConvBank, Gru, Layer, Linear, Lstm};
use dvc_tensor::{Conv1dGeom, Graph, Group, ParamId, ParamStore, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::CoreError;
use crate::mi::{FrameReps, MiEstimators, Rep};
use crate::quantizer::{quantize_graph, Codebook};
use crate::Result;

const G: Group = Group::Model;

#[derive(Clone, Debug)]
pub struct StyleEncoder {
    convs: Vec<(Conv2d, BatchNorm)>,
    gru: Gru,
    fc1: Linear,
    fc2: Linear,
}

impl StyleEncoder {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, cfg: &ModelConfig) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        let mut width = cfg.n_mels;
        for (i, &ch) in cfg.style_channels.iter().enumerate() {
            let name = format!("style.conv{i}");
            let conv = Conv2d::new(ps, init, &name, G, in_ch, ch, (3, 3), (2, 2));
            width = conv.geom.out_dims(4, width).1;
            let bn = BatchNorm::new(ps, &format!("style.bn{i}"), G, ch);
            convs.push((conv, bn));
            in_ch = ch;
        }
        let gru = Gru::new(ps, init, "style.gru", G, width * in_ch, cfg.style_gru);
        let fc1 = Linear::new(ps, init, "style.fc1", G, cfg.style_gru, cfg.style_fc);
        let fc2 = Linear::new(ps, init, "style.fc2", G, cfg.style_fc, cfg.d_style);
        Self { convs, gru, fc1, fc2 }
    }

    /// `[B, T, n_mels] -> [B, d_style]`.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, mel: Var) -> Result<Var> {
        let s = g.shape(mel).to_vec();
        let mut x = g.reshape(mel, &[s[0], s[1], s[2], 1]);
        for (conv, bn) in &self.convs {
            x = conv.forward(g, ps, x)?;
            x = bn.forward(g, ps, x)?;
            x = g.relu(x);
        }
        let s = g.shape(x).to_vec();
        let seq = g.reshape(x, &[s[0], s[1], s[2] * s[3]]);
        let (_, last) = self.gru.forward_seq(g, ps, seq)?;
        let h = self.fc1.forward(g, ps, last)?;
        let h = g.relu(h);
        Ok(self.fc2.forward(g, ps, h)?)
    }
}

#[derive(Clone, Debug)]
pub struct ContentEncoder {
    conv: Conv1d,
    linear: Linear,
    proj: Linear,
    context: Gru,
}

impl ContentEncoder {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, cfg: &ModelConfig) -> Self {
        let geom = Conv1dGeom { kernel: 3, stride: 2, pad_left: 1, pad_right: 1 };
        Self {
            conv: Conv1d::with_geom(ps, init, "content.conv", G, cfg.n_mels, cfg.content_conv, geom),
            linear: Linear::new(ps, init, "content.linear", G, cfg.content_conv, cfg.content_linear),
            proj: Linear::new(ps, init, "content.proj", G, cfg.content_linear, cfg.code_dim),
            context: Gru::new(ps, init, "content.context", G, cfg.code_dim, cfg.content_rnn),
        }
    }

    /// Pre-quantization frames `[B, T/2, code_dim]`.
    ///
    /// Each band's per-utterance time mean is removed first, so a constant
    /// spectral tilt cannot reach the codes.
    pub fn encode(&self, g: &mut Graph, ps: &ParamStore, mel: Var) -> Result<Var> {
        let t = g.shape(mel)[1];
        if t % 2 != 0 || t < 2 {
            return Err(CoreError::Data(format!("content encoder needs an even frame count, got {t}")));
        }
        let mean = g.mean_time(mel);
        let mean = g.broadcast_time(mean, t);
        let x = g.sub(mel, mean);
        let h = self.conv.forward(g, ps, x)?;
        let h = g.relu(h);
        let h = self.linear.forward(g, ps, h)?;
        let h = g.relu(h);
        Ok(self.proj.forward(g, ps, h)?)
    }

    /// Context states over the code sequence `[B, T/2, content_rnn]`.
    pub fn context(&self, g: &mut Graph, ps: &ParamStore, codes: Var) -> Result<Var> {
        Ok(self.context.forward_seq(g, ps, codes)?.0)
    }
}

#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    bank: ConvBank,
    convs: Vec<Conv1d>,
    linears: Vec<Linear>,
}

impl SpeakerEncoder {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, cfg: &ModelConfig) -> Self {
        let bank = ConvBank::new(ps, init, "speaker.bank", G, cfg.n_mels, cfg.speaker_bank_channels, cfg.speaker_bank_kernels);
        let c = cfg.speaker_conv_channels;
        let convs = (0..cfg.speaker_conv_layers)
            .map(|i| {
                let in_ch = if i == 0 { bank.out_ch() } else { c };
                Conv1d::new(ps, init, &format!("speaker.conv{i}"), G, in_ch, c, 3, 1)
            })
            .collect();
        let widths = [c, cfg.speaker_linear, cfg.speaker_linear, cfg.speaker_linear, cfg.d_speaker];
        let linears = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, init, &format!("speaker.linear{i}"), G, w[0], w[1]))
            .collect();
        Self { bank, convs, linears }
    }

    /// `[B, T, n_mels] -> [B, d_speaker]`. After the first convolution, layers
    /// are paired with a residual connection around each pair.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, mel: Var) -> Result<Var> {
        let h = self.bank.forward(g, ps, mel)?;
        let h = g.relu(h);
        let h = self.convs[0].forward(g, ps, h)?;
        let mut h = g.relu(h);
        let mut i = 1;
        while i + 1 < self.convs.len() {
            let a = self.convs[i].forward(g, ps, h)?;
            let a = g.relu(a);
            let b = self.convs[i + 1].forward(g, ps, a)?;
            let b = g.relu(b);
            h = g.add(h, b);
            i += 2;
        }
        for conv in &self.convs[i..] {
            let y = conv.forward(g, ps, h)?;
            h = g.relu(y);
        }
        let mut h = g.mean_time(h);
        let last = self.linears.len() - 1;
        for (k, lin) in self.linears.iter().enumerate() {
            h = lin.forward(g, ps, h)?;
            if k < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    lstm: Lstm,
    convs: Vec<Conv1d>,
    post: [Lstm; 2],
    out: Linear,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, cfg: &ModelConfig) -> Self {
        let lstm = Lstm::new(ps, init, "decoder.lstm", G, cfg.decoder_input(), cfg.decoder_lstm);
        let convs = (0..3)
            .map(|i| {
                let in_ch = if i == 0 { cfg.decoder_lstm } else { cfg.decoder_conv };
                Conv1d::new(ps, init, &format!("decoder.conv{i}"), G, in_ch, cfg.decoder_conv, 5, 1)
            })
            .collect();
        let post = [
            Lstm::new(ps, init, "decoder.post0", G, cfg.decoder_conv, cfg.decoder_post_lstm),
            Lstm::new(ps, init, "decoder.post1", G, cfg.decoder_post_lstm, cfg.decoder_post_lstm),
        ];
        let out = Linear::new(ps, init, "decoder.out", G, cfg.decoder_post_lstm, cfg.n_mels);
        Self { lstm, convs, post, out }
    }

    /// `[B, T, decoder_input] -> [B, T, n_mels]`.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let (mut h, _) = self.lstm.forward_seq(g, ps, x)?;
        for conv in &self.convs {
            let y = conv.forward(g, ps, h)?;
            h = g.relu(y);
        }
        for lstm in &self.post {
            h = lstm.forward_seq(g, ps, h)?.0;
        }
        Ok(self.out.forward(g, ps, h)?)
    }
}

/// Decoder input `[B, T, code_dim + d_speaker + d_style + 1]`, ordered
/// content, speaker, style, pitch. Codes repeat twice along time; utterance
/// vectors repeat on every frame.
pub fn upsample_and_concat_graph(g: &mut Graph, codes: Var, speaker: Var, style: Var, pitch: Var) -> Result<Var> {
    let (b, half) = (g.shape(codes)[0], g.shape(codes)[1]);
    let t = 2 * half;
    let ps = g.shape(pitch).to_vec();
    if ps != [b, t] || g.shape(speaker)[0] != b || g.shape(style)[0] != b {
        return Err(CoreError::Data(format!(
            "cannot align codes {:?}, speaker {:?}, style {:?}, pitch {:?}",
            g.shape(codes),
            g.shape(speaker),
            g.shape(style),
            ps
        )));
    }
    let c = g.repeat_time(codes, 2);
    let p = g.broadcast_time(speaker, t);
    let s = g.broadcast_time(style, t);
    let f = g.reshape(pitch, &[b, t, 1]);
    Ok(g.concat_last(&[c, p, s, f]))
}

/// `mean |ŷ − y| + 0.5 · mean (ŷ − y)²`.
pub fn reconstruction_loss(g: &mut Graph, mel_hat: Var, mel: Var) -> Result<Var> {
    if g.shape(mel_hat) != g.shape(mel) {
        return Err(CoreError::Data(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            g.shape(mel_hat),
            g.shape(mel)
        )));
    }
    let d = g.sub(mel_hat, mel);
    let a = g.abs(d);
    let l1 = g.mean(a);
    let sq = g.square(d);
    let l2 = g.mean(sq);
    let l2 = g.scale(l2, 0.5);
    Ok(g.add(l1, l2))
}

/// The four representations of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct RepBundle {
    pub z_style: Vec<f64>,
    pub z_speaker: Vec<f64>,
    /// `[T/2, code_dim]`.
    pub z_content: Tensor,
    pub code_indices: Vec<usize>,
    /// Length `T`.
    pub z_pitch: Vec<f64>,
}

impl RepBundle {
    pub fn n_frames(&self) -> usize {
        self.z_pitch.len()
    }

    /// `[T, code_dim + d_speaker + d_style + 1]` decoder input.
    pub fn upsample_and_concat(&self) -> Result<Tensor> {
        let half = self.z_content.shape()[0];
        let d = self.z_content.last_dim();
        let t = self.z_pitch.len();
        if t != 2 * half {
            return Err(CoreError::Data(format!("{half} code frames cannot align to {t} pitch frames")));
        }
        let width = d + self.z_speaker.len() + self.z_style.len() + 1;
        let mut out = Vec::with_capacity(t * width);
        for (i, &f) in self.z_pitch.iter().enumerate() {
            out.extend_from_slice(self.z_content.row(i / 2));
            out.extend_from_slice(&self.z_speaker);
            out.extend_from_slice(&self.z_style);
            out.push(f);
        }
        Ok(Tensor::new(vec![t, width], out)?)
    }
}

/// Graph outputs of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub mel_hat: Var,
    pub recon: Var,
    pub vq_loss: Var,
    pub code_indices: Vec<usize>,
    /// Pre-quantization frames `[B, T/2, code_dim]`.
    pub z_pre: Var,
    pub codes: Var,
    pub style: Var,
    pub speaker: Var,
    pub pitch: Var,
    /// Representations pooled over batch and time, `[B·T, d]`.
    pub frames: FrameReps,
}

/// Lower bound on a band's fitted log-mel deviation.
pub const MEL_STD_FLOOR: f64 = 1e-3;

/// All networks, the codebook and the six estimators, bound to one store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub style: StyleEncoder,
    pub content: ContentEncoder,
    pub speaker: SpeakerEncoder,
    pub decoder: Decoder,
    pub estimators: MiEstimators,
    pub codebook: Codebook,
    /// Per-band log-mel mean and deviation; networks see standardized mels
    /// and the decoder output is mapped back to log-mel.
    mel_mean: ParamId,
    mel_std: ParamId,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let style = StyleEncoder::new(&mut store, &mut init, config);
        let content = ContentEncoder::new(&mut store, &mut init, config);
        let speaker = SpeakerEncoder::new(&mut store, &mut init, config);
        let decoder = Decoder::new(&mut store, &mut init, config);
        let dims = |r: Rep| match r {
            Rep::Style => config.d_style,
            Rep::Speaker => config.d_speaker,
            Rep::Content => config.code_dim,
            Rep::Pitch => 1,
        };
        let estimators = MiEstimators::new(&mut store, &mut init, dims, config.mi_hidden);
        let codebook = Codebook::random(&mut init, config.n_codes, config.code_dim)?;
        let mel_mean = store.add_buffer("mel.mean", Tensor::zeros(&[config.n_mels]), Group::Model);
        let mel_std = store.add_buffer("mel.std", Tensor::full(&[config.n_mels], 1.0), Group::Model);
        Ok(Self { config: config.clone(), store, style, content, speaker, decoder, estimators, codebook, mel_mean, mel_std })
    }

    /// Fit the mel standardization to every frame of `mels`. Deviations are
    /// floored at `MEL_STD_FLOOR`.
    pub fn fit_mel_normalization<'a>(&mut self, mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<()> {
        let n = self.config.n_mels;
        let (mut sum, mut sq, mut count) = (vec![0.0; n], vec![0.0; n], 0usize);
        for m in mels {
            if m.n_mels() != n {
                return Err(CoreError::Data(format!("expected {n} mel bands, got {}", m.n_mels())));
            }
            for row in m.data().chunks(n) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += m.n_frames();
        }
        if count == 0 {
            return Err(CoreError::Data("no mel frames to fit normalization".into()));
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / c - m * m).max(0.0).sqrt().max(MEL_STD_FLOOR))
            .collect();
        *self.store.get_mut(self.mel_mean) = Tensor::new(vec![n], mean)?;
        *self.store.get_mut(self.mel_std) = Tensor::new(vec![n], std)?;
        Ok(())
    }

    /// `(mean, std)` of the mel standardization.
    pub fn mel_normalization(&self) -> (&[f64], &[f64]) {
        (self.store.get(self.mel_mean).data(), self.store.get(self.mel_std).data())
    }

    fn normalize(&self, g: &mut Graph, mel: Var) -> Var {
        let (mean, std) = self.mel_normalization();
        let n = mean.len();
        let shift = g.input(Tensor::new(vec![n], mean.iter().map(|m| -m).collect()).unwrap());
        let gain = g.input(Tensor::new(vec![n], std.iter().map(|s| 1.0 / s).collect()).unwrap());
        let x = g.add_bias(mel, shift);
        g.mul_bias(x, gain)
    }

    fn denormalize(&self, g: &mut Graph, y: Var) -> Var {
        let (mean, std) = self.mel_normalization();
        let n = mean.len();
        let mean = g.input(Tensor::new(vec![n], mean.to_vec()).unwrap());
        let std = g.input(Tensor::new(vec![n], std.to_vec()).unwrap());
        let x = g.mul_bias(y, std);
        g.add_bias(x, mean)
    }

    /// Trainable scalars in the encoders and decoder.
    pub fn n_model_params(&self) -> usize {
        self.store.count(Group::Model)
    }

    fn check_mel(&self, g: &Graph, mel: Var) -> Result<()> {
        let s = g.shape(mel);
        if s.len() != 3 || s[2] != self.config.n_mels || s[1] < 4 || s[1] % 2 != 0 {
            return Err(CoreError::Data(format!(
                "mel batch must be [B, even T >= 4, {}], got {s:?}",
                self.config.n_mels
            )));
        }
        Ok(())
    }

    /// Full forward pass on `mel: [B, T, n_mels]` and `pitch: [B, T]`.
    pub fn forward(&self, g: &mut Graph, mel: Var, pitch: Var, beta: f64) -> Result<ForwardPass> {
        self.check_mel(g, mel)?;
        let ps = &self.store;
        let (b, t) = (g.shape(mel)[0], g.shape(mel)[1]);
        let x = self.normalize(g, mel);
        let style = self.style.forward(g, ps, x)?;
        let speaker = self.speaker.forward(g, ps, x)?;
        let z_pre = self.content.encode(g, ps, x)?;
        let (codes, code_indices, vq_loss) = quantize_graph(g, z_pre, &self.codebook, beta)?;
        let dec_in = upsample_and_concat_graph(g, codes, speaker, style, pitch)?;
        let y = self.decoder.forward(g, ps, dec_in)?;
        let mel_hat = self.denormalize(g, y);
        let recon = reconstruction_loss(g, mel_hat, mel)?;

        let n = b * t;
        let fs = g.broadcast_time(style, t);
        let fs = g.reshape(fs, &[n, self.config.d_style]);
        let fp = g.broadcast_time(speaker, t);
        let fp = g.reshape(fp, &[n, self.config.d_speaker]);
        let fc = g.repeat_time(codes, 2);
        let fc = g.reshape(fc, &[n, self.config.code_dim]);
        let ff = g.reshape(pitch, &[n, 1]);
        let frames = FrameReps { style: fs, speaker: fp, content: fc, pitch: ff };
        Ok(ForwardPass { mel_hat, recon, vq_loss, code_indices, z_pre, codes, style, speaker, pitch, frames })
    }

    fn mel_input(&self, g: &mut Graph, mel: &MelSpectrogram) -> Result<Var> {
        if mel.n_mels() != self.config.n_mels {
            return Err(CoreError::Data(format!("expected {} mel bands, got {}", self.config.n_mels, mel.n_mels())));
        }
        let v = g.input(Tensor::new(vec![1, mel.n_frames(), mel.n_mels()], mel.data().to_vec())?);
        self.check_mel(g, v)?;
        Ok(self.normalize(g, v))
    }

    pub fn style_embedding(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = self.mel_input(&mut g, mel)?;
        let s = self.style.forward(&mut g, &self.store, x)?;
        Ok(g.value(s).data().to_vec())
    }

    pub fn speaker_embedding(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = self.mel_input(&mut g, mel)?;
        let s = self.speaker.forward(&mut g, &self.store, x)?;
        Ok(g.value(s).data().to_vec())
    }

    /// Quantized codes `[T/2, code_dim]` and their indices.
    pub fn content_codes(&self, mel: &MelSpectrogram) -> Result<(Tensor, Vec<usize>)> {
        let mut g = Graph::inference();
        let x = self.mel_input(&mut g, mel)?;
        let z = self.content.encode(&mut g, &self.store, x)?;
        let (codes, idx, _) = quantize_graph(&mut g, z, &self.codebook, 0.0)?;
        let c = g.value(codes).clone();
        let half = c.shape()[1];
        Ok((c.reshape(vec![half, self.config.code_dim])?, idx))
    }

    /// Content from `content_mel`, speaker and style from `reference_mel`.
    pub fn encode(&self, content_mel: &MelSpectrogram, reference_mel: &MelSpectrogram, z_pitch: Vec<f64>) -> Result<RepBundle> {
        let (z_content, code_indices) = self.content_codes(content_mel)?;
        if z_pitch.len() != content_mel.n_frames() {
            return Err(CoreError::Data(format!(
                "pitch has {} frames, mel has {}",
                z_pitch.len(),
                content_mel.n_frames()
            )));
        }
        Ok(RepBundle {
            z_style: self.style_embedding(reference_mel)?,
            z_speaker: self.speaker_embedding(reference_mel)?,
            z_content,
            code_indices,
            z_pitch,
        })
    }

    pub fn decode(&self, bundle: &RepBundle) -> Result<MelSpectrogram> {
        let input = bundle.upsample_and_concat()?;
        let (t, w) = (input.shape()[0], input.shape()[1]);
        if w != self.config.decoder_input() {
            return Err(CoreError::Data(format!(
                "decoder input width {w}, expected {}",
                self.config.decoder_input()
            )));
        }
        let mut g = Graph::inference();
        let x = g.input(input.reshape(vec![1, t, w])?);
        let y = self.decoder.forward(&mut g, &self.store, x)?;
        let y = self.denormalize(&mut g, y);
        let out = g.value(y).clone();
        if !out.is_finite() {
            return Err(CoreError::Numeric("decoder output".into()));
        }
        Ok(MelSpectrogram::new(t, self.config.n_mels, out.into_data())?)
    }
}
