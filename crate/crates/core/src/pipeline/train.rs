use std::fmt::Write as _;
use std::path::Path;

use dvc_dsp::{log_normalize_f0, F0Contour, Features, MelSpectrogram, SpeakerF0Stats};
use dvc_tensor::optim::LrSchedule;
use dvc_tensor::{Graph, Group, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::CoreError;
use crate::mi::{mi_loss, FrameReps};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::manifest::{Manifest, Split};
use crate::pipeline::stats::compute_speaker_stats;
use crate::quantizer::{batch_counts, usage_entropy};
use crate::Result;

pub const METRICS_HEADER: &str = "epoch,l_recon,l_vq,mi_sp,mi_sc,mi_sf,mi_pc,mi_pf,mi_cf,lr,code_usage_entropy";

/// One loaded feature file with its training-time pitch input.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub speaker: String,
    pub style: String,
    pub split: Split,
    pub path: String,
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
    /// Log-F0 standardized by the utterance's own voiced statistics; 0 where unvoiced.
    pub pitch: Vec<f64>,
}

impl Utterance {
    pub fn new(speaker: String, style: String, split: Split, path: String, feats: Features) -> Result<Self> {
        let f0 = feats
            .f0
            .ok_or_else(|| CoreError::Data(format!("{path}: features carry no F0")))?;
        let pitch = self_normalized_pitch(&f0)?;
        Ok(Self { speaker, style, split, path, mel: feats.mel, f0, pitch })
    }
}

/// Pitch input from the contour's own statistics; an unvoiced contour maps to zeros.
pub fn self_normalized_pitch(f0: &F0Contour) -> Result<Vec<f64>> {
    match SpeakerF0Stats::from_contours([f0]) {
        Ok(stats) => Ok(log_normalize_f0(f0, &stats)?),
        Err(dvc_dsp::DspError::NoVoicedFrames) => Ok(vec![0.0; f0.len()]),
        Err(e) => Err(e.into()),
    }
}

/// Every utterance of `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Utterance>> {
    manifest
        .split(split)
        .map(|e| {
            let feats = Features::read(manifest.resolve(e))?;
            Utterance::new(e.speaker.clone(), e.style.clone(), e.split, e.feature_path.clone(), feats)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    pub l_recon: f64,
    pub l_vq: f64,
    /// Unclamped per-pair estimates in `sp, sc, sf, pc, pf, cf` order.
    pub mi: [f64; 6],
    pub lr: f64,
    pub code_usage_entropy: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{}", self.epoch, self.l_recon, self.l_vq);
        for v in self.mi {
            write!(s, ",{v}").unwrap();
        }
        write!(s, ",{},{}", self.lr, self.code_usage_entropy).unwrap();
        s
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(metrics)).map_err(CoreError::io(path))
}

#[derive(Clone, Debug, PartialEq)]
struct StepStats {
    recon: f64,
    vq: f64,
    mi: [f64; 6],
}

/// Owns the checkpoint being trained and its metric history.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub state: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        Ok(Self { state: Checkpoint::fresh(config)?, metrics: Vec::new() })
    }

    pub fn resume(state: Checkpoint) -> Self {
        Self { state, metrics: Vec::new() }
    }

    pub fn schedule(&self) -> LrSchedule {
        let t = &self.state.config.train;
        LrSchedule { base_lr: t.base_lr, warmup_epochs: t.warmup_epochs, halve_every: t.halve_every }
    }

    /// Shuffled batches for zero-based epoch `e`; a trailing batch smaller than 2 is dropped.
    pub fn batches(&self, n_utts: usize, e: usize) -> Vec<Vec<usize>> {
        let mut rng = epoch_rng(self.state.config.train.seed, e);
        let mut order: Vec<usize> = (0..n_utts).collect();
        order.shuffle(&mut rng);
        order
            .chunks(self.state.config.train.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One pass over `data` at the next epoch index.
    pub fn run_epoch(&mut self, data: &[Utterance]) -> Result<EpochMetrics> {
        let e = self.state.epoch;
        let batches = self.batches(data.len(), e);
        if batches.is_empty() {
            return Err(CoreError::Data(format!("{} training utterances cannot form a batch of 2", data.len())));
        }
        let lr = self.schedule().lr(e);
        let mi_on = e >= self.state.config.train.mi_warmup_epochs;
        let mut crop_rng = epoch_rng(self.state.config.train.seed ^ 0x5eed_c409, e);
        let mut sum = StepStats { recon: 0.0, vq: 0.0, mi: [0.0; 6] };
        let mut counts = vec![0usize; self.state.config.model.n_codes];
        for idx in &batches {
            let batch: Vec<&Utterance> = idx.iter().map(|&i| &data[i]).collect();
            let (mel, pitch) = assemble(&batch, self.state.config.train.crop_frames, &mut crop_rng)?;
            let (s, indices) = self.step(mel, pitch, lr, mi_on)?;
            for (c, n) in counts.iter_mut().zip(batch_counts(&indices, self.state.config.model.n_codes)) {
                *c += n;
            }
            sum.recon += s.recon;
            sum.vq += s.vq;
            for (a, b) in sum.mi.iter_mut().zip(s.mi) {
                *a += b;
            }
        }
        let n = batches.len() as f64;
        let m = EpochMetrics {
            epoch: e + 1,
            l_recon: sum.recon / n,
            l_vq: sum.vq / n,
            mi: sum.mi.map(|v| v / n),
            lr,
            code_usage_entropy: usage_entropy(&counts),
        };
        self.state.epoch += 1;
        self.metrics.push(m.clone());
        Ok(m)
    }

    /// Auxiliary likelihood step on the current representations, then the
    /// main step on reconstruction, VQ and (when enabled) the MI penalty.
    fn step(&mut self, mel: Tensor, pitch: Tensor, lr: f64, mi_on: bool) -> Result<(StepStats, Vec<usize>)> {
        let cfg = self.state.config.train.clone();
        let model = &mut self.state.model;
        let mut g = Graph::new(Mode::Train, &[Group::Model]);
        let mel = g.input(mel);
        let pitch = g.input(pitch);
        let fp = model.forward(&mut g, mel, pitch, cfg.vq_beta)?;

        let mut aux = Graph::new(Mode::Train, &[Group::Estimator]);
        let reps = FrameReps {
            style: aux.input(g.value(fp.frames.style).clone()),
            speaker: aux.input(g.value(fp.frames.speaker).clone()),
            content: aux.input(g.value(fp.frames.content).clone()),
            pitch: aux.input(g.value(fp.frames.pitch).clone()),
        };
        let ll = model.estimators.total_loglik(&mut aux, &model.store, &reps)?;
        let neg = aux.scale(ll, -1.0);
        if !aux.value(neg).item().is_finite() {
            return Err(CoreError::Numeric(format!("estimator likelihood at epoch {}", self.state.epoch + 1)));
        }
        let grads = aux.backward(neg)?;
        self.state.adam_aux.step(&mut model.store, &aux.param_grads(&grads), lr)?;

        let est = model.estimators.estimates(&mut g, &model.store, &fp.frames)?;
        let mi: [f64; 6] = std::array::from_fn(|k| g.value(est[k]).item());
        let mut total = g.add(fp.recon, fp.vq_loss);
        if mi_on {
            if let Some(l) = mi_loss(&mut g, &est, &cfg.mi_weights, true) {
                total = g.add(total, l);
            }
        }
        let stats = StepStats { recon: g.value(fp.recon).item(), vq: g.value(fp.vq_loss).item(), mi };
        if !g.value(total).item().is_finite() || mi.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric(format!("training loss at epoch {}", self.state.epoch + 1)));
        }
        let grads = g.backward(total)?;
        self.state.adam_main.step(&mut model.store, &g.param_grads(&grads), lr)?;
        // a zero learning rate freezes the codebook as well
        if lr > 0.0 {
            model.codebook.update(g.value(fp.z_pre).data(), &fp.code_indices, cfg.ema_decay)?;
        }
        g.commit_buffers(&mut model.store);
        Ok((stats, fp.code_indices))
    }
}

fn epoch_rng(seed: u64, e: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(e as u64);
    rng
}

/// Crop every utterance to the batch length `min(crop, shortest T)` rounded
/// down to even, at a random offset. Returns `mel: [B, L, n_mels]`, `pitch: [B, L]`.
fn assemble(batch: &[&Utterance], crop: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let shortest = batch.iter().map(|u| u.mel.n_frames()).min().unwrap_or(0);
    let len = crop.min(shortest) & !1;
    if len < 4 {
        return Err(CoreError::Data(format!("batch crop of {len} frames is below the 4-frame minimum")));
    }
    let n_mels = batch[0].mel.n_mels();
    let mut mel = Vec::with_capacity(batch.len() * len * n_mels);
    let mut pitch = Vec::with_capacity(batch.len() * len);
    for u in batch {
        if u.pitch.len() != u.mel.n_frames() {
            return Err(CoreError::Data(format!("{}: F0 and mel lengths differ", u.path)));
        }
        let off = rng.random_range(0..=u.mel.n_frames() - len);
        mel.extend_from_slice(&u.mel.data()[off * n_mels..(off + len) * n_mels]);
        pitch.extend_from_slice(&u.pitch[off..off + len]);
    }
    Ok((
        Tensor::new(vec![batch.len(), len, n_mels], mel)?,
        Tensor::new(vec![batch.len(), len], pitch)?,
    ))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Train from scratch on the manifest's training split for `config.train.epochs`,
/// then attach the F0 statistics table.
pub fn train(manifest: &Manifest, config: &Config, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    let data = load_split(manifest, Split::Train)?;
    if data.is_empty() {
        return Err(CoreError::Data("manifest has no training utterances".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    trainer.state.model.fit_mel_normalization(data.iter().map(|u| &u.mel))?;
    for _ in 0..config.train.epochs {
        let m = trainer.run_epoch(&data)?;
        on_epoch(&m);
    }
    trainer.state.stats = compute_speaker_stats(manifest, config.train.f0_stats)?;
    Ok(TrainOutcome { checkpoint: trainer.state, metrics: trainer.metrics })
}
