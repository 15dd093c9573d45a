mod common;

use std::path::Path;

use dvc_core::config::StatsMode;
use dvc_core::pipeline::train::self_normalized_pitch;
use dvc_core::pipeline::*;
use dvc_core::Config;
use dvc_dsp::{load_wav, F0Contour, Features};
use dvc_tensor::{Graph, Mode, ParamKind, Tensor};

fn quick_config(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.train.epochs = 2;
    cfg.train.mi_warmup_epochs = 1;
    cfg.train.seed = seed;
    cfg
}

fn trained(dir: &Path, seed: u64) -> (Manifest, TrainOutcome) {
    let manifest = common::tiny_corpus(dir);
    let out = train(&manifest, &quick_config(seed), |_| {}).unwrap();
    (manifest, out)
}

#[test]
fn same_seed_reproduces_checkpoint_bytes_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, a) = trained(dir.path(), 3);
    let b = train(&manifest, &quick_config(3), |_| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.metrics.len(), 2);
    assert_eq!(a.checkpoint.epoch, 2);
    let c = train(&manifest, &quick_config(4), |_| {}).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
}

#[test]
fn metrics_log_has_one_finite_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = trained(dir.path(), 0);
    let text = metrics_csv(&out.metrics);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }
    assert!(out.metrics.iter().all(|m| m.code_usage_entropy >= 0.0 && m.code_usage_entropy <= (64f64).ln() + 1e-12));
}

#[test]
fn zero_learning_rate_repeats_the_first_step_losses() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::tiny_corpus(dir.path());
    let data = load_split(&manifest, Split::Train).unwrap();
    let mut cfg = quick_config(1);
    cfg.train.base_lr = 0.0;
    let mut t = Trainer::new(cfg).unwrap();
    t.state.model.fit_mel_normalization(data.iter().map(|u| &u.mel)).unwrap();
    let before = t.state.model.clone();
    let first = t.run_epoch(&data).unwrap();
    assert_eq!(first.lr, 0.0);
    for (a, b) in before.store.entries().iter().zip(t.state.model.store.entries()) {
        if a.kind == ParamKind::Trainable {
            assert_eq!(a.value, b.value, "{} moved", a.name);
        }
    }
    assert_eq!(before.codebook, t.state.model.codebook);
    t.state.epoch = 0;
    let again = t.run_epoch(&data).unwrap();
    assert_eq!(first, again);
}

#[test]
fn training_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::tiny_corpus(dir.path());
    let mut cfg = quick_config(0);
    cfg.train.batch_size = 1;
    let err = train(&manifest, &cfg, |_| {}).unwrap_err().to_string();
    assert!(err.contains("N >= 2"), "{err}");

    let val_only = Manifest {
        entries: manifest.split(Split::Val).cloned().collect(),
        base_dir: manifest.base_dir.clone(),
    };
    assert!(train(&val_only, &quick_config(0), |_| {}).is_err());

    let mut missing = manifest.clone();
    missing.entries[0].feature_path = "features/absent.dvc".into();
    assert!(train(&missing, &quick_config(0), |_| {}).is_err());

    assert!(Manifest::parse("", ".").is_err());
    assert!(Manifest::parse("spk\tsty\ttrain\n", ".").is_err());
    assert!(Manifest::parse("spk\tsty\tholdout\ta.dvc\n", ".").is_err());
    let ok = Manifest::parse("a\tx\ttrain\tf/1.dvc\n\nb\ty\ttest\t/abs/2.dvc\n", "/base").unwrap();
    assert_eq!(ok.entries.len(), 2);
    assert_eq!(ok.resolve(&ok.entries[0]), Path::new("/base/f/1.dvc"));
    assert_eq!(ok.resolve(&ok.entries[1]), Path::new("/abs/2.dvc"));
    assert_eq!(Manifest::parse(&ok.to_text(), "/base").unwrap(), ok);
}

fn naive_stats(manifest: &Manifest, speaker: &str, split: Split) -> (f64, f64, usize) {
    let mut logs = Vec::new();
    for e in manifest.split(split).filter(|e| e.speaker == speaker) {
        let f0 = Features::read(manifest.resolve(e)).unwrap().f0.unwrap();
        logs.extend(f0.values_hz.iter().filter(|v| **v > 0.0).map(|v| v.ln()));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let (mut s, mut s2) = (0.0, 0.0);
    for v in &logs {
        s += v - mean;
        s2 += (v - mean) * (v - mean);
    }
    (mean, ((s2 - s * s / n) / n).sqrt(), logs.len())
}

#[test]
fn speaker_stats_come_from_the_validation_split() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::tiny_corpus(dir.path());
    let table = compute_speaker_stats(&manifest, StatsMode::Speaker).unwrap();
    assert_eq!(table.keys().collect::<Vec<_>>(), ["spk0", "spk1"]);
    for row in &table.rows {
        assert_eq!(row.split, Split::Val);
        let (mean, std, n) = naive_stats(&manifest, &row.key, Split::Val);
        assert!((row.stats.mean_log_f0 - mean).abs() < 1e-12);
        assert!((row.stats.std_log_f0 - std).abs() < 1e-12);
        assert_eq!(row.stats.n_voiced_frames, n);
        let (train_mean, _, _) = naive_stats(&manifest, &row.key, Split::Train);
        assert_ne!(row.stats.mean_log_f0, train_mean);
    }

    let only_spk1 = Manifest {
        entries: manifest.entries.iter().filter(|e| e.speaker == "spk1").cloned().collect(),
        base_dir: manifest.base_dir.clone(),
    };
    let reduced = compute_speaker_stats(&only_spk1, StatsMode::Speaker).unwrap();
    assert_eq!(reduced.rows.len(), 1);
    assert_eq!(reduced.get("spk1"), table.get("spk1"));

    let per_style = compute_speaker_stats(&manifest, StatsMode::SpeakerStyle).unwrap();
    assert_eq!(per_style.keys().collect::<Vec<_>>(), ["spk0:sty0", "spk0:sty1", "spk1:sty0", "spk1:sty1"]);
}

#[test]
fn stats_fall_back_to_training_and_record_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::tiny_corpus(dir.path());
    let no_val = Manifest {
        entries: manifest.entries.iter().filter(|e| e.split != Split::Val).cloned().collect(),
        base_dir: manifest.base_dir.clone(),
    };
    let table = compute_speaker_stats(&no_val, StatsMode::Speaker).unwrap();
    for row in &table.rows {
        assert_eq!(row.split, Split::Train);
        let (mean, _, _) = naive_stats(&manifest, &row.key, Split::Train);
        assert!((row.stats.mean_log_f0 - mean).abs() < 1e-12);
    }

    let silent = Features::new(
        dvc_dsp::MelSpectrogram::new(4, 80, vec![-5.0; 320]).unwrap(),
        Some(F0Contour::new(vec![0.0; 4])),
    )
    .unwrap();
    silent.write(dir.path().join("silent.dvc")).unwrap();
    let m = Manifest::parse("mute\tsty0\tval\tsilent.dvc\n", dir.path()).unwrap();
    assert!(compute_speaker_stats(&m, StatsMode::Speaker).is_err());
}

#[test]
fn trained_checkpoint_carries_the_stats_table() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, out) = trained(dir.path(), 0);
    assert_eq!(out.checkpoint.stats, compute_speaker_stats(&manifest, StatsMode::Speaker).unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = trained(dir.path(), 2);
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"DVCK1"));
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    assert_eq!(loaded.config, out.checkpoint.config);
    assert_eq!(loaded.model.store, out.checkpoint.model.store);
    assert_eq!(loaded.epoch, 2);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn self_conversion_reproduces_the_training_forward_pass() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, out) = trained(dir.path(), 0);
    let mut ck = out.checkpoint;
    // own-utterance statistics make the moved contour equal the training pitch input
    let utt = load_split(&manifest, Split::Test).unwrap().remove(0);
    let own = dvc_dsp::SpeakerF0Stats::from_contours([&utt.f0]).unwrap();
    ck.stats.rows.push(StatsRow { key: "self".into(), split: Split::Test, stats: own });
    let before = ck.to_bytes();
    let (bundle, mel, warnings) = convert_features(&ck, &utt.mel, &utt.f0, &utt.mel, "self").unwrap();
    assert!(warnings.is_empty());
    assert_eq!(ck.to_bytes(), before);

    let pitch = self_normalized_pitch(&utt.f0).unwrap();
    for (a, b) in bundle.z_pitch.iter().zip(&pitch) {
        assert!((a - b).abs() < 1e-9);
    }
    let t = utt.mel.n_frames() & !1;
    let crop = dvc_dsp::MelSpectrogram::new(t, 80, utt.mel.data()[..t * 80].to_vec()).unwrap();
    let (_, cropped, _) = convert_features(
        &ck,
        &crop,
        &F0Contour::new(utt.f0.values_hz[..t].to_vec()),
        &crop,
        "self",
    )
    .unwrap();
    let mut g = Graph::new(Mode::Eval, &[]);
    let m = g.input(Tensor::new(vec![1, t, 80], crop.data().to_vec()).unwrap());
    let p = g.input(Tensor::new(vec![1, t], pitch[..t].to_vec()).unwrap());
    let fp = ck.model.forward(&mut g, m, p, 0.25).unwrap();
    let forward = g.value(fp.mel_hat).data();
    let worst = forward.iter().zip(cropped.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");
    assert_eq!(mel.n_frames(), utt.mel.n_frames());
}

#[test]
fn swapping_the_reference_leaves_content_codes_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, out) = trained(dir.path(), 0);
    let test = load_split(&manifest, Split::Test).unwrap();
    let src = &test[0];
    let a = test.iter().find(|u| u.speaker == "spk0").unwrap();
    let b = test.iter().find(|u| u.speaker == "spk1").unwrap();
    let (ba, _, _) = convert_features(&out.checkpoint, &src.mel, &src.f0, &a.mel, "spk0").unwrap();
    let (bb, _, _) = convert_features(&out.checkpoint, &src.mel, &src.f0, &b.mel, "spk1").unwrap();
    assert_eq!(ba.code_indices, bb.code_indices);
    assert_eq!(ba.z_content, bb.z_content);
    assert_ne!(ba.z_speaker, bb.z_speaker);
    assert_ne!(ba.z_pitch, bb.z_pitch);
}

#[test]
fn waveform_conversion_and_its_failure_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = trained(dir.path(), 0);
    let src = load_wav(dir.path().join("wav/s0_e0_test_00.wav")).unwrap();
    let reference = load_wav(dir.path().join("wav/s1_e1_test_00.wav")).unwrap();
    let before = out.checkpoint.to_bytes();
    let conv = convert(&out.checkpoint, &src, &reference, "spk1").unwrap();
    assert_eq!(out.checkpoint.to_bytes(), before);
    assert!(conv.wav.samples().iter().all(|s| s.is_finite()));
    assert_eq!(conv.mel.n_frames(), conv.bundle.n_frames());
    assert!(conv.warnings.is_empty());

    let err = convert(&out.checkpoint, &src, &reference, "spk9").unwrap_err().to_string();
    assert!(err.contains("spk9"), "{err}");

    let silence = dvc_dsp::Waveform::new(vec![0.0; src.len()], src.sample_rate()).unwrap();
    let quiet = convert(&out.checkpoint, &silence, &reference, "spk1").unwrap();
    assert_eq!(quiet.warnings.len(), 1);
    assert!(quiet.bundle.z_pitch.iter().all(|v| *v == 0.0));
}
