use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dvc_core::config::{key_help, parse_override, parse_pairs};
use dvc_core::eval::report::{embedding_rows, embeddings_csv, evaluate_pair, report_csv, report_jsonl, EmbedItem, Side};
use dvc_core::pipeline::{
    analyze, compute_speaker_stats, convert, write_metrics_csv, Checkpoint, Manifest, ManifestEntry, Split,
};
use dvc_core::synth::{generate, SynthSpec, SPEC_KEYS};
use dvc_core::{Config, CoreError, ErrorKind};
use dvc_dsp::{load_wav, save_wav, DspError, Features, MelSpectrogram};

/// A failure with its exit class.
pub struct Failure {
    pub kind: ErrorKind,
    pub detail: String,
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self { kind: e.kind(), detail: e.to_string() }
    }
}

impl From<DspError> for Failure {
    fn from(e: DspError) -> Self {
        CoreError::from(e).into()
    }
}

fn usage(detail: impl Into<String>) -> Failure {
    Failure { kind: ErrorKind::Usage, detail: detail.into() }
}

fn data(detail: impl Into<String>) -> Failure {
    Failure { kind: ErrorKind::Data, detail: detail.into() }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "dvc", version, about = "Disentangling voice conversion: synthesize, extract, train, convert, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// Override one config key; repeatable, wins over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Line-based `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus.
    Synth {
        /// `key = value` corpus spec file.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Extract mel and F0 features from every WAV in a directory.
    Features {
        #[arg(long, value_name = "DIR")]
        wav_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model; the metrics CSV is written beside the checkpoint.
    Train {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute target F0 statistics and store them in the checkpoint.
    Stats {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Convert a source utterance to the speaker and style of a reference.
    Convert {
        #[arg(long, value_name = "WAV")]
        src: PathBuf,
        #[arg(long = "ref", value_name = "WAV")]
        reference: PathBuf,
        /// Key of the target F0 statistics row.
        #[arg(long, value_name = "ID")]
        speaker: String,
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "WAV")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score converted utterances listed in a pairs CSV.
    Evaluate {
        /// CSV with columns converted,reference,source,target_speaker,source_speaker.
        #[arg(long, value_name = "CSV")]
        pairs: PathBuf,
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        /// Report CSV; a JSON-lines twin is written with the `.jsonl` extension.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Take speaker centroids from this manifest instead of the pair's own files.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export speaker and style embeddings with a 2-D projection.
    Embed {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

pub fn long_help() -> String {
    let mut s = String::from("Config keys (name, default, meaning):\n");
    s.push_str(&key_help());
    s.push_str("\nCorpus spec keys for `synth`:\n");
    let spec = SynthSpec::default();
    for (k, doc) in SPEC_KEYS {
        s.push_str(&format!("  {k:<22} {:<18} {doc}\n", spec.get(k).unwrap_or_default()));
    }
    s.push_str("\nErrors print one line `ERR:<usage|data|numeric>:<detail>` and exit with 1, 2 or 3.");
    s
}

fn parse_overrides(o: &Overrides) -> Outcome<Vec<(String, String)>> {
    o.set.iter().map(|s| parse_override(s).map_err(Failure::from)).collect()
}

/// Defaults, then the file, then `--set`; a key repeated within one layer is an error.
fn load_config(args: &ConfigArgs) -> Outcome<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        cfg.apply_pairs(&parse_pairs(&text)?)?;
    }
    cfg.apply_pairs(&parse_overrides(&args.overrides)?)?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path, o: &Overrides) -> Outcome<Checkpoint> {
    let mut ck = Checkpoint::load(path)?;
    let pairs = parse_overrides(o)?;
    if !pairs.is_empty() {
        let model = ck.config.model.clone();
        ck.config.apply_pairs(&pairs)?;
        if ck.config.model != model || pairs.iter().any(|(k, _)| k == "preset") {
            return Err(usage("network-shape keys cannot be overridden on a trained checkpoint"));
        }
    }
    Ok(ck)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.txt");
    PathBuf::from(s)
}

fn write(path: &Path, body: &str) -> Outcome {
    std::fs::write(path, body).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Write `body` to `path` and the config echo beside it.
fn write_with_echo(path: &Path, body: &str, cfg: &Config) -> Outcome {
    write(path, body)?;
    write(&sidecar(path), &cfg.echo())
}

fn with_suffix(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn run(cli: Cli) -> Outcome {
    match cli.cmd {
        Cmd::Synth { spec, out, overrides } => synth(spec.as_deref(), &out, &overrides),
        Cmd::Features { wav_dir, out, config } => features(&wav_dir, &out, &load_config(&config)?),
        Cmd::Train { manifest, out, config } => train(&manifest, &out, &load_config(&config)?),
        Cmd::Stats { manifest, ckpt, overrides } => stats(&manifest, &ckpt, &overrides),
        Cmd::Convert { src, reference, speaker, ckpt, out, overrides } => {
            let ck = load_checkpoint(&ckpt, &overrides)?;
            convert_cmd(&ck, &src, &reference, &speaker, &out)
        }
        Cmd::Evaluate { pairs, ckpt, out, manifest, overrides } => {
            let ck = load_checkpoint(&ckpt, &overrides)?;
            evaluate(&ck, &pairs, &out, manifest.as_deref())
        }
        Cmd::Embed { manifest, ckpt, out, overrides } => {
            let ck = load_checkpoint(&ckpt, &overrides)?;
            embed(&ck, &manifest, &out)
        }
    }
}

fn synth(spec_file: Option<&Path>, out: &Path, o: &Overrides) -> Outcome {
    let mut spec = match spec_file {
        Some(p) => SynthSpec::from_file(p)?,
        None => SynthSpec::default(),
    };
    for (k, v) in parse_overrides(o)? {
        spec.set(&k, &v)?;
    }
    spec.validate()?;
    let m = generate(&spec, out)?;
    println!("{} utterances written to {}", m.entries.len(), out.display());
    Ok(())
}

fn features(wav_dir: &Path, out: &Path, cfg: &Config) -> Outcome {
    let read = std::fs::read_dir(wav_dir).map_err(|e| data(format!("{}: {e}", wav_dir.display())))?;
    let mut wavs: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(data(format!("{}: no .wav files", wav_dir.display())));
    }
    std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    for p in &wavs {
        let (mel, f0) = analyze(cfg, &load_wav(p)?)?;
        let name = p.file_stem().expect("listed file").to_string_lossy().into_owned();
        Features::new(mel, Some(f0))?.write(out.join(format!("{name}.dvc")))?;
    }
    write(&out.join("features.config.txt"), &cfg.echo())?;
    println!("{} feature files written to {}", wavs.len(), out.display());
    Ok(())
}

fn train(manifest: &Path, out: &Path, cfg: &Config) -> Outcome {
    let m = Manifest::read(manifest)?;
    let outcome = dvc_core::pipeline::train(&m, cfg, |e| {
        eprintln!("epoch {} l_recon {:.4} l_vq {:.4} mi_sp {:.4}", e.epoch, e.l_recon, e.l_vq, e.mi[0]);
    })?;
    outcome.checkpoint.save(out)?;
    let metrics = with_suffix(out, "metrics.csv");
    write_metrics_csv(&metrics, &outcome.metrics)?;
    write(&sidecar(&metrics), &cfg.echo())?;
    println!("checkpoint {} metrics {}", out.display(), metrics.display());
    Ok(())
}

fn stats(manifest: &Path, ckpt: &Path, o: &Overrides) -> Outcome {
    let mut ck = load_checkpoint(ckpt, o)?;
    let m = Manifest::read(manifest)?;
    ck.stats = compute_speaker_stats(&m, ck.config.train.f0_stats)?;
    ck.save(ckpt)?;
    for row in &ck.stats.rows {
        println!(
            "{} split={} mean_log_f0={:.6} std_log_f0={:.6} voiced_frames={}",
            row.key,
            row.split.as_str(),
            row.stats.mean_log_f0,
            row.stats.std_log_f0,
            row.stats.n_voiced_frames
        );
    }
    Ok(())
}

fn convert_cmd(ck: &Checkpoint, src: &Path, reference: &Path, speaker: &str, out: &Path) -> Outcome {
    let c = convert(ck, &load_wav(src)?, &load_wav(reference)?, speaker)?;
    for w in &c.warnings {
        eprintln!("WARN: {w}");
    }
    save_wav(&c.wav, out)?;
    write(&sidecar(out), &ck.config.echo())?;
    let mel_path = with_suffix(out, "mel.dvc");
    Features::new(c.mel, None)?.write(&mel_path)?;
    println!("converted {} mel {}", out.display(), mel_path.display());
    Ok(())
}

struct Pair {
    converted: String,
    reference: String,
    source: String,
    target_speaker: String,
    source_speaker: String,
}

const PAIR_COLUMNS: [&str; 5] = ["converted", "reference", "source", "target_speaker", "source_speaker"];

fn read_pairs(path: &Path) -> Outcome<Vec<Pair>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| data(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| data(format!("{}: missing column `{name}`", path.display())))
    };
    let idx: Vec<usize> = PAIR_COLUMNS.iter().map(|c| col(c)).collect::<Outcome<_>>()?;
    let mut pairs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| data(format!("{}: {e}", path.display())))?;
        let f = |i: usize| rec.get(idx[i]).unwrap_or("").trim().to_string();
        pairs.push(Pair { converted: f(0), reference: f(1), source: f(2), target_speaker: f(3), source_speaker: f(4) });
    }
    if pairs.is_empty() {
        return Err(data(format!("{}: no pairs", path.display())));
    }
    Ok(pairs)
}

/// Speaker embeddings of a speaker's validation utterances, falling back to training ones.
fn manifest_refs(ck: &Checkpoint, m: &Manifest, speaker: &str) -> Outcome<Vec<Vec<f64>>> {
    for split in [Split::Val, Split::Train] {
        let entries: Vec<&ManifestEntry> = m.split(split).filter(|e| e.speaker == speaker).collect();
        if !entries.is_empty() {
            return entries
                .into_iter()
                .map(|e| Ok(ck.model.speaker_embedding(&Features::read(m.resolve(e))?.mel)?))
                .collect();
        }
    }
    Err(data(format!("manifest has no utterances of speaker `{speaker}`")))
}

fn evaluate(ck: &Checkpoint, pairs_path: &Path, out: &Path, manifest: Option<&Path>) -> Outcome {
    let pairs = read_pairs(pairs_path)?;
    let base = pairs_path.parent().unwrap_or(Path::new("."));
    let manifest = manifest.map(Manifest::read).transpose()?;
    let load = |rel: &str| -> Outcome<(MelSpectrogram, dvc_dsp::F0Contour)> {
        Ok(analyze(&ck.config, &load_wav(base.join(rel))?)?)
    };
    let mut rows = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let (cmel, cf0) = load(&p.converted)?;
        let (rmel, rf0) = load(&p.reference)?;
        let (tgt, src) = match &manifest {
            Some(m) => (manifest_refs(ck, m, &p.target_speaker)?, manifest_refs(ck, m, &p.source_speaker)?),
            None => {
                if p.source.is_empty() {
                    return Err(data(format!("pair `{}` names no source and no --manifest was given", p.converted)));
                }
                let (smel, _) = load(&p.source)?;
                (vec![ck.model.speaker_embedding(&rmel)?], vec![ck.model.speaker_embedding(&smel)?])
            }
        };
        let emb = ck.model.speaker_embedding(&cmel)?;
        rows.push(evaluate_pair(
            &Side { name: &p.converted, mel: &cmel, f0: &cf0 },
            &Side { name: &p.reference, mel: &rmel, f0: &rf0 },
            &emb,
            &tgt,
            &src,
        )?);
    }
    write_with_echo(out, &report_csv(&rows), &ck.config)?;
    let jsonl = with_suffix(out, "jsonl");
    write(&jsonl, &report_jsonl(&rows, &ck.config))?;
    let pass = rows.iter().filter(|r| r.verdict).count();
    println!("{} pairs, verdict {pass}/{}; report {} and {}", rows.len(), rows.len(), out.display(), jsonl.display());
    Ok(())
}

fn embed(ck: &Checkpoint, manifest: &Path, out: &Path) -> Outcome {
    let m = Manifest::read(manifest)?;
    let mels: Vec<MelSpectrogram> = m
        .entries
        .iter()
        .map(|e| Ok(Features::read(m.resolve(e))?.mel))
        .collect::<Outcome<_>>()?;
    let items: Vec<EmbedItem> = m
        .entries
        .iter()
        .zip(&mels)
        .map(|(e, mel)| EmbedItem { speaker: &e.speaker, style: &e.style, path: &e.feature_path, mel })
        .collect();
    let rows = embedding_rows(ck, &items)?;
    write_with_echo(out, &embeddings_csv(&rows), &ck.config)?;
    println!("{} embedding rows written to {}", rows.len(), out.display());
    Ok(())
}
