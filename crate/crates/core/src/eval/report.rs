use std::fmt::Write as _;
use std::path::Path;

use dvc_dsp::{F0Contour, MelSpectrogram};
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::error::CoreError;
use crate::eval::cluster::Pca;
use crate::eval::metrics::{covoiced_ratio, f0_distance, f0_rmse, mcd, speaker_similarity, MCD_ORDER};
use crate::pipeline::Checkpoint;
use crate::Result;

pub const REPORT_HEADER: &str = "src,ref,mcd_db,f0_rmse_hz,f0_dist_hz,cos_tgt,cos_src,verdict,covoiced_ratio";

pub fn mcd_method() -> String {
    format!("orthonormal DCT-II of log-mel, coefficients 1..{MCD_ORDER}, DTW-aligned")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub src: String,
    pub reference: String,
    pub mcd_db: f64,
    /// `None` when the pair has no co-voiced frames.
    pub f0_rmse_hz: Option<f64>,
    pub f0_dist_hz: Option<f64>,
    pub cos_tgt: f64,
    pub cos_src: f64,
    pub verdict: bool,
    pub covoiced_ratio: f64,
}

/// Features of one side of an evaluated pair.
pub struct Side<'a> {
    pub name: &'a str,
    pub mel: &'a MelSpectrogram,
    pub f0: &'a F0Contour,
}

/// Every metric for one converted utterance against its reference, with the
/// speaker verdict taken against the given reference embeddings.
pub fn evaluate_pair(
    converted: &Side,
    reference: &Side,
    converted_embedding: &[f64],
    target_refs: &[Vec<f64>],
    source_refs: &[Vec<f64>],
) -> Result<ReportRow> {
    let m = mcd(converted.mel, reference.mel)?;
    let sim = speaker_similarity(converted_embedding, target_refs, source_refs)?;
    Ok(ReportRow {
        src: converted.name.to_string(),
        reference: reference.name.to_string(),
        mcd_db: m.db,
        f0_rmse_hz: f0_rmse(converted.f0, reference.f0)?,
        f0_dist_hz: f0_distance(converted.f0, reference.f0)?,
        cos_tgt: sim.cos_target,
        cos_src: sim.cos_source,
        verdict: sim.verdict,
        covoiced_ratio: covoiced_ratio(&m.alignment, converted.f0, reference.f0),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| x.to_string())
}

/// Quote a CSV field when it needs it.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            field(&r.src),
            field(&r.reference),
            r.mcd_db,
            opt(r.f0_rmse_hz),
            opt(r.f0_dist_hz),
            r.cos_tgt,
            r.cos_src,
            r.verdict,
            r.covoiced_ratio
        )
        .unwrap();
    }
    out
}

fn config_object(cfg: &Config) -> Value {
    Value::Object(cfg.echo_pairs().into_iter().map(|(k, v)| (k, Value::String(v))).collect::<Map<_, _>>())
}

/// First line: the configuration and MCD method; then one object per row.
pub fn report_jsonl(rows: &[ReportRow], cfg: &Config) -> String {
    let mut out = json!({ "config": config_object(cfg), "mcd_method": mcd_method() }).to_string();
    out.push('\n');
    for r in rows {
        let v = json!({
            "src": r.src,
            "ref": r.reference,
            "mcd_db": r.mcd_db,
            "f0_rmse_hz": r.f0_rmse_hz,
            "f0_dist_hz": r.f0_dist_hz,
            "cos_tgt": r.cos_tgt,
            "cos_src": r.cos_src,
            "verdict": r.verdict,
            "covoiced_ratio": r.covoiced_ratio,
        });
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

/// One utterance to embed.
pub struct EmbedItem<'a> {
    pub speaker: &'a str,
    pub style: &'a str,
    pub path: &'a str,
    pub mel: &'a MelSpectrogram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbKind {
    Speaker,
    Style,
}

impl EmbKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbKind::Speaker => "speaker",
            EmbKind::Style => "style",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedRow {
    pub speaker: String,
    pub style: String,
    pub path: String,
    pub kind: EmbKind,
    pub values: Vec<f64>,
    pub pca: [f64; 2],
}

/// Speaker and style embeddings of every item, each kind projected on its own
/// two leading principal axes.
pub fn embedding_rows(ck: &Checkpoint, items: &[EmbedItem]) -> Result<Vec<EmbedRow>> {
    if items.is_empty() {
        return Err(CoreError::Data("nothing to embed".into()));
    }
    let mut rows = Vec::with_capacity(2 * items.len());
    for kind in [EmbKind::Speaker, EmbKind::Style] {
        let vecs = items
            .iter()
            .map(|it| match kind {
                EmbKind::Speaker => ck.model.speaker_embedding(it.mel),
                EmbKind::Style => ck.model.style_embedding(it.mel),
            })
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<[f64; 2]> = if vecs.len() >= 2 {
            let pca = Pca::fit(&vecs)?;
            vecs.iter()
                .map(|v| {
                    let s = pca.project(v, 2);
                    [s.first().copied().unwrap_or(0.0), s.get(1).copied().unwrap_or(0.0)]
                })
                .collect()
        } else {
            vec![[0.0, 0.0]]
        };
        for ((it, v), s) in items.iter().zip(vecs).zip(scores) {
            rows.push(EmbedRow {
                speaker: it.speaker.to_string(),
                style: it.style.to_string(),
                path: it.path.to_string(),
                kind,
                values: v,
                pca: s,
            });
        }
    }
    Ok(rows)
}

pub fn embeddings_csv(rows: &[EmbedRow]) -> String {
    let d = rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut out = String::from("speaker_id,style_id,utt_path,emb_kind");
    for i in 1..=d {
        write!(out, ",v{i}").unwrap();
    }
    out.push_str(",pca1,pca2\n");
    for r in rows {
        write!(out, "{},{},{},{}", field(&r.speaker), field(&r.style), field(&r.path), r.kind.as_str()).unwrap();
        for i in 0..d {
            match r.values.get(i) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        writeln!(out, ",{},{}", r.pca[0], r.pca[1]).unwrap();
    }
    out
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(CoreError::io(path))
}
