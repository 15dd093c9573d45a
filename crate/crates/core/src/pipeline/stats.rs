use dvc_dsp::{F0Contour, Features, SpeakerF0Stats};

use crate::config::StatsMode;
use crate::error::CoreError;
use crate::pipeline::manifest::{Manifest, Split};
use crate::Result;

/// Target F0 statistics for one speaker (or speaker and style), with the split
/// they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsRow {
    pub key: String,
    pub split: Split,
    pub stats: SpeakerF0Stats,
}

/// Rows sorted by key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl StatsTable {
    pub fn get(&self, key: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.key.as_str())
    }
}

pub fn stats_key(mode: StatsMode, speaker: &str, style: &str) -> String {
    match mode {
        StatsMode::Speaker => speaker.to_string(),
        StatsMode::SpeakerStyle => format!("{speaker}:{style}"),
    }
}

/// Pooled voiced log-F0 statistics per key over the validation split. A key
/// with no validation utterances falls back to its training utterances and
/// the row records that.
pub fn compute_speaker_stats(manifest: &Manifest, mode: StatsMode) -> Result<StatsTable> {
    let mut keys: Vec<String> = manifest
        .entries
        .iter()
        .map(|e| stats_key(mode, &e.speaker, &e.style))
        .collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::with_capacity(keys.len());
    for key in keys {
        let of_split = |split: Split| {
            manifest
                .split(split)
                .filter(|e| stats_key(mode, &e.speaker, &e.style) == key)
                .collect::<Vec<_>>()
        };
        let (split, entries) = match of_split(Split::Val) {
            v if !v.is_empty() => (Split::Val, v),
            _ => (Split::Train, of_split(Split::Train)),
        };
        if entries.is_empty() {
            continue;
        }
        let mut contours: Vec<F0Contour> = Vec::with_capacity(entries.len());
        for e in entries {
            let feats = Features::read(manifest.resolve(e))?;
            let f0 = feats
                .f0
                .ok_or_else(|| CoreError::Data(format!("{}: features carry no F0", e.feature_path)))?;
            contours.push(f0);
        }
        let stats = SpeakerF0Stats::from_contours(&contours).map_err(|_| {
            CoreError::Data(format!("`{key}` has no voiced frames in its {} utterances", split.as_str()))
        })?;
        rows.push(StatsRow { key, split, stats });
    }
    Ok(StatsTable { rows })
}
