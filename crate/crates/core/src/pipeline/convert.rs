use dvc_dsp::{
    lg_convert_f0, log_normalize_f0, DspError, F0Contour, GriffinLim, MelAnalyzer, MelConfig, MelSpectrogram, PitchTracker,
    SpeakerF0Stats, Waveform, YinConfig,
};

use crate::config::Config;
use crate::error::CoreError;
use crate::networks::RepBundle;
use crate::pipeline::checkpoint::Checkpoint;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Conversion {
    pub mel: MelSpectrogram,
    pub wav: Waveform,
    pub bundle: RepBundle,
    pub warnings: Vec<String>,
}

/// Mel plus F0 of a waveform under the configured analysis settings.
pub fn analyze(config: &Config, w: &Waveform) -> Result<(MelSpectrogram, F0Contour)> {
    let mel = MelAnalyzer::new(MelConfig::default()).mel_spectrogram(w)?;
    let tracker = PitchTracker::new(YinConfig { threshold: config.yin_threshold, ..YinConfig::default() });
    let f0 = tracker.extract(w)?;
    Ok((mel, f0))
}

/// Pitch input for conversion: the source contour moved onto the target's
/// log-F0 distribution using its own statistics, then standardized with the
/// target's. An unvoiced source yields zeros and a warning.
pub fn converted_pitch(src_f0: &F0Contour, target: &SpeakerF0Stats, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let src = match SpeakerF0Stats::from_contours([src_f0]) {
        Ok(s) => s,
        Err(DspError::NoVoicedFrames) => {
            warnings.push("source has no voiced frames; converting with a flat pitch input".into());
            return Ok(vec![0.0; src_f0.len()]);
        }
        Err(e) => return Err(e.into()),
    };
    if src.floored {
        warnings.push("source F0 is nearly constant; its deviation was floored".into());
    }
    let moved = lg_convert_f0(src_f0, &src, target)?;
    Ok(log_normalize_f0(&moved, target)?)
}

/// Conversion on precomputed features: content from the source, speaker and
/// style from the reference, pitch moved onto `target_key`'s statistics.
pub fn convert_features(
    ck: &Checkpoint,
    src_mel: &MelSpectrogram,
    src_f0: &F0Contour,
    ref_mel: &MelSpectrogram,
    target_key: &str,
) -> Result<(RepBundle, MelSpectrogram, Vec<String>)> {
    let row = ck.stats.get(target_key).ok_or_else(|| {
        CoreError::Data(format!("checkpoint has no F0 statistics for `{target_key}`; run stats first"))
    })?;
    let mut warnings = Vec::new();
    let pitch = converted_pitch(src_f0, &row.stats, &mut warnings)?;
    let bundle = ck.model.encode(src_mel, ref_mel, pitch)?;
    let mel = ck.model.decode(&bundle)?;
    Ok((bundle, mel, warnings))
}

pub fn convert(ck: &Checkpoint, source: &Waveform, reference: &Waveform, target_key: &str) -> Result<Conversion> {
    let (src_mel, src_f0) = analyze(&ck.config, source)?;
    let ref_mel = MelAnalyzer::new(MelConfig::default()).mel_spectrogram(reference)?;
    let (bundle, mel, warnings) = convert_features(ck, &src_mel, &src_f0, &ref_mel, target_key)?;
    let wav = GriffinLim::new(MelAnalyzer::new(MelConfig::default()), ck.config.gl_iterations).invert(&mel)?;
    Ok(Conversion { mel, wav, bundle, warnings })
}
