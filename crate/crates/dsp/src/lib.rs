//! Audio I/O and the speech feature front-end: log-mel analysis, YIN pitch,
//! log-F0 statistics and Griffin-Lim resynthesis.

mod error;
pub mod f0;
pub mod features;
mod framing;
pub mod griffin_lim;
pub mod mel;
pub mod wav;

pub use error::DspError;
pub use f0::{
    denormalize_f0, extract_f0, lg_convert_f0, log_normalize_f0, F0Contour, PitchTracker,
    SpeakerF0Stats, YinConfig,
};
pub use features::Features;
pub use framing::frame_count;
pub use griffin_lim::{griffin_lim, GriffinLim};
pub use mel::{mel_spectrogram, MelAnalyzer, MelConfig, MelSpectrogram, Spectrum};
pub use wav::{load_wav, save_wav, Waveform};

pub type Result<T, E = DspError> = std::result::Result<T, E>;

pub const SAMPLE_RATE: u32 = 16_000;
pub const HOP_LENGTH: usize = 160;
pub const N_MELS: usize = 80;
