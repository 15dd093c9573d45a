use std::io::{Read, Write};
use std::path::Path;

use crate::f0::F0Contour;
use crate::mel::MelSpectrogram;
use crate::{DspError, Result};

const MAGIC: &[u8; 4] = b"DVC1";

/// One utterance's features as stored in a `DVC1` file.
///
/// Layout: magic, `u32` frame count, `u32` band count, `u32` F0 flag, then
/// row-major little-endian `f32` mel values and, when flagged, `f32` F0.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub mel: MelSpectrogram,
    pub f0: Option<F0Contour>,
}

impl Features {
    pub fn new(mel: MelSpectrogram, f0: Option<F0Contour>) -> Result<Self> {
        if let Some(f) = &f0 {
            if f.len() != mel.n_frames() {
                return Err(DspError::LengthMismatch { what: "F0 contour", expected: mel.n_frames(), got: f.len() });
            }
        }
        Ok(Self { mel, f0 })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (t, m) = (self.mel.n_frames(), self.mel.n_mels());
        let mut out = Vec::with_capacity(16 + 4 * (t * m + t));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(self.f0.is_some() as u32).to_le_bytes());
        for &v in self.mel.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(f0) = &self.f0 {
            for &v in &f0.values_hz {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(DspError::Feature("missing DVC1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (t, m, flag) = (word(4), word(8), word(12));
        if flag > 1 {
            return Err(DspError::Feature(format!("F0 flag {flag} is not 0 or 1")));
        }
        let expected = 16 + 4 * (t * m + flag * t);
        if bytes.len() != expected {
            return Err(DspError::Feature(format!("expected {expected} bytes for {t}x{m}, found {}", bytes.len())));
        }
        let floats: Vec<f64> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(DspError::Feature("non-finite value".into()));
        }
        let mel = MelSpectrogram::new(t, m, floats[..t * m].to_vec())?;
        let f0 = (flag == 1).then(|| F0Contour::new(floats[t * m..].to_vec()));
        Self::new(mel, f0)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mel = MelSpectrogram::new(2, 3, vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
        let feats = Features::new(mel, Some(F0Contour::new(vec![100.0, 0.0]))).unwrap();
        let b = feats.to_bytes();
        assert_eq!(&b[..4], b"DVC1");
        assert_eq!(&b[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 4 * 8);
        assert_eq!(Features::from_bytes(&b).unwrap(), feats);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let mel = MelSpectrogram::new(2, 2, vec![0.0; 4]).unwrap();
        let b = Features::new(mel, None).unwrap().to_bytes();
        assert!(matches!(Features::from_bytes(&b[..b.len() - 1]), Err(DspError::Feature(_))));
        assert!(matches!(Features::from_bytes(b"RIFF0000000000000000"), Err(DspError::Feature(_))));
    }
}
