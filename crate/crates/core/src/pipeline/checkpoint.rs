//! Binary checkpoint: `DVCK1`, a section count, then length-prefixed named
//! sections. All integers and floats are little-endian; floats are stored as
//! their exact `f64` bit patterns so save → load → save reproduces the bytes.

use std::path::Path;

use dvc_dsp::SpeakerF0Stats;
use dvc_tensor::optim::{AdamConfig, AdamState, Moments};
use dvc_tensor::{Group, ParamKind, ParamStore, Tensor};

use crate::config::Config;
use crate::error::CoreError;
use crate::networks::Model;
use crate::pipeline::manifest::Split;
use crate::pipeline::stats::{StatsRow, StatsTable};
use crate::quantizer::Codebook;
use crate::Result;

pub const MAGIC: &[u8; 5] = b"DVCK1";

const SECTIONS: [&str; 7] = ["config", "params", "codebook", "adam_main", "adam_aux", "speaker_stats", "epoch"];

/// Everything needed to resume training or run conversion.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    pub model: Model,
    pub adam_main: AdamState,
    pub adam_aux: AdamState,
    pub stats: StatsTable,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn fresh(config: Config) -> Result<Self> {
        config.train.validate()?;
        let model = Model::new(&config.model, config.train.seed)?;
        Ok(Self {
            config,
            model,
            adam_main: AdamState::new(AdamConfig::default()),
            adam_aux: AdamState::new(AdamConfig::default()),
            stats: StatsTable::default(),
            epoch: 0,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, SECTIONS.len() as u32);
        for name in SECTIONS {
            let mut body = Vec::new();
            match name {
                "config" => body.extend_from_slice(self.config.echo().as_bytes()),
                "params" => write_params(&mut body, &self.model.store),
                "codebook" => write_codebook(&mut body, &self.model.codebook),
                "adam_main" => write_adam(&mut body, &self.adam_main),
                "adam_aux" => write_adam(&mut body, &self.adam_aux),
                "speaker_stats" => write_stats(&mut body, &self.stats),
                "epoch" => put_u64(&mut body, self.epoch as u64),
                _ => unreachable!(),
            }
            put_str(&mut out, name);
            put_u64(&mut out, body.len() as u64);
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CoreError::Data("not a DVCK1 checkpoint".into()));
        }
        let n = r.u32()? as usize;
        let mut sections: Vec<(String, &[u8])> = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let len = r.u64()? as usize;
            sections.push((name, r.take(len)?));
        }
        if r.pos != bytes.len() {
            return Err(CoreError::Data("checkpoint has trailing bytes".into()));
        }
        let section = |name: &str| -> Result<Reader<'_>> {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| Reader { buf: b, pos: 0 })
                .ok_or_else(|| CoreError::Data(format!("checkpoint lacks section `{name}`")))
        };

        let text = std::str::from_utf8(section("config")?.buf)
            .map_err(|_| CoreError::Data("checkpoint config is not UTF-8".into()))?;
        let config = Config::from_text(text)?;
        let mut model = Model::new(&config.model, config.train.seed)?;
        let store = read_params(&mut section("params")?)?;
        model.store.load_from(&store)?;
        model.codebook = read_codebook(&mut section("codebook")?)?;
        if model.codebook.n_codes() != config.model.n_codes || model.codebook.dim() != config.model.code_dim {
            return Err(CoreError::Data("checkpoint codebook does not match its config".into()));
        }
        let adam_main = read_adam(&mut section("adam_main")?)?;
        let adam_aux = read_adam(&mut section("adam_aux")?)?;
        let stats = read_stats(&mut section("speaker_stats")?)?;
        let epoch = section("epoch")?.u64()? as usize;
        Ok(Self { config, model, adam_main, adam_aux, stats, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(CoreError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CoreError::io(path))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    put_u64(out, vs.len() as u64);
    for &v in vs {
        put_f64(out, v);
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write_params(out: &mut Vec<u8>, store: &ParamStore) {
    put_u32(out, store.len() as u32);
    for e in store.entries() {
        put_str(out, &e.name);
        out.push(e.group.tag());
        out.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        put_u32(out, e.value.shape().len() as u32);
        for &d in e.value.shape() {
            put_u64(out, d as u64);
        }
        for &v in e.value.data() {
            put_f64(out, v);
        }
    }
}

fn write_codebook(out: &mut Vec<u8>, cb: &Codebook) {
    put_u64(out, cb.n_codes() as u64);
    put_u64(out, cb.dim() as u64);
    put_f64s(out, cb.vectors());
    put_f64s(out, &cb.ema_counts);
}

fn write_adam(out: &mut Vec<u8>, a: &AdamState) {
    put_f64(out, a.config.beta1);
    put_f64(out, a.config.beta2);
    put_f64(out, a.config.epsilon);
    put_u64(out, a.step_count);
    put_u64(out, a.moments.len() as u64);
    for m in &a.moments {
        match m {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                put_f64s(out, &m.first);
                put_f64s(out, &m.second);
            }
        }
    }
}

fn write_stats(out: &mut Vec<u8>, t: &StatsTable) {
    put_u32(out, t.rows.len() as u32);
    for row in &t.rows {
        put_str(out, &row.key);
        put_str(out, row.split.as_str());
        put_f64(out, row.stats.mean_log_f0);
        put_f64(out, row.stats.std_log_f0);
        put_u64(out, row.stats.n_voiced_frames as u64);
        out.push(row.stats.floored as u8);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CoreError::Data("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(CoreError::Data("checkpoint length field exceeds section".into()));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CoreError::Data("checkpoint name is not UTF-8".into()))
    }
}

fn read_params(r: &mut Reader) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let group = Group::from_tag(r.u8()?).ok_or_else(|| CoreError::Data(format!("{name}: unknown group")))?;
        let kind = r.u8()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel.saturating_mul(8) > r.buf.len() - r.pos {
            return Err(CoreError::Data(format!("{name}: tensor exceeds section")));
        }
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(shape, data)?;
        match kind {
            0 => store.add(name, value, group),
            1 => store.add_buffer(name, value, group),
            _ => return Err(CoreError::Data(format!("{name}: unknown parameter kind"))),
        };
    }
    Ok(store)
}

fn read_codebook(r: &mut Reader) -> Result<Codebook> {
    let k = r.u64()? as usize;
    let d = r.u64()? as usize;
    let mut cb = Codebook::new(r.f64s()?, k, d)?;
    let counts = r.f64s()?;
    if counts.len() != k {
        return Err(CoreError::Data("codebook usage counts do not match its size".into()));
    }
    cb.ema_counts = counts;
    Ok(cb)
}

fn read_adam(r: &mut Reader) -> Result<AdamState> {
    let config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, epsilon: r.f64()? };
    let step_count = r.u64()?;
    let n = r.len(1)?;
    let mut moments = Vec::with_capacity(n);
    for _ in 0..n {
        moments.push(match r.u8()? {
            0 => None,
            1 => Some(Moments { first: r.f64s()?, second: r.f64s()? }),
            _ => return Err(CoreError::Data("bad optimizer moment tag".into())),
        });
    }
    Ok(AdamState { config, step_count, moments })
}

fn read_stats(r: &mut Reader) -> Result<StatsTable> {
    let mut rows = Vec::new();
    for _ in 0..r.u32()? {
        let key = r.string()?;
        let split = r.string()?;
        let split = Split::parse(&split).ok_or_else(|| CoreError::Data(format!("{key}: unknown split `{split}`")))?;
        let stats = SpeakerF0Stats {
            mean_log_f0: r.f64()?,
            std_log_f0: r.f64()?,
            n_voiced_frames: r.u64()? as usize,
            floored: r.u8()? != 0,
        };
        rows.push(StatsRow { key, split, stats });
    }
    Ok(StatsTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn tiny() -> Config {
        let mut c = Config::for_preset(Preset::Desk);
        c.apply_pairs(&[("n_codes".into(), "8".into())]).unwrap();
        c
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let mut ck = Checkpoint::fresh(tiny()).unwrap();
        ck.epoch = 3;
        ck.model.codebook.ema_counts[1] = 0.5;
        ck.adam_main.step_count = 7;
        ck.adam_main.moments = vec![None, Some(Moments { first: vec![1.0, -0.0], second: vec![2.0, 1e-300] })];
        ck.stats.rows.push(StatsRow {
            key: "spk0".into(),
            split: Split::Val,
            stats: SpeakerF0Stats { mean_log_f0: 5.3, std_log_f0: 0.1, n_voiced_frames: 90, floored: false },
        });
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.stats, ck.stats);
        assert_eq!(back.adam_main, ck.adam_main);
        assert_eq!(back.model.store, ck.model.store);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = Checkpoint::fresh(tiny()).unwrap().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"DVCK2").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
