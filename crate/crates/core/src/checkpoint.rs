//! Versioned binary checkpoint container.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic   8 bytes  "SEQSEGCK"
//! version u32
//! count   u32      number of sections
//! section: name_len u32, name bytes, payload_len u64, payload bytes
//! ```
//!
//! Sections are `config` (the `key=value` text of the training config),
//! `vocab` (three string tables in id order), `params` (named `f64`
//! matrices) and `meta` (selected epoch, its dev F1, and the epoch log).

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::recurrent::{Params, PARAM_NAMES};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"SEQSEGCK";
pub const FORMAT_VERSION: u32 = 1;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub dev_f1: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} lr {} loss {} devF1 {}",
            self.epoch, self.lr, self.loss, self.dev_f1
        )
    }
}

/// Everything needed to decode with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: Params,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub log: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();
        sections.push(("config", self.config.to_string().into_bytes()));

        let mut vocab = Vec::new();
        for table in [&self.vocab.uni, &self.vocab.bi, &self.vocab.tri] {
            put_u64(&mut vocab, table.len() as u64);
            for s in table.symbols() {
                put_str(&mut vocab, s);
            }
        }
        sections.push(("vocab", vocab));

        let mut params = Vec::new();
        put_u32(&mut params, PARAM_NAMES.len() as u32);
        for (name, t) in PARAM_NAMES.iter().zip(self.params.tensors()) {
            put_str(&mut params, name);
            put_u64(&mut params, t.nrows() as u64);
            put_u64(&mut params, t.ncols() as u64);
            for v in t.iter() {
                params.extend_from_slice(&v.to_le_bytes());
            }
        }
        sections.push(("params", params));

        let mut meta = Vec::new();
        put_u64(&mut meta, self.best_epoch as u64);
        put_f64(&mut meta, self.best_dev_f1);
        put_u64(&mut meta, self.log.len() as u64);
        for r in &self.log {
            put_u64(&mut meta, r.epoch as u64);
            put_f64(&mut meta, r.lr);
            put_f64(&mut meta, r.loss);
            put_f64(&mut meta, r.dev_f1);
        }
        sections.push(("meta", meta));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, sections.len() as u32);
        for (name, payload) in sections {
            put_str32(&mut out, name);
            put_u64(&mut out, payload.len() as u64);
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptFile("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version > FORMAT_VERSION || version == 0 {
            return Err(Error::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let count = r.u32()?;
        let (mut config, mut vocab, mut params, mut meta) = (None, None, None, None);
        for _ in 0..count {
            let name = r.str32()?;
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            match name.as_str() {
                "config" => config = Some(payload),
                "vocab" => vocab = Some(payload),
                "params" => params = Some(payload),
                "meta" => meta = Some(payload),
                // unknown sections are skipped
                _ => {}
            }
        }
        if !r.is_done() {
            return Err(Error::CorruptFile("trailing bytes".into()));
        }
        let missing = |s: &str| Error::CorruptFile(format!("missing section {s}"));

        let config_text = std::str::from_utf8(config.ok_or_else(|| missing("config"))?)
            .map_err(|_| Error::CorruptFile("config is not UTF-8".into()))?;
        let config = TrainConfig::from_text(config_text)
            .map_err(|e| Error::CorruptFile(format!("config: {e}")))?;

        let mut r = Reader::new(vocab.ok_or_else(|| missing("vocab"))?);
        let mut tables = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = r.u64()? as usize;
            let symbols = (0..n).map(|_| r.str64()).collect::<Result<Vec<_>>>()?;
            tables.push(symbols);
        }
        r.finish("vocab")?;
        let [uni, bi, tri]: [Vec<String>; 3] = tables.try_into().expect("three tables");
        let vocab = Vocabulary::from_symbols(uni, bi, tri)?;

        let mut r = Reader::new(params.ok_or_else(|| missing("params"))?);
        let n = r.u32()?;
        let mut named = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.str64()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::CorruptFile("parameter size overflow".into()))?;
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::CorruptFile("parameter size overflow".into()))?,
            )?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let arr = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::CorruptFile(e.to_string()))?;
            named.push((name, arr));
        }
        r.finish("params")?;
        let params = Params::from_named(named)?;
        if params.dims().vocab != vocab.sizes() {
            return Err(Error::CorruptFile(
                "embedding tables do not match the vocabulary".into(),
            ));
        }

        let mut r = Reader::new(meta.ok_or_else(|| missing("meta"))?);
        let best_epoch = r.u64()? as usize;
        let best_dev_f1 = r.f64()?;
        let n = r.u64()? as usize;
        let mut log = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            log.push(EpochRecord {
                epoch: r.u64()? as usize,
                lr: r.f64()?,
                loss: r.f64()?,
                dev_f1: r.f64()?,
            });
        }
        r.finish("meta")?;

        Ok(Checkpoint {
            config,
            vocab,
            params,
            best_epoch,
            best_dev_f1,
            log,
        })
    }
}

pub fn save(c: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
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

fn put_str32(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptFile("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn utf8(bytes: &[u8]) -> Result<String> {
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptFile("invalid UTF-8 string".into()))
    }

    fn str32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        Self::utf8(self.take(n)?)
    }

    fn str64(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        Self::utf8(self.take(n)?)
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn finish(&self, section: &str) -> Result<()> {
        if self.is_done() {
            Ok(())
        } else {
            Err(Error::CorruptFile(format!(
                "trailing bytes in section {section}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TagScheme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let units: Vec<String> = "abcabcab\u{0}".chars().map(String::from).collect();
        let vocab = Vocabulary::build([units.as_slice()]).unwrap();
        let config = TrainConfig {
            char_vec: 3,
            ngram_vecs: 2,
            state: 4,
            scheme: TagScheme::Biesx,
            lr0: 0.1 + 0.2,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = Params::random(config.model_dims(&vocab), &mut rng);
        Checkpoint {
            config,
            vocab,
            params,
            best_epoch: 7,
            best_dev_f1: 0.1 + 0.7,
            log: vec![EpochRecord {
                epoch: 1,
                lr: 0.1,
                loss: 1.0 / 3.0,
                dev_f1: 0.25,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&c, &path).unwrap();
        assert_eq!(load(&path).unwrap(), c);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CorruptFile(_))
        ));

        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch {
                found: 2,
                supported: 1
            })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = sample().to_bytes();
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptFile(_))
            ));
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load(Path::new("/nonexistent/x.ckpt")),
            Err(Error::Io { .. })
        ));
    }
}
