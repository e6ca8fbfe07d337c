//! Binary model checkpoints.
//!
//! Layout (all integers u32 little-endian unless noted, floats f64 LE):
//! magic `TMPALIGN`, version, label names, architecture settings, `S`, `H`,
//! `O`, then per language its code, vocabulary, vector table and optional
//! alignment, then every parameter tensor in declaration order. A sidecar
//! `<file>.manifest` lists tensor names and shapes as text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::labels::LabelScheme;
use super::model::{ModelConfig, TaggerModel};
use crate::embeddings::{EmbeddingSpace, Vocabulary};
use crate::error::{Error, Result};
use crate::math::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"TMPALIGN";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn flag(&mut self, v: bool) {
        self.0.push(v as u8);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank());
        for &d in t.shape() {
            self.u32(d);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!("{}: truncated checkpoint at byte {}", self.origin, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool> {
        Ok(self.take(1)?[0] != 0)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data(format!("{}: invalid UTF-8 in checkpoint", self.origin)))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Serializes the model; the bytes depend only on the model state.
pub fn to_bytes(model: &TaggerModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let names = LabelScheme.names();
    w.u32(names.len());
    for n in &names {
        w.str(n);
    }
    let c = &model.config;
    w.u32(c.lstm_hidden);
    w.u32(c.disc_hidden);
    w.flag(c.train_embeddings);
    w.flag(c.iob2_constraints);
    w.u64(c.seed);
    w.u32(model.embedding_dim());
    w.u32(c.disc_hidden);
    w.u32(model.num_languages());
    for sp in model.spaces() {
        w.str(&sp.language);
        w.u32(sp.vocab.word_count());
        for word in sp.vocab.words() {
            w.str(word);
        }
        w.tensor(sp.vectors());
        w.flag(sp.alignment().is_some());
        if let Some(a) = sp.alignment() {
            w.tensor(a);
        }
    }
    w.u32(model.store.len());
    for (_, p) in model.store.iter() {
        w.str(&p.name);
        w.tensor(&p.tensor);
    }
    w.0
}

pub fn manifest(model: &TaggerModel) -> String {
    let mut out = String::new();
    for (_, p) in model.store.iter() {
        let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{}\t{}", p.name, dims.join("x"));
    }
    out
}

pub fn from_bytes(buf: &[u8], origin: &str) -> Result<TaggerModel> {
    let mut r = Reader { buf, pos: 0, origin };
    if r.take(8)? != MAGIC {
        return Err(Error::Data(format!("{origin}: not a tempalign checkpoint")));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Data(format!("{origin}: unsupported checkpoint version {version}")));
    }
    let n_labels = r.u32()?;
    let labels = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    if labels != LabelScheme.names() {
        return Err(Error::Data(format!("{origin}: label scheme {labels:?} differs from this build")));
    }
    let config = ModelConfig {
        lstm_hidden: r.u32()?,
        disc_hidden: r.u32()?,
        train_embeddings: r.flag()?,
        iob2_constraints: r.flag()?,
        seed: r.u64()?,
    };
    let _s = r.u32()?;
    let _h = r.u32()?;
    let o = r.u32()?;
    let mut spaces = Vec::with_capacity(o);
    for _ in 0..o {
        let lang = r.str()?;
        let n = r.u32()?;
        let words = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vectors = r.tensor()?;
        let alignment = if r.flag()? { Some(r.tensor()?) } else { None };
        spaces.push(EmbeddingSpace::from_parts(lang, Vocabulary::from_words(words), vectors, alignment)?);
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.str()?;
        let t = r.tensor()?;
        store.add(name, t);
    }
    if r.pos != buf.len() {
        return Err(Error::Data(format!("{origin}: {} trailing bytes", buf.len() - r.pos)));
    }
    TaggerModel::from_parts(spaces, config, store)
}

/// Writes the checkpoint and its manifest.
pub fn save(model: &TaggerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    fs::write(&mp, manifest(model)).map_err(|e| Error::io(&mp, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TaggerModel> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::parse_vectors;

    fn model(train_embeddings: bool) -> TaggerModel {
        let mut es = parse_vectors("uno 1 0 0\ndos 0 1 0\n", "m", "es", None).unwrap();
        let en = parse_vectors("one 0 0 1\ntwo 1 1 0\n", "m", "en", None).unwrap();
        let r = Tensor::matrix(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        es.set_alignment(r).unwrap();
        let cfg = ModelConfig {
            lstm_hidden: 3,
            disc_hidden: 2,
            train_embeddings,
            ..ModelConfig::default()
        };
        TaggerModel::new(vec![es, en], cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for trainable in [false, true] {
            let m = model(trainable);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes, "mem").unwrap();
            assert_eq!(to_bytes(&back), bytes);
            let t: Vec<String> = vec!["dos".into(), "uno".into()];
            assert_eq!(m.tag_labels(&t, "es").unwrap(), back.tag_labels(&t, "es").unwrap());
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model(false));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3], "c"), Err(Error::Data(_))));
        assert!(matches!(from_bytes(b"NOTACKPT", "c"), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_lists_every_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = model(false);
        save(&m, &p).unwrap();
        let text = fs::read_to_string(manifest_path(&p)).unwrap();
        assert_eq!(text.lines().count(), m.store.len());
        assert!(text.starts_with("feature.w\t3x3\n"));
        assert_eq!(to_bytes(&load(&p).unwrap()), to_bytes(&m));
    }
}
