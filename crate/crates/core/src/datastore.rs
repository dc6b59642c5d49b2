//! The retrieval set: one `(key, (target, logits))` entry per corpus position.
//!
//! Keys are the model's seqout on the context, logits its full output on the
//! same context. In memory everything is `f64`; the FT2RA-DS v1 file stores
//! 32-bit floats, so a freshly built datastore is rounded once on its first
//! save and is stable from then on.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{self, ByteReader};
use crate::context::ContextWindow;
use crate::error::{Error, Result};
use crate::toylm::ToyLm;
use crate::vocab::{TokenId, Vocab};

pub const DATASTORE_MAGIC: &[u8; 8] = b"FT2RADS1";
pub const DATASTORE_VERSION: u32 = 1;
pub const META_LEN: usize = 64;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + META_LEN;

/// Where a datastore came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Built,
    Loaded,
    External,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatastoreMeta {
    /// Free-form description stored in the 64-byte header field.
    pub text: String,
    pub origin: Origin,
}

impl DatastoreMeta {
    /// `fp=<model fingerprint>;c=<corpus>;t=<unix seconds>`, clipped to 64 bytes.
    pub fn describe(fingerprint: &str, corpus: &str, timestamp: u64) -> Self {
        let text = clip(&format!("fp={fingerprint};c={corpus};t={timestamp}"), META_LEN);
        Self { text, origin: Origin::Built }
    }

    /// Value of a `key=value` field in the metadata text, if present.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.text.split(';').find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }
}

fn clip(s: &str, max: usize) -> String {
    let mut end = s.len().min(max);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

/// Borrowed view of one entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryRef<'a> {
    pub key: &'a [f64],
    pub target: TokenId,
    pub logits: &'a [f64],
}

/// Owned entry, used when assembling datastores by hand.
#[derive(Clone, Debug, PartialEq)]
pub struct DatastoreEntry {
    pub key: Vec<f64>,
    pub target: TokenId,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datastore {
    v: usize,
    dmodel: usize,
    keys: Vec<f64>,
    targets: Vec<TokenId>,
    logits: Vec<f64>,
    meta: DatastoreMeta,
}

impl Datastore {
    pub fn empty(v: usize, dmodel: usize, meta: DatastoreMeta) -> Result<Self> {
        if v < 2 || dmodel == 0 {
            return Err(Error::invalid(format!("bad datastore dimensions v={v}, dmodel={dmodel}")));
        }
        Ok(Self { v, dmodel, keys: Vec::new(), targets: Vec::new(), logits: Vec::new(), meta })
    }

    pub fn from_entries(v: usize, dmodel: usize, entries: Vec<DatastoreEntry>, meta: DatastoreMeta) -> Result<Self> {
        let mut ds = Self::empty(v, dmodel, meta)?;
        for e in entries {
            ds.push(&e.key, e.target, &e.logits)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, key: &[f64], target: TokenId, logits: &[f64]) -> Result<()> {
        if key.len() != self.dmodel || logits.len() != self.v {
            return Err(Error::invalid(format!(
                "entry dims key={} logits={}, datastore has dmodel={} v={}",
                key.len(),
                logits.len(),
                self.dmodel,
                self.v
            )));
        }
        if target.index() >= self.v {
            return Err(Error::invalid(format!("target {target} out of range (v = {})", self.v)));
        }
        if key.iter().chain(logits).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite key or logits"));
        }
        self.keys.extend_from_slice(key);
        self.targets.push(target);
        self.logits.extend_from_slice(logits);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn dmodel(&self) -> usize {
        self.dmodel
    }

    pub fn meta(&self) -> &DatastoreMeta {
        &self.meta
    }

    /// All keys, row-major (`len × dmodel`).
    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn entry(&self, i: usize) -> EntryRef<'_> {
        EntryRef { key: self.key(i), target: self.targets[i], logits: self.logits(i) }
    }

    pub fn key(&self, i: usize) -> &[f64] {
        &self.keys[i * self.dmodel..(i + 1) * self.dmodel]
    }

    pub fn target(&self, i: usize) -> TokenId {
        self.targets[i]
    }

    pub fn logits(&self, i: usize) -> &[f64] {
        &self.logits[i * self.v..(i + 1) * self.v]
    }

    /// Overwrites an entry's stored logits (persistent-update mode only).
    pub(crate) fn logits_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.logits[i * self.v..(i + 1) * self.v]
    }

    pub fn iter(&self) -> impl Iterator<Item = EntryRef<'_>> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    /// Fails unless the datastore matches the given vocabulary size and key width.
    pub fn check_compatible(&self, v: usize, dmodel: usize) -> Result<()> {
        if self.v != v || self.dmodel != dmodel {
            return Err(Error::invalid(format!(
                "datastore has v={} dmodel={}, expected v={v} dmodel={dmodel}",
                self.v, self.dmodel
            )));
        }
        Ok(())
    }

    /// One entry per position `t` in `[n, len)`: key = seqout and logits of the
    /// model on `corpus[t-n..t]`, target = `corpus[t]`.
    pub fn build(model: &ToyLm, corpus: &[TokenId], meta: DatastoreMeta) -> Result<Self> {
        let v = model.vocab_size();
        if let Some(bad) = corpus.iter().find(|t| t.index() >= v) {
            return Err(Error::invalid(format!("corpus token {bad} outside the model vocabulary (v = {v})")));
        }
        let n = model.context_len();
        let mut ds = Self::empty(v, model.dmodel(), meta)?;
        if corpus.len() <= n {
            return Ok(ds);
        }
        let rows: Vec<_> = (n..corpus.len())
            .into_par_iter()
            .map(|t| {
                let ctx = ContextWindow::new(corpus[t - n..t].to_vec());
                model.forward(&ctx).map(|f| (f, corpus[t]))
            })
            .collect::<Result<_>>()?;
        ds.keys.reserve(rows.len() * ds.dmodel);
        ds.logits.reserve(rows.len() * v);
        for (f, target) in rows {
            ds.keys.extend_from_slice(&f.seqout);
            ds.targets.push(target);
            ds.logits.extend_from_slice(&f.logits);
        }
        Ok(ds)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let per_entry = 4 * (self.dmodel + 1 + self.v);
        let mut out = Vec::with_capacity(HEADER_LEN + per_entry * self.len());
        out.extend_from_slice(DATASTORE_MAGIC);
        binio::put_u32(&mut out, DATASTORE_VERSION);
        binio::put_u32(&mut out, binio::dim(self.v, "v")?);
        binio::put_u32(&mut out, binio::dim(self.dmodel, "dmodel")?);
        binio::put_u64(&mut out, self.len() as u64);
        let meta = clip(&self.meta.text, META_LEN);
        out.extend_from_slice(meta.as_bytes());
        out.resize(out.len() + META_LEN - meta.len(), 0);
        for i in 0..self.len() {
            for &x in self.key(i) {
                binio::put_f32(&mut out, x as f32);
            }
            binio::put_u32(&mut out, self.targets[i].0);
            for &x in self.logits(i) {
                binio::put_f32(&mut out, x as f32);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        if r.take(8, "magic")? != DATASTORE_MAGIC {
            return Err(Error::format(0, "bad magic, expected FT2RADS1"));
        }
        let version = r.u32("version")?;
        if version != DATASTORE_VERSION {
            return Err(Error::format(8, format!("unsupported version {version}")));
        }
        let v = r.u32("v")? as usize;
        let dmodel = r.u32("dmodel")? as usize;
        if v < 2 {
            return Err(Error::format(12, format!("vocabulary size {v} < 2")));
        }
        if dmodel == 0 {
            return Err(Error::format(16, "dmodel is zero"));
        }
        let count = r.u64("entry count")?;
        let meta_raw = r.take(META_LEN, "metadata")?;
        let meta_end = meta_raw.iter().position(|&b| b == 0).unwrap_or(META_LEN);
        let meta =
            DatastoreMeta { text: String::from_utf8_lossy(&meta_raw[..meta_end]).into_owned(), origin: Origin::Loaded };

        let per_entry = 4 * (dmodel + 1 + v) as u64;
        let expected = count.checked_mul(per_entry);
        if expected != Some(r.remaining() as u64) {
            let complete = r.remaining() as u64 / per_entry;
            let at = if count > complete {
                HEADER_LEN as u64 + complete * per_entry
            } else {
                HEADER_LEN as u64 + count.saturating_mul(per_entry)
            };
            return Err(Error::format(
                at,
                format!("header declares {count} entries of {per_entry} bytes but payload is {} bytes", r.remaining()),
            ));
        }
        let count = count as usize;
        let mut ds = Self::empty(v, dmodel, meta)?;
        ds.keys.reserve(count * dmodel);
        ds.targets.reserve(count);
        ds.logits.reserve(count * v);
        for _ in 0..count {
            for _ in 0..dmodel {
                let at = r.offset();
                let x = r.f32("key")?;
                if !x.is_finite() {
                    return Err(Error::format(at, "non-finite key component"));
                }
                ds.keys.push(x as f64);
            }
            let at = r.offset();
            let target = r.u32("target")?;
            if target as usize >= v {
                return Err(Error::format(at, format!("target {target} out of range (v = {v})")));
            }
            ds.targets.push(TokenId(target));
            for _ in 0..v {
                let at = r.offset();
                let x = r.f32("logits")?;
                if !x.is_finite() {
                    return Err(Error::format(at, "non-finite logit"));
                }
                ds.logits.push(x as f64);
            }
        }
        r.finish()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a datastore produced outside this crate (e.g. by the export
    /// adapter for real models). When a vocabulary is supplied its size must
    /// match the file's `v`.
    pub fn import_external(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<Self> {
        let mut ds = Self::load(path)?;
        if let Some(vocab) = vocab {
            if vocab.len() != ds.v {
                return Err(Error::invalid(format!(
                    "datastore v={} does not match vocabulary size {}",
                    ds.v,
                    vocab.len()
                )));
            }
        }
        ds.meta.origin = Origin::External;
        Ok(ds)
    }
}
