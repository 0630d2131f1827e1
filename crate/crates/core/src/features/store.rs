//! Record-oriented binary feature store.
//!
//! Layout (little-endian): the magic `HOIF1`, a `u64` record count, five
//! `u32` payload lengths (one per [`FeatureKind`]), then the records. Each
//! record is a 17-byte key `(video u32, t u32, kind u8, id_a u32, id_b u32)`
//! followed by `f32` values.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"HOIF1";
const HEADER_LEN: usize = 5 + 8 + 5 * 4;
const KEY_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FeatureKind {
    Subject = 0,
    Object = 1,
    Relation = 2,
    Semantic = 3,
    Gaze = 4,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Subject,
        FeatureKind::Object,
        FeatureKind::Relation,
        FeatureKind::Semantic,
        FeatureKind::Gaze,
    ];

    fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub video: u32,
    pub t: u32,
    pub kind: FeatureKind,
    pub id_a: u32,
    pub id_b: u32,
}

impl RecordKey {
    pub fn subject(video: u32, t: u32, track: u32) -> Self {
        Self { video, t, kind: FeatureKind::Subject, id_a: track, id_b: 0 }
    }

    pub fn object(video: u32, t: u32, track: u32) -> Self {
        Self { video, t, kind: FeatureKind::Object, id_a: track, id_b: 0 }
    }

    pub fn relation(video: u32, t: u32, subject: u32, object: u32) -> Self {
        Self { video, t, kind: FeatureKind::Relation, id_a: subject, id_b: object }
    }

    pub fn semantic(class_id: u32) -> Self {
        Self { video: 0, t: 0, kind: FeatureKind::Semantic, id_a: class_id, id_b: 0 }
    }

    pub fn gaze(video: u32, t: u32, human: u32) -> Self {
        Self { video, t, kind: FeatureKind::Gaze, id_a: human, id_b: 0 }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.video.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.id_a.to_le_bytes());
        out.extend_from_slice(&self.id_b.to_le_bytes());
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Accumulates records in memory and serializes them in insertion order.
#[derive(Debug, Clone)]
pub struct FeatureStoreWriter {
    dims: [u32; 5],
    body: Vec<u8>,
    count: u64,
}

impl FeatureStoreWriter {
    pub fn new(dims: [u32; 5]) -> Self {
        Self { dims, body: Vec::new(), count: 0 }
    }

    pub fn push(&mut self, key: RecordKey, values: &[f64]) -> Result<()> {
        let want = self.dims[key.kind as usize] as usize;
        if values.len() != want {
            return Err(Error::Dimension(format!(
                "{:?} record has {} values, declared {want}",
                key.kind,
                values.len()
            )));
        }
        key.encode(&mut self.body);
        for v in values {
            self.body.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        self.count += 1;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.count.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.body);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Read-only store indexed by an offset table; payloads are decoded on lookup.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dims: [u32; 5],
    bytes: Vec<u8>,
    offsets: HashMap<RecordKey, usize>,
}

impl FeatureStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
            return Err(Error::Schema("not a feature store (bad magic or short header)".into()));
        }
        let count = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
        let mut dims = [0u32; 5];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32_at(&bytes, 13 + 4 * i);
        }
        let mut offsets = HashMap::new();
        let mut at = HEADER_LEN;
        for r in 0..count {
            if at + KEY_LEN > bytes.len() {
                return Err(Error::Dimension(format!("record {r} is truncated inside its key")));
            }
            let kind = FeatureKind::from_byte(bytes[at + 8])
                .ok_or_else(|| Error::Schema(format!("record {r} has unknown kind {}", bytes[at + 8])))?;
            let key = RecordKey {
                video: u32_at(&bytes, at),
                t: u32_at(&bytes, at + 4),
                kind,
                id_a: u32_at(&bytes, at + 9),
                id_b: u32_at(&bytes, at + 13),
            };
            let payload = at + KEY_LEN;
            let end = payload + 4 * dims[kind as usize] as usize;
            if end > bytes.len() {
                return Err(Error::Dimension(format!(
                    "record {r} ({kind:?}) declares {} values but the file ends early",
                    dims[kind as usize]
                )));
            }
            if offsets.insert(key, payload).is_some() {
                return Err(Error::Schema(format!("duplicate record key {key:?}")));
            }
            at = end;
        }
        if at != bytes.len() {
            return Err(Error::Schema(format!("{} trailing bytes after the last record", bytes.len() - at)));
        }
        Ok(Self { dims, bytes, offsets })
    }

    pub fn dims(&self) -> [u32; 5] {
        self.dims
    }

    pub fn dim(&self, kind: FeatureKind) -> usize {
        self.dims[kind as usize] as usize
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Byte offset of a record's payload.
    pub fn offset(&self, key: &RecordKey) -> Option<usize> {
        self.offsets.get(key).copied()
    }

    pub fn get(&self, key: &RecordKey) -> Result<Option<Vec<f64>>> {
        let Some(&at) = self.offsets.get(key) else {
            return Ok(None);
        };
        let n = self.dim(key.kind);
        Ok(Some(
            self.bytes[at..at + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        ))
    }

    /// Like [`get`](Self::get) but a missing record is an error.
    pub fn require(&self, key: &RecordKey) -> Result<Vec<f64>> {
        self.get(key)?
            .ok_or_else(|| Error::Schema(format!("feature store has no record {key:?}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &RecordKey> {
        self.offsets.keys()
    }
}
