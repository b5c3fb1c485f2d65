//! Anchor file layout (little-endian):
//!
//! ```text
//! magic      [u8; 4]  "ECRA"
//! version    u32      1
//! d          u32
//! seed       u64
//! groups     u32
//! per group:
//!   code       u8     0..=4 for T, L, E, I, P
//!   derivation u8     0 = label centroids, 1 = k-means
//!   k          u32
//!   has_names  u8
//!   names      k × (u32 len + UTF-8)   only when has_names = 1
//!   values     k·d × f64
//! crc32      u32      over every preceding byte
//! ```

use std::path::Path;

use super::{AnchorSet, Derivation, FactorGroup, Provenance};
use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{EcrError, Result};
use crate::factor::FactorCode;

const MAGIC: &[u8; 4] = b"ECRA";
const VERSION: u32 = 1;

impl AnchorSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.d as u32);
        w.u64(self.provenance.seed);
        w.u32(self.groups.len() as u32);
        for g in &self.groups {
            w.u8(g.code.to_u8());
            w.u8(g.derivation.to_u8());
            w.u32(g.len() as u32);
            match &g.label_names {
                Some(names) => {
                    w.u8(1);
                    for n in names {
                        w.str(n);
                    }
                }
                None => w.u8(0),
            }
            for &v in &g.anchors {
                w.f64(v);
            }
        }
        w.seal()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let payload = binio::unseal(bytes)?;
        let mut r = ByteReader::new(payload);
        r.expect_magic(MAGIC, "ECRA")?;
        r.expect_version(VERSION)?;
        let d = r.u32()? as usize;
        let seed = r.u64()?;
        let n_groups = r.u32()? as usize;
        let mut groups = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let code = FactorCode::from_u8(r.u8()?)?;
            let derivation = Derivation::from_u8(r.u8()?)?;
            let k = r.u32()? as usize;
            let names = match r.u8()? {
                0 => None,
                1 => Some((0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?),
                v => return Err(EcrError::Format(format!("bad label flag {v}"))),
            };
            let mut values = Vec::with_capacity(k * d);
            for _ in 0..k * d {
                values.push(r.f64()?);
            }
            groups.push(FactorGroup::new(code, d, values, names, derivation)?);
        }
        r.finish()?;
        AnchorSet::new(groups, Provenance { seed })
    }
}

pub fn save_anchors(set: &AnchorSet, path: &Path) -> Result<()> {
    binio::write_atomic(path, &set.to_bytes())
}

pub fn load_anchors(path: &Path) -> Result<AnchorSet> {
    AnchorSet::from_bytes(&binio::read_file(path)?)
}

/// Loads and checks the anchor dimension against the embeddings it will meet.
pub fn load_anchors_expecting(path: &Path, d: usize) -> Result<AnchorSet> {
    let set = load_anchors(path)?;
    if set.d() != d {
        return Err(EcrError::Dimension {
            expected: d,
            found: set.d(),
        });
    }
    Ok(set)
}
