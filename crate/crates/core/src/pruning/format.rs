use std::path::Path;

use super::{MaskEntry, PruningMask};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::Result;
use crate::models::Submodule;

pub const MASK_MAGIC: &[u8] = b"STLTH-MASK";
pub const MASK_VERSION: u32 = 1;

impl PruningMask {
    /// Header, then per tensor name/submodule/shape and LSB-first packed
    /// bits, then a CRC-64 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MASK_MAGIC);
        w.u32(MASK_VERSION);
        w.str(&self.strategy);
        w.u32(self.round);
        w.u64(self.seed);
        w.str(&format!("{}", self.sparsity()));
        w.u32(self.entries().len() as u32);
        for e in self.entries() {
            w.str(&e.name);
            w.u8(e.submodule.tag());
            w.shape(&e.shape);
            let mut packed = vec![0u8; e.keep.len().div_ceil(8)];
            for (i, _) in e.keep.iter().enumerate().filter(|(_, &k)| k) {
                packed[i / 8] |= 1 << (i % 8);
            }
            w.bytes(&packed);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, "mask", MASK_MAGIC)?;
        let version = r.u32()?;
        if version != MASK_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let strategy = r.str()?;
        let round = r.u32()?;
        let seed = r.u64()?;
        let stated: f64 = r.str()?.parse().map_err(|_| r.err("sparsity is not a decimal"))?;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.str()?;
            let tag = r.u8()?;
            let submodule = Submodule::from_tag(tag).ok_or_else(|| r.err(format!("bad submodule tag {tag}")))?;
            let shape = r.shape()?;
            let len: usize = shape.iter().product();
            let packed = r.take(len.div_ceil(8))?;
            let keep = (0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            entries.push(MaskEntry { name, submodule, shape, keep });
        }
        r.expect_end()?;
        let mask = PruningMask::from_entries(entries, round, strategy, seed)?;
        if format!("{}", mask.sparsity()) != format!("{stated}") {
            return Err(r.err(format!("stated sparsity {stated} disagrees with payload {}", mask.sparsity())));
        }
        Ok(mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
