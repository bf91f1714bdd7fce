use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::models::{Architecture, ModelKind, ParameterRegistry, Submodule};
use crate::numerics::Tensor;
use crate::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8] = b"STLTH-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENT_PREFIXES: [&str; 2] = ["adam.m/", "adam.v/"];

/// Seeds and stream position needed to resume a run exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeedState {
    pub init_seed: u64,
    pub data_seed: u64,
    pub data_cursor: u64,
}

/// Full training state after `iteration` optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub params: ParameterRegistry,
    pub adam: AdamState,
    pub seeds: SeedState,
}

impl Checkpoint {
    /// Header (magic, version, model kind, widths, iteration, seeds, Adam
    /// step), then tensors as name/submodule/prunable/shape/f32 payload with
    /// Adam moments under `adam.m/` and `adam.v/`, then a CRC-64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let arch = self.params.arch();
        w.str(arch.kind.label());
        w.u32(arch.widths.len() as u32);
        for &c in &arch.widths {
            w.u64(c as u64);
        }
        w.u64(self.iteration);
        w.u64(self.seeds.init_seed);
        w.u64(self.seeds.data_seed);
        w.u64(self.seeds.data_cursor);
        w.u64(self.adam.step);
        w.u32((self.params.len() * 3) as u32);
        for e in self.params.iter() {
            put_tensor(&mut w, &e.name, e.submodule, e.prunable, e.tensor.shape(), e.tensor.data());
        }
        for (prefix, moments) in MOMENT_PREFIXES.iter().zip([&self.adam.m, &self.adam.v]) {
            for (e, m) in self.params.iter().zip(moments) {
                put_tensor(&mut w, &format!("{prefix}{}", e.name), e.submodule, false, e.tensor.shape(), m);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, "checkpoint", CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let kind: ModelKind = r.str()?.parse().map_err(|e: Error| r.err(e.to_string()))?;
        let nw = r.u32()? as usize;
        if nw > 16 {
            return Err(r.err(format!("{nw} widths")));
        }
        let widths = (0..nw).map(|_| r.u64().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture::with_widths(kind, widths).map_err(|e| r.err(e.to_string()))?;
        let iteration = r.u64()?;
        let seeds = SeedState { init_seed: r.u64()?, data_seed: r.u64()?, data_cursor: r.u64()? };
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = ParameterRegistry::new(arch);
        let mut moments: [Vec<(String, Vec<f32>)>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..n {
            let name = r.str()?;
            let tag = r.u8()?;
            let submodule = Submodule::from_tag(tag).ok_or_else(|| r.err(format!("bad submodule tag {tag}")))?;
            let prunable = r.u8()? != 0;
            let shape = r.shape()?;
            let data = r.f32s(shape.iter().product())?;
            match MOMENT_PREFIXES.iter().position(|p| name.starts_with(p)) {
                Some(k) => moments[k].push((name[MOMENT_PREFIXES[k].len()..].to_string(), data)),
                None => {
                    let t = Tensor::new(shape, data)?;
                    params.push(name, submodule, prunable, t).map_err(|e| r.err(e.to_string()))?;
                }
            }
        }
        r.expect_end()?;
        let mut adam = AdamState::new(&params);
        adam.step = step;
        for (k, list) in moments.into_iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            if list.len() != params.len() {
                return Err(Error::Format { kind: "checkpoint", detail: "incomplete optimizer moments".into() });
            }
            for (i, (name, data)) in list.into_iter().enumerate() {
                let e = &params.entries()[i];
                if e.name != name || e.tensor.len() != data.len() {
                    return Err(Error::Format {
                        kind: "checkpoint",
                        detail: format!("moment {name} does not match {}", e.name),
                    });
                }
                if k == 0 {
                    adam.m[i] = data;
                } else {
                    adam.v[i] = data;
                }
            }
        }
        Ok(Checkpoint { iteration, params, adam, seeds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn put_tensor(w: &mut Writer, name: &str, submodule: Submodule, prunable: bool, shape: &[usize], data: &[f32]) {
    w.str(name);
    w.u8(submodule.tag());
    w.u8(u8::from(prunable));
    w.shape(shape);
    w.f32s(data);
}
