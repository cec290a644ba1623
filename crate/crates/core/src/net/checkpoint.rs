//! `STGN` checkpoint container.
//!
//! ```text
//! "STGN" | version u16 | structure hash u64 | iteration u64 | seed u64
//! | variant u8 | rng algorithm (u16 len + utf8) | array count u32
//! | per array: name (u16 len + utf8), len u32, len × f32
//! | CRC32 of everything before it
//! ```
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::path::Path;

use super::{NetConfig, NetGraph, Op, TluConfig, Variant};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::RNG_ALGORITHM;

const MAGIC: &[u8; 4] = b"STGN";
const KIND: &str = "checkpoint";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Training position stored alongside the weights. The trainer derives all
/// of its random draws from `(seed, iteration)`, so these two values are
/// the complete RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub seed: u64,
    pub variant: Variant,
}

impl NetGraph {
    /// Every stored array: learnable parameters plus batch-norm running
    /// statistics, in node order.
    pub fn named_arrays(&self) -> Vec<(String, &[f32])> {
        let mut out: Vec<(String, &[f32])> = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv { params, .. } => {
                    out.push((format!("{}.kernels", node.name), params.kernels.data()));
                    if let Some(b) = &params.bias {
                        out.push((format!("{}.bias", node.name), b));
                    }
                }
                Op::BatchNorm(p) => {
                    out.push((format!("{}.gamma", node.name), &p.gamma));
                    out.push((format!("{}.beta", node.name), &p.beta));
                    out.push((format!("{}.running_mean", node.name), &p.running_mean));
                    out.push((format!("{}.running_var", node.name), &p.running_var));
                }
                _ => {}
            }
        }
        out.push(("fc.weights".into(), &self.head.weights));
        out.push(("fc.bias".into(), &self.head.bias));
        out
    }

    fn named_arrays_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out: Vec<(String, &mut [f32])> = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv { params, .. } => {
                    out.push((format!("{}.kernels", node.name), params.kernels.data_mut()));
                    if let Some(b) = &mut params.bias {
                        out.push((format!("{}.bias", node.name), b));
                    }
                }
                Op::BatchNorm(p) => {
                    out.push((format!("{}.gamma", node.name), &mut p.gamma));
                    out.push((format!("{}.beta", node.name), &mut p.beta));
                    out.push((format!("{}.running_mean", node.name), &mut p.running_mean));
                    out.push((format!("{}.running_var", node.name), &mut p.running_var));
                }
                _ => {}
            }
        }
        out.push(("fc.weights".into(), &mut self.head.weights));
        out.push(("fc.bias".into(), &mut self.head.bias));
        out
    }

    pub fn encode_checkpoint(&self, meta: &CheckpointMeta) -> Vec<u8> {
        let arrays = self.named_arrays();
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u16(CHECKPOINT_VERSION)
            .u64(self.structure_hash())
            .u64(meta.iteration)
            .u64(meta.seed)
            .u8(meta.variant.id())
            .str(RNG_ALGORITHM)
            .u32(arrays.len() as u32);
        for (name, values) in arrays {
            w.str(&name).u32(values.len() as u32);
            for &v in values {
                w.f32(v);
            }
        }
        w.finish_with_crc()
    }

    /// Replaces every stored array. Arrays are matched by name; nothing is
    /// modified unless the whole checkpoint fits this graph.
    pub fn decode_checkpoint(&mut self, bytes: &[u8]) -> Result<CheckpointMeta> {
        let mut header = Reader::new(bytes, KIND);
        header.magic(MAGIC)?;
        header.version(CHECKPOINT_VERSION)?;

        let mut r = Reader::with_crc(bytes, KIND)?;
        r.magic(MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let hash = r.u64()?;
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let variant_id = r.u8()?;
        let variant = Variant::from_id(variant_id)
            .map_err(|_| Error::format(KIND, format!("unknown variant id {variant_id}")))?;
        let algorithm = r.str()?;
        if algorithm != RNG_ALGORITHM {
            return Err(Error::format(KIND, format!("written with RNG `{algorithm}`, this build uses `{RNG_ALGORITHM}`")));
        }
        let count = r.u32()? as usize;
        let mut stored: HashMap<String, Vec<f32>> = HashMap::with_capacity(count);
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let len = r.u32()? as usize;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::format(KIND, "array length overflow"))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if stored.insert(name.clone(), values).is_some() {
                return Err(Error::format(KIND, format!("duplicate array `{name}`")));
            }
            order.push(name);
        }
        r.expect_end()?;

        // Shapes of arrays present on both sides first: the most specific
        // diagnostic when loading a different architecture.
        let expected: Vec<(String, usize)> = self.named_arrays().into_iter().map(|(n, v)| (n, v.len())).collect();
        for (name, len) in &expected {
            if let Some(values) = stored.get(name) {
                if values.len() != *len {
                    return Err(Error::LayerShape { layer: name.clone(), expected: *len, found: values.len() });
                }
            }
        }
        if let Some((name, _)) = expected.iter().find(|(n, _)| !stored.contains_key(n)) {
            return Err(Error::format(KIND, format!("no array for layer `{name}`")));
        }
        if let Some(extra) = order.iter().find(|n| !expected.iter().any(|(e, _)| e == *n)) {
            return Err(Error::format(KIND, format!("array `{extra}` does not belong to this network")));
        }
        if hash != self.structure_hash() {
            return Err(Error::format(
                KIND,
                format!("structure hash {hash:016x} != network {:016x}; different wiring", self.structure_hash()),
            ));
        }
        for (name, dst) in self.named_arrays_mut() {
            dst.copy_from_slice(&stored[&name]);
        }
        Ok(CheckpointMeta { iteration, seed, variant })
    }

    /// Builds the network a checkpoint was written for and loads it.
    pub fn from_checkpoint(bytes: &[u8], height: usize, width: usize, tlu: TluConfig) -> Result<(Self, CheckpointMeta)> {
        let meta = peek_checkpoint(bytes)?;
        let mut g = NetGraph::build(&NetConfig { variant: meta.variant, tlu, ..NetConfig::default() }, height, width)?;
        g.decode_checkpoint(bytes)?;
        Ok((g, meta))
    }

    pub fn from_checkpoint_file(
        path: impl AsRef<Path>,
        height: usize,
        width: usize,
        tlu: TluConfig,
    ) -> Result<(Self, CheckpointMeta)> {
        Self::from_checkpoint(&read_file(path.as_ref())?, height, width, tlu)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
        write_file(path.as_ref(), &self.encode_checkpoint(meta))
    }

    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<CheckpointMeta> {
        self.decode_checkpoint(&read_file(path.as_ref())?)
    }
}

/// Header fields of a checkpoint, after verifying its CRC.
pub fn peek_checkpoint(bytes: &[u8]) -> Result<CheckpointMeta> {
    let mut header = Reader::new(bytes, KIND);
    header.magic(MAGIC)?;
    header.version(CHECKPOINT_VERSION)?;
    let mut r = Reader::with_crc(bytes, KIND)?;
    r.magic(MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let _hash = r.u64()?;
    let iteration = r.u64()?;
    let seed = r.u64()?;
    let variant_id = r.u8()?;
    let variant =
        Variant::from_id(variant_id).map_err(|_| Error::format(KIND, format!("unknown variant id {variant_id}")))?;
    Ok(CheckpointMeta { iteration, seed, variant })
}
