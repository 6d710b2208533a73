//! Binary checkpoints.
//!
//! All integers little-endian; weights are IEEE-754 `f64` little-endian, so
//! a round trip is bit-exact.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "RSNNCKPT"
//! 8       4     u32 format version (currently 1)
//! 12      4     u32 byte length L1 of the topology string
//! 16      L1    topology string, UTF-8 (e.g. "28x28-12c5-2a-64c5-2a-10o")
//! ..      4     u32 byte length L2 of the config snapshot
//! ..      L2    training config as TOML, UTF-8
//! ..      4     u32 conv layers trained so far
//! ..      1     u8 readout trained (0 or 1)
//! ..      4     u32 number of kernel stacks S
//! per stack:
//!         16    u32 out_maps, in_maps, kh, kw
//!         8·n   f64 weights, n = out_maps·in_maps·kh·kw, order [k][l][a][b]
//! ..      8     u32 readout outputs, u32 readout inputs
//! ..      8·m   f64 readout weights, row-major outputs x inputs
//! ..      4     u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! A wrong magic, bad CRC, short file or inconsistent payload is
//! [`Error::CorruptCheckpoint`]; a known magic with another version is
//! [`Error::CheckpointVersion`]; filesystem failures are [`Error::Io`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{parse_topology, KernelStack, NetworkTopology, ReadoutWeights};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"RSNNCKPT";
pub const VERSION: u32 = 1;

/// How far training has progressed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Progress {
    pub layers_trained: usize,
    pub readout_trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub topology: NetworkTopology,
    pub config: TrainConfig,
    pub progress: Progress,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidParam(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    if !ck.topology.is_initialized() {
        return Err(Error::InvalidParam(
            "cannot checkpoint an uninitialized topology".into(),
        ));
    }
    let config = toml::to_string(&ck.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, ck.topology.spec())?;
    put_str(&mut out, &config)?;
    put_u32(&mut out, ck.progress.layers_trained)?;
    out.push(ck.progress.readout_trained as u8);
    put_u32(&mut out, ck.topology.kernels().len())?;
    for s in ck.topology.kernels() {
        for d in s.dims() {
            put_u32(&mut out, d)?;
        }
        put_f64s(&mut out, s.as_slice());
    }
    let ro = ck.topology.readout();
    put_u32(&mut out, ro.outputs)?;
    put_u32(&mut out, ro.inputs)?;
    put_f64s(&mut out, &ro.weights);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("string is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::CorruptCheckpoint("array size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(Error::CorruptCheckpoint("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptCheckpoint("CRC mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let spec = r.string()?;
    let config_text = r.string()?;
    let layers_trained = r.u32()?;
    let readout_trained = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::CorruptCheckpoint(format!("readout flag {b}"))),
    };
    let config: TrainConfig =
        toml::from_str(&config_text).map_err(|e| Error::CorruptCheckpoint(format!("config snapshot: {e}")))?;
    let mut topology = parse_topology(&spec).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let n = r.u32()?;
    if n != topology.conv_layers().len() || layers_trained > n {
        return Err(Error::CorruptCheckpoint(format!("{n} kernel stacks for `{spec}`")));
    }
    let mut kernels = Vec::with_capacity(n);
    for _ in 0..n {
        let (o, i, kh, kw) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let len = o
            .checked_mul(i)
            .and_then(|v| v.checked_mul(kh))
            .and_then(|v| v.checked_mul(kw))
            .ok_or_else(|| Error::CorruptCheckpoint("stack size overflow".into()))?;
        let w = r.f64s(len)?;
        kernels.push(KernelStack::from_vec(o, i, kh, kw, w).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?);
    }
    let (outputs, inputs) = (r.u32()?, r.u32()?);
    let len = outputs
        .checked_mul(inputs)
        .ok_or_else(|| Error::CorruptCheckpoint("readout size overflow".into()))?;
    let weights = r.f64s(len)?;
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    topology
        .set_weights(
            kernels,
            ReadoutWeights {
                outputs,
                inputs,
                weights,
            },
        )
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint {
        topology,
        config,
        progress: Progress {
            layers_trained,
            readout_trained,
        },
    })
}

pub fn save(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ck)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
