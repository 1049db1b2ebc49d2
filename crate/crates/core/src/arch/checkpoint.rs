//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFRG" | version u32 | model tag u32 | filter base u32 | kernel size u32
//!        | variant u32 | input extent u32
//! entry count u32 | per entry: name len u16, name utf-8, rank u8, dims u32 * rank
//! payload: every entry's values as f32, in table order
//! ```
//!
//! The table lists trainable parameters and batchnorm running statistics
//! in declaration order.

use std::path::Path;

use super::{ArchConfig, ModelKind, NetGraph, Network, Variant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFRG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub config: ArchConfig,
    pub table: Vec<(String, Vec<usize>)>,
}

pub fn encode(net: &Network<f32>) -> Vec<u8> {
    let g = net.graph();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        g.kind.tag(),
        g.filter_base() as u32,
        g.config.kernel_size as u32,
        g.config.variant.tag(),
        g.config.input_extent as u32,
        net.params().len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in net.params() {
        let name = p.spec.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.spec.shape.len() as u8);
        for &d in &p.spec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for p in net.params() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn read_header(r: &mut Reader) -> Result<CheckpointHeader> {
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let tag = r.u32()?;
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown model tag {tag}")))?;
    let filter_base = r.u32()? as usize;
    let kernel_size = r.u32()? as usize;
    let vtag = r.u32()?;
    let variant = Variant::from_tag(vtag).ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {vtag}")))?;
    let input_extent = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("layer name is not utf-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, dims));
    }
    Ok(CheckpointHeader {
        kind,
        config: ArchConfig {
            kernel_size,
            filter_base: Some(filter_base),
            variant,
            dropout: 0.0,
            input_extent,
        },
        table,
    })
}

/// Parses a checkpoint; `expect` (if given) must match the stored model
/// kind. Nothing is returned unless the whole file is consistent.
pub fn decode(bytes: &[u8], expect: Option<ModelKind>) -> Result<Network<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let graph = NetGraph::build(header.kind, header.config.clone())
        .map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
    let specs = graph.param_specs();
    let stored: Vec<_> = header.table.iter().map(|(n, d)| (n.as_str(), d.as_slice())).collect();
    let built: Vec<_> = specs.iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
    if stored != built {
        return Err(Error::Checkpoint(format!(
            "shape table does not match a {} with filter base {}",
            header.kind,
            graph.filter_base()
        )));
    }
    if let Some(k) = expect {
        if k != header.kind {
            return Err(Error::Checkpoint(format!(
                "shape table is for {}, not {k}",
                header.kind
            )));
        }
    }
    let mut values = Vec::with_capacity(specs.len());
    for s in &specs {
        let raw = r.take(4 * s.len())?;
        values.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Network::from_params(graph, values)
}

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expect: Option<ModelKind>) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expect)
}
