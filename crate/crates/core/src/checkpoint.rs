//! Binary parameter files.
//!
//! Layout: the 8-byte magic `CSSDCKPT`, a little-endian `u32` header length,
//! a JSON header, then every tensor as little-endian `f64` in visiting order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{read_file_bytes, write_file, Error, Result};
use crate::head::HeadParams;
use crate::model::DstModel;
use crate::params::ParamSet;

const MAGIC: &[u8; 8] = b"CSSDCKPT";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in values (not bytes) from the start of the data block.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HeadShape {
    d_model: usize,
    n_heads: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<HeadShape>,
    tensors: Vec<TensorEntry>,
}

fn encode<P: ParamSet>(header_kind: &str, encoder: &EncoderConfig, head: Option<HeadShape>, params: &P) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    params.visit(&mut |name, t| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = Header {
        kind: header_kind.to_string(),
        encoder: encoder.clone(),
        head,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

fn decode<'a>(bytes: &'a [u8], expected_kind: &str) -> Result<(Header, &'a [u8])> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.kind != expected_kind {
        return Err(bad(&format!("expected a {expected_kind} checkpoint, found {}", header.kind)));
    }
    Ok((header, &bytes[12 + len..]))
}

fn fill<P: ParamSet>(target: &mut P, header: &Header, data: &[u8]) -> Result<()> {
    let mut error = None;
    let mut i = 0;
    target.visit_mut(&mut |name, mut t| {
        if error.is_some() {
            return;
        }
        let Some(entry) = header.tensors.get(i) else {
            error = Some(Error::Checkpoint(format!("missing tensor {name}")));
            return;
        };
        i += 1;
        if entry.name != name || entry.shape != t.shape() {
            error = Some(Error::Shape {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                found: entry.shape.clone(),
            });
            return;
        }
        let start = entry.offset * 8;
        let Some(raw) = data.get(start..start + t.len() * 8) else {
            error = Some(Error::Checkpoint(format!("truncated data for {name}")));
            return;
        };
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("eight bytes"));
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if i != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {i}",
            header.tensors.len()
        )));
    }
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &DstModel) -> Result<()> {
    let head = HeadShape {
        d_model: model.head.d_model(),
        n_heads: model.head.n_heads,
    };
    write_file(path.as_ref(), encode("model", &model.context.config, Some(head), model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DstModel> {
    let bytes = read_file_bytes(path.as_ref())?;
    let (header, data) = decode(&bytes, "model")?;
    let head = header
        .head
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("model checkpoint lacks a head shape".into()))?;
    header.encoder.validate()?;
    let mut model = DstModel::new(
        EncoderParams::zeros(&header.encoder),
        HeadParams::zeros(head.d_model, head.n_heads),
    )?;
    fill(&mut model, &header, data)?;
    Ok(model)
}

pub fn save_encoder(path: impl AsRef<Path>, encoder: &EncoderParams) -> Result<()> {
    write_file(path.as_ref(), encode("encoder", &encoder.config, None, encoder))
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let bytes = read_file_bytes(path.as_ref())?;
    let (header, data) = decode(&bytes, "encoder")?;
    header.encoder.validate()?;
    let mut encoder = EncoderParams::zeros(&header.encoder);
    fill(&mut encoder, &header, data)?;
    Ok(encoder)
}
