//! On-disk formats for distilled buffers and model checkpoints.
//!
//! Both files start with a line-oriented text header terminated by a line
//! holding `end`, followed by a contiguous little-endian f32 payload whose
//! sha256 is recorded in the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use distill_cl_core::distill::BufferEntry;
use distill_cl_core::{
    DistilledBuffer, Error, ImageShape, LabeledSet, ModelParams, ModelSpec, Result,
};
use sha2::{Digest, Sha256};

pub const BUFFER_MAGIC: &str = "distill-cl-buffer 1";
pub const CHECKPOINT_MAGIC: &str = "distill-cl-checkpoint 1";
const END: &str = "end\n";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn f32_bytes(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn f32_values(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let ctx = |what: &str| format!("{what} {}", path.display());
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx("creating"), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(ctx("writing"), e))?;
    f.sync_all().map_err(|e| Error::io(ctx("syncing"), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(ctx("renaming into"), e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Split a file into its header lines (after the magic line) and payload.
fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Vec<&'a str>, &'a [u8])> {
    let end = bytes
        .windows(END.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == END.as_bytes())
        .ok_or_else(|| Error::Format("header is not terminated by an 'end' line".into()))?;
    let head = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut lines = head.lines();
    match lines.next() {
        Some(m) if m == magic => {}
        other => {
            return Err(Error::Format(format!(
                "expected '{magic}', found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    Ok((lines.collect(), &bytes[end + 1 + END.len()..]))
}

fn field<'a>(lines: &[&'a str], key: &str) -> Result<&'a str> {
    lines
        .iter()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("header lacks '{key}'")))
}

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("{what}: cannot parse '{s}'")))
}

fn parse_shape(s: &str) -> Result<ImageShape> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| number(d, "shape"))
        .collect::<Result<_>>()?;
    match dims.as_slice() {
        &[c, h, w] => Ok(ImageShape::new(c, h, w)),
        _ => Err(Error::Format(format!("shape must be C,H,W, got '{s}'"))),
    }
}

fn check_payload(payload: &[u8], declared: u64, sha: &str, what: &str) -> Result<()> {
    if payload.len() as u64 != declared {
        let kind = if (payload.len() as u64) < declared {
            "truncated"
        } else {
            "oversized"
        };
        return Err(Error::Format(format!(
            "{what} payload {kind}: expected {declared} bytes, found {}",
            payload.len()
        )));
    }
    let actual = sha256_hex(payload);
    if actual != sha {
        return Err(Error::Checksum {
            what: format!("{what} payload"),
            expected: sha.to_string(),
            actual,
        });
    }
    Ok(())
}

pub fn encode_buffer(buffer: &DistilledBuffer) -> Vec<u8> {
    let shape = buffer.shape();
    let mut payload = Vec::with_capacity(buffer.byte_size() as usize);
    let mut table = String::new();
    for e in buffer.entries() {
        let offset = payload.len();
        f32_bytes(e.images.pixels(), &mut payload);
        table.push_str(&format!(
            "entry step={} class={} count={} offset={} bytes={}\n",
            e.step_id,
            e.class_id,
            e.images.len(),
            offset,
            payload.len() - offset
        ));
    }
    let mut out = format!(
        "{BUFFER_MAGIC}\nshape={},{},{}\nclasses={}\nprecision=f32le\nentries={}\npayload_bytes={}\npayload_sha256={}\n{table}{END}",
        shape.channels,
        shape.height,
        shape.width,
        buffer.class_count(),
        buffer.entries().len(),
        payload.len(),
        sha256_hex(&payload),
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn decode_buffer(bytes: &[u8]) -> Result<DistilledBuffer> {
    let (lines, payload) = split_header(bytes, BUFFER_MAGIC)?;
    let shape = parse_shape(field(&lines, "shape")?)?;
    let classes: usize = number(field(&lines, "classes")?, "classes")?;
    let precision = field(&lines, "precision")?;
    if precision != "f32le" {
        return Err(Error::Format(format!(
            "unsupported precision '{precision}'"
        )));
    }
    let declared: u64 = number(field(&lines, "payload_bytes")?, "payload_bytes")?;
    check_payload(
        payload,
        declared,
        field(&lines, "payload_sha256")?,
        "buffer",
    )?;

    let entries: Vec<&str> = lines
        .iter()
        .filter_map(|l| l.strip_prefix("entry "))
        .collect();
    let n_entries: usize = number(field(&lines, "entries")?, "entries")?;
    if entries.len() != n_entries {
        return Err(Error::Format(format!(
            "header declares {n_entries} entries, lists {}",
            entries.len()
        )));
    }
    let per_image = shape.len() * 4;
    let mut buffer = DistilledBuffer::new(shape, classes);
    let mut expected_offset = 0usize;
    for line in entries {
        let kv = |k: &str| -> Result<usize> {
            let v = line
                .split_whitespace()
                .find_map(|p| p.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("entry '{line}' lacks {k}")))?;
            number(v, k)
        };
        let (step, class, count, offset, len) = (
            kv("step")?,
            kv("class")?,
            kv("count")?,
            kv("offset")?,
            kv("bytes")?,
        );
        if offset != expected_offset || len != count * per_image || offset + len > payload.len() {
            return Err(Error::Format(format!(
                "entry step {step} class {class}: offset {offset} and {len} bytes disagree with {count} images at offset {expected_offset}"
            )));
        }
        expected_offset += len;
        if class >= classes {
            return Err(Error::Format(format!(
                "entry class {class} outside {classes} classes"
            )));
        }
        let images = LabeledSet::new(
            shape,
            classes,
            f32_values(&payload[offset..offset + len]),
            vec![class; count],
        )?;
        buffer.push_entry(BufferEntry {
            step_id: step,
            class_id: class,
            images,
        })?;
    }
    if expected_offset != payload.len() {
        return Err(Error::Format(format!(
            "entries cover {expected_offset} bytes of a {} byte payload",
            payload.len()
        )));
    }
    Ok(buffer)
}

pub fn serialize_buffer(buffer: &DistilledBuffer, path: &Path) -> Result<()> {
    write_atomic(path, &encode_buffer(buffer))
}

pub fn deserialize_buffer(path: &Path) -> Result<DistilledBuffer> {
    decode_buffer(&read(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn encode_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let mut payload = Vec::with_capacity(params.len() * 4);
    f32_bytes(params.values(), &mut payload);
    let spec = serde_json::to_string(params.spec()).expect("spec serializes");
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\nspec={spec}\nseed={}\nparams={}\nprecision=f32le\npayload_bytes={}\npayload_sha256={}\n{END}",
        params.seed(),
        params.len(),
        payload.len(),
        sha256_hex(&payload)
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Decode a checkpoint; with `expected` set, the stored spec must equal it.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelSpec>) -> Result<ModelParams<f32>> {
    let (lines, payload) = split_header(bytes, CHECKPOINT_MAGIC)?;
    let spec: ModelSpec = serde_json::from_str(field(&lines, "spec")?)
        .map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
    if let Some(want) = expected {
        if want != &spec {
            return Err(Error::ShapeMismatch {
                expected: want.to_string(),
                actual: format!("checkpoint of {spec}"),
            });
        }
    }
    let declared: u64 = number(field(&lines, "payload_bytes")?, "payload_bytes")?;
    check_payload(
        payload,
        declared,
        field(&lines, "payload_sha256")?,
        "checkpoint",
    )?;
    let count: usize = number(field(&lines, "params")?, "params")?;
    if count * 4 != payload.len() {
        return Err(Error::Format(format!(
            "{count} parameters do not fill {} bytes",
            payload.len()
        )));
    }
    ModelParams::from_values(
        &spec,
        number(field(&lines, "seed")?, "seed")?,
        f32_values(payload),
    )
}

pub fn checkpoint_model(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn restore_model(path: &Path, expected: Option<&ModelSpec>) -> Result<ModelParams<f32>> {
    decode_checkpoint(&read(path)?, expected).map_err(|e| with_path(e, path))
}
