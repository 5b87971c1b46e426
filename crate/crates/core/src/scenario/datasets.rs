//! Dataset readers.
//!
//! MNIST uses the big-endian IDX layout (optionally gzipped), CIFAR-10 the
//! 3073-byte-record binary batches, and `array_import` a key-value manifest
//! pointing at raw little-endian tensor payloads.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ImageShape, LabeledSet};
use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "DISTILL_CL_CACHE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    ArrayImport,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::ArrayImport => "array_import",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mnist" => Some(DatasetName::Mnist),
            "cifar10" => Some(DatasetName::Cifar10),
            "array_import" => Some(DatasetName::ArrayImport),
            _ => None,
        }
    }
}

/// Cache root: `DISTILL_CL_CACHE` if set, else `configured`, else `./data`.
pub fn cache_root(configured: Option<&Path>) -> PathBuf {
    if let Some(env) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    configured
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Directory holding the raw source files of a dataset inside the cache.
pub fn raw_dir(cache: &Path, name: DatasetName) -> PathBuf {
    cache.join(name.as_str()).join("raw")
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Read a file, transparently inflating `.gz`.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = read_file(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::data(path, out.len() as u64, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_existing(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::io(
        format!(
            "dataset file {} not found (cache path {})",
            stem,
            dir.display()
        ),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::data(path, bytes.len() as u64, "truncated header"))
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(ImageShape, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 2051 {
        return Err(Error::data(
            path,
            0,
            format!("image magic number {magic}, expected 2051"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::data(
            path,
            bytes.len() as u64,
            format!("truncated: {count} images of {rows}x{cols} need {need} bytes"),
        ));
    }
    let pixels = bytes[16..need].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((ImageShape::new(1, rows, cols), pixels))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path, classes: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 2049 {
        return Err(Error::data(
            path,
            0,
            format!("label magic number {magic}, expected 2049"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::data(
            path,
            bytes.len() as u64,
            format!("truncated: {count} labels need {} bytes", 8 + count),
        ));
    }
    bytes[8..8 + count]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < classes {
                Ok(l as usize)
            } else {
                Err(Error::data(
                    path,
                    8 + i as u64,
                    format!("label {l} out of range [0, {classes})"),
                ))
            }
        })
        .collect()
}

fn load_mnist_split(dir: &Path, prefix: &str) -> Result<LabeledSet<f32>> {
    let img_path = find_existing(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = find_existing(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let (shape, pixels) = parse_idx_images(&read_maybe_gz(&img_path)?, &img_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(&lbl_path)?, &lbl_path, 10)?;
    if pixels.len() != labels.len() * shape.len() {
        return Err(Error::data(
            &lbl_path,
            4,
            format!(
                "{} labels for {} images",
                labels.len(),
                pixels.len() / shape.len()
            ),
        ));
    }
    LabeledSet::new(shape, 10, pixels, labels)
}

pub const CIFAR_RECORD: usize = 3073;

pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<LabeledSet<f32>> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::data(
            path,
            whole as u64,
            format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() - whole
            ),
        ));
    }
    let shape = ImageShape::new(3, 32, 32);
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * shape.len());
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::data(
                path,
                (i * CIFAR_RECORD) as u64,
                format!("label {} out of range [0, 10)", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    LabeledSet::new(shape, 10, pixels, labels)
}

fn load_cifar10(dir: &Path) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    let base = if dir.join("cifar-10-batches-bin").is_dir() {
        dir.join("cifar-10-batches-bin")
    } else {
        dir.to_path_buf()
    };
    let mut train = LabeledSet::empty(ImageShape::new(3, 32, 32), 10);
    for i in 1..=5 {
        let path = find_existing(&base, &format!("data_batch_{i}.bin"))?;
        train.extend_from(&parse_cifar_batch(&read_maybe_gz(&path)?, &path)?)?;
    }
    let path = find_existing(&base, "test_batch.bin")?;
    let test = parse_cifar_batch(&read_maybe_gz(&path)?, &path)?;
    Ok((train, test))
}

/// Parse a `key=value` text file; `#` starts a comment.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (k, v) = trimmed.split_once('=').ok_or_else(|| {
                Error::data(path, offset, format!("expected key=value, got {trimmed:?}"))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        offset += line.len() as u64 + 1;
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ValueType {
    F32,
    U8,
}

fn decode_values(bytes: &[u8], dtype: ValueType, expected: usize, path: &Path) -> Result<Vec<f32>> {
    let width = match dtype {
        ValueType::F32 => 4,
        ValueType::U8 => 1,
    };
    if bytes.len() != expected * width {
        return Err(Error::data(
            path,
            bytes.len().min(expected * width) as u64,
            format!(
                "expected {} bytes of payload, found {}",
                expected * width,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = match dtype {
        ValueType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        ValueType::U8 => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    };
    if let Some(i) = values
        .iter()
        .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
    {
        return Err(Error::data(
            path,
            (i * width) as u64,
            format!(
                "value {} outside [0, 1]; normalize before import",
                values[i]
            ),
        ));
    }
    Ok(values)
}

fn decode_labels(bytes: &[u8], count: usize, classes: usize, path: &Path) -> Result<Vec<usize>> {
    if bytes.len() != count * 4 {
        return Err(Error::data(
            path,
            bytes.len().min(count * 4) as u64,
            format!(
                "expected {} bytes of u32 labels, found {}",
                count * 4,
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let l = u32::from_le_bytes(c.try_into().unwrap()) as usize;
            if l < classes {
                Ok(l)
            } else {
                Err(Error::data(
                    path,
                    (i * 4) as u64,
                    format!("label {l} out of range [0, {classes})"),
                ))
            }
        })
        .collect()
}

fn required<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::data(path, 0, format!("manifest is missing `{key}`")))
}

fn parse_num(v: &str, key: &str, path: &Path) -> Result<usize> {
    v.parse().map_err(|_| {
        Error::data(
            path,
            0,
            format!("`{key}` must be a non-negative integer, got {v:?}"),
        )
    })
}

/// Load an `array_import` manifest.
///
/// Keys: `shape=C,H,W`, `count=N`, `data=<file>`, `labels=<file>`,
/// `classes=K`, optional `dtype=f32|u8` (default f32) and an optional test
/// split given by `test_count`, `test_data`, `test_labels`. Data files are raw
/// little-endian values, image after image; label files are little-endian
/// `u32`. Relative paths resolve against the manifest's directory.
pub fn load_array_import(manifest: &Path) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    let text = String::from_utf8(read_file(manifest)?).map_err(|e| {
        Error::data(
            manifest,
            e.utf8_error().valid_up_to() as u64,
            "manifest is not UTF-8",
        )
    })?;
    let map = parse_key_values(&text, manifest)?;
    let dims: Vec<usize> = required(&map, "shape", manifest)?
        .split(',')
        .map(|d| parse_num(d.trim(), "shape", manifest))
        .collect::<Result<_>>()?;
    let [c, h, w] = dims[..] else {
        return Err(Error::data(manifest, 0, "`shape` must be C,H,W"));
    };
    let shape = ImageShape::new(c, h, w);
    let classes = parse_num(required(&map, "classes", manifest)?, "classes", manifest)?;
    let dtype = match map.get("dtype").map(String::as_str).unwrap_or("f32") {
        "f32" => ValueType::F32,
        "u8" => ValueType::U8,
        other => {
            return Err(Error::data(
                manifest,
                0,
                format!("unsupported dtype {other:?}"),
            ))
        }
    };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let load = |count_key: &str, data_key: &str, labels_key: &str| -> Result<LabeledSet<f32>> {
        let count = parse_num(required(&map, count_key, manifest)?, count_key, manifest)?;
        let data_path = base.join(required(&map, data_key, manifest)?);
        let labels_path = base.join(required(&map, labels_key, manifest)?);
        let pixels = decode_values(
            &read_file(&data_path)?,
            dtype,
            count * shape.len(),
            &data_path,
        )?;
        let labels = decode_labels(&read_file(&labels_path)?, count, classes, &labels_path)?;
        LabeledSet::new(shape, classes, pixels, labels)
    };
    let train = load("count", "data", "labels")?;
    let test = if map.contains_key("test_count") {
        load("test_count", "test_data", "test_labels")?
    } else {
        LabeledSet::empty(shape, classes)
    };
    Ok((train, test))
}

/// Load a dataset. For MNIST and CIFAR-10 `source` is the directory holding
/// the raw files; for `array_import` it is the manifest file.
pub fn load_dataset(
    name: DatasetName,
    source: &Path,
) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    match name {
        DatasetName::Mnist => Ok((
            load_mnist_split(source, "train")?,
            load_mnist_split(source, "t10k")?,
        )),
        DatasetName::Cifar10 => load_cifar10(source),
        DatasetName::ArrayImport => load_array_import(source),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_file(path)?)))
}

/// Load `name` from `<cache>/<name>/raw`, verifying (or on first use writing)
/// the checksum manifest at `<cache>/<name>/manifest`.
pub fn load_cached(name: DatasetName, cache: &Path) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    let raw = raw_dir(cache, name);
    if !raw.is_dir() {
        return Err(Error::io(
            format!(
                "dataset `{}` not found in cache (expected {})",
                name.as_str(),
                raw.display()
            ),
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&raw)
        .map_err(|e| Error::io(format!("listing {}", raw.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut lines = String::new();
    for f in &files {
        lines.push_str(&format!(
            "{}  {}\n",
            sha256_file(f)?,
            f.file_name().unwrap().to_string_lossy()
        ));
    }
    let manifest = cache.join(name.as_str()).join("manifest");
    match fs::read_to_string(&manifest) {
        Ok(existing) => {
            if existing != lines {
                return Err(Error::Checksum {
                    what: manifest.display().to_string(),
                    expected: existing.lines().collect::<Vec<_>>().join("; "),
                    actual: lines.lines().collect::<Vec<_>>().join("; "),
                });
            }
        }
        Err(_) => {
            let tmp = manifest.with_extension(format!("tmp{}", std::process::id()));
            if fs::write(&tmp, &lines).is_ok() {
                let _ = fs::rename(&tmp, &manifest);
            }
        }
    }
    match name {
        DatasetName::ArrayImport => load_array_import(&raw.join("manifest.txt")),
        _ => load_dataset(name, &raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [2051u32, n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(std::iter::repeat(fill).take((n * rows * cols) as usize));
        b
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let p = Path::new("x");
        let (shape, px) = parse_idx_images(&idx_images(3, 2, 2, 255), p).unwrap();
        assert_eq!(shape, ImageShape::new(1, 2, 2));
        assert!(px.iter().all(|&v| v == 1.0));

        let mut bad = idx_images(3, 2, 2, 0);
        bad[3] = 1;
        assert!(matches!(
            parse_idx_images(&bad, p),
            Err(Error::Data { offset: 0, .. })
        ));

        let truncated = &idx_images(3, 2, 2, 0)[..20];
        assert!(matches!(
            parse_idx_images(truncated, p),
            Err(Error::Data { offset: 20, .. })
        ));

        let mut labels = Vec::new();
        labels.extend(2049u32.to_be_bytes());
        labels.extend(3u32.to_be_bytes());
        labels.extend([1u8, 12, 3]);
        assert!(matches!(
            parse_idx_labels(&labels, p, 10),
            Err(Error::Data { offset: 9, .. })
        ));
    }

    #[test]
    fn cifar_records() {
        let p = Path::new("c");
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[CIFAR_RECORD] = 7;
        bytes[CIFAR_RECORD + 1] = 255;
        let set = parse_cifar_batch(&bytes, p).unwrap();
        assert_eq!(set.labels(), &[0, 7]);
        assert_eq!(set.image(1)[0], 1.0);
        assert!(matches!(
            parse_cifar_batch(&bytes[..CIFAR_RECORD + 5], p),
            Err(Error::Data { offset, .. }) if offset == CIFAR_RECORD as u64
        ));
        bytes[0] = 10;
        assert!(parse_cifar_batch(&bytes, p).is_err());
    }

    #[test]
    fn array_import_echoes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(1, 26, 31);
        let data: Vec<u8> = (0..10 * shape.len())
            .flat_map(|i| ((i % 100) as f32 / 100.0).to_le_bytes())
            .collect();
        let labels: Vec<u8> = (0..10u32).flat_map(|i| (i % 6).to_le_bytes()).collect();
        fs::write(dir.path().join("x.f32"), data).unwrap();
        fs::write(dir.path().join("y.u32"), labels).unwrap();
        let manifest = dir.path().join("har.txt");
        fs::write(
            &manifest,
            "shape=1,26,31\ncount=10\ndata=x.f32\nlabels=y.u32\nclasses=6\n",
        )
        .unwrap();
        let (train, test) = load_dataset(DatasetName::ArrayImport, &manifest).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(train.shape(), shape);
        assert_eq!(train.class_count(), 6);
        assert!(test.is_empty());

        fs::write(
            &manifest,
            "shape=1,26,31\ncount=11\ndata=x.f32\nlabels=y.u32\nclasses=6\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(DatasetName::ArrayImport, &manifest),
            Err(Error::Data { .. })
        ));
    }
}
