use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, Split};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;
const CIFAR_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| DataError::format(bytes.len(), "header ends early"))
}

fn idx_header(bytes: &[u8], magic: u32) -> Result<Vec<usize>, DataError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::format(0, format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    (0..ndims).map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize)).collect()
}

fn idx_payload(bytes: &[u8], header_len: usize, expected: usize) -> Result<&[u8], DataError> {
    let available = bytes.len() - header_len;
    match available.cmp(&expected) {
        std::cmp::Ordering::Less => Err(DataError::format(
            bytes.len(),
            format!("truncated: {expected} data bytes declared, {available} present"),
        )),
        std::cmp::Ordering::Greater => Err(DataError::format(
            header_len + expected,
            "trailing bytes after declared data",
        )),
        std::cmp::Ordering::Equal => Ok(&bytes[header_len..]),
    }
}

/// IDX image file (`0x00000803`, `n × rows × cols` unsigned bytes) as an
/// `n × (rows·cols)` matrix scaled to `[0, 1]`.
pub fn read_idx_images(bytes: &[u8]) -> Result<Array2<f64>, DataError> {
    let dims = idx_header(bytes, IDX_IMAGES)?;
    let (n, pixels) = (dims[0], dims[1] * dims[2]);
    let data = idx_payload(bytes, 16, n * pixels)?;
    Ok(Array2::from_shape_fn((n, pixels), |(r, c)| {
        data[r * pixels + c] as f64 / 255.0
    }))
}

/// IDX label file (`0x00000801`).
pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    let dims = idx_header(bytes, IDX_LABELS)?;
    let data = idx_payload(bytes, 8, dims[0])?;
    Ok(data.iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let features = read_idx_images(&std::fs::read(images)?)?;
    let labels = read_idx_labels(&std::fs::read(labels)?)?;
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(CIFAR_CLASSES);
    Dataset::new(features, labels, classes, Split::Train)
}

/// CIFAR-10 binary batch: 3073-byte records, label byte then 3072 pixels.
pub fn read_cifar_bin(bytes: &[u8]) -> Result<Dataset, DataError> {
    if bytes.is_empty() {
        return Err(DataError::format(0, "empty CIFAR-10 file"));
    }
    let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
    if whole != bytes.len() {
        return Err(DataError::format(
            whole,
            format!("truncated record: {} of {CIFAR_RECORD} bytes", bytes.len() - whole),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, CIFAR_RECORD - 1));
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(DataError::format(r * CIFAR_RECORD, format!("label {label} out of range")));
        }
        labels.push(label);
        for (x, &p) in features.row_mut(r).iter_mut().zip(&record[1..]) {
            *x = p as f64 / 255.0;
        }
    }
    Dataset::new(features, labels, CIFAR_CLASSES, Split::Train)
}

pub fn load_cifar_bin(path: &Path) -> Result<Dataset, DataError> {
    read_cifar_bin(&std::fs::read(path)?)
}
