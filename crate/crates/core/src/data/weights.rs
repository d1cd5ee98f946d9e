//! EMIW weight container.
//!
//! ```text
//! "EMIW" | version: u32 | layers: u32 |
//!   per layer: rows: u32 | cols: u32 | rows·cols f32 (row-major) | rows f32 bias
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::DataError;
use crate::init::WeightSet;

pub const EMIW_MAGIC: &[u8; 4] = b"EMIW";
pub const EMIW_VERSION: u32 = 1;

pub fn encode_weights(ws: &WeightSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EMIW_MAGIC);
    out.extend(EMIW_VERSION.to_le_bytes());
    out.extend((ws.layer_count() as u32).to_le_bytes());
    for (w, b) in ws.matrices.iter().zip(&ws.biases) {
        out.extend((w.nrows() as u32).to_le_bytes());
        out.extend((w.ncols() as u32).to_le_bytes());
        // iter() walks logical row-major order regardless of memory layout
        for &x in w.iter() {
            out.extend((x as f32).to_le_bytes());
        }
        for &x in b.iter() {
            out.extend((x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DataError::format(self.bytes.len(), format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, DataError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| DataError::format(self.pos, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != EMIW_MAGIC {
        return Err(DataError::format(0, "bad magic, expected \"EMIW\""));
    }
    let version = r.u32("version")?;
    if version != EMIW_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: EMIW_VERSION,
        });
    }
    let layers = r.u32("layer count")? as usize;
    if layers == 0 {
        return Err(DataError::format(8, "layer count is zero"));
    }
    let mut matrices = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layers {
        let header_at = r.pos;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(DataError::format(header_at, format!("layer {} has an empty dimension", l + 1)));
        }
        if let Some(prev) = matrices.last().map(|w: &Array2<f64>| w.nrows()) {
            if prev != cols {
                return Err(DataError::format(
                    header_at,
                    format!("layer {} expects {cols} inputs, previous layer has {prev} outputs", l + 1),
                ));
            }
        }
        let data = r.f32s(rows * cols, "weights")?;
        matrices.push(Array2::from_shape_vec((rows, cols), data).expect("sized buffer"));
        biases.push(Array1::from(r.f32s(rows, "bias")?));
    }
    if r.pos != bytes.len() {
        return Err(DataError::format(r.pos, "trailing bytes after last layer"));
    }
    Ok(WeightSet { matrices, biases })
}

pub fn save_weights(ws: &WeightSet, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_weights(ws))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WeightSet, DataError> {
    decode_weights(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayeredShape;
    use crate::init::{base_init, BaseScheme};

    fn sample() -> WeightSet {
        base_init(&LayeredShape::new(vec![3, 4, 2]).unwrap(), BaseScheme::XavierNormal, 1).unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut ws = sample();
        ws.matrices[0][[0, 1]] = 1.5;
        ws.biases[1][1] = -2.0;
        let b = encode_weights(&ws);
        assert_eq!(&b[..4], b"EMIW");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..16], &[4, 0, 0, 0]);
        assert_eq!(&b[16..20], &[3, 0, 0, 0]);
        assert_eq!(&b[24..28], &1.5f32.to_le_bytes());
        assert_eq!(b.len(), 12 + (8 + 12 * 4 + 4 * 4) + (8 + 8 * 4 + 2 * 4));
        assert_eq!(&b[b.len() - 4..], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn round_trip_quantizes_to_f32() {
        let ws = sample();
        let back = decode_weights(&encode_weights(&ws)).unwrap();
        for (a, b) in ws.matrices.iter().zip(&back.matrices) {
            assert!(a.iter().zip(b).all(|(x, y)| (*x as f32) as f64 == *y));
        }
    }

    #[test]
    fn malformed_containers() {
        let good = encode_weights(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights(&bad), Err(DataError::Format { offset: 0, .. })));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_weights(&v2), Err(DataError::Version { found: 2, .. })));

        let mut empty = b"EMIW".to_vec();
        empty.extend(1u32.to_le_bytes());
        empty.extend(0u32.to_le_bytes());
        assert!(matches!(decode_weights(&empty), Err(DataError::Format { .. })));

        assert!(decode_weights(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_weights(&long).is_err());
        assert!(decode_weights(&[]).is_err());
    }
}
