//! Binary formats.
//!
//! `.wsdw`: magic `WSDW`, version `u32`, layer count `u32`, then
//! `(C_out, C_in, K_h, K_w, bias_len)` as `u32` for every layer, then the
//! little-endian `f32` payload, kernel then bias per layer.
//!
//! `.wsds`: record count `u32`, each record as a complete `.wsdw` image,
//! then the standardizer mean and std as `D` little-endian `f32` each.

use std::fs;
use std::path::Path;

use crate::error::{Result, WeightsError};
use crate::record::{Layer, LayerShape, WeightRecord};
use crate::standardize::Standardizer;

pub const MAGIC: [u8; 4] = *b"WSDW";
pub const VERSION: u32 = 1;

pub fn header_len(layers: usize) -> usize {
    12 + 20 * layers
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn record_to_bytes(record: &WeightRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(record.layers.len()) + 4 * record.dim());
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, record.layers.len());
    for l in &record.layers {
        let s = l.shape;
        for v in [s.c_out, s.c_in, s.k_h, s.k_w, s.bias_len] {
            put_u32(&mut out, v);
        }
    }
    for l in &record.layers {
        put_f32s(&mut out, &l.kernel);
        put_f32s(&mut out, &l.bias);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(WeightsError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
            available: self.buf.len() - self.pos,
        })?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn record(&mut self) -> Result<WeightRecord> {
        let magic: [u8; 4] = self.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(WeightsError::BadMagic { expected: MAGIC, found: magic });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        let count = self.u32()? as usize;
        // every layer needs a 20-byte header; reject absurd counts before allocating
        if count > (self.buf.len() - self.pos) / 20 {
            return Err(WeightsError::Truncated { offset: self.pos, needed: 20 * count, available: self.buf.len() - self.pos });
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let d: Vec<usize> = (0..5).map(|_| self.u32().map(|v| v as usize)).collect::<Result<_>>()?;
            shapes.push(LayerShape { c_out: d[0], c_in: d[1], k_h: d[2], k_w: d[3], bias_len: d[4] });
        }
        let mut layers = Vec::with_capacity(count);
        for shape in shapes {
            let kernel = self.f32s(shape.kernel_len())?;
            let bias = self.f32s(shape.bias_len)?;
            layers.push(Layer { shape, kernel, bias });
        }
        Ok(WeightRecord { layers })
    }

    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WeightsError::TrailingBytes(n)),
        }
    }
}

pub fn record_from_bytes(buf: &[u8]) -> Result<WeightRecord> {
    let mut r = Reader { buf, pos: 0 };
    let rec = r.record()?;
    r.finish()?;
    Ok(rec)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| WeightsError::Io { path: path.to_path_buf(), source })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| WeightsError::Io { path: path.to_path_buf(), source })
}

pub fn save_record(record: &WeightRecord, path: &Path) -> Result<()> {
    write(path, &record_to_bytes(record))
}

pub fn load_record(path: &Path) -> Result<WeightRecord> {
    record_from_bytes(&read(path)?)
}

pub fn pack_to_bytes(records: &[WeightRecord], standardizer: &Standardizer) -> Result<Vec<u8>> {
    let d = standardizer.dim();
    for (i, r) in records.iter().enumerate() {
        if r.dim() != d {
            return Err(WeightsError::Layout(format!("record {i} has dimension {}, standardizer {d}", r.dim())));
        }
    }
    let mut out = Vec::new();
    put_u32(&mut out, records.len());
    for r in records {
        out.extend_from_slice(&record_to_bytes(r));
    }
    put_f32s(&mut out, standardizer.mean());
    put_f32s(&mut out, standardizer.std());
    Ok(out)
}

pub fn pack_from_bytes(buf: &[u8]) -> Result<(Vec<WeightRecord>, Standardizer)> {
    let mut r = Reader { buf, pos: 0 };
    let count = r.u32()? as usize;
    let mut records = Vec::new();
    for _ in 0..count {
        records.push(r.record()?);
    }
    let d = records.first().map(|r| r.dim()).unwrap_or(0);
    if let Some(i) = records.iter().position(|r| r.dim() != d) {
        return Err(WeightsError::Layout(format!("record {i} dimension differs from record 0")));
    }
    let mean = r.f32s(d)?;
    let std = r.f32s(d)?;
    r.finish()?;
    Ok((records, Standardizer::from_parts(mean, std)?))
}

pub fn save_pack(records: &[WeightRecord], standardizer: &Standardizer, path: &Path) -> Result<()> {
    write(path, &pack_to_bytes(records, standardizer)?)
}

pub fn load_pack(path: &Path) -> Result<(Vec<WeightRecord>, Standardizer)> {
    pack_from_bytes(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightRecord {
        let shapes = [LayerShape::conv(2, 3, 3), LayerShape::conv(1, 2, 1)];
        let d: usize = shapes.iter().map(|s| s.len()).sum();
        WeightRecord::from_flat(&shapes, &(0..d).map(|i| (i as f32).sin()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn size_is_header_plus_payload() {
        let r = sample();
        let b = record_to_bytes(&r);
        assert_eq!(b.len(), header_len(2) + 4 * r.dim());
        assert_eq!(record_from_bytes(&b).unwrap(), r);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let b = record_to_bytes(&sample());
        for n in 0..b.len() {
            assert!(record_from_bytes(&b[..n]).is_err(), "prefix {n}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = record_to_bytes(&sample());
        b[0] = b'X';
        assert!(matches!(record_from_bytes(&b), Err(WeightsError::BadMagic { .. })));
        let mut b = record_to_bytes(&sample());
        b[4] = 9;
        assert!(matches!(record_from_bytes(&b), Err(WeightsError::UnsupportedVersion(9))));
    }
}
