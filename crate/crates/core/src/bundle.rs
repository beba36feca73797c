//! Binary model container.
//!
//! Layout: magic `GTLM`, little-endian `u16` format version, then a
//! sequence of sections, each a 4-byte ASCII tag, a little-endian `u64`
//! payload length and the payload. Tensors are stored as a `u32` count
//! followed by, per tensor, a `u32` rank, `u32` dims and little-endian
//! `f32` data in row-major order.

use std::io::{Read, Write};

use crate::nncore::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GTLM";
pub const VERSION: u16 = 1;

pub type Tag = [u8; 4];

#[derive(Debug, Default)]
pub struct BundleWriter {
    sections: Vec<(Tag, Vec<u8>)>,
}

impl BundleWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, tag: &Tag, payload: Vec<u8>) -> &mut Self {
        self.sections.push((*tag, payload));
        self
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (tag, payload) in &self.sections {
            w.write_all(tag)?;
            w.write_all(&(payload.len() as u64).to_le_bytes())?;
            w.write_all(payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[derive(Debug)]
pub struct Bundle {
    sections: Vec<(Tag, Vec<u8>)>,
}

fn tag_name(tag: &Tag) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

impl Bundle {
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing GTLM magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version} (expected {VERSION})")));
        }
        let mut cur = Cursor::new(&bytes[6..]);
        let mut sections = Vec::new();
        while !cur.is_empty() {
            let tag: Tag = cur.take(4)?.try_into().expect("4 bytes");
            let len = cur.u64()? as usize;
            let payload = cur
                .take(len)
                .map_err(|_| Error::Format(format!("section {} truncated", tag_name(&tag))))?;
            sections.push((tag, payload.to_vec()));
        }
        Ok(Bundle { sections })
    }

    pub fn get(&self, tag: &Tag) -> Option<&[u8]> {
        self.sections.iter().find(|(t, _)| t == tag).map(|(_, p)| p.as_slice())
    }

    pub fn require(&self, tag: &Tag) -> Result<&[u8]> {
        self.get(tag)
            .ok_or_else(|| Error::Format(format!("missing section {}", tag_name(tag))))
    }
}

/// Bounds-checked reader over a byte slice.
pub struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() {
            return Err(Error::Format(format!("truncated: wanted {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn encode_tensors<'a, I: IntoIterator<Item = &'a Tensor<f32>>>(tensors: I) -> Vec<u8> {
    let tensors: Vec<&Tensor<f32>> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor<f32>>> {
    let mut cur = Cursor::new(bytes);
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(Tensor::from_vec(&shape, data)?);
    }
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_round_trip() {
        let mut w = BundleWriter::new();
        w.section(b"AAAA", b"hello".to_vec()).section(b"BBBB", vec![]);
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..6], b"GTLM\x01\x00");
        let b = Bundle::parse(&bytes).unwrap();
        assert_eq!(b.get(b"AAAA"), Some(&b"hello"[..]));
        assert_eq!(b.get(b"BBBB"), Some(&[][..]));
        assert!(b.require(b"CCCC").is_err());
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let mut w = BundleWriter::new();
        w.section(b"AAAA", vec![1, 2, 3, 4]);
        let bytes = w.to_bytes();
        assert!(matches!(Bundle::parse(b"NOPE\x01\x00"), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(Bundle::parse(&v2), Err(Error::Format(m)) if m.contains("version")));
        assert!(Bundle::parse(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn tensors_round_trip_bitwise() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.1]).unwrap();
        let bytes = encode_tensors([&a, &b]);
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in [&a, &b].iter().zip(&back) {
            assert_eq!(x.shape(), y.shape());
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert!(decode_tensors(&bytes[..bytes.len() - 2]).is_err());
    }
}
