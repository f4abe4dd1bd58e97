//! Versioned little-endian binary containers.
//!
//! Every container starts with a 4-byte magic and a `u32` format version.
//! The payload is a sequence of primitive fields written by [`Writer`] and
//! read back in the same order by [`Reader`].

use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn len(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.len(v.len());
        for &x in v {
            self.f64(x);
        }
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn strs<S: AsRef<str>>(&mut self, v: &[S]) -> &mut Self {
        self.len(v.len());
        for s in v {
            self.str(s.as_ref());
        }
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.len(v.len());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic and version and positions the reader at the payload.
    pub fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(Error::Container(format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported format version {version}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Container("truncated payload".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn read_len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // Every element takes at least one byte, so anything longer than the
        // remaining buffer is corrupt.
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Container(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.read_len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.read_len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Container("invalid utf-8 string".into()))
    }

    pub fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.read_len()?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.read_len()?;
        self.take(n)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Container("trailing bytes after payload".into()));
        }
        Ok(())
    }
}

/// Types stored in a magic-tagged container.
pub trait Container: Sized {
    const MAGIC: &'static [u8; 4];

    fn write_payload(&self, w: &mut Writer);
    fn read_payload(r: &mut Reader<'_>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Self::MAGIC);
        self.write_payload(&mut w);
        w.finish()
    }

    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::MAGIC)?;
        let out = Self::read_payload(&mut r)?;
        r.finish()?;
        Ok(out)
    }

    fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Row-major dense matrix payload helpers.
pub fn write_matrix(w: &mut Writer, m: &nalgebra::DMatrix<f64>) {
    w.len(m.nrows()).len(m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.f64(m[(i, j)]);
        }
    }
}

pub fn read_matrix(r: &mut Reader<'_>) -> Result<nalgebra::DMatrix<f64>> {
    let rows = r.read_len()?;
    let cols = r.read_len()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Container("matrix size overflow".into()))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        data.push(r.f64()?);
    }
    Ok(nalgebra::DMatrix::from_row_slice(rows, cols, &data))
}
