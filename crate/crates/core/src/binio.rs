//! Little-endian binary records with a trailing SHA-256 of the payload.

use sha2::{Digest, Sha256};

use crate::hash::ContentHash;
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum BinError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("integrity check failed: stored hash {stored}, computed {computed}")]
    Integrity { stored: ContentHash, computed: ContentHash },
    #[error("{0}")]
    Malformed(String),
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn vec3(&mut self, v: &Vec3) {
        v.iter().for_each(|x| self.f64(*x));
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        vs.iter().for_each(|x| self.f64(*x));
    }

    pub fn field(&mut self, vs: &[Vec3]) {
        vs.iter().for_each(|v| self.vec3(v));
    }

    pub fn hash(&mut self, h: &ContentHash) {
        self.buf.extend_from_slice(&h.0);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Appends the integrity trailer and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let digest: [u8; 32] = Sha256::digest(&self.buf).into();
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies magic and trailer; returns the reader positioned after the version and the version.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], name: &'static str) -> Result<(Self, u32), BinError> {
        if bytes.len() < 8 + 32 || &bytes[..4] != magic {
            return Err(BinError::BadMagic { expected: name });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let computed = ContentHash(Sha256::digest(body).into());
        let stored = ContentHash(trailer.try_into().unwrap());
        if stored != computed {
            return Err(BinError::Integrity { stored, computed });
        }
        let mut r = Self { buf: body, pos: 4 };
        let version = r.u32()?;
        Ok((r, version))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        if self.pos + n > self.buf.len() {
            return Err(BinError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, BinError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, BinError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn len(&mut self, limit: usize) -> Result<usize, BinError> {
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(BinError::Malformed(format!("length {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64, BinError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn vec3(&mut self) -> Result<Vec3, BinError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, BinError> {
        let n = self.len(self.remaining() / 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn field(&mut self, n: usize) -> Result<Vec<Vec3>, BinError> {
        if n * 24 > self.remaining() {
            return Err(BinError::Truncated(self.pos));
        }
        (0..n).map(|_| self.vec3()).collect()
    }

    pub fn hash(&mut self) -> Result<ContentHash, BinError> {
        Ok(ContentHash(self.take(32)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, BinError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BinError::Malformed("invalid UTF-8 string".into()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), BinError> {
        if self.remaining() != 0 {
            return Err(BinError::Malformed(format!("{} unexpected trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
