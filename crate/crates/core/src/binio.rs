//! Little-endian helpers shared by the binary file formats.
//!
//! Every binary format starts with an 11-byte magic of the form `SIMQ-XXX vN`.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const MAGIC_LEN: usize = 11;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Checks `bytes` against `magic` (e.g. `SIMQ-ENC v1`), distinguishing a
/// version mismatch from a foreign file.
pub(crate) fn check_magic(bytes: &[u8], magic: &'static str, kind: &'static str) -> Result<()> {
    debug_assert_eq!(magic.len(), MAGIC_LEN);
    let family = &magic[..magic.len() - 1];
    if bytes.len() < MAGIC_LEN {
        if magic.as_bytes().starts_with(bytes) {
            return Err(Error::Truncated(kind));
        }
        return Err(Error::BadMagic { kind });
    }
    let head = &bytes[..MAGIC_LEN];
    if head == magic.as_bytes() {
        return Ok(());
    }
    if head.starts_with(family.as_bytes()) {
        return Err(Error::UnsupportedVersion {
            found: String::from_utf8_lossy(head).into_owned(),
            expected: magic,
        });
    }
    Err(Error::BadMagic { kind })
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn with_magic(magic: &str) -> Self {
        Writer {
            buf: magic.as_bytes().to_vec(),
        }
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

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    /// Starts reading right after the magic, which the caller has already checked.
    pub fn after_magic(bytes: &'a [u8], kind: &'static str) -> Self {
        Reader {
            bytes,
            pos: MAGIC_LEN,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(self.kind))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated(self.kind));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated(self.kind))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::invalid(format!("{} file holds a non-UTF-8 string", self.kind)))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::TrailingData(self.kind));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_classification() {
        assert!(check_magic(b"SIMQ-ENC v1....", "SIMQ-ENC v1", "model").is_ok());
        let err = check_magic(b"SIMQ-ENC v9....", "SIMQ-ENC v1", "model").unwrap_err();
        assert!(err.to_string().starts_with("unsupported version"), "{err}");
        let err = check_magic(b"SIMQ-E", "SIMQ-ENC v1", "model").unwrap_err();
        assert_eq!(err.to_string(), "unexpected end of model file");
        let err = check_magic(b"hello world!", "SIMQ-ENC v1", "model").unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn reader_reports_truncation() {
        let mut w = Writer::with_magic("SIMQ-VEC v1");
        w.u32(7);
        w.str("abc");
        let bytes = &w.buf[..w.buf.len() - 1];
        let mut r = Reader::after_magic(bytes, "vector cache");
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(
            r.str().unwrap_err().to_string(),
            "unexpected end of vector cache file"
        );
    }
}
