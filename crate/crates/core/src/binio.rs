//! Little-endian encoding helpers shared by the dataset and checkpoint formats.

use crate::error::FormatError;

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str16(&mut self, s: &str) -> Result<(), FormatError> {
        let len = u16::try_from(s.len()).map_err(|_| FormatError::Malformed(format!("string too long: {} bytes", s.len())))?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }

    /// Appends the CRC32 of everything written so far and returns the buffer.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FormatError::Malformed("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str16(&mut self) -> Result<String, FormatError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| FormatError::Malformed(format!("invalid UTF-8: {e}")))
    }

    /// Magic and version check at the start of a file.
    pub fn header(&mut self, magic: [u8; 4], version: u16) -> Result<(), FormatError> {
        let found = &self.buf[..self.buf.len().min(4)];
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found: found.to_vec(),
            });
        }
        self.pos = 4;
        let v = self.u16()?;
        if v != version {
            return Err(FormatError::Version {
                expected: version,
                found: v,
            });
        }
        Ok(())
    }

    /// Reads the trailing CRC32 and compares it to the bytes consumed so far.
    pub fn verify_crc(&mut self) -> Result<(), FormatError> {
        let covered = &self.buf[..self.pos];
        let stored = self.u32()?;
        let computed = crc32fast::hash(covered);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed(format!(
                "{} trailing bytes after checksum",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
