//! Canonical binary encoding.
//!
//! A value encodes as a sequence of fields. Each field is a 4-byte
//! big-endian length followed by that many bytes. Enumerations prepend a
//! single tag byte. Nested values are carried as the bytes of one field.
//! Set-valued fields hold their items sorted ascending by encoded bytes,
//! without duplicates; the decoder rejects anything else so that every
//! value has exactly one encoding.

use bytes::Bytes;
use thiserror::Error;

/// Refuse single fields larger than this while decoding.
pub const MAX_FIELD_LEN: usize = 256 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("unknown tag {tag:#04x} for {what}")]
    UnknownTag { what: &'static str, tag: u8 },
    #[error("field {what} has length {len}, expected {expected}")]
    BadLength {
        what: &'static str,
        len: usize,
        expected: usize,
    },
    #[error("set items out of canonical order")]
    Unsorted,
    #[error("invalid utf-8 string")]
    Utf8,
    #[error("{0}")]
    Invalid(String),
}

/// Appends canonical fields to a buffer.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Raw tag byte, not length-prefixed.
    pub fn tag(&mut self, tag: u8) {
        self.buf.push(tag);
    }

    /// Raw bytes, not length-prefixed.
    pub fn raw(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    pub fn bytes(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(&(data.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(data);
    }

    pub fn u8(&mut self, v: u8) {
        self.bytes(&[v]);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    /// Writes a field whose content is produced by `f`, back-patching the length.
    pub fn nested_with(&mut self, f: impl FnOnce(&mut Writer)) {
        let at = self.buf.len();
        self.buf.extend_from_slice(&[0; 4]);
        f(self);
        let len = (self.buf.len() - at - 4) as u32;
        self.buf[at..at + 4].copy_from_slice(&len.to_be_bytes());
    }

    pub fn nested<T: Canonical>(&mut self, v: &T) {
        self.nested_with(|w| v.encode(w));
    }

    pub fn option<T: Canonical>(&mut self, v: Option<&T>) {
        match v {
            None => self.bytes(&[]),
            Some(v) => self.nested_with(|w| {
                w.tag(1);
                v.encode(w);
            }),
        }
    }

    /// Ordered list; item order is preserved.
    pub fn list<'a, T: Canonical + 'a>(&mut self, items: impl IntoIterator<Item = &'a T>) {
        self.nested_with(|w| {
            for item in items {
                w.nested(item);
            }
        });
    }

    /// Set; items are sorted by encoding and duplicates dropped.
    pub fn set<'a, T: Canonical + 'a>(&mut self, items: impl IntoIterator<Item = &'a T>) {
        let mut encoded: Vec<Vec<u8>> = items.into_iter().map(|i| i.to_canonical_bytes()).collect();
        encoded.sort();
        encoded.dedup();
        self.nested_with(|w| {
            for e in &encoded {
                w.bytes(e);
            }
        });
    }
}

/// Reads canonical fields from a shared buffer without copying payloads.
#[derive(Debug, Clone)]
pub struct Reader {
    buf: Bytes,
    pos: usize,
}

impl Reader {
    pub fn new(buf: impl Into<Bytes>) -> Self {
        Self {
            buf: buf.into(),
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }

    pub fn tag(&mut self) -> Result<u8, DecodeError> {
        let b = *self.buf.get(self.pos).ok_or(DecodeError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn bytes(&mut self) -> Result<Bytes, DecodeError> {
        if self.buf.len() - self.pos < 4 {
            return Err(DecodeError::Truncated(self.pos));
        }
        let mut len = [0u8; 4];
        len.copy_from_slice(&self.buf[self.pos..self.pos + 4]);
        let len = u32::from_be_bytes(len) as usize;
        let start = self.pos + 4;
        if len > MAX_FIELD_LEN || self.buf.len() - start < len {
            return Err(DecodeError::Truncated(self.pos));
        }
        self.pos = start + len;
        Ok(self.buf.slice(start..start + len))
    }

    pub fn fixed<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        let b = self.bytes()?;
        if b.len() != N {
            return Err(DecodeError::BadLength {
                what,
                len: b.len(),
                expected: N,
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&b);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.fixed::<1>("u8")?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.fixed("u32")?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.fixed("u64")?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::UnknownTag { what: "bool", tag }),
        }
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    pub fn nested<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        let mut r = Reader::new(self.bytes()?);
        let v = T::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }

    pub fn option<T: Canonical>(&mut self) -> Result<Option<T>, DecodeError> {
        let mut r = Reader::new(self.bytes()?);
        if r.is_done() {
            return Ok(None);
        }
        match r.tag()? {
            1 => {
                let v = T::decode(&mut r)?;
                r.finish()?;
                Ok(Some(v))
            }
            tag => Err(DecodeError::UnknownTag { what: "option", tag }),
        }
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let mut r = Reader::new(self.bytes()?);
        let mut out = Vec::new();
        while !r.is_done() {
            out.push(r.nested()?);
        }
        Ok(out)
    }

    /// Like [`Reader::list`] but insists on strictly ascending item encodings.
    pub fn set<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let mut r = Reader::new(self.bytes()?);
        let mut out = Vec::new();
        let mut prev: Option<Bytes> = None;
        while !r.is_done() {
            let raw = r.bytes()?;
            if prev.as_ref().is_some_and(|p| p >= &raw) {
                return Err(DecodeError::Unsorted);
            }
            let mut inner = Reader::new(raw.clone());
            out.push(T::decode(&mut inner)?);
            inner.finish()?;
            prev = Some(raw);
        }
        Ok(out)
    }
}

/// A value with exactly one byte encoding.
pub trait Canonical: Sized {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    /// Decodes a complete buffer, rejecting trailing bytes.
    fn from_canonical_bytes(buf: impl Into<Bytes>) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

impl Canonical for u64 {
    fn encode(&self, w: &mut Writer) {
        w.u64(*self);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        r.u64()
    }
}

impl Canonical for String {
    fn encode(&self, w: &mut Writer) {
        w.str(self);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        r.str()
    }
}

impl Canonical for Bytes {
    fn encode(&self, w: &mut Writer) {
        w.bytes(self);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        r.bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_layout() {
        let mut w = Writer::new();
        w.tag(7);
        w.bytes(b"ab");
        w.u64(1);
        assert_eq!(
            w.into_bytes(),
            [7, 0, 0, 0, 2, b'a', b'b', 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1]
        );
    }

    #[test]
    fn set_sorts_and_dedups() {
        let mut w = Writer::new();
        w.set([&"b".to_string(), &"a".to_string(), &"b".to_string()]);
        let mut r = Reader::new(w.into_bytes());
        let items: Vec<String> = r.set().unwrap();
        assert_eq!(items, ["a", "b"]);
    }

    #[test]
    fn unsorted_set_rejected() {
        let mut w = Writer::new();
        w.list([&"b".to_string(), &"a".to_string()]);
        let mut r = Reader::new(w.into_bytes());
        assert_eq!(r.set::<String>(), Err(DecodeError::Unsorted));
    }

    #[test]
    fn truncated_length_prefix() {
        let mut r = Reader::new(vec![0, 0, 0, 9, 1]);
        assert!(matches!(r.bytes(), Err(DecodeError::Truncated(0))));
    }

    #[test]
    fn option_none_and_some_empty_differ() {
        let mut w = Writer::new();
        w.option::<String>(None);
        w.option(Some(&String::new()));
        let mut r = Reader::new(w.into_bytes());
        assert_eq!(r.option::<String>().unwrap(), None);
        assert_eq!(r.option::<String>().unwrap(), Some(String::new()));
    }
}
