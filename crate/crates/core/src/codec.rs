//! Canonical binary codec.
//!
//! Every hash and signature in the protocol is computed over the bytes this
//! module produces, so the encoding is fixed and documented here.
//!
//! # Conventions
//!
//! - Fixed-width integers are little-endian.
//! - Byte strings carry a 4-byte (`u32`) length prefix.
//! - Collections carry a 2-byte (`u16`) count prefix, except the P-list,
//!   whose capacity is bounded by the header format and uses a 1-byte count.
//! - Optional fields carry a 1-byte presence flag (`0` absent, `1` present).
//! - Fields are written in declaration order, with no padding.
//!
//! # Layout table
//!
//! | Type | Layout | Size |
//! |------|--------|------|
//! | `Hash32` / `TxId` | raw digest | 32 |
//! | `PubKey` | raw Ed25519 key | 32 |
//! | `Signature` | raw Ed25519 signature | 64 |
//! | `OutPoint` | txid 32, output index `u16` | 34 |
//! | string / bytes | `u32` length, bytes | 4 + n |
//! | `Transaction` | kind tag `u8`, signer 32, inputs (`u16` count + 34 each), output count `u8`, payload, value `u64`, signature 64 | 108 + 34·inputs + payload |
//! | payload `Register` | empty | 0 |
//! | payload `Removable` | data bytes | 4 + n |
//! | payload `Prepare` / `Delete` | target interval `u32` | 4 |
//! | payload `Info` | controller bytes, purposes (`u16` count + strings) | 4 + c + 2 + Σ(4 + l) |
//! | payload `Consent` | info txid | 32 |
//! | `RemovableBlockHeader` | interval `u32`, position `u16`, prev 32 | 38 |
//! | `RemovableBlock` | header 38, transactions (`u16` count + each) | 40 + Σ tx |
//! | `PermanentBlockHeader` | height `u32`, prev permanent 32, prev removable 32, interval length `u8`, P-list (`u8` count + 32 each), tx root 32 | 102 + 32·keys |
//! | `PermanentBlock` | header, transactions (`u16` count + each) | header + 2 + Σ tx |
//!
//! Transaction kind tags: Register = 1, Removable = 2, Prepare = 3,
//! Delete = 4, Info = 5, Consent = 6. The signing payload of a transaction is
//! its encoding with the trailing 64-byte signature omitted.

use thiserror::Error;

/// Errors raised while encoding or decoding.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input: need {need} bytes, have {have}")]
    UnexpectedEof { need: usize, have: usize },

    #[error("{what} has {count} elements, limit is {max}")]
    TooManyItems {
        what: &'static str,
        count: usize,
        max: usize,
    },

    #[error("byte string of {0} bytes does not fit a u32 length prefix")]
    LengthOverflow(usize),

    #[error("invalid tag {tag:#04x} for {what}")]
    InvalidTag { tag: u8, what: &'static str },

    #[error("invalid utf-8 in string field")]
    InvalidUtf8,

    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
}

/// Append-only byte sink implementing the canonical conventions.
#[derive(Debug, Default)]
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

    /// Raw bytes without any prefix (fixed-width fields).
    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, bytes: &[u8]) -> Result<(), CodecError> {
        let len = u32::try_from(bytes.len()).map_err(|_| CodecError::LengthOverflow(bytes.len()))?;
        self.u32(len);
        self.raw(bytes);
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<(), CodecError> {
        self.bytes(s.as_bytes())
    }

    /// Two-byte collection count.
    pub fn count(&mut self, what: &'static str, count: usize) -> Result<(), CodecError> {
        let c = u16::try_from(count).map_err(|_| CodecError::TooManyItems {
            what,
            count,
            max: u16::MAX as usize,
        })?;
        self.u16(c);
        Ok(())
    }

    /// Count-prefixed sequence of encodable items.
    pub fn seq<T: Encode>(&mut self, what: &'static str, items: &[T]) -> Result<(), CodecError> {
        self.count(what, items.len())?;
        items.iter().try_for_each(|item| item.encode(self))
    }

    pub fn option<T: Encode>(&mut self, value: Option<&T>) -> Result<(), CodecError> {
        match value {
            None => {
                self.u8(0);
                Ok(())
            }
            Some(v) => {
                self.u8(1);
                v.encode(self)
            }
        }
    }
}

/// Cursor over an input buffer.
#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEof {
                need: n,
                have: self.remaining(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        String::from_utf8(self.bytes()?).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn count(&mut self) -> Result<usize, CodecError> {
        Ok(self.u16()? as usize)
    }

    pub fn seq<T: Decode>(&mut self) -> Result<Vec<T>, CodecError> {
        let n = self.count()?;
        (0..n).map(|_| T::decode(self)).collect()
    }

    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, CodecError> {
        match self.u8()? {
            0 => Ok(None),
            1 => T::decode(self).map(Some),
            tag => Err(CodecError::InvalidTag {
                tag,
                what: "presence flag",
            }),
        }
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError>;
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;
}

impl Encode for u32 {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u32(*self);
        Ok(())
    }
}

impl Decode for u32 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u32()
    }
}

impl Encode for String {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.str(self)
    }
}

impl Decode for String {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.string()
    }
}

/// Encodes a bare byte string (length prefix + bytes).
pub struct ByteStr<'a>(pub &'a [u8]);

impl Encode for ByteStr<'_> {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.bytes(self.0)
    }
}

pub fn canonical_encode<T: Encode + ?Sized>(value: &T) -> Result<Vec<u8>, CodecError> {
    let mut w = Writer::new();
    value.encode(&mut w)?;
    Ok(w.into_bytes())
}

/// Decodes a value and requires the input to be fully consumed.
pub fn canonical_decode<T: Decode>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut r = Reader::new(bytes);
    let v = T::decode(&mut r)?;
    match r.remaining() {
        0 => Ok(v),
        n => Err(CodecError::TrailingBytes(n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_byte_string_is_four_zero_bytes() {
        assert_eq!(canonical_encode(&ByteStr(&[])).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn integers_are_little_endian() {
        let mut w = Writer::new();
        w.u16(0x0102);
        w.u32(0x0304_0506);
        w.u64(1);
        assert_eq!(
            w.into_bytes(),
            vec![2, 1, 6, 5, 4, 3, 1, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn count_overflow_is_an_error() {
        let items = vec![0u32; u16::MAX as usize + 1];
        let mut w = Writer::new();
        assert!(matches!(
            w.seq("items", &items),
            Err(CodecError::TooManyItems { count: 65536, .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert_eq!(
            canonical_decode::<u32>(&[1, 0, 0, 0, 9]),
            Err(CodecError::TrailingBytes(1))
        );
    }

    #[test]
    fn truncated_input_rejected() {
        assert!(matches!(
            canonical_decode::<String>(&[5, 0, 0, 0, b'a']),
            Err(CodecError::UnexpectedEof { need: 5, have: 1 })
        ));
    }

    #[test]
    fn option_presence_flag() {
        let mut w = Writer::new();
        w.option::<u32>(None).unwrap();
        w.option(Some(&7u32)).unwrap();
        let bytes = w.into_bytes();
        assert_eq!(bytes, vec![0, 1, 7, 0, 0, 0]);
        let mut r = Reader::new(&bytes);
        assert_eq!(r.option::<u32>().unwrap(), None);
        assert_eq!(r.option::<u32>().unwrap(), Some(7));
        assert!(Reader::new(&[2]).option::<u32>().is_err());
    }
}
