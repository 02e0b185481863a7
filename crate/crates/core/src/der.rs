//! Minimal DER writer and strict reader.
//!
//! The writer always emits definite, minimal-length DER. The reader accepts
//! BER length forms (long non-minimal and indefinite lengths) but records
//! that it saw them, so strict callers can reject the input. Decoding is
//! total: any byte sequence yields either a value or an error, never a
//! panic or unbounded recursion.

use std::fmt;

/// Maximum nesting depth accepted by the reader.
const MAX_DEPTH: usize = 64;

pub const TAG_BOOLEAN: u8 = 0x01;
pub const TAG_INTEGER: u8 = 0x02;
pub const TAG_BIT_STRING: u8 = 0x03;
pub const TAG_OCTET_STRING: u8 = 0x04;
pub const TAG_NULL: u8 = 0x05;
pub const TAG_OID: u8 = 0x06;
pub const TAG_UTF8_STRING: u8 = 0x0c;
pub const TAG_PRINTABLE_STRING: u8 = 0x13;
pub const TAG_IA5_STRING: u8 = 0x16;
pub const TAG_UTC_TIME: u8 = 0x17;
pub const TAG_GENERALIZED_TIME: u8 = 0x18;
pub const TAG_SEQUENCE: u8 = 0x30;
pub const TAG_SET: u8 = 0x31;

/// Context-specific constructed tag `[n]`.
pub const fn ctx(n: u8) -> u8 {
    0xa0 | n
}

/// Context-specific primitive tag `[n]`.
pub const fn ctx_prim(n: u8) -> u8 {
    0x80 | n
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DerError {
    #[error("truncated DER input")]
    Truncated,
    #[error("unexpected tag {found:#04x}, expected {expected:#04x}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("invalid length encoding")]
    BadLength,
    #[error("nesting deeper than {MAX_DEPTH} levels")]
    DepthExceeded,
    #[error("trailing data after value")]
    TrailingData,
    #[error("invalid value: {0}")]
    BadValue(String),
}

pub type Result<T> = std::result::Result<T, DerError>;

//------------ Writer --------------------------------------------------------

pub fn encode_len(len: usize) -> Vec<u8> {
    if len < 0x80 {
        vec![len as u8]
    } else {
        let bytes = len.to_be_bytes();
        let first = bytes.iter().position(|&b| b != 0).unwrap_or(7);
        let sig = &bytes[first..];
        let mut out = Vec::with_capacity(1 + sig.len());
        out.push(0x80 | sig.len() as u8);
        out.extend_from_slice(sig);
        out
    }
}

pub fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len() + 6);
    out.push(tag);
    out.extend_from_slice(&encode_len(content.len()));
    out.extend_from_slice(content);
    out
}

pub fn seq(parts: &[&[u8]]) -> Vec<u8> {
    let content: Vec<u8> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    tlv(TAG_SEQUENCE, &content)
}

pub fn set(parts: &[&[u8]]) -> Vec<u8> {
    let content: Vec<u8> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    tlv(TAG_SET, &content)
}

pub fn boolean(v: bool) -> Vec<u8> {
    tlv(TAG_BOOLEAN, &[if v { 0xff } else { 0x00 }])
}

pub fn null() -> Vec<u8> {
    tlv(TAG_NULL, &[])
}

/// INTEGER from unsigned big-endian magnitude bytes.
pub fn uint_bytes(mag: &[u8]) -> Vec<u8> {
    let first = mag.iter().position(|&b| b != 0).unwrap_or(mag.len());
    let sig = &mag[first..];
    let mut content = Vec::with_capacity(sig.len() + 1);
    if sig.is_empty() {
        content.push(0);
    } else {
        if sig[0] & 0x80 != 0 {
            content.push(0);
        }
        content.extend_from_slice(sig);
    }
    tlv(TAG_INTEGER, &content)
}

pub fn uint(v: u64) -> Vec<u8> {
    uint_bytes(&v.to_be_bytes())
}

pub fn octet_string(bytes: &[u8]) -> Vec<u8> {
    tlv(TAG_OCTET_STRING, bytes)
}

pub fn bit_string(unused: u8, bytes: &[u8]) -> Vec<u8> {
    let mut content = Vec::with_capacity(bytes.len() + 1);
    content.push(unused);
    content.extend_from_slice(bytes);
    tlv(TAG_BIT_STRING, &content)
}

pub fn ia5_string(s: &str) -> Vec<u8> {
    tlv(TAG_IA5_STRING, s.as_bytes())
}

pub fn printable_string(s: &str) -> Vec<u8> {
    tlv(TAG_PRINTABLE_STRING, s.as_bytes())
}

pub fn oid(arcs: &[u64]) -> Vec<u8> {
    tlv(TAG_OID, &oid_content(arcs))
}

pub fn oid_content(arcs: &[u64]) -> Vec<u8> {
    assert!(arcs.len() >= 2);
    let mut content = Vec::new();
    push_base128(&mut content, arcs[0] * 40 + arcs[1]);
    for &arc in &arcs[2..] {
        push_base128(&mut content, arc);
    }
    content
}

fn push_base128(out: &mut Vec<u8>, mut v: u64) {
    let mut tmp = [0u8; 10];
    let mut i = 9;
    tmp[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        tmp[i] = 0x80 | (v & 0x7f) as u8;
        v >>= 7;
    }
    out.extend_from_slice(&tmp[i..]);
}

//------------ Oid -----------------------------------------------------------

/// An object identifier, stored as its encoded content octets.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Oid(pub Vec<u8>);

impl Oid {
    pub fn from_arcs(arcs: &[u64]) -> Self {
        Oid(oid_content(arcs))
    }

    pub fn encode(&self) -> Vec<u8> {
        tlv(TAG_OID, &self.0)
    }
}

impl fmt::Debug for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oid({})", hex::encode(&self.0))
    }
}

//------------ Reader --------------------------------------------------------

/// A borrowed slice reader over DER/BER data.
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    depth: usize,
    /// Set when a non-DER (BER) length form was consumed anywhere below.
    ber_seen: &'a std::cell::Cell<bool>,
}

/// Owns the BER-seen flag for a top-level parse.
pub struct ReaderCtx {
    ber_seen: std::cell::Cell<bool>,
}

impl ReaderCtx {
    pub fn new() -> Self {
        ReaderCtx {
            ber_seen: std::cell::Cell::new(false),
        }
    }

    pub fn reader<'a>(&'a self, data: &'a [u8]) -> Reader<'a> {
        Reader {
            data,
            pos: 0,
            depth: 0,
            ber_seen: &self.ber_seen,
        }
    }

    /// True when the last parse consumed any BER-only length form.
    pub fn ber_seen(&self) -> bool {
        self.ber_seen.get()
    }
}

impl Default for ReaderCtx {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Reader<'a> {
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn peek_tag(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(DerError::Truncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_len(&mut self) -> Result<Option<usize>> {
        let first = self.take(1)?[0];
        if first < 0x80 {
            return Ok(Some(first as usize));
        }
        if first == 0x80 {
            // indefinite length: BER only
            self.ber_seen.set(true);
            return Ok(None);
        }
        let n = (first & 0x7f) as usize;
        if n > 8 {
            return Err(DerError::BadLength);
        }
        let bytes = self.take(n)?;
        let mut len: usize = 0;
        for &b in bytes {
            len = len.checked_mul(256).ok_or(DerError::BadLength)? + b as usize;
        }
        // non-minimal long form is BER
        if len < 0x80 || bytes[0] == 0 {
            self.ber_seen.set(true);
        }
        if len > self.remaining() {
            return Err(DerError::Truncated);
        }
        Ok(Some(len))
    }

    /// Reads the next TLV, returning `(tag, content)`.
    ///
    /// Indefinite-length constructed values are resolved by scanning for the
    /// end-of-contents marker; the returned content excludes the marker but
    /// still contains BER-encoded children.
    pub fn read_tlv(&mut self) -> Result<(u8, &'a [u8])> {
        if self.depth >= MAX_DEPTH {
            return Err(DerError::DepthExceeded);
        }
        let tag = self.take(1)?[0];
        if tag & 0x1f == 0x1f {
            return Err(DerError::BadValue("multi-byte tags unsupported".into()));
        }
        match self.read_len()? {
            Some(len) => {
                let content = self.take(len)?;
                Ok((tag, content))
            }
            None => {
                if tag & 0x20 == 0 {
                    return Err(DerError::BadLength);
                }
                let start = self.pos;
                self.skip_indefinite()?;
                // content excludes the trailing 00 00 marker
                Ok((tag, &self.data[start..self.pos - 2]))
            }
        }
    }

    fn skip_indefinite(&mut self) -> Result<()> {
        let mut depth = 1usize;
        while depth > 0 {
            if self.remaining() >= 2 && self.data[self.pos] == 0 && self.data[self.pos + 1] == 0 {
                self.pos += 2;
                depth -= 1;
                continue;
            }
            let tag = self.take(1)?[0];
            if tag & 0x1f == 0x1f {
                return Err(DerError::BadValue("multi-byte tags unsupported".into()));
            }
            match self.read_len()? {
                Some(len) => {
                    self.take(len)?;
                }
                None => {
                    if tag & 0x20 == 0 {
                        return Err(DerError::BadLength);
                    }
                    depth += 1;
                    if depth > MAX_DEPTH {
                        return Err(DerError::DepthExceeded);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn expect(&mut self, tag: u8) -> Result<&'a [u8]> {
        match self.peek_tag() {
            Some(t) if t == tag => Ok(self.read_tlv()?.1),
            Some(t) => Err(DerError::UnexpectedTag {
                expected: tag,
                found: t,
            }),
            None => Err(DerError::Truncated),
        }
    }

    /// Reads a constructed value and hands its content to `f` as a sub-reader.
    pub fn nested<T>(&mut self, tag: u8, f: impl FnOnce(&mut Reader<'a>) -> Result<T>) -> Result<T> {
        let content = self.expect(tag)?;
        let mut sub = Reader {
            data: content,
            pos: 0,
            depth: self.depth + 1,
            ber_seen: self.ber_seen,
        };
        let out = f(&mut sub)?;
        if !sub.is_empty() {
            return Err(DerError::TrailingData);
        }
        Ok(out)
    }

    pub fn sequence<T>(&mut self, f: impl FnOnce(&mut Reader<'a>) -> Result<T>) -> Result<T> {
        self.nested(TAG_SEQUENCE, f)
    }

    /// Like `nested` but only if the next tag matches.
    pub fn opt_nested<T>(
        &mut self,
        tag: u8,
        f: impl FnOnce(&mut Reader<'a>) -> Result<T>,
    ) -> Result<Option<T>> {
        if self.peek_tag() == Some(tag) {
            Ok(Some(self.nested(tag, f)?))
        } else {
            Ok(None)
        }
    }

    pub fn uint_bytes(&mut self) -> Result<&'a [u8]> {
        let content = self.expect(TAG_INTEGER)?;
        if content.is_empty() {
            return Err(DerError::BadValue("empty INTEGER".into()));
        }
        if content[0] & 0x80 != 0 {
            return Err(DerError::BadValue("negative INTEGER".into()));
        }
        let mut c = content;
        while c.len() > 1 && c[0] == 0 && c[1] & 0x80 == 0 {
            // non-minimal, keep going but note it is not DER
            self.ber_seen.set(true);
            c = &c[1..];
        }
        if c.len() > 1 && c[0] == 0 {
            c = &c[1..];
        }
        Ok(c)
    }

    pub fn uint(&mut self) -> Result<u64> {
        let bytes = self.uint_bytes()?;
        if bytes.len() > 8 {
            return Err(DerError::BadValue("INTEGER too large for u64".into()));
        }
        let mut v = 0u64;
        for &b in bytes {
            v = v << 8 | b as u64;
        }
        Ok(v)
    }

    pub fn oid(&mut self) -> Result<Oid> {
        let content = self.expect(TAG_OID)?;
        if content.is_empty() || content.last().map(|b| b & 0x80 != 0).unwrap_or(false) {
            return Err(DerError::BadValue("malformed OID".into()));
        }
        Ok(Oid(content.to_vec()))
    }

    pub fn octet_string(&mut self) -> Result<&'a [u8]> {
        self.expect(TAG_OCTET_STRING)
    }

    /// BIT STRING as `(unused_bits, payload)`.
    pub fn bit_string(&mut self) -> Result<(u8, &'a [u8])> {
        let content = self.expect(TAG_BIT_STRING)?;
        if content.is_empty() {
            return Err(DerError::BadValue("empty BIT STRING".into()));
        }
        let unused = content[0];
        if unused > 7 || (content.len() == 1 && unused != 0) {
            return Err(DerError::BadValue("invalid BIT STRING padding".into()));
        }
        Ok((unused, &content[1..]))
    }

    pub fn boolean(&mut self) -> Result<bool> {
        let content = self.expect(TAG_BOOLEAN)?;
        if content.len() != 1 {
            return Err(DerError::BadValue("BOOLEAN length".into()));
        }
        if content[0] != 0x00 && content[0] != 0xff {
            self.ber_seen.set(true);
        }
        Ok(content[0] != 0)
    }

    /// Skips one TLV of any tag, returning the raw encoded bytes.
    pub fn raw_tlv(&mut self) -> Result<&'a [u8]> {
        let start = self.pos;
        self.read_tlv()?;
        Ok(&self.data[start..self.pos])
    }
}

/// Parses a complete top-level value, rejecting trailing bytes.
pub fn parse_all<T>(
    data: &[u8],
    f: impl FnOnce(&mut Reader<'_>) -> Result<T>,
) -> Result<(T, bool)> {
    let ctx = ReaderCtx::new();
    let mut rd = ctx.reader(data);
    let out = f(&mut rd)?;
    if !rd.is_empty() {
        return Err(DerError::TrailingData);
    }
    Ok((out, ctx.ber_seen()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uint_round_trip() {
        for v in [0u64, 1, 127, 128, 255, 256, 0x8000, u64::MAX] {
            let enc = uint(v);
            let (got, ber) = parse_all(&enc, |rd| rd.uint()).unwrap();
            assert_eq!(got, v);
            assert!(!ber);
        }
    }

    #[test]
    fn oid_round_trip() {
        let enc = oid(&[1, 2, 840, 113549, 1, 9, 16, 1, 24]);
        let (got, _) = parse_all(&enc, |rd| rd.oid()).unwrap();
        assert_eq!(got, Oid::from_arcs(&[1, 2, 840, 113549, 1, 9, 16, 1, 24]));
    }

    #[test]
    fn long_form_minimal_is_der() {
        let payload = vec![0u8; 200];
        let enc = octet_string(&payload);
        let (got, ber) = parse_all(&enc, |rd| rd.octet_string().map(|s| s.to_vec())).unwrap();
        assert_eq!(got, payload);
        assert!(!ber);
    }

    #[test]
    fn non_minimal_length_flags_ber() {
        // 0x04 with length 0x81 0x03 (long form for a short length)
        let enc = [0x04, 0x81, 0x03, 1, 2, 3];
        let (got, ber) = parse_all(&enc, |rd| rd.octet_string().map(|s| s.to_vec())).unwrap();
        assert_eq!(got, vec![1, 2, 3]);
        assert!(ber);
    }

    #[test]
    fn indefinite_length_flags_ber() {
        // constructed sequence with indefinite length containing one NULL
        let enc = [0x30, 0x80, 0x05, 0x00, 0x00, 0x00];
        let (_, ber) = parse_all(&enc, |rd| rd.sequence(|s| s.expect(TAG_NULL).map(|_| ()))).unwrap();
        assert!(ber);
    }

    #[test]
    fn truncated_input_errors() {
        assert_eq!(
            parse_all(&[0x30, 0x05, 0x01], |rd| rd.raw_tlv().map(|_| ())).unwrap_err(),
            DerError::Truncated
        );
    }

    #[test]
    fn deep_nesting_bounded() {
        let mut enc: Vec<u8> = vec![0x05, 0x00];
        for _ in 0..200 {
            enc = tlv(TAG_SEQUENCE, &enc);
        }
        fn drill(rd: &mut Reader<'_>) -> Result<()> {
            if rd.peek_tag() == Some(TAG_SEQUENCE) {
                rd.sequence(drill)
            } else {
                rd.expect(TAG_NULL).map(|_| ())
            }
        }
        assert_eq!(parse_all(&enc, drill).unwrap_err(), DerError::DepthExceeded);
    }
}
