//! ROA eContent (RFC 6482).
//!
//! Strict decoding enforces the family bit-width bounds on prefixes and
//! maxLength. The attack encoder deliberately violates them; a prefix can
//! carry any number of bits and maxLength any value.

use crate::cert::ObjectError;
use crate::der::{self};
use crate::resources::{AddressFamily, Prefix};
use crate::sigobj::DecodeMode;

/// One address block inside a ROA, kept at the wire level so out-of-bounds
/// values are representable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoaBlock {
    pub family: AddressFamily,
    /// Raw prefix bits, most significant first.
    pub prefix_bits: Vec<u8>,
    /// Bit length of the prefix; may exceed the family width in attack mode.
    pub prefix_len: u16,
    pub max_length: Option<u16>,
}

impl RoaBlock {
    pub fn from_prefix(prefix: Prefix, max_length: Option<u8>) -> RoaBlock {
        let (_, bytes) = prefix.to_bit_string();
        RoaBlock {
            family: prefix.family,
            prefix_bits: bytes,
            prefix_len: prefix.len as u16,
            max_length: max_length.map(u16::from),
        }
    }

    /// The strict-mode interpretation, when within bounds.
    pub fn to_prefix(&self) -> Option<Prefix> {
        if self.prefix_len > self.family.bit_width() as u16 {
            return None;
        }
        let unused = (self.prefix_bits.len() * 8).checked_sub(self.prefix_len as usize)?;
        Prefix::from_bit_string(self.family, unused as u8, &self.prefix_bits)
    }

    fn check_bounds(&self) -> Result<(), ObjectError> {
        let width = self.family.bit_width() as u16;
        if self.prefix_len > width {
            return Err(ObjectError::BoundsViolation(format!(
                "prefix length {} exceeds family width {width}",
                self.prefix_len
            )));
        }
        if let Some(ml) = self.max_length {
            if ml > width {
                return Err(ObjectError::BoundsViolation(format!(
                    "maxLength {ml} exceeds family width {width}"
                )));
            }
            if ml < self.prefix_len {
                return Err(ObjectError::BoundsViolation(format!(
                    "maxLength {ml} below prefix length {}",
                    self.prefix_len
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoaContent {
    pub as_id: u32,
    pub blocks: Vec<RoaBlock>,
}

/// Builds a ROA under strict bounds. Errors with `PrefixOutOfRange` when a
/// maxLength falls outside `[prefix_len, family_width]`, and
/// `EmptyResources` for an empty prefix list.
pub fn build_roa(as_id: u32, prefixes: &[(Prefix, Option<u8>)]) -> Result<RoaContent, ObjectError> {
    if prefixes.is_empty() {
        return Err(ObjectError::EmptyResources);
    }
    let blocks: Vec<RoaBlock> = prefixes
        .iter()
        .map(|&(p, ml)| RoaBlock::from_prefix(p, ml))
        .collect();
    for block in &blocks {
        block.check_bounds().map_err(|_| ObjectError::PrefixOutOfRange)?;
    }
    Ok(RoaContent { as_id, blocks })
}

/// Builds a ROA without bounds checks; used by the attack generators.
pub fn build_roa_attack(as_id: u32, blocks: Vec<RoaBlock>) -> RoaContent {
    RoaContent { as_id, blocks }
}

impl RoaContent {
    pub fn encode(&self) -> Vec<u8> {
        let mut families: Vec<Vec<u8>> = Vec::new();
        for family in [AddressFamily::Ipv4, AddressFamily::Ipv6] {
            let addrs: Vec<Vec<u8>> = self
                .blocks
                .iter()
                .filter(|b| b.family == family)
                .map(|b| {
                    let unused =
                        (b.prefix_bits.len() * 8).saturating_sub(b.prefix_len as usize) as u8;
                    let addr = der::bit_string(unused.min(7), &b.prefix_bits);
                    match b.max_length {
                        Some(ml) => der::seq(&[&addr, &der::uint(ml as u64)]),
                        None => der::seq(&[&addr]),
                    }
                })
                .collect();
            if addrs.is_empty() {
                continue;
            }
            let refs: Vec<&[u8]> = addrs.iter().map(|v| v.as_slice()).collect();
            families.push(der::seq(&[
                &der::octet_string(&family.afi()),
                &der::seq(&refs),
            ]));
        }
        let refs: Vec<&[u8]> = families.iter().map(|v| v.as_slice()).collect();
        der::seq(&[&der::uint(self.as_id as u64), &der::seq(&refs)])
    }

    pub fn decode(data: &[u8], mode: DecodeMode) -> Result<RoaContent, ObjectError> {
        let (content, _) = der::parse_all(data, |rd| {
            rd.sequence(|s| {
                if s.peek_tag() == Some(der::ctx(0)) {
                    s.nested(der::ctx(0), |v| v.uint().map(|_| ()))?;
                }
                let as_id = s.uint()?;
                let as_id: u32 = as_id
                    .try_into()
                    .map_err(|_| der::DerError::BadValue("asID out of range".into()))?;
                let mut blocks = Vec::new();
                s.sequence(|families| {
                    while !families.is_empty() {
                        families.sequence(|fam| {
                            let afi = fam.octet_string()?;
                            let family = AddressFamily::from_afi(afi).ok_or_else(|| {
                                der::DerError::BadValue("unknown address family".into())
                            })?;
                            fam.sequence(|addrs| {
                                while !addrs.is_empty() {
                                    addrs.sequence(|a| {
                                        let (unused, bytes) = a.bit_string()?;
                                        let prefix_len = (bytes.len() * 8)
                                            .checked_sub(unused as usize)
                                            .ok_or(der::DerError::BadLength)?;
                                        let max_length = if a.is_empty() {
                                            None
                                        } else {
                                            let ml = a.uint()?;
                                            Some(ml.min(u16::MAX as u64) as u16)
                                        };
                                        blocks.push(RoaBlock {
                                            family,
                                            prefix_bits: bytes.to_vec(),
                                            prefix_len: prefix_len.min(u16::MAX as usize) as u16,
                                            max_length,
                                        });
                                        Ok(())
                                    })?;
                                }
                                Ok(())
                            })?;
                            Ok(())
                        })?;
                    }
                    Ok(())
                })?;
                Ok(RoaContent { as_id, blocks })
            })
        })?;
        if mode == DecodeMode::Strict {
            for block in &content.blocks {
                block.check_bounds()?;
            }
        }
        Ok(content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn round_trip() {
        let roa = build_roa(
            65001,
            &[(p("10.0.0.0/8"), Some(24)), (p("2001:db8::/32"), None)],
        )
        .unwrap();
        let decoded = RoaContent::decode(&roa.encode(), DecodeMode::Strict).unwrap();
        assert_eq!(decoded, roa);
        assert_eq!(decoded.blocks[0].to_prefix(), Some(p("10.0.0.0/8")));
    }

    #[test]
    fn empty_prefix_list_rejected() {
        assert_eq!(build_roa(0, &[]).unwrap_err(), ObjectError::EmptyResources);
    }

    #[test]
    fn bad_max_length_rejected() {
        assert_eq!(
            build_roa(1, &[(p("10.0.0.0/8"), Some(40))]).unwrap_err(),
            ObjectError::PrefixOutOfRange
        );
    }

    #[test]
    fn overlong_v4_prefix_encodes_but_strict_decode_rejects() {
        // 33-bit IPv4 prefix: 5 bytes with 7 unused bits
        let roa = build_roa_attack(
            65001,
            vec![RoaBlock {
                family: AddressFamily::Ipv4,
                prefix_bits: vec![10, 0, 0, 0, 0x80],
                prefix_len: 33,
                max_length: None,
            }],
        );
        let encoded = roa.encode();
        assert!(matches!(
            RoaContent::decode(&encoded, DecodeMode::Strict).unwrap_err(),
            ObjectError::BoundsViolation(_)
        ));
        // lax decode surfaces the raw block
        let lax = RoaContent::decode(&encoded, DecodeMode::Lax).unwrap();
        assert_eq!(lax.blocks[0].prefix_len, 33);
        assert_eq!(lax.blocks[0].to_prefix(), None);
    }

    #[test]
    fn excessive_max_length_rejected_strict() {
        let roa = build_roa_attack(
            65001,
            vec![RoaBlock {
                family: AddressFamily::Ipv4,
                prefix_bits: vec![10],
                prefix_len: 8,
                max_length: Some(200),
            }],
        );
        assert!(matches!(
            RoaContent::decode(&roa.encode(), DecodeMode::Strict).unwrap_err(),
            ObjectError::BoundsViolation(_)
        ));
    }
}
