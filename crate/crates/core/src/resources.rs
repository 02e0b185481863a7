//! Internet number resources: IP prefixes and AS number ranges.
//!
//! These model the RFC 3779 certificate extensions. Sets are canonicalized
//! on construction: sorted, with covered prefixes and overlapping ASN ranges
//! collapsed, so the invariants hold by construction.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use crate::der;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum AddressFamily {
    Ipv4,
    Ipv6,
}

impl AddressFamily {
    pub fn bit_width(self) -> u8 {
        match self {
            AddressFamily::Ipv4 => 32,
            AddressFamily::Ipv6 => 128,
        }
    }

    /// Two-byte AFI value used in the addressFamily octet string.
    pub fn afi(self) -> [u8; 2] {
        match self {
            AddressFamily::Ipv4 => [0, 1],
            AddressFamily::Ipv6 => [0, 2],
        }
    }

    pub fn from_afi(afi: &[u8]) -> Option<Self> {
        match afi {
            [0, 1] => Some(AddressFamily::Ipv4),
            [0, 2] => Some(AddressFamily::Ipv6),
            _ => None,
        }
    }
}

/// An IP prefix with its address bits left-aligned in a u128.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Prefix {
    pub family: AddressFamily,
    pub bits: u128,
    pub len: u8,
}

impl Prefix {
    pub fn new(family: AddressFamily, bits: u128, len: u8) -> Option<Prefix> {
        if len > family.bit_width() {
            return None;
        }
        let mask = prefix_mask(len);
        Some(Prefix {
            family,
            bits: bits & mask,
            len,
        })
    }

    pub fn from_addr(addr: IpAddr, len: u8) -> Option<Prefix> {
        match addr {
            IpAddr::V4(a) => {
                Prefix::new(AddressFamily::Ipv4, (u32::from(a) as u128) << 96, len)
            }
            IpAddr::V6(a) => Prefix::new(AddressFamily::Ipv6, u128::from(a), len),
        }
    }

    pub fn addr(&self) -> IpAddr {
        match self.family {
            AddressFamily::Ipv4 => IpAddr::V4(Ipv4Addr::from((self.bits >> 96) as u32)),
            AddressFamily::Ipv6 => IpAddr::V6(Ipv6Addr::from(self.bits)),
        }
    }

    pub fn covers(&self, other: &Prefix) -> bool {
        self.family == other.family
            && self.len <= other.len
            && (self.bits ^ other.bits) & prefix_mask(self.len) == 0
    }

    /// Content of the RFC 3779 address BIT STRING: the prefix bits, most
    /// significant first, padded to a whole number of bytes.
    pub fn to_bit_string(&self) -> (u8, Vec<u8>) {
        let byte_len = (self.len as usize).div_ceil(8);
        let unused = (byte_len * 8 - self.len as usize) as u8;
        let all = self.bits.to_be_bytes();
        (unused, all[..byte_len].to_vec())
    }

    pub fn from_bit_string(family: AddressFamily, unused: u8, bytes: &[u8]) -> Option<Prefix> {
        let total_bits = bytes.len().checked_mul(8)?.checked_sub(unused as usize)?;
        if total_bits > family.bit_width() as usize {
            return None;
        }
        let mut bits: u128 = 0;
        for (i, &b) in bytes.iter().enumerate().take(16) {
            bits |= (b as u128) << (120 - 8 * i);
        }
        Prefix::new(family, bits, total_bits as u8)
    }
}

fn prefix_mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr(), self.len)
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s.split_once('/').ok_or_else(|| format!("no '/' in {s:?}"))?;
        let addr: IpAddr = addr.parse().map_err(|e| format!("{e}"))?;
        let len: u8 = len.parse().map_err(|e| format!("{e}"))?;
        Prefix::from_addr(addr, len).ok_or_else(|| format!("prefix length {len} out of range"))
    }
}

//------------ ResourceSet ---------------------------------------------------

/// A canonical set of IPv4 prefixes, IPv6 prefixes and ASN ranges.
#[derive(Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct ResourceSet {
    v4: Vec<Prefix>,
    v6: Vec<Prefix>,
    asns: Vec<(u32, u32)>,
}

impl ResourceSet {
    pub fn new(
        prefixes: impl IntoIterator<Item = Prefix>,
        asns: impl IntoIterator<Item = (u32, u32)>,
    ) -> ResourceSet {
        let mut v4 = Vec::new();
        let mut v6 = Vec::new();
        for p in prefixes {
            match p.family {
                AddressFamily::Ipv4 => v4.push(p),
                AddressFamily::Ipv6 => v6.push(p),
            }
        }
        ResourceSet {
            v4: canonical_prefixes(v4),
            v6: canonical_prefixes(v6),
            asns: canonical_ranges(asns.into_iter().filter(|(lo, hi)| lo <= hi).collect()),
        }
    }

    /// The entire number space: 0.0.0.0/0, ::/0 and all ASNs.
    pub fn all() -> ResourceSet {
        ResourceSet::new(
            [
                Prefix::new(AddressFamily::Ipv4, 0, 0).unwrap(),
                Prefix::new(AddressFamily::Ipv6, 0, 0).unwrap(),
            ],
            [(0, u32::MAX)],
        )
    }

    pub fn is_empty(&self) -> bool {
        self.v4.is_empty() && self.v6.is_empty() && self.asns.is_empty()
    }

    pub fn v4(&self) -> &[Prefix] {
        &self.v4
    }

    pub fn v6(&self) -> &[Prefix] {
        &self.v6
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Prefix> {
        self.v4.iter().chain(self.v6.iter())
    }

    pub fn asns(&self) -> &[(u32, u32)] {
        &self.asns
    }

    pub fn contains_prefix(&self, p: &Prefix) -> bool {
        let list = match p.family {
            AddressFamily::Ipv4 => &self.v4,
            AddressFamily::Ipv6 => &self.v6,
        };
        list.iter().any(|q| q.covers(p))
    }

    pub fn contains_asn(&self, asn: u32) -> bool {
        self.asns.iter().any(|&(lo, hi)| lo <= asn && asn <= hi)
    }

    /// True when every resource in `other` is covered by this set.
    pub fn contains(&self, other: &ResourceSet) -> bool {
        other.prefixes().all(|p| self.contains_prefix(p))
            && other
                .asns
                .iter()
                .all(|&(lo, hi)| self.asns.iter().any(|&(a, b)| a <= lo && hi <= b))
    }

    //--- RFC 3779 encoding

    /// Extension value for id-pe-ipAddrBlocks.
    pub fn encode_ip_addr_blocks(&self) -> Vec<u8> {
        let mut families = Vec::new();
        for (family, list) in [
            (AddressFamily::Ipv4, &self.v4),
            (AddressFamily::Ipv6, &self.v6),
        ] {
            if list.is_empty() {
                continue;
            }
            let choices: Vec<Vec<u8>> = list
                .iter()
                .map(|p| {
                    let (unused, bytes) = p.to_bit_string();
                    der::bit_string(unused, &bytes)
                })
                .collect();
            let refs: Vec<&[u8]> = choices.iter().map(|v| v.as_slice()).collect();
            families.push(der::seq(&[
                &der::octet_string(&family.afi()),
                &der::seq(&refs),
            ]));
        }
        let refs: Vec<&[u8]> = families.iter().map(|v| v.as_slice()).collect();
        der::seq(&refs)
    }

    /// Extension value for id-pe-autonomousSysIds.
    pub fn encode_as_ids(&self) -> Vec<u8> {
        let choices: Vec<Vec<u8>> = self
            .asns
            .iter()
            .map(|&(lo, hi)| {
                if lo == hi {
                    der::uint(lo as u64)
                } else {
                    der::seq(&[&der::uint(lo as u64), &der::uint(hi as u64)])
                }
            })
            .collect();
        let refs: Vec<&[u8]> = choices.iter().map(|v| v.as_slice()).collect();
        der::seq(&[&der::tlv(der::ctx(0), &der::seq(&refs))])
    }

    pub fn decode_ip_addr_blocks(data: &[u8]) -> Result<ResourceSet, der::DerError> {
        let (prefixes, _) = der::parse_all(data, |rd| {
            let mut out = Vec::new();
            rd.sequence(|families| {
                while !families.is_empty() {
                    families.sequence(|fam| {
                        let afi = fam.octet_string()?;
                        let family = AddressFamily::from_afi(afi).ok_or_else(|| {
                            der::DerError::BadValue("unknown address family".into())
                        })?;
                        if fam.peek_tag() == Some(der::TAG_NULL) {
                            // inherit: not representable as a concrete set
                            fam.expect(der::TAG_NULL)?;
                            return Err(der::DerError::BadValue("inherit in blocks".into()));
                        }
                        fam.sequence(|items| {
                            while !items.is_empty() {
                                match items.peek_tag() {
                                    Some(der::TAG_BIT_STRING) => {
                                        let (unused, bytes) = items.bit_string()?;
                                        let p = Prefix::from_bit_string(family, unused, bytes)
                                            .ok_or_else(|| {
                                                der::DerError::BadValue(
                                                    "prefix exceeds family width".into(),
                                                )
                                            })?;
                                        out.push(p);
                                    }
                                    Some(der::TAG_SEQUENCE) => {
                                        // address ranges are not emitted by this
                                        // implementation; reject them on decode
                                        return Err(der::DerError::BadValue(
                                            "address ranges unsupported".into(),
                                        ));
                                    }
                                    _ => {
                                        return Err(der::DerError::BadValue(
                                            "unexpected address choice".into(),
                                        ))
                                    }
                                }
                            }
                            Ok(())
                        })?;
                        Ok(())
                    })?;
                }
                Ok(())
            })?;
            Ok(out)
        })?;
        Ok(ResourceSet::new(prefixes, []))
    }

    pub fn decode_as_ids(data: &[u8]) -> Result<Vec<(u32, u32)>, der::DerError> {
        let (ranges, _) = der::parse_all(data, |rd| {
            rd.sequence(|s| {
                s.nested(der::ctx(0), |choice| {
                    if choice.peek_tag() == Some(der::TAG_NULL) {
                        choice.expect(der::TAG_NULL)?;
                        return Err(der::DerError::BadValue("inherit in AS ids".into()));
                    }
                    choice.sequence(|items| {
                        let mut out = Vec::new();
                        while !items.is_empty() {
                            match items.peek_tag() {
                                Some(der::TAG_INTEGER) => {
                                    let v = items.uint()?;
                                    let v: u32 = v.try_into().map_err(|_| {
                                        der::DerError::BadValue("ASN out of range".into())
                                    })?;
                                    out.push((v, v));
                                }
                                Some(der::TAG_SEQUENCE) => {
                                    let (lo, hi) = items.sequence(|r| {
                                        Ok((r.uint()?, r.uint()?))
                                    })?;
                                    let lo: u32 = lo.try_into().map_err(|_| {
                                        der::DerError::BadValue("ASN out of range".into())
                                    })?;
                                    let hi: u32 = hi.try_into().map_err(|_| {
                                        der::DerError::BadValue("ASN out of range".into())
                                    })?;
                                    out.push((lo, hi));
                                }
                                _ => {
                                    return Err(der::DerError::BadValue(
                                        "unexpected AS choice".into(),
                                    ))
                                }
                            }
                        }
                        Ok(out)
                    })
                })
            })
        })?;
        Ok(ranges)
    }
}

impl fmt::Debug for ResourceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ResourceSet(")?;
        for p in self.prefixes() {
            write!(f, "{p} ")?;
        }
        for (lo, hi) in &self.asns {
            write!(f, "AS{lo}-AS{hi} ")?;
        }
        write!(f, ")")
    }
}

fn canonical_prefixes(mut list: Vec<Prefix>) -> Vec<Prefix> {
    list.sort();
    list.dedup();
    let snapshot = list.clone();
    list.retain(|p| !snapshot.iter().any(|q| q != p && q.covers(p)));
    list
}

fn canonical_ranges(mut list: Vec<(u32, u32)>) -> Vec<(u32, u32)> {
    list.sort();
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(list.len());
    for (lo, hi) in list {
        match out.last_mut() {
            Some(last) if lo <= last.1.saturating_add(1) => {
                last.1 = last.1.max(hi);
            }
            _ => out.push((lo, hi)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn prefix_cover() {
        assert!(p("1.0.0.0/8").covers(&p("1.2.0.0/16")));
        assert!(!p("1.0.0.0/8").covers(&p("2.0.0.0/8")));
        assert!(!p("1.2.0.0/16").covers(&p("1.0.0.0/8")));
        assert!(p("0.0.0.0/0").covers(&p("255.0.0.0/8")));
    }

    #[test]
    fn containment() {
        let parent = ResourceSet::new([p("1.0.0.0/8")], [(64500, 64510)]);
        let child_ok = ResourceSet::new([p("1.2.0.0/16")], [(64501, 64501)]);
        let child_bad = ResourceSet::new([p("2.0.0.0/8")], []);
        assert!(parent.contains(&child_ok));
        assert!(!parent.contains(&child_bad));
        assert!(ResourceSet::all().contains(&parent));
    }

    #[test]
    fn rfc3779_round_trip() {
        let set = ResourceSet::new(
            [p("10.0.0.0/8"), p("192.168.1.0/24"), p("2001:db8::/32")],
            [(1, 1), (10, 20)],
        );
        let ip = ResourceSet::decode_ip_addr_blocks(&set.encode_ip_addr_blocks()).unwrap();
        assert_eq!(ip.v4(), set.v4());
        assert_eq!(ip.v6(), set.v6());
        let asns = ResourceSet::decode_as_ids(&set.encode_as_ids()).unwrap();
        assert_eq!(asns, set.asns().to_vec());
    }

    #[test]
    fn canonicalization_collapses() {
        let set = ResourceSet::new(
            [p("1.0.0.0/8"), p("1.2.0.0/16")],
            [(5, 10), (11, 12), (8, 9)],
        );
        assert_eq!(set.v4(), &[p("1.0.0.0/8")]);
        assert_eq!(set.asns(), &[(5, 12)]);
    }

    #[test]
    fn zero_len_prefix_bit_string() {
        let zero = Prefix::new(AddressFamily::Ipv4, 0, 0).unwrap();
        let (unused, bytes) = zero.to_bit_string();
        assert_eq!((unused, bytes.as_slice()), (0, &[][..]));
        assert_eq!(
            Prefix::from_bit_string(AddressFamily::Ipv4, 0, &[]),
            Some(zero)
        );
    }
}
