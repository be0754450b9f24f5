//! Frame model and the Y-TAG relay codec.
//!
//! Wire layout of an untagged frame:
//!
//! ```text
//! DA(6) | SA(6) | EtherType(2) | payload
//! ```
//!
//! and of a relayed frame, with the tag inserted after SA like a VLAN tag:
//!
//! ```text
//! DA(6) | SA(6) | 0x88B5(2) | NA(6) | seq(2) | version(1) | flags(1) | EtherType(2) | payload
//! ```
//!
//! All multi-byte fields are big-endian.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::engine::SimTime;

/// Identifier of a simulated node. Multi-link devices use their node id as
/// MLD id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Globally unique id of one application frame. All copies share it.
pub type FrameId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xff; 6]);
    pub const ZERO: MacAddress = MacAddress([0; 6]);

    pub fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 != 0
    }

    pub fn is_locally_administered(&self) -> bool {
        self.0[0] & 0x02 != 0
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", o[0], o[1], o[2], o[3], o[4], o[5])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(String);

impl FromStr for MacAddress {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for o in out.iter_mut() {
            let p = parts.next().ok_or_else(|| ParseMacError(s.to_string()))?;
            if p.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *o = u8::from_str_radix(p, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_string()));
        }
        Ok(MacAddress(out))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// QoS access category, carried unchanged through relays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessCategory {
    Background,
    #[default]
    BestEffort,
    Video,
    Voice,
}

/// Requested degree of redundancy for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityCategory {
    #[default]
    BestEffort,
    /// Send on `k >= 2` links.
    Reliable(u8),
}

impl ReliabilityCategory {
    /// Number of copies requested.
    pub fn copies(self) -> usize {
        match self {
            ReliabilityCategory::BestEffort => 1,
            ReliabilityCategory::Reliable(k) => usize::from(k),
        }
    }

    pub fn is_reliable(self) -> bool {
        matches!(self, ReliabilityCategory::Reliable(_))
    }
}

impl fmt::Display for ReliabilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReliabilityCategory::BestEffort => f.write_str("best_effort"),
            ReliabilityCategory::Reliable(k) => write!(f, "reliable:{k}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame already carries a Y-TAG; tags do not nest")]
    NestedTag,
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("not a Y-TAG frame (EtherType {0:#06x})")]
    NotAYTag(u16),
    #[error("address {0} is not known to multi-link device {1}")]
    NoAssociation(MacAddress, NodeId),
    #[error("link index {0} out of range")]
    NoSuchLink(usize),
}

/// The relay tag carried on Ethernet between a non-primary AP and the
/// primary AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YTag {
    /// Next (final) destination address.
    pub na: MacAddress,
    /// Elimination sequence number.
    pub seq: u16,
    pub version: u8,
    pub flags: u8,
}

impl YTag {
    pub const ETHER_TYPE: u16 = 0x88B5;
    /// Serialized length: EtherType, NA, seq and the ancillary bytes.
    pub const LEN: usize = 12;
    pub const VERSION: u8 = 1;
    /// Set on copies relayed from the primary AP towards another AP for
    /// downlink transmission.
    pub const FLAG_DOWNLINK: u8 = 0x01;

    pub fn new(na: MacAddress, seq: u16) -> Self {
        YTag { na, seq, version: Self::VERSION, flags: 0 }
    }

    pub fn downlink(mut self) -> Self {
        self.flags |= Self::FLAG_DOWNLINK;
        self
    }

    pub fn is_downlink(&self) -> bool {
        self.flags & Self::FLAG_DOWNLINK != 0
    }

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..2].copy_from_slice(&Self::ETHER_TYPE.to_be_bytes());
        b[2..8].copy_from_slice(&self.na.0);
        b[8..10].copy_from_slice(&self.seq.to_be_bytes());
        b[10] = self.version;
        b[11] = self.flags;
        b
    }

    /// Parses a tag starting at its EtherType.
    pub fn parse(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < 2 {
            return Err(FrameError::Malformed("truncated EtherType"));
        }
        let et = u16::from_be_bytes([bytes[0], bytes[1]]);
        if et != Self::ETHER_TYPE {
            return Err(FrameError::NotAYTag(et));
        }
        if bytes.len() < Self::LEN {
            return Err(FrameError::Malformed("truncated Y-TAG"));
        }
        if bytes[10] != Self::VERSION {
            return Err(FrameError::Malformed("unsupported Y-TAG version"));
        }
        let mut na = [0u8; 6];
        na.copy_from_slice(&bytes[2..8]);
        Ok(YTag {
            na: MacAddress(na),
            seq: u16::from_be_bytes([bytes[8], bytes[9]]),
            version: bytes[10],
            flags: bytes[11],
        })
    }
}

/// A frame as it travels through the simulation.
///
/// `da`, `sa`, `ether_type`, `y_tag` and `payload` are wire-visible.
/// `ether_type` is always the type of the carried payload; when `y_tag` is
/// present the outer EtherType on the wire is [`YTag::ETHER_TYPE`] and
/// `ether_type` follows the tag. The remaining fields are simulator metadata
/// that ride along with every copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub da: MacAddress,
    pub sa: MacAddress,
    pub ether_type: u16,
    pub y_tag: Option<YTag>,
    pub payload: Vec<u8>,
    pub rc: ReliabilityCategory,
    pub ac: AccessCategory,
    /// MLD-level sequence number, wraps modulo 2^16.
    pub mld_seq: u16,
    /// MLD that assigned `mld_seq`.
    pub origin: NodeId,
    pub created_at: SimTime,
    pub id: FrameId,
    /// Application flow index, `None` for control frames.
    pub flow: Option<u32>,
}

/// EtherType used for simulated application payloads (IEEE local experimental 2).
pub const APP_ETHER_TYPE: u16 = 0x88B6;
/// EtherType of the layer-2 update broadcast sent after a primary AP change.
pub const L2_UPDATE_ETHER_TYPE: u16 = 0x88B7;

const MAC_HDR: usize = 12;

impl Frame {
    pub fn new(da: MacAddress, sa: MacAddress, payload: Vec<u8>) -> Self {
        Frame {
            da,
            sa,
            ether_type: APP_ETHER_TYPE,
            y_tag: None,
            payload,
            rc: ReliabilityCategory::BestEffort,
            ac: AccessCategory::BestEffort,
            mld_seq: 0,
            origin: NodeId::default(),
            created_at: SimTime::ZERO,
            id: 0,
            flow: None,
        }
    }

    /// EtherType as it appears right after SA on the wire.
    pub fn outer_ether_type(&self) -> u16 {
        if self.y_tag.is_some() {
            YTag::ETHER_TYPE
        } else {
            self.ether_type
        }
    }

    pub fn wire_len(&self) -> usize {
        MAC_HDR + 2 + self.y_tag.map_or(0, |_| YTag::LEN) + self.payload.len()
    }

    /// Serializes the wire-visible fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.da.0);
        out.extend_from_slice(&self.sa.0);
        if let Some(tag) = &self.y_tag {
            out.extend_from_slice(&tag.to_bytes());
        }
        out.extend_from_slice(&self.ether_type.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses wire bytes, tagged or not. Metadata fields are left at their
    /// defaults except `mld_seq`, which takes the tag's sequence number.
    pub fn from_bytes(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < MAC_HDR + 2 {
            return Err(FrameError::Malformed("shorter than an Ethernet header"));
        }
        let mut da = [0u8; 6];
        let mut sa = [0u8; 6];
        da.copy_from_slice(&bytes[0..6]);
        sa.copy_from_slice(&bytes[6..12]);
        let mut rest = &bytes[MAC_HDR..];
        let mut y_tag = None;
        if u16::from_be_bytes([rest[0], rest[1]]) == YTag::ETHER_TYPE {
            let tag = YTag::parse(rest)?;
            rest = &rest[YTag::LEN..];
            if rest.len() < 2 {
                return Err(FrameError::Malformed("missing EtherType after Y-TAG"));
            }
            y_tag = Some(tag);
        }
        let ether_type = u16::from_be_bytes([rest[0], rest[1]]);
        if ether_type == YTag::ETHER_TYPE {
            return Err(FrameError::NestedTag);
        }
        let mut f = Frame::new(MacAddress(da), MacAddress(sa), rest[2..].to_vec());
        f.ether_type = ether_type;
        if let Some(t) = y_tag {
            f.mld_seq = t.seq;
        }
        f.y_tag = y_tag;
        Ok(f)
    }

    /// Copies simulator metadata from `other`.
    pub fn with_meta_of(mut self, other: &Frame) -> Frame {
        self.rc = other.rc;
        self.ac = other.ac;
        self.mld_seq = other.mld_seq;
        self.origin = other.origin;
        self.created_at = other.created_at;
        self.id = other.id;
        self.flow = other.flow;
        self
    }

    /// In-memory equivalent of [`encode_ytag`]: returns a tagged copy with
    /// the given outer addresses.
    pub fn tagged(&self, outer_da: MacAddress, outer_sa: MacAddress, tag: YTag) -> Result<Frame, FrameError> {
        if self.y_tag.is_some() || self.ether_type == YTag::ETHER_TYPE {
            return Err(FrameError::NestedTag);
        }
        let mut f = self.clone();
        f.da = outer_da;
        f.sa = outer_sa;
        f.y_tag = Some(tag);
        Ok(f)
    }
}

/// Inserts a Y-TAG after SA and serializes the frame.
pub fn encode_ytag(frame: &Frame, na: MacAddress, seq: u16) -> Result<Vec<u8>, FrameError> {
    encode_with_tag(frame, &YTag::new(na, seq))
}

pub fn encode_with_tag(frame: &Frame, tag: &YTag) -> Result<Vec<u8>, FrameError> {
    if frame.y_tag.is_some() || frame.ether_type == YTag::ETHER_TYPE {
        return Err(FrameError::NestedTag);
    }
    let mut f = frame.clone();
    f.y_tag = Some(*tag);
    Ok(f.to_bytes())
}

/// Parses a tagged frame, removes the tag and rebuilds the original frame
/// with `DA := NA`.
pub fn decode_ytag(bytes: &[u8]) -> Result<(Frame, YTag), FrameError> {
    if bytes.len() < MAC_HDR + 2 {
        return Err(FrameError::Malformed("shorter than an Ethernet header"));
    }
    let et = u16::from_be_bytes([bytes[MAC_HDR], bytes[MAC_HDR + 1]]);
    if et != YTag::ETHER_TYPE {
        return Err(FrameError::NotAYTag(et));
    }
    let mut f = Frame::from_bytes(bytes)?;
    let tag = f.y_tag.take().ok_or(FrameError::Malformed("missing Y-TAG"))?;
    f.da = tag.na;
    Ok((f, tag))
}

/// Decodes a tagged in-simulation frame through the wire codec, keeping the
/// simulator metadata of the relayed copy.
pub fn untag(frame: &Frame) -> Result<(Frame, YTag), FrameError> {
    let (f, tag) = decode_ytag(&frame.to_bytes())?;
    let mut f = f.with_meta_of(frame);
    f.mld_seq = tag.seq;
    Ok((f, tag))
}

/// Affiliated-link information advertised by a multi-link device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffiliatedInfo {
    pub link_id: u8,
    pub channel: u16,
    pub mac: MacAddress,
}

/// Structured multi-link element (not serialized to bits).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiLinkElement {
    pub mld_id: NodeId,
    pub affiliated: Vec<AffiliatedInfo>,
    pub primary_sta: usize,
}

impl MultiLinkElement {
    pub fn primary_mac(&self) -> MacAddress {
        self.affiliated[self.primary_sta].mac
    }

    pub fn link_of(&self, mac: MacAddress) -> Option<usize> {
        self.affiliated.iter().position(|a| a.mac == mac)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.primary_sta >= self.affiliated.len() {
            return Err(format!("primary index {} out of range", self.primary_sta));
        }
        for (i, a) in self.affiliated.iter().enumerate() {
            if self.affiliated[..i].iter().any(|b| b.mac == a.mac) {
                return Err(format!("duplicate affiliated MAC {}", a.mac));
            }
        }
        Ok(())
    }
}

/// Where a relayed frame leaves the AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Egress {
    Ethernet,
    /// Over the air to the HR STA's affiliated link with this index.
    Air { link: usize },
}

/// Address rewriting that hides multi-link redundancy from the rest of the
/// network: towards Ethernet the SA becomes the primary STA's MAC, towards
/// the air the DA becomes the MAC of the affiliated STA actually receiving.
pub fn rewrite_egress(frame: &Frame, mle: &MultiLinkElement, egress: Egress) -> Result<Frame, FrameError> {
    let mut out = frame.clone();
    match egress {
        Egress::Ethernet => {
            mle.link_of(frame.sa)
                .ok_or(FrameError::NoAssociation(frame.sa, mle.mld_id))?;
            out.sa = mle.primary_mac();
        }
        Egress::Air { link } => {
            mle.link_of(frame.da)
                .ok_or(FrameError::NoAssociation(frame.da, mle.mld_id))?;
            let info = mle.affiliated.get(link).ok_or(FrameError::NoSuchLink(link))?;
            out.da = info.mac;
        }
    }
    Ok(out)
}
