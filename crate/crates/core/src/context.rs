//! Context space of SIP headers and the distance metric over it.
//!
//! A context is a vector of 16 text attributes extracted from a SIP INVITE
//! (source IPs, contact user/host parts, vias, user-agent, codec, port).
//! The distance between two headers is `0` when all 16 attributes match and
//! `2^-agreement` otherwise, where `agreement` counts the attributes that
//! compare equal as exact strings. The metric is symmetric, non-negative and
//! zero exactly on identical headers; it deliberately does NOT satisfy the
//! triangle inequality, and nothing in this crate assumes it does.
//!
//! Headers are interned: every distinct header gets a stable [`HeaderId`]
//! and a [`HeaderKey`] of per-attribute symbol ids, so agreement between two
//! headers reduces to comparing 16 integers instead of 16 strings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of attribute slots in a header.
pub const ATTRIBUTE_COUNT: usize = 16;

/// A context point: exactly 16 text attributes. Empty strings are allowed,
/// missing slots are not. Equality is exact byte equality of all slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SipHeader {
    attributes: Box<[String; ATTRIBUTE_COUNT]>,
}

impl SipHeader {
    pub fn new(attributes: [String; ATTRIBUTE_COUNT]) -> Self {
        SipHeader {
            attributes: Box::new(attributes),
        }
    }

    /// Builds a header from a slice, rejecting anything but exactly 16 slots.
    pub fn from_slice(attributes: &[String]) -> Result<Self> {
        let arr: [String; ATTRIBUTE_COUNT] = attributes
            .to_vec()
            .try_into()
            .map_err(|v: Vec<String>| {
                Error::config(format!(
                    "header must have exactly {ATTRIBUTE_COUNT} attributes, got {}",
                    v.len()
                ))
            })?;
        Ok(SipHeader::new(arr))
    }

    pub fn attributes(&self) -> &[String; ATTRIBUTE_COUNT] {
        &self.attributes
    }
}

/// Number of attribute positions where `x` and `y` hold identical strings.
/// Symmetric; 16 means the headers are equal.
pub fn hamming_agreement(x: &SipHeader, y: &SipHeader) -> u32 {
    x.attributes
        .iter()
        .zip(y.attributes.iter())
        .filter(|(a, b)| a == b)
        .count() as u32
}

/// Distance between two headers: 0 when all 16 attributes agree, otherwise
/// `2^-agreement`. Range is exactly `{0} ∪ {2^-k : k = 0..15}`.
pub fn distance(x: &SipHeader, y: &SipHeader) -> f64 {
    agreement_to_distance(hamming_agreement(x, y))
}

/// Maps an agreement count in `[0, 16]` to the metric value.
pub fn agreement_to_distance(agreement: u32) -> f64 {
    debug_assert!(agreement <= ATTRIBUTE_COUNT as u32);
    if agreement >= ATTRIBUTE_COUNT as u32 {
        0.0
    } else {
        // Exact binary power: 1 / 2^agreement.
        1.0 / (1u64 << agreement) as f64
    }
}

/// Stable identifier of an interned header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeaderId(pub u32);

/// Per-attribute symbol ids of an interned header. Two keys are equal iff
/// the underlying headers are equal, and slotwise id equality coincides with
/// slotwise string equality, so agreement can be computed on keys alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HeaderKey(pub(crate) [u32; ATTRIBUTE_COUNT]);

impl HeaderKey {
    pub fn agreement(&self, other: &HeaderKey) -> u32 {
        let mut same = 0u32;
        for i in 0..ATTRIBUTE_COUNT {
            same += (self.0[i] == other.0[i]) as u32;
        }
        same
    }

    pub fn distance(&self, other: &HeaderKey) -> f64 {
        agreement_to_distance(self.agreement(other))
    }

    pub(crate) fn slots(&self) -> &[u32; ATTRIBUTE_COUNT] {
        &self.0
    }

    pub(crate) fn from_slots(slots: [u32; ATTRIBUTE_COUNT]) -> Self {
        HeaderKey(slots)
    }
}

/// An interned header as passed to learners: id plus comparison key.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Context {
    pub id: HeaderId,
    pub key: HeaderKey,
}

/// Interner for headers and their attribute strings.
///
/// Immutable once a corpus is built; shared read-only across replicate runs.
#[derive(Clone, Debug, Default)]
pub struct HeaderSpace {
    attr_ids: HashMap<String, u32>,
    headers: Vec<SipHeader>,
    keys: Vec<HeaderKey>,
    ids: HashMap<HeaderKey, HeaderId>,
}

impl HeaderSpace {
    pub fn new() -> Self {
        HeaderSpace::default()
    }

    /// Interns a header, returning the existing id when an equal header was
    /// seen before.
    pub fn intern(&mut self, header: SipHeader) -> HeaderId {
        let mut slots = [0u32; ATTRIBUTE_COUNT];
        for (slot, attr) in slots.iter_mut().zip(header.attributes().iter()) {
            *slot = match self.attr_ids.get(attr) {
                Some(&id) => id,
                None => {
                    let id = self.attr_ids.len() as u32;
                    self.attr_ids.insert(attr.clone(), id);
                    id
                }
            };
        }
        let key = HeaderKey(slots);
        if let Some(&id) = self.ids.get(&key) {
            return id;
        }
        let id = HeaderId(self.headers.len() as u32);
        self.headers.push(header);
        self.keys.push(key);
        self.ids.insert(key, id);
        id
    }

    pub fn len(&self) -> usize {
        self.headers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty()
    }

    pub fn header(&self, id: HeaderId) -> &SipHeader {
        &self.headers[id.0 as usize]
    }

    pub fn key(&self, id: HeaderId) -> HeaderKey {
        self.keys[id.0 as usize]
    }

    pub fn context(&self, id: HeaderId) -> Context {
        Context {
            id,
            key: self.keys[id.0 as usize],
        }
    }
}

/// Ground-truth class of a simulated call. Hidden from learners; only the
/// environment and the metrics accounting ever see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallClass {
    Normal,
    Honeypot,
    Voipbot,
    Warvox,
    Spitter,
}

impl CallClass {
    pub const ALL: [CallClass; 5] = [
        CallClass::Normal,
        CallClass::Honeypot,
        CallClass::Voipbot,
        CallClass::Warvox,
        CallClass::Spitter,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CallClass::Normal => "normal",
            CallClass::Honeypot => "honeypot",
            CallClass::Voipbot => "voipbot",
            CallClass::Warvox => "warvox",
            CallClass::Spitter => "spitter",
        }
    }

    pub fn from_label(label: &str) -> Option<CallClass> {
        CallClass::ALL.into_iter().find(|c| c.label() == label)
    }

    /// Every class except `normal` counts as SPIT (honeypot traffic is
    /// unsolicited scanning and is blocked like the rest).
    pub fn is_spit(self) -> bool {
        !matches!(self, CallClass::Normal)
    }

    pub fn index(self) -> usize {
        match self {
            CallClass::Normal => 0,
            CallClass::Honeypot => 1,
            CallClass::Voipbot => 2,
            CallClass::Warvox => 3,
            CallClass::Spitter => 4,
        }
    }
}

impl std::fmt::Display for CallClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}
