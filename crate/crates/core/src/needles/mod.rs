//! Expansion of the device PII profile into the search dictionary.

pub mod pii;
pub mod transform;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::codec;
use crate::error::{Error, Result};
pub use pii::{Category, ContentColumn, DataType, KnownType, Protection, Purpose};
pub use transform::{apply_chain, Transform};

/// Patterns shorter than this are rejected as noise.
pub const MIN_NEEDLE_LEN: usize = 4;

/// Latitude and longitude must both match inside a window of this many bytes.
pub const GPS_WINDOW: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiEntry {
    pub data_type: DataType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default)]
    pub values: Vec<String>,
}

/// A decimal-degree coordinate kept as text so truncation never goes
/// through floating point rounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coordinate(pub String);

impl<'de> Deserialize<'de> for Coordinate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(Coordinate(s.trim().to_string())),
            serde_json::Value::Number(n) => Ok(Coordinate(n.to_string())),
            other => Err(serde::de::Error::custom(format!("coordinate must be a string or number, got {other}"))),
        }
    }
}

impl Coordinate {
    /// Truncates (never rounds) to `decimals` places; `None` when the value
    /// carries fewer decimals than requested.
    pub fn truncated(&self, decimals: usize) -> Option<String> {
        let (int, frac) = self.0.split_once('.')?;
        (frac.len() >= decimals).then(|| format!("{int}.{}", &frac[..decimals]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat: Coordinate,
    pub lon: Coordinate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaSample {
    pub name: String,
    #[serde(with = "codec::b64")]
    pub leading_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiProfile {
    #[serde(default)]
    pub entries: Vec<PiiEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<GpsFix>,
    #[serde(default)]
    pub media_samples: Vec<MediaSample>,
}

impl PiiProfile {
    /// Checks category/purpose labels against the data-type table and the
    /// coordinate syntax.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.data_type.is_gps() {
                return Err(Error::InvalidProfile(format!(
                    "`{}` is derived from the gps field and cannot be listed as an entry",
                    e.data_type
                )));
            }
            if let Some(c) = e.category {
                if c != e.data_type.category() {
                    return Err(Error::InvalidProfile(format!(
                        "`{}` has category {:?}, expected {:?}",
                        e.data_type,
                        c,
                        e.data_type.category()
                    )));
                }
            }
            if let Some(p) = e.purpose {
                if p != e.data_type.purpose() {
                    return Err(Error::InvalidProfile(format!(
                        "`{}` has purpose {:?}, expected {:?}",
                        e.data_type,
                        p,
                        e.data_type.purpose()
                    )));
                }
            }
        }
        if let Some(gps) = &self.gps {
            for (axis, c, limit) in [("lat", &gps.lat, 90.0), ("lon", &gps.lon, 180.0)] {
                let v: f64 = c
                    .0
                    .parse()
                    .map_err(|_| Error::InvalidProfile(format!("{axis} `{}` is not a decimal number", c.0)))?;
                if !(-limit..=limit).contains(&v) {
                    return Err(Error::InvalidProfile(format!("{axis} `{}` out of range", c.0)));
                }
            }
        }
        Ok(())
    }

    /// Values typed into password fields, used to confirm password findings.
    pub fn password_inputs(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.data_type.is_password_input())
            .flat_map(|e| e.values.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpsTier {
    /// Five decimals, the `<=7 m` row.
    Fine,
    /// Four decimals, the 78 m row.
    Medium,
    /// Three decimals, the 787 m row.
    Coarse,
}

impl GpsTier {
    pub const ALL: [GpsTier; 3] = [GpsTier::Fine, GpsTier::Medium, GpsTier::Coarse];

    pub fn decimals(self) -> usize {
        match self {
            GpsTier::Fine => 5,
            GpsTier::Medium => 4,
            GpsTier::Coarse => 3,
        }
    }

    pub fn data_type(self) -> DataType {
        DataType::Known(match self {
            GpsTier::Fine => KnownType::Gps7m,
            GpsTier::Medium => KnownType::Gps78m,
            GpsTier::Coarse => KnownType::Gps787m,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lat,
    Lon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GpsTag {
    pub tier: GpsTier,
    pub axis: Axis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Needle {
    pub id: usize,
    pub pii_type: DataType,
    pub source_value: String,
    pub chain: Vec<Transform>,
    #[serde(with = "codec::b64")]
    pub pattern: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<GpsTag>,
}

impl fmt::Display for Needle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chain: Vec<String> = self
            .chain
            .iter()
            .map(|t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .collect();
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.pii_type,
            if chain.is_empty() { "identity".to_string() } else { chain.join("+") },
            self.source_value,
            codec::printable(&self.pattern)
        )
    }
}

/// Every transform chain considered, in canonical order: identity, each
/// single transform, then (case | raw digest) followed by an encoding.
pub fn transform_chains() -> Vec<Vec<Transform>> {
    let mut chains = vec![Vec::new()];
    chains.extend(Transform::ALL.iter().map(|t| vec![*t]));
    for first in Transform::ALL.iter().filter(|t| t.is_case() || t.is_raw_digest()) {
        for second in Transform::ALL.iter().filter(|t| t.is_encoding()) {
            chains.push(vec![*first, *second]);
        }
    }
    chains
}

struct Builder {
    needles: Vec<Needle>,
    seen: HashSet<Vec<u8>>,
    chains: Vec<Vec<Transform>>,
}

impl Builder {
    fn new() -> Self {
        Builder { needles: Vec::new(), seen: HashSet::new(), chains: transform_chains() }
    }

    fn add_value(&mut self, pii_type: &DataType, value: &str, gps: Option<GpsTag>) {
        let short = value.chars().count() < MIN_NEEDLE_LEN;
        for chain in &self.chains {
            if short && !chain.iter().any(|t| t.is_digest()) {
                continue;
            }
            let pattern = apply_chain(chain, value.as_bytes());
            if pattern.len() < MIN_NEEDLE_LEN || !self.seen.insert(pattern.clone()) {
                continue;
            }
            self.needles.push(Needle {
                id: self.needles.len(),
                pii_type: pii_type.clone(),
                source_value: value.to_string(),
                chain: chain.clone(),
                pattern,
                gps,
            });
        }
    }
}

/// Expands every profile value (and the GPS fix, if any) into needles.
/// Needles are numbered in generation order; the first needle producing a
/// given pattern wins.
pub fn build_needle_set(profile: &PiiProfile) -> Vec<Needle> {
    let mut b = Builder::new();
    for entry in &profile.entries {
        for value in &entry.values {
            if !value.is_empty() {
                b.add_value(&entry.data_type, value, None);
            }
        }
    }
    if let Some(gps) = &profile.gps {
        add_gps(&mut b, gps);
    }
    b.needles
}

fn add_gps(b: &mut Builder, gps: &GpsFix) {
    for tier in GpsTier::ALL {
        for (axis, coord) in [(Axis::Lat, &gps.lat), (Axis::Lon, &gps.lon)] {
            if let Some(text) = coord.truncated(tier.decimals()) {
                b.add_value(&tier.data_type(), &text, Some(GpsTag { tier, axis }));
            }
        }
    }
}

/// The GPS needles for one fix, finest tier first.
pub fn gps_precision_variants(lat: &Coordinate, lon: &Coordinate) -> Vec<Needle> {
    let mut b = Builder::new();
    add_gps(&mut b, &GpsFix { lat: lat.clone(), lon: lon.clone() });
    b.needles
}

/// Re-applies every chain and confirms it reproduces the stored pattern.
pub fn self_check(needles: &[Needle]) -> std::result::Result<(), String> {
    for n in needles {
        if apply_chain(&n.chain, n.source_value.as_bytes()) != n.pattern {
            return Err(format!("needle {} does not reproduce its pattern", n.id));
        }
        if n.pattern.len() < MIN_NEEDLE_LEN {
            return Err(format!("needle {} is shorter than {MIN_NEEDLE_LEN} bytes", n.id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: &str, values: &[&str]) -> PiiEntry {
        PiiEntry {
            data_type: t.parse().unwrap(),
            category: None,
            purpose: None,
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    fn coord(s: &str) -> Coordinate {
        Coordinate(s.into())
    }

    #[test]
    fn chain_inventory() {
        let chains = transform_chains();
        // identity + 11 singles + (3 case + 3 raw digests) x 2 encodings
        assert_eq!(chains.len(), 1 + 11 + 12);
        assert!(chains.iter().all(|c| c.len() <= 2));
    }

    #[test]
    fn base64_of_input_email() {
        let p = PiiProfile { entries: vec![entry("Input (email)", &["mymail@email.com"])], ..Default::default() };
        let set = build_needle_set(&p);
        assert!(set.iter().any(|n| n.pattern == b"bXltYWlsQGVtYWlsLmNvbQ==" && n.chain == [Transform::Base64]));
        self_check(&set).unwrap();
    }

    #[test]
    fn md5_hex_of_mobile() {
        let p = PiiProfile { entries: vec![entry("Input (mobile)", &["9158888888"])], ..Default::default() };
        let set = build_needle_set(&p);
        let n = set.iter().find(|n| n.chain == [Transform::Md5Hex]).unwrap();
        assert_eq!(n.pattern.len(), 32);
        assert!(n.pattern.iter().all(|b| b.is_ascii_hexdigit()));
    }

    #[test]
    fn short_values_only_digests() {
        let p = PiiProfile { entries: vec![entry("Device Name", &["abc"])], ..Default::default() };
        let set = build_needle_set(&p);
        assert!(!set.is_empty());
        assert!(set.iter().all(|n| n.chain.iter().any(|t| t.is_digest())));
    }

    #[test]
    fn patterns_are_unique() {
        let p = PiiProfile {
            entries: vec![entry("Device ID", &["abcdef0123456789", "abcdef0123456789"])],
            ..Default::default()
        };
        let set = build_needle_set(&p);
        let uniq: HashSet<_> = set.iter().map(|n| n.pattern.clone()).collect();
        assert_eq!(uniq.len(), set.len());
        // lower is identical to identity for this value and is dropped
        assert!(!set.iter().any(|n| n.chain == [Transform::Lower]));
    }

    #[test]
    fn gps_truncation_tiers() {
        let v = gps_precision_variants(&coord("45.5012345"), &coord("-73.5612345"));
        let plain = |tier, axis| {
            v.iter()
                .find(|n| n.chain.is_empty() && n.gps == Some(GpsTag { tier, axis }))
                .map(|n| String::from_utf8(n.pattern.clone()).unwrap())
        };
        assert_eq!(plain(GpsTier::Fine, Axis::Lat).as_deref(), Some("45.50123"));
        assert_eq!(plain(GpsTier::Fine, Axis::Lon).as_deref(), Some("-73.56123"));
        assert_eq!(plain(GpsTier::Medium, Axis::Lat).as_deref(), Some("45.5012"));
        assert_eq!(plain(GpsTier::Medium, Axis::Lon).as_deref(), Some("-73.5612"));
        assert_eq!(plain(GpsTier::Coarse, Axis::Lat).as_deref(), Some("45.501"));
    }

    #[test]
    fn coordinate_needs_enough_decimals() {
        assert_eq!(coord("45.50").truncated(3), None);
        assert_eq!(coord("45.509").truncated(3).as_deref(), Some("45.509"));
    }

    #[test]
    fn validation_rejects_mislabeled_entries() {
        let mut e = entry("Device ID", &["x"]);
        e.category = Some(Category::GpsLocation);
        let p = PiiProfile { entries: vec![e], ..Default::default() };
        assert!(p.validate().is_err());

        let gps_row = PiiProfile { entries: vec![entry("GPS (78 meter accuracy)", &["1.2"])], ..Default::default() };
        assert!(gps_row.validate().is_err());

        let bad_lat = PiiProfile {
            gps: Some(GpsFix { lat: coord("91.0"), lon: coord("0.0") }),
            ..Default::default()
        };
        assert!(bad_lat.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let p = PiiProfile {
            entries: vec![entry("WiFi MAC", &["3c:28:6d:1a:2b:4f"]), entry("Operator", &["Fido Solutions"])],
            gps: Some(GpsFix { lat: coord("45.5012345"), lon: coord("-73.5612345") }),
            media_samples: Vec::new(),
        };
        assert_eq!(build_needle_set(&p), build_needle_set(&p));
    }
}
