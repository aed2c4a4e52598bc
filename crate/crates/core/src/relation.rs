//! In-memory pre-joined relations and their on-disk form: a JSON manifest
//! plus one little-endian `u32` column file per attribute.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{AttrKind, Attribute, Schema};
use crate::microcode::AttrId;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "bbpim-relation/1";

/// Functional dependencies from a leaf attribute to coarser ones, e.g.
/// city -> nation -> region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub leaf: String,
    /// Smallest leaf value; `derived[a][v - leaf_min]` is attribute `a`'s
    /// value for leaf value `v`.
    pub leaf_min: u32,
    pub derived: BTreeMap<String, Vec<u32>>,
}

impl Hierarchy {
    pub fn leaf_domain(&self) -> std::ops::Range<u32> {
        let n = self.derived.values().next().map_or(0, Vec::len) as u32;
        self.leaf_min..self.leaf_min + n
    }

    pub fn contains(&self, name: &str) -> bool {
        self.leaf == name || self.derived.contains_key(name)
    }

    /// Value of `name` for leaf value `leaf`.
    pub fn value(&self, name: &str, leaf: u32) -> Option<u32> {
        if name == self.leaf {
            return Some(leaf);
        }
        self.derived.get(name)?.get(leaf.checked_sub(self.leaf_min)? as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMeta {
    #[serde(flatten)]
    pub attribute: Attribute,
    /// Inclusive value range.
    pub domain: (u32, u32),
    /// Sorted dictionary; codes are indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub format: String,
    pub record_count: usize,
    pub attributes: Vec<AttributeMeta>,
    #[serde(default)]
    pub hierarchies: Vec<Hierarchy>,
}

impl Catalog {
    pub fn schema(&self) -> Schema {
        Schema::new(self.attributes.iter().map(|m| m.attribute.clone()).collect())
    }

    pub fn index_of(&self, name: &str) -> Result<AttrId> {
        self.attributes
            .iter()
            .position(|m| m.attribute.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn meta(&self, id: AttrId) -> &AttributeMeta {
        &self.attributes[id]
    }

    pub fn name(&self, id: AttrId) -> &str {
        &self.attributes[id].attribute.name
    }

    pub fn hierarchy_of(&self, name: &str) -> Option<&Hierarchy> {
        self.hierarchies.iter().find(|h| h.contains(name))
    }

    /// Encodes a quoted literal for `attr`: dictionary lookup for
    /// categorical attributes, `YYYY-MM-DD` for dates.
    pub fn encode_literal(&self, attr: AttrId, text: &str) -> Result<u64> {
        let m = self.meta(attr);
        let err = |msg: String| Error::Literal { attr: m.attribute.name.clone(), msg };
        match m.attribute.kind {
            AttrKind::Categorical => {
                let dict = m.dictionary.as_ref().ok_or_else(|| err("no dictionary".into()))?;
                dict.binary_search_by(|s| s.as_str().cmp(text))
                    .map(|i| i as u64)
                    .map_err(|_| err(format!("'{text}' is not in the dictionary")))
            }
            AttrKind::Date => parse_date(text).map(|d| d as u64).ok_or_else(|| err(format!("'{text}' is not a YYYY-MM-DD date"))),
            AttrKind::Integer => text.parse().map_err(|_| err(format!("'{text}' is not an integer"))),
        }
    }

    /// Inverse of [`Catalog::encode_literal`] where a textual form exists.
    pub fn decode_literal(&self, attr: AttrId, code: u64) -> Option<String> {
        let m = self.meta(attr);
        match m.attribute.kind {
            AttrKind::Categorical => m.dictionary.as_ref()?.get(code as usize).cloned(),
            AttrKind::Date => Some(format_date(code as u32)),
            AttrKind::Integer => None,
        }
    }
}

/// A pre-joined relation held column by column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub catalog: Catalog,
    pub columns: Vec<Vec<u32>>,
}

impl Relation {
    pub fn len(&self) -> usize {
        self.catalog.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, attr: AttrId, record: usize) -> u64 {
        self.columns[attr][record] as u64
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.catalog)? + "\n";
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        for (meta, col) in self.catalog.attributes.iter().zip(&self.columns) {
            let path = dir.join(format!("{}.bin", meta.attribute.name));
            let bytes: Vec<u8> = col.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let catalog: Catalog = serde_json::from_str(&text)?;
        if catalog.format != FORMAT_TAG {
            return Err(Error::Format(format!("unsupported relation format '{}'", catalog.format)));
        }
        let mut columns = Vec::with_capacity(catalog.attributes.len());
        for meta in &catalog.attributes {
            let path = dir.join(format!("{}.bin", meta.attribute.name));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != catalog.record_count * 4 {
                return Err(Error::Format(format!(
                    "{} holds {} bytes, expected {}",
                    path.display(),
                    bytes.len(),
                    catalog.record_count * 4
                )));
            }
            columns.push(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect());
        }
        Ok(Self { catalog, columns })
    }
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
pub fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}

pub fn parse_date(text: &str) -> Option<u32> {
    let mut it = text.split('-');
    let y: i64 = it.next()?.parse().ok()?;
    let m: u32 = it.next()?.parse().ok()?;
    let d: u32 = it.next()?.parse().ok()?;
    if it.next().is_some() || !(1..=12).contains(&m) || d == 0 {
        return None;
    }
    let days = days_from_civil(y, m, d);
    // Reject day overflow such as 1997-02-30.
    (civil_from_days(days) == (y, m, d)).then_some(u32::try_from(days).ok()?)
}

pub fn format_date(days: u32) -> String {
    let (y, m, d) = civil_from_days(days as i64);
    format!("{y:04}-{m:02}-{d:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Relation {
        let attrs = vec![
            AttributeMeta {
                attribute: Attribute::new("city", 2, AttrKind::Categorical, "customer"),
                domain: (0, 2),
                dictionary: Some(vec!["ALGIERS".into(), "LIMA".into(), "OSLO".into()]),
            },
            AttributeMeta {
                attribute: Attribute::new("day", 15, AttrKind::Date, "fact"),
                domain: (8035, 8036),
                dictionary: None,
            },
        ];
        Relation {
            catalog: Catalog {
                format: FORMAT_TAG.into(),
                record_count: 3,
                attributes: attrs,
                hierarchies: vec![Hierarchy {
                    leaf: "city".into(),
                    leaf_min: 0,
                    derived: BTreeMap::from([("continent".to_string(), vec![0, 1, 2])]),
                }],
            },
            columns: vec![vec![2, 0, 1], vec![8035, 8036, 8035]],
        }
    }

    #[test]
    fn dates() {
        assert_eq!(parse_date("1970-01-01"), Some(0));
        assert_eq!(parse_date("1992-01-01"), Some(8035));
        assert_eq!(parse_date("1998-12-31"), Some(10591));
        assert_eq!(parse_date("1997-02-30"), None);
        assert_eq!(format_date(10591), "1998-12-31");
        for d in 8000..11000 {
            assert_eq!(parse_date(&format_date(d)), Some(d));
        }
    }

    #[test]
    fn literals() {
        let r = sample();
        assert_eq!(r.catalog.encode_literal(0, "LIMA").unwrap(), 1);
        assert!(matches!(r.catalog.encode_literal(0, "PARIS"), Err(Error::Literal { .. })));
        assert_eq!(r.catalog.encode_literal(1, "1992-01-02").unwrap(), 8036);
        assert_eq!(r.catalog.decode_literal(0, 2).as_deref(), Some("OSLO"));
        assert_eq!(r.catalog.hierarchy_of("continent").unwrap().value("continent", 2), Some(2));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        r.write(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("day.bin")).unwrap().len(), 12);
        assert_eq!(Relation::read(dir.path()).unwrap(), r);
        fs::write(dir.path().join("city.bin"), [0u8; 5]).unwrap();
        assert!(matches!(Relation::read(dir.path()), Err(Error::Format(_))));
    }
}
