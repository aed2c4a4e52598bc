//! Placement of a pre-joined relation onto crossbar rows.
//!
//! Each record occupies one row (one-xb) or the same row of two aligned
//! crossbars (two-xb). Attributes are packed in declaration order on
//! granule boundaries; every partition then reserves its work columns.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::device::{PageId, PimDevice};
use crate::error::{Error, Result};
use crate::fabric::GRANULE_BITS;
use crate::microcode::{AttrColumns, AttrId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Integer,
    /// Day number (days since 1970-01-01).
    Date,
    /// Dictionary code.
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub width_bits: usize,
    pub kind: AttrKind,
    /// `"fact"` or the name of the dimension it came from.
    pub origin: String,
}

impl Attribute {
    pub fn new(name: &str, width_bits: usize, kind: AttrKind, origin: &str) -> Self {
        Self { name: name.to_string(), width_bits, kind, origin: origin.to_string() }
    }

    pub fn is_fact(&self) -> bool {
        self.origin == "fact"
    }

    /// Width rounded up to whole granules.
    pub fn padded_width(&self) -> usize {
        self.width_bits.div_ceil(GRANULE_BITS) * GRANULE_BITS
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Self {
        Self { attributes }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<AttrId> {
        self.attributes.iter().position(|a| a.name == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attr(&self, id: AttrId) -> &Attribute {
        &self.attributes[id]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutMode {
    #[default]
    OneXb,
    TwoXb,
}

impl LayoutMode {
    pub fn name(self) -> &'static str {
        match self {
            LayoutMode::OneXb => "one-xb",
            LayoutMode::TwoXb => "two-xb",
        }
    }

    pub fn partitions(self) -> usize {
        match self {
            LayoutMode::OneXb => 1,
            LayoutMode::TwoXb => 2,
        }
    }
}

impl std::str::FromStr for LayoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-xb" => Ok(LayoutMode::OneXb),
            "two-xb" => Ok(LayoutMode::TwoXb),
            _ => Err(Error::Format(format!("unknown layout '{s}' (expected one-xb or two-xb)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSlot {
    pub partition: usize,
    pub col_start: usize,
    pub width: usize,
}

/// Reserved columns of one partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkColumns {
    /// Filter result. Shares its granule with `valid` and `host_filter`.
    pub filter: usize,
    /// 1 for rows holding a record.
    pub valid: usize,
    /// Filter minus the subgroups already aggregated in PIM.
    pub host_filter: usize,
    /// Subgroup select mask.
    pub mask: usize,
    /// Union of the PIM-aggregated subgroup masks.
    pub covered: usize,
    /// Landing granule for bit-vectors moved in from another partition.
    pub xfer: usize,
    pub dst_start: usize,
    pub dst_width: usize,
    pub scratch: Vec<usize>,
}

impl WorkColumns {
    pub fn dst_granules(&self) -> usize {
        self.dst_width / GRANULE_BITS
    }
}

/// Smallest scratch pool a partition is allowed.
pub const MIN_SCRATCH: usize = 16;
/// Widest value the aggregation ALU accepts.
pub const MAX_AGG_BITS: usize = 48;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub mode: LayoutMode,
    pub cols: usize,
    pub slots: Vec<AttrSlot>,
    pub work: Vec<WorkColumns>,
}

/// Attribute lookup restricted to one partition.
pub struct PartitionView<'a> {
    placement: &'a Placement,
    partition: usize,
}

impl AttrColumns for PartitionView<'_> {
    fn locate(&self, attr: AttrId) -> Option<(usize, usize)> {
        let s = self.placement.slots.get(attr)?;
        (s.partition == self.partition).then_some((s.col_start, s.width))
    }
}

/// Assigns every attribute a partition and granule-aligned column range,
/// then reserves work columns after the data.
pub fn place(schema: &Schema, mode: LayoutMode, cols: usize) -> Result<Placement> {
    let partition_of = |a: &Attribute| match mode {
        LayoutMode::OneXb => 0,
        LayoutMode::TwoXb => usize::from(!a.is_fact()),
    };
    let mut next = vec![0usize; mode.partitions()];
    let mut agg_width = vec![GRANULE_BITS; mode.partitions()];
    let mut slots = Vec::with_capacity(schema.len());
    for a in &schema.attributes {
        if a.width_bits == 0 || a.width_bits > 64 {
            return Err(Error::Format(format!("attribute {} has unsupported width {}", a.name, a.width_bits)));
        }
        let p = partition_of(a);
        slots.push(AttrSlot { partition: p, col_start: next[p], width: a.width_bits });
        next[p] += a.padded_width();
        if a.kind == AttrKind::Integer && a.padded_width() <= MAX_AGG_BITS {
            agg_width[p] = agg_width[p].max(a.padded_width());
        }
    }
    let mut work = Vec::new();
    for (p, &data) in next.iter().enumerate() {
        let g = GRANULE_BITS;
        let dst_width = agg_width[p] + g;
        let reserved = 3 * g + dst_width;
        let needed = data + reserved + MIN_SCRATCH;
        if needed > cols {
            return Err(Error::Overflow(format!(
                "{} partition {p} needs {needed} bits ({data} data + {} reserved), row holds {cols}",
                mode.name(),
                reserved + MIN_SCRATCH
            )));
        }
        let (f, m, x) = (data, data + g, data + 2 * g);
        let dst_start = data + 3 * g;
        work.push(WorkColumns {
            filter: f,
            valid: f + 1,
            host_filter: f + 2,
            mask: m,
            covered: m + 1,
            xfer: x,
            dst_start,
            dst_width,
            scratch: (dst_start + dst_width..cols).collect(),
        });
    }
    Ok(Placement { mode, cols, slots, work })
}

impl Placement {
    pub fn partitions(&self) -> usize {
        self.work.len()
    }

    pub fn slot(&self, attr: AttrId) -> Result<AttrSlot> {
        self.slots.get(attr).copied().ok_or_else(|| Error::UnknownAttribute(format!("#{attr}")))
    }

    pub fn partition_of(&self, attr: AttrId) -> Result<usize> {
        Ok(self.slot(attr)?.partition)
    }

    pub fn view(&self, partition: usize) -> PartitionView<'_> {
        PartitionView { placement: self, partition }
    }

    pub fn columns(&self) -> HashMap<AttrId, (usize, usize)> {
        self.slots.iter().enumerate().map(|(i, s)| (i, (s.col_start, s.width))).collect()
    }
}

/// Placement bound to the pages that hold the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadedRelation {
    pub placement: Placement,
    pub records: usize,
    /// `pages[partition][ordinal]`.
    pub pages: Vec<Vec<PageId>>,
}

impl LoadedRelation {
    /// Pages per partition (M).
    pub fn page_count(&self) -> usize {
        self.pages[0].len()
    }

    /// Records stored on page ordinal `ord`.
    pub fn records_on_page(&self, ord: usize, records_per_page: usize) -> usize {
        self.records.saturating_sub(ord * records_per_page).min(records_per_page)
    }
}

/// Record `j` lives at (page ordinal, crossbar, row).
pub fn address(j: usize, rows: usize, records_per_page: usize) -> (usize, usize, usize) {
    (j / records_per_page, (j % records_per_page) / rows, j % rows)
}

/// Stores columnar `data` (one vector per attribute, in schema order) and
/// sets each partition's valid column. Loading is not charged: the ledger
/// and wear counters are cleared afterwards.
pub fn load(data: &[Vec<u32>], placement: &Placement, device: &mut PimDevice) -> Result<LoadedRelation> {
    if data.len() != placement.slots.len() {
        return Err(Error::Format(format!("{} columns for {} attributes", data.len(), placement.slots.len())));
    }
    let records = data.first().map_or(0, Vec::len);
    if let Some((i, c)) = data.iter().enumerate().find(|(_, c)| c.len() != records) {
        return Err(Error::Format(format!("column {i} holds {} records, expected {records}", c.len())));
    }
    let g = device.geometry().clone();
    let rpp = g.records_per_page();
    let m = g.pages_for(records);
    let needed = m * placement.partitions();
    let available = g.max_pages() - device.page_count();
    if needed > available {
        return Err(Error::CapacityExceeded { needed, available });
    }
    let pages: Vec<Vec<PageId>> =
        (0..placement.partitions()).map(|_| device.allocate_pages(m)).collect::<Result<_>>()?;

    for (attr, (slot, column)) in placement.slots.iter().zip(data).enumerate() {
        let limit = crate::fabric::mask(slot.width);
        for (j, &v) in column.iter().enumerate() {
            if v as u64 > limit {
                return Err(Error::ImmediateWidth { attr: format!("#{attr}"), value: v as u64, width: slot.width as u32 });
            }
            let (ord, xb, row) = address(j, g.rows, rpp);
            device.crossbar_mut(pages[slot.partition][ord], xb)?.write_value(row, slot.col_start, slot.width, v as u64)?;
        }
    }
    for (p, w) in placement.work.iter().enumerate() {
        for j in 0..records {
            let (ord, xb, row) = address(j, g.rows, rpp);
            device.crossbar_mut(pages[p][ord], xb)?.write_value(row, w.valid, 1, 1)?;
        }
    }
    device.reset_measurement();
    Ok(LoadedRelation { placement: placement.clone(), records, pages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceGeometry;
    use crate::ledger::{CostParams, LineClass};

    fn schema(widths: &[(usize, &str)]) -> Schema {
        Schema::new(
            widths
                .iter()
                .enumerate()
                .map(|(i, &(w, o))| Attribute::new(&format!("a{i}"), w, AttrKind::Integer, o))
                .collect(),
        )
    }

    #[test]
    fn single_attribute() {
        let p = place(&schema(&[(16, "fact")]), LayoutMode::OneXb, 512).unwrap();
        assert_eq!(p.slots[0], AttrSlot { partition: 0, col_start: 0, width: 16 });
        assert_eq!(p.work[0].filter, 16);
    }

    #[test]
    fn overflow_depends_on_mode() {
        let wide: Vec<(usize, &str)> =
            (0..10).map(|_| (32, "fact")).chain((0..10).map(|_| (28, "customer"))).collect();
        let s = schema(&wide);
        let err = place(&s, LayoutMode::OneXb, 512).unwrap_err();
        assert!(err.to_string().contains("needs"), "{err}");
        let p = place(&s, LayoutMode::TwoXb, 512).unwrap();
        assert_eq!(p.slots[10].partition, 1);
        assert_eq!(p.slots[10].col_start, 0);
        assert_eq!(p.slots[9].col_start, 9 * 32);
    }

    #[test]
    fn placement_is_deterministic() {
        let s = schema(&[(5, "fact"), (20, "date"), (32, "fact")]);
        assert_eq!(place(&s, LayoutMode::TwoXb, 512).unwrap(), place(&s, LayoutMode::TwoXb, 512).unwrap());
        let p = place(&s, LayoutMode::OneXb, 512).unwrap();
        assert_eq!(p.slots.iter().map(|s| s.col_start).collect::<Vec<_>>(), vec![0, 16, 48]);
        assert_eq!(p.work[0].dst_width, 48);
    }

    #[test]
    fn page_counts() {
        let g = DeviceGeometry::default();
        assert_eq!(g.pages_for(32768), 1);
        assert_eq!(g.pages_for(32769), 2);
        assert_eq!(address(32768 + 1025, 1024, 32768), (1, 1, 1));
    }

    #[test]
    fn load_round_trip() {
        let s = schema(&[(12, "fact"), (7, "customer")]);
        let n = 33000;
        let data = vec![(0..n).map(|j| (j * 7 % 4096) as u32).collect(), (0..n).map(|j| (j % 100) as u32).collect()];
        for mode in [LayoutMode::OneXb, LayoutMode::TwoXb] {
            let placement = place(&s, mode, 512).unwrap();
            let mut dev = PimDevice::new(DeviceGeometry::default(), CostParams::default()).unwrap();
            let rel = load(&data, &placement, &mut dev).unwrap();
            assert_eq!(rel.page_count(), 2);
            assert_eq!(dev.ledger().events().len(), 0);
            for (attr, column) in data.iter().enumerate() {
                let slot = placement.slots[attr];
                for ord in 0..2 {
                    let lines: Vec<_> = (0..1024)
                        .map(|r| dev.host_read_line(rel.pages[slot.partition][ord], r, slot.col_start / 16, LineClass::Data))
                        .collect::<Result<_>>()
                        .unwrap();
                    for (j, &v) in column.iter().enumerate() {
                        let (o, xb, row) = address(j, 1024, 32768);
                        if o == ord {
                            assert_eq!(lines[row][xb] as u32, v);
                        }
                    }
                }
            }
        }
    }
}
