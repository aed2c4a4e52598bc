//! Star-schema benchmark data, pre-joined into one wide relation, and the
//! thirteen query templates tuned to target selectivities.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::AggOp;
use crate::layout::{AttrKind, Attribute};
use crate::microcode::{AttrId, CmpOp, Predicate};
use crate::query::{group_domains, k_max, Query};
use crate::relation::{civil_from_days, days_from_civil, AttributeMeta, Catalog, Hierarchy, Relation, FORMAT_TAG};

pub const REGIONS: [(&str, [&str; 5]); 5] = [
    ("AFRICA", ["ALGERIA", "ETHIOPIA", "KENYA", "MOROCCO", "MOZAMBIQUE"]),
    ("AMERICA", ["ARGENTINA", "BRAZIL", "CANADA", "PERU", "UNITED STATES"]),
    ("ASIA", ["CHINA", "INDIA", "INDONESIA", "JAPAN", "VIETNAM"]),
    ("EUROPE", ["FRANCE", "GERMANY", "ROMANIA", "RUSSIA", "UNITED KINGDOM"]),
    ("MIDDLE EAST", ["EGYPT", "IRAN", "IRAQ", "JORDAN", "SAUDI ARABIA"]),
];

const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
const FIRST_YEAR: i64 = 1992;
const LAST_YEAR: i64 = 1998;
const CITIES_PER_NATION: usize = 10;
const BRANDS_PER_CATEGORY: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub scale_factor: f64,
    /// Fact rows at scale factor 1.
    pub base_rows: usize,
    pub seed: u64,
    /// Skew of city and brand popularity; 0 is uniform.
    pub zipf_exponent: f64,
    /// Records used when tuning template parameters.
    pub tune_records: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self { scale_factor: 1.0, base_rows: 6_000_000, seed: 42, zipf_exponent: 1.0, tune_records: 1 << 18 }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::Workload(format!("scale factor {} must be positive", self.scale_factor)));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Workload(format!("zipf exponent {} must be non-negative", self.zipf_exponent)));
        }
        if self.base_rows == 0 || self.tune_records == 0 {
            return Err(Error::Workload("row counts must be positive".into()));
        }
        Ok(())
    }

    pub fn fact_rows(&self) -> usize {
        ((self.base_rows as f64 * self.scale_factor).round() as usize).max(1)
    }

    pub fn customers(&self) -> usize {
        ((30_000.0 * self.scale_factor) as usize).max(3_000)
    }

    pub fn suppliers(&self) -> usize {
        ((2_000.0 * self.scale_factor) as usize).max(1_000)
    }

    pub fn parts(&self) -> usize {
        ((200_000.0 * self.scale_factor) as usize).max(2_000)
    }
}

/// Sorted dictionaries and the code maps between hierarchy levels.
struct Dictionaries {
    regions: Vec<String>,
    nations: Vec<String>,
    cities: Vec<String>,
    nation_region: Vec<u32>,
    city_nation: Vec<u32>,
    mfgrs: Vec<String>,
    categories: Vec<String>,
    brands: Vec<String>,
    brand_category: Vec<u32>,
    category_mfgr: Vec<u32>,
    yearmonths: Vec<String>,
}

fn code(dict: &[String], s: &str) -> u32 {
    dict.binary_search_by(|d| d.as_str().cmp(s)).expect("value from its own dictionary") as u32
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

fn city_name(nation: &str, i: usize) -> String {
    format!("{:<9.9}{i}", nation)
}

impl Dictionaries {
    fn new() -> Self {
        let regions = sorted(REGIONS.iter().map(|r| r.0.to_string()).collect());
        let nations = sorted(REGIONS.iter().flat_map(|r| r.1.iter().map(|n| n.to_string())).collect());
        let mut nation_region = vec![0; nations.len()];
        let mut cities = Vec::new();
        for (region, ns) in REGIONS {
            for n in ns {
                nation_region[code(&nations, n) as usize] = code(&regions, region);
                cities.extend((0..CITIES_PER_NATION).map(|i| city_name(n, i)));
            }
        }
        let cities = sorted(cities);
        let mut city_nation = vec![0; cities.len()];
        for (_, ns) in REGIONS {
            for n in ns {
                for i in 0..CITIES_PER_NATION {
                    city_nation[code(&cities, &city_name(n, i)) as usize] = code(&nations, n);
                }
            }
        }
        let mfgrs = sorted((1..=5).map(|m| format!("MFGR#{m}")).collect());
        let categories = sorted((1..=5).flat_map(|m| (1..=5).map(move |c| format!("MFGR#{m}{c}"))).collect());
        let brands = sorted(
            categories.iter().flat_map(|c| (1..=BRANDS_PER_CATEGORY).map(move |b| format!("{c}{b}"))).collect(),
        );
        // Category and mfgr names are prefixes of brand and category names.
        let brand_category = brands.iter().map(|b| code(&categories, &b[..7])).collect();
        let category_mfgr = categories.iter().map(|c| code(&mfgrs, &c[..6])).collect();
        let yearmonths =
            sorted((FIRST_YEAR..=LAST_YEAR).flat_map(|y| MONTHS.iter().map(move |m| format!("{m}{y}"))).collect());
        Self {
            regions,
            nations,
            cities,
            nation_region,
            city_nation,
            mfgrs,
            categories,
            brands,
            brand_category,
            category_mfgr,
            yearmonths,
        }
    }

    fn city_region(&self, city: u32) -> u32 {
        self.nation_region[self.city_nation[city as usize] as usize]
    }

    fn brand_mfgr(&self, brand: u32) -> u32 {
        self.category_mfgr[self.brand_category[brand as usize] as usize]
    }
}

fn first_day() -> u32 {
    days_from_civil(FIRST_YEAR, 1, 1) as u32
}

fn day_count() -> u32 {
    (days_from_civil(LAST_YEAR, 12, 31) + 1) as u32 - first_day()
}

/// (year, yearmonth code, week number in year) of a day.
fn date_parts(dicts: &Dictionaries, day: u32) -> (u32, u32, u32) {
    let (y, m, _) = civil_from_days(day as i64);
    let doy = day as i64 - days_from_civil(y, 1, 1);
    let ym = code(&dicts.yearmonths, &format!("{}{y}", MONTHS[m as usize - 1]));
    (y as u32, ym, (doy / 7 + 1) as u32)
}

/// Retail price in cents of part `pk`.
pub fn retail_price(pk: u64) -> u64 {
    90_000 + ((pk / 10) % 20_001) + 100 * (pk % 1_000)
}

/// Derived measures for one line: (extendedprice, revenue, disc_price, profit).
pub fn measures(quantity: u64, discount: u64, retail: u64) -> (u64, u64, u64, u64) {
    let ext = quantity * retail;
    let revenue = ext * (100 - discount) / 100;
    let supply_cost = quantity * (6 * retail / 10);
    (ext, revenue, ext * discount, revenue - supply_cost)
}

/// Attribute names in storage order.
pub const ATTRIBUTES: [&str; 19] = [
    "lo_orderdate",
    "lo_quantity",
    "lo_discount",
    "lo_extendedprice",
    "lo_revenue",
    "lo_disc_price",
    "lo_profit",
    "d_year",
    "d_yearmonth",
    "d_weeknuminyear",
    "c_city",
    "c_nation",
    "c_region",
    "s_city",
    "s_nation",
    "s_region",
    "p_mfgr",
    "p_category",
    "p_brand1",
];

fn catalog(dicts: &Dictionaries, records: usize, columns: &[Vec<u32>]) -> Catalog {
    let observed = |i: usize| {
        let c = &columns[i];
        (c.iter().copied().min().unwrap_or(0), c.iter().copied().max().unwrap_or(0))
    };
    let int = |i: usize, w: usize, origin: &str, domain: (u32, u32)| AttributeMeta {
        attribute: Attribute::new(ATTRIBUTES[i], w, AttrKind::Integer, origin),
        domain,
        dictionary: None,
    };
    let cat = |i: usize, w: usize, origin: &str, dict: &[String]| AttributeMeta {
        attribute: Attribute::new(ATTRIBUTES[i], w, AttrKind::Categorical, origin),
        domain: (0, dict.len() as u32 - 1),
        dictionary: Some(dict.to_vec()),
    };
    let d0 = first_day();
    let attributes = vec![
        AttributeMeta {
            attribute: Attribute::new(ATTRIBUTES[0], 14, AttrKind::Date, "fact"),
            domain: (d0, d0 + day_count() - 1),
            dictionary: None,
        },
        int(1, 6, "fact", (1, 50)),
        int(2, 4, "fact", (0, 10)),
        int(3, 24, "fact", observed(3)),
        int(4, 32, "fact", observed(4)),
        int(5, 27, "fact", observed(5)),
        int(6, 32, "fact", observed(6)),
        int(7, 11, "date", (FIRST_YEAR as u32, LAST_YEAR as u32)),
        cat(8, 7, "date", &dicts.yearmonths),
        int(9, 6, "date", (1, 53)),
        cat(10, 8, "customer", &dicts.cities),
        cat(11, 5, "customer", &dicts.nations),
        cat(12, 3, "customer", &dicts.regions),
        cat(13, 8, "supplier", &dicts.cities),
        cat(14, 5, "supplier", &dicts.nations),
        cat(15, 3, "supplier", &dicts.regions),
        cat(16, 3, "part", &dicts.mfgrs),
        cat(17, 5, "part", &dicts.categories),
        cat(18, 10, "part", &dicts.brands),
    ];
    let mut date = BTreeMap::new();
    let parts: Vec<_> = (d0..d0 + day_count()).map(|d| date_parts(dicts, d)).collect();
    date.insert("d_year".to_string(), parts.iter().map(|p| p.0).collect());
    date.insert("d_yearmonth".to_string(), parts.iter().map(|p| p.1).collect());
    date.insert("d_weeknuminyear".to_string(), parts.iter().map(|p| p.2).collect());
    let cities = 0..dicts.cities.len() as u32;
    let geo = |prefix: &str| Hierarchy {
        leaf: format!("{prefix}_city"),
        leaf_min: 0,
        derived: BTreeMap::from([
            (format!("{prefix}_nation"), cities.clone().map(|c| dicts.city_nation[c as usize]).collect()),
            (format!("{prefix}_region"), cities.clone().map(|c| dicts.city_region(c)).collect()),
        ]),
    };
    let brands = 0..dicts.brands.len() as u32;
    let hierarchies = vec![
        Hierarchy { leaf: "lo_orderdate".into(), leaf_min: d0, derived: date },
        geo("c"),
        geo("s"),
        Hierarchy {
            leaf: "p_brand1".into(),
            leaf_min: 0,
            derived: BTreeMap::from([
                ("p_category".to_string(), brands.clone().map(|b| dicts.brand_category[b as usize]).collect()),
                ("p_mfgr".to_string(), brands.map(|b| dicts.brand_mfgr(b)).collect()),
            ]),
        },
    ];
    Catalog { format: FORMAT_TAG.into(), record_count: records, attributes, hierarchies }
}

/// Generates the pre-joined relation.
pub fn generate(cfg: &WorkloadConfig) -> Result<Relation> {
    cfg.validate()?;
    let dicts = Dictionaries::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = |n: usize| Zipf::new(n as f64, cfg.zipf_exponent).map_err(|e| Error::Workload(e.to_string()));
    let skewed = |rng: &mut ChaCha8Rng, n: usize, count: usize| -> Result<Vec<u32>> {
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(rng);
        let z = zipf(n)?;
        Ok((0..count).map(|_| perm[z.sample(rng) as usize - 1]).collect())
    };
    let customer_city = skewed(&mut rng, dicts.cities.len(), cfg.customers())?;
    let supplier_city = skewed(&mut rng, dicts.cities.len(), cfg.suppliers())?;
    let part_brand = skewed(&mut rng, dicts.brands.len(), cfg.parts())?;

    let n = cfg.fact_rows();
    let d0 = first_day();
    let days: Vec<(u32, u32, u32)> = (d0..d0 + day_count()).map(|d| date_parts(&dicts, d)).collect();
    let mut cols: Vec<Vec<u32>> = (0..ATTRIBUTES.len()).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let day = rng.random_range(0..day_count());
        let cc = customer_city[rng.random_range(0..customer_city.len())];
        let sc = supplier_city[rng.random_range(0..supplier_city.len())];
        let pk = rng.random_range(0..part_brand.len());
        let brand = part_brand[pk];
        let qty = rng.random_range(1..=50u64);
        let disc = rng.random_range(0..=10u64);
        let (ext, rev, dp, profit) = measures(qty, disc, retail_price(pk as u64));
        let (y, ym, wk) = days[day as usize];
        let row = [
            d0 + day,
            qty as u32,
            disc as u32,
            ext as u32,
            rev as u32,
            dp as u32,
            profit as u32,
            y,
            ym,
            wk,
            cc,
            dicts.city_nation[cc as usize],
            dicts.city_region(cc),
            sc,
            dicts.city_nation[sc as usize],
            dicts.city_region(sc),
            dicts.brand_mfgr(brand),
            dicts.brand_category[brand as usize],
            brand,
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    let catalog = catalog(&dicts, n, &cols);
    Ok(Relation { catalog, columns: cols })
}

pub const TEMPLATE_IDS: [&str; 13] =
    ["Q1.1", "Q1.2", "Q1.3", "Q2.1", "Q2.2", "Q2.3", "Q3.1", "Q3.2", "Q3.3", "Q3.4", "Q4.1", "Q4.2", "Q4.3"];

/// Target selectivity of each template.
pub fn target_selectivity(id: &str) -> Result<f64> {
    Ok(match id {
        "Q1.1" => 2.3e-2,
        "Q1.2" => 6.6e-4,
        "Q1.3" => 8.4e-5,
        "Q2.1" => 1.2e-2,
        "Q2.2" => 1.6e-3,
        "Q2.3" => 2.0e-4,
        "Q3.1" => 3.4e-2,
        "Q3.2" => 1.3e-3,
        "Q3.3" => 4.7e-5,
        "Q3.4" => 6.6e-7,
        "Q4.1" => 2.0e-2,
        "Q4.2" => 2.3e-3,
        "Q4.3" => 9.1e-5,
        _ => return Err(Error::UnknownTemplate(id.to_string())),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateInstance {
    pub query: Query,
    pub target: f64,
    /// Selectivity on the tuning sample.
    pub tuned_selectivity: f64,
    /// Selectivity on the whole relation.
    pub selectivity: f64,
    pub selected: u64,
    pub k_max: usize,
    /// No record satisfies the predicate.
    pub degenerate: bool,
}

/// One choice for a tunable slot: its conjuncts and the sample records
/// they select.
struct SlotOption {
    conjuncts: Vec<Predicate>,
    bits: Vec<u64>,
}

/// Per-value bitsets over the tuning sample, built on demand.
struct Sample<'a> {
    rel: &'a Relation,
    len: usize,
    by_value: HashMap<AttrId, (u32, Vec<Vec<u64>>)>,
}

impl<'a> Sample<'a> {
    fn new(rel: &'a Relation, len: usize) -> Self {
        Self { rel, len, by_value: HashMap::new() }
    }

    fn words(&self) -> usize {
        self.len.div_ceil(64)
    }

    fn index(&mut self, attr: AttrId) -> &(u32, Vec<Vec<u64>>) {
        let (rel, len, words) = (self.rel, self.len, self.words());
        self.by_value.entry(attr).or_insert_with(|| {
            let (lo, hi) = rel.catalog.meta(attr).domain;
            let mut sets = vec![vec![0u64; words]; (hi - lo + 1) as usize];
            for (j, &v) in rel.columns[attr][..len].iter().enumerate() {
                sets[(v - lo) as usize][j / 64] |= 1 << (j % 64);
            }
            (lo, sets)
        })
    }

    /// Records satisfying every single-attribute conjunct.
    fn select(&mut self, conjuncts: &[Predicate]) -> Vec<u64> {
        let mut acc = vec![u64::MAX; self.words()];
        if !self.len.is_multiple_of(64) {
            *acc.last_mut().unwrap() = (1u64 << (self.len % 64)) - 1;
        }
        for c in conjuncts {
            let Some(attr) = c.leaf_attr() else {
                if !c.eval(&|_| 0) {
                    acc.fill(0);
                }
                continue;
            };
            let (lo, sets) = self.index(attr);
            let mut any = vec![0u64; acc.len()];
            for (i, set) in sets.iter().enumerate() {
                if c.eval(&|_| *lo as u64 + i as u64) {
                    any.iter_mut().zip(set).for_each(|(a, s)| *a |= s);
                }
            }
            acc.iter_mut().zip(any).for_each(|(a, s)| *a &= s);
        }
        acc
    }

    fn slot(&mut self, options: Vec<Vec<Predicate>>) -> Vec<SlotOption> {
        options.into_iter().map(|conjuncts| SlotOption { bits: self.select(&conjuncts), conjuncts }).collect()
    }
}

/// Exhaustive search over the product of slots for the combination whose
/// sample selectivity is closest to `target` in log space. Ties keep the
/// first combination in slot order.
fn best_combination(slots: &[Vec<SlotOption>], words: usize, len: usize, target: f64) -> (Vec<usize>, u64) {
    struct Search<'a> {
        slots: &'a [Vec<SlotOption>],
        len: f64,
        target: f64,
        best: Option<(f64, Vec<usize>, u64)>,
        path: Vec<usize>,
    }
    fn walk(s: &mut Search<'_>, depth: usize, acc: &[u64]) {
        if acc.iter().all(|&w| w == 0) {
            return;
        }
        if depth + 1 == s.slots.len() {
            for (i, o) in s.slots[depth].iter().enumerate() {
                let n: u64 = acc.iter().zip(&o.bits).map(|(a, b)| (a & b).count_ones() as u64).sum();
                if n == 0 {
                    continue;
                }
                let d = (n as f64 / s.len / s.target).ln().abs();
                if s.best.as_ref().is_none_or(|b| d < b.0) {
                    let mut path = s.path.clone();
                    path.push(i);
                    s.best = Some((d, path, n));
                }
            }
            return;
        }
        let mut next = vec![0u64; acc.len()];
        for i in 0..s.slots[depth].len() {
            next.iter_mut().zip(acc.iter().zip(&s.slots[depth][i].bits)).for_each(|(n, (a, b))| *n = a & b);
            s.path.push(i);
            walk(s, depth + 1, &next.clone());
            s.path.pop();
        }
    }
    let mut s = Search { slots, len: len as f64, target, best: None, path: Vec::new() };
    let all = vec![u64::MAX; words];
    walk(&mut s, 0, &all);
    match s.best {
        Some((_, path, n)) => (path, n),
        None => (vec![0; slots.len()], 0),
    }
}

fn eq(attr: AttrId, v: u32) -> Predicate {
    Predicate::eq(attr, v as u64)
}

fn between(attr: AttrId, lo: u32, hi: u32) -> Predicate {
    Predicate::Between { attr, lo: lo as u64, hi: hi as u64 }
}

fn values_in(attr: AttrId, vs: &[u32]) -> Predicate {
    Predicate::In { attr, values: vs.iter().map(|&v| v as u64).collect() }
}

fn each(attr: AttrId, values: impl IntoIterator<Item = u32>) -> Vec<Vec<Predicate>> {
    values.into_iter().map(|v| vec![eq(attr, v)]).collect()
}

/// Instantiates template `id` against `rel`.
pub fn instantiate(id: &str, rel: &Relation, cfg: &WorkloadConfig) -> Result<TemplateInstance> {
    let target = target_selectivity(id)?;
    let cat = &rel.catalog;
    let a = |n: &str| cat.index_of(n);
    let (year, ym, week) = (a("d_year")?, a("d_yearmonth")?, a("d_weeknuminyear")?);
    let (qty, disc) = (a("lo_quantity")?, a("lo_discount")?);
    let (c_city, c_nation, c_region) = (a("c_city")?, a("c_nation")?, a("c_region")?);
    let (s_city, s_nation, s_region) = (a("s_city")?, a("s_nation")?, a("s_region")?);
    let (p_mfgr, p_category, p_brand) = (a("p_mfgr")?, a("p_category")?, a("p_brand1")?);
    let size = |attr: AttrId| cat.meta(attr).domain.1 + 1;
    let years = FIRST_YEAR as u32..=LAST_YEAR as u32;
    let disc_ranges = || (0..=8).map(|lo| vec![between(disc, lo, lo + 2)]).collect::<Vec<_>>();
    let early_years = vec![vec![between(year, FIRST_YEAR as u32, LAST_YEAR as u32 - 1)]];
    let year_pairs = || (FIRST_YEAR as u32..LAST_YEAR as u32).map(|y| vec![values_in(year, &[y, y + 1])]).collect::<Vec<_>>();
    let mfgr_pairs: Vec<Vec<Predicate>> = (0..size(p_mfgr))
        .flat_map(|i| (i + 1..size(p_mfgr)).map(move |j| vec![values_in(p_mfgr, &[i, j])]))
        .collect();
    let city_pairs = || {
        let h = cat.hierarchy_of("c_city").expect("city hierarchy");
        let mut by_nation: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for c in h.leaf_domain() {
            by_nation.entry(h.value("c_nation", c).unwrap()).or_default().push(c);
        }
        let mut out = Vec::new();
        for cs in by_nation.values() {
            for (i, &x) in cs.iter().enumerate() {
                for &y in &cs[i + 1..] {
                    out.push(vec![values_in(c_city, &[x, y]), values_in(s_city, &[x, y])]);
                }
            }
        }
        out
    };

    let (agg_attr, group_by, slots): (AttrId, Vec<AttrId>, Vec<Vec<Vec<Predicate>>>) = match id {
        "Q1.1" => (
            a("lo_disc_price")?,
            vec![],
            vec![each(year, years), disc_ranges(), (2..=51).map(|q| vec![Predicate::Cmp { attr: qty, op: CmpOp::Lt, value: q }]).collect()],
        ),
        "Q1.2" => (
            a("lo_disc_price")?,
            vec![],
            vec![each(ym, 0..size(ym)), disc_ranges(), (1..=41).map(|b| vec![between(qty, b, b + 9)]).collect()],
        ),
        "Q1.3" => (
            a("lo_disc_price")?,
            vec![],
            vec![
                each(week, 1..=53),
                each(year, years),
                disc_ranges(),
                [5u32, 10].iter().flat_map(|&w| (1..=51 - w).map(move |b| vec![between(qty, b, b + w - 1)])).collect(),
            ],
        ),
        "Q2.1" | "Q2.2" | "Q2.3" => {
            let parts = match id {
                "Q2.1" => each(p_category, 0..size(p_category)),
                "Q2.2" => (0..size(p_category))
                    .flat_map(|c| {
                        let base = c * BRANDS_PER_CATEGORY as u32;
                        (0..=(BRANDS_PER_CATEGORY - 8) as u32).map(move |s| vec![between(p_brand, base + s, base + s + 7)])
                    })
                    .collect(),
                _ => each(p_brand, 0..size(p_brand)),
            };
            (a("lo_revenue")?, vec![year, p_brand], vec![parts, each(s_region, 0..size(s_region))])
        }
        "Q3.1" => (
            a("lo_revenue")?,
            vec![c_nation, s_nation, year],
            vec![early_years, each(c_region, 0..size(c_region)), each(s_region, 0..size(s_region))],
        ),
        "Q3.2" => (
            a("lo_revenue")?,
            vec![c_city, s_city, year],
            vec![early_years, each(c_nation, 0..size(c_nation)), each(s_nation, 0..size(s_nation))],
        ),
        "Q3.3" => (a("lo_revenue")?, vec![c_city, s_city, year], vec![early_years, city_pairs()]),
        "Q3.4" => (a("lo_revenue")?, vec![c_city, s_city, year], vec![early_years, city_pairs(), each(ym, 0..size(ym))]),
        "Q4.1" => (
            a("lo_profit")?,
            vec![year, c_nation],
            vec![each(c_region, 0..size(c_region)), each(s_region, 0..size(s_region)), mfgr_pairs],
        ),
        "Q4.2" => (
            a("lo_profit")?,
            vec![year, s_nation, p_category],
            vec![each(c_region, 0..size(c_region)), each(s_region, 0..size(s_region)), mfgr_pairs, year_pairs()],
        ),
        "Q4.3" => (
            a("lo_profit")?,
            vec![year, s_city, p_brand],
            vec![
                each(c_region, 0..size(c_region)),
                each(s_nation, 0..size(s_nation)),
                year_pairs(),
                each(p_category, 0..size(p_category)),
            ],
        ),
        _ => return Err(Error::UnknownTemplate(id.to_string())),
    };

    let len = rel.len().min(cfg.tune_records);
    if len == 0 {
        return Err(Error::Workload("empty relation".into()));
    }
    let mut sample = Sample::new(rel, len);
    let slots: Vec<Vec<SlotOption>> = slots.into_iter().map(|s| sample.slot(s)).collect();
    let (choice, hits) = best_combination(&slots, sample.words(), len, target);
    let conjuncts: Vec<Predicate> =
        slots.iter().zip(&choice).flat_map(|(s, &i)| s[i].conjuncts.iter().cloned()).collect();
    let query = Query { id: id.to_string(), predicate: Predicate::And(conjuncts), agg: AggOp::Sum, agg_attr, group_by };
    let selected = (0..rel.len()).filter(|&j| query.predicate.eval(&|x| rel.value(x, j))).count() as u64;
    let k_max = k_max(&group_domains(&query, cat)?);
    Ok(TemplateInstance {
        target,
        tuned_selectivity: hits as f64 / len as f64,
        selectivity: selected as f64 / rel.len() as f64,
        selected,
        k_max,
        degenerate: selected == 0,
        query,
    })
}

pub fn instantiate_all(rel: &Relation, cfg: &WorkloadConfig) -> Result<Vec<TemplateInstance>> {
    TEMPLATE_IDS.iter().map(|id| instantiate(id, rel, cfg)).collect()
}

/// Writes one `<id>.qry` file per instance.
pub fn write_queries(dir: &Path, instances: &[TemplateInstance], catalog: &Catalog) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for inst in instances {
        let mut text = format!(
            "# target selectivity {:.3e}, achieved {:.3e} ({} records), k_max {}\n",
            inst.target, inst.selectivity, inst.selected, inst.k_max
        );
        if inst.degenerate {
            text += "# degenerate: no record qualifies\n";
        }
        text += &inst.query.to_text(catalog);
        let path = dir.join(format!("{}.qry", inst.query.id));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorkloadConfig {
        WorkloadConfig { scale_factor: 0.01, ..Default::default() }
    }

    #[test]
    fn dictionaries_and_hierarchies() {
        let d = Dictionaries::new();
        assert_eq!((d.regions.len(), d.nations.len(), d.cities.len()), (5, 25, 250));
        assert_eq!((d.mfgrs.len(), d.categories.len(), d.brands.len(), d.yearmonths.len()), (5, 25, 1000, 84));
        assert!(d.cities.contains(&"UNITED KI1".to_string()));
        assert!(d.cities.contains(&"PERU     0".to_string()));
        // A category's brands are contiguous codes.
        for (b, &c) in d.brand_category.iter().enumerate() {
            assert_eq!(c as usize, b / BRANDS_PER_CATEGORY);
        }
        let china = code(&d.nations, "CHINA");
        assert_eq!(d.regions[d.nation_region[china as usize] as usize], "ASIA");
    }

    #[test]
    fn measures_are_consistent() {
        assert_eq!(retail_price(0), 90_000);
        let (ext, rev, dp, profit) = measures(10, 4, 100_000);
        assert_eq!((ext, rev, dp), (1_000_000, 960_000, 4_000_000));
        assert_eq!(profit, 960_000 - 10 * 60_000);
        // Widest values fit their declared widths.
        let (ext, rev, dp, profit) = measures(50, 0, retail_price(999_999));
        assert!(ext < 1 << 24 && rev < 1 << 32 && profit < 1 << 32);
        assert!(measures(50, 10, retail_price(999_999)).2 < 1 << 27 && dp < 1 << 27);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let cfg = WorkloadConfig { scale_factor: 0.002, ..Default::default() };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.len(), 12_000);
        for (m, col) in a.catalog.attributes.iter().zip(&a.columns) {
            let max = col.iter().max().unwrap();
            assert!((*max as u64) < 1 << m.attribute.width_bits, "{}", m.attribute.name);
            assert!(col.iter().all(|&v| v >= m.domain.0 && v <= m.domain.1), "{}", m.attribute.name);
        }
        // Hierarchies agree with the stored columns.
        for h in &a.catalog.hierarchies {
            let leaf = a.catalog.index_of(&h.leaf).unwrap();
            for name in h.derived.keys() {
                let attr = a.catalog.index_of(name).unwrap();
                for j in 0..a.len() {
                    assert_eq!(h.value(name, a.columns[leaf][j]), Some(a.columns[attr][j]));
                }
            }
        }
        let padded: usize = a.catalog.schema().attributes.iter().map(|x| x.padded_width()).sum();
        assert_eq!(padded, 368);
        let other = generate(&WorkloadConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.columns, other.columns);
    }

    #[test]
    fn templates_hit_their_cardinalities() {
        let cfg = small();
        let rel = generate(&cfg).unwrap();
        let want_k = [1, 1, 1, 280, 56, 7, 150, 600, 24, 4, 35, 100, 800];
        for (id, k) in TEMPLATE_IDS.iter().zip(want_k) {
            let inst = instantiate(id, &rel, &cfg).unwrap();
            assert_eq!(inst.k_max, k, "{id}");
            let text = inst.query.to_text(&rel.catalog);
            assert_eq!(Query::parse(&text, &rel.catalog).unwrap(), inst.query, "{id}");
            if inst.target * rel.len() as f64 > 50.0 {
                let ratio = inst.selectivity / inst.target;
                assert!((0.5..2.0).contains(&ratio), "{id}: {} vs {}", inst.selectivity, inst.target);
            }
        }
        assert!(matches!(instantiate("Q5.1", &rel, &cfg), Err(Error::UnknownTemplate(_))));
    }

    #[test]
    fn tuning_prefers_the_first_tie() {
        let rel = generate(&WorkloadConfig { scale_factor: 0.001, ..Default::default() }).unwrap();
        let mut s = Sample::new(&rel, rel.len());
        let year = rel.catalog.index_of("d_year").unwrap();
        let slot = s.slot(vec![vec![Predicate::True], vec![Predicate::True]]);
        let (choice, n) = best_combination(&[slot], s.words(), rel.len(), 0.5);
        assert_eq!((choice, n), (vec![0], rel.len() as u64));
        let slot = s.slot(each(year, 1992..=1998));
        let (choice, _) = best_combination(&[slot], s.words(), rel.len(), 1.0 / 7.0);
        assert_eq!(choice.len(), 1);
    }
}
