//! Queries and their line-oriented text form.
//!
//! ```text
//! ID Q2.1
//! WHERE p_category = 'MFGR#12' AND s_region = 'AMERICA'
//! AGG SUM lo_revenue
//! GROUPBY d_year, p_brand1
//! ```
//!
//! Quoted literals go through the attribute's dictionary (categorical) or
//! are parsed as `YYYY-MM-DD` (dates); bare literals are integers codes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::AggOp;
use crate::layout::AttrKind;
use crate::microcode::{AttrId, CmpOp, Predicate};
use crate::relation::Catalog;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub predicate: Predicate,
    pub agg: AggOp,
    pub agg_attr: AttrId,
    pub group_by: Vec<AttrId>,
}

/// Group key: one value per GROUP BY attribute.
pub type GroupKey = Vec<u32>;

impl Query {
    pub fn parse(text: &str, catalog: &Catalog) -> Result<Self> {
        let mut id = None;
        let mut predicate = None;
        let mut agg = None;
        let mut group_by = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_start();
            let indent = raw.len() - trimmed.len();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (kw, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
            let rest_col = indent + kw.len() + 1 + (rest.len() - rest.trim_start().len());
            let rest = rest.trim();
            let err = |col: usize, msg: String| Error::Parse { line, col: col + 1, msg };
            match kw.to_ascii_uppercase().as_str() {
                "ID" => id = Some(rest.to_string()),
                "WHERE" => {
                    let tokens = tokenize(rest, line, rest_col)?;
                    let mut p = Parser { tokens, pos: 0, line, end_col: rest_col + rest.len(), catalog };
                    let expr = p.or()?;
                    if let Some(t) = p.tokens.get(p.pos) {
                        return Err(err(t.col, format!("unexpected '{}'", t.text)));
                    }
                    predicate = Some(expr);
                }
                "AGG" => {
                    let mut parts = rest.split_whitespace();
                    let op = match parts.next().map(str::to_ascii_uppercase).as_deref() {
                        Some("SUM") => AggOp::Sum,
                        Some("MIN") => AggOp::Min,
                        Some("MAX") => AggOp::Max,
                        other => return Err(err(rest_col, format!("expected SUM, MIN or MAX, found {other:?}"))),
                    };
                    let name = parts.next().ok_or_else(|| err(rest_col, "missing aggregate attribute".into()))?;
                    let attr = catalog.index_of(name).map_err(|e| err(rest_col, e.to_string()))?;
                    agg = Some((op, attr));
                }
                "GROUPBY" => {
                    let attrs = rest
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|n| catalog.index_of(n).map_err(|e| err(rest_col, e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    group_by = Some(attrs);
                }
                other => return Err(err(indent, format!("unknown directive '{other}'"))),
            }
        }
        let (agg, agg_attr) = agg.ok_or(Error::Parse { line: 0, col: 0, msg: "missing AGG line".into() })?;
        let q = Query {
            id: id.unwrap_or_default(),
            predicate: predicate.unwrap_or(Predicate::True),
            agg,
            agg_attr,
            group_by: group_by.unwrap_or_default(),
        };
        if q.agg_attr_kind(catalog) != AttrKind::Integer {
            return Err(Error::Parse { line: 0, col: 0, msg: "aggregate attribute must be an integer".into() });
        }
        Ok(q)
    }

    fn agg_attr_kind(&self, catalog: &Catalog) -> AttrKind {
        catalog.meta(self.agg_attr).attribute.kind
    }

    /// Text form accepted by [`Query::parse`].
    pub fn to_text(&self, catalog: &Catalog) -> String {
        let mut out = String::new();
        if !self.id.is_empty() {
            out += &format!("ID {}\n", self.id);
        }
        out += &format!("WHERE {}\n", predicate_text(&self.predicate, catalog));
        let op = match self.agg {
            AggOp::Sum => "SUM",
            AggOp::Min => "MIN",
            AggOp::Max => "MAX",
        };
        out += &format!("AGG {op} {}\n", catalog.name(self.agg_attr));
        if !self.group_by.is_empty() {
            let names: Vec<&str> = self.group_by.iter().map(|&a| catalog.name(a)).collect();
            out += &format!("GROUPBY {}\n", names.join(", "));
        }
        out
    }

    /// Attributes whose granules identify a record's subgroup plus the
    /// aggregated attribute, deduplicated.
    pub fn read_attrs(&self) -> Vec<AttrId> {
        let mut v = self.group_by.clone();
        if !v.contains(&self.agg_attr) {
            v.push(self.agg_attr);
        }
        v
    }
}

/// Values each GROUP BY attribute can take given the top-level conjuncts.
///
/// A conjunct on any attribute of the same hierarchy (city, nation,
/// region...) narrows the leaf values first, and the group attribute's
/// values are read off the surviving leaves.
pub fn group_domains(query: &Query, catalog: &Catalog) -> Result<Vec<Vec<u32>>> {
    let conjuncts = query.predicate.conjuncts();
    let single: Vec<(AttrId, &Predicate)> = conjuncts
        .iter()
        .filter_map(|c| match c.attributes().as_slice() {
            [a] => Some((*a, *c)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for &g in &query.group_by {
        let name = catalog.name(g);
        let values: BTreeSet<u32> = if let Some(h) = catalog.hierarchy_of(name) {
            let on_h: Vec<(&str, &Predicate)> = single
                .iter()
                .filter(|(a, _)| h.contains(catalog.name(*a)))
                .map(|(a, p)| (catalog.name(*a), *p))
                .collect();
            h.leaf_domain()
                .filter(|&leaf| {
                    on_h.iter().all(|(n, p)| {
                        let v = h.value(n, leaf).unwrap_or(u32::MAX) as u64;
                        p.eval(&|_| v)
                    })
                })
                .filter_map(|leaf| h.value(name, leaf))
                .collect()
        } else {
            let (lo, hi) = catalog.meta(g).domain;
            if hi - lo > 1 << 20 {
                return Err(Error::Unsupported(format!("GROUP BY on {name} with {} values", hi - lo + 1)));
            }
            let on_g: Vec<&Predicate> = single.iter().filter(|(a, _)| *a == g).map(|(_, p)| *p).collect();
            (lo..=hi).filter(|&v| on_g.iter().all(|p| p.eval(&|_| v as u64))).collect()
        };
        out.push(values.into_iter().collect());
    }
    Ok(out)
}

/// Total number of potential subgroups (1 without GROUP BY).
pub fn k_max(domains: &[Vec<u32>]) -> usize {
    domains.iter().map(Vec::len).product()
}

/// All candidate group keys in lexicographic order.
pub fn candidate_keys(domains: &[Vec<u32>]) -> Vec<GroupKey> {
    let mut keys = vec![Vec::new()];
    for d in domains {
        keys = keys.iter().flat_map(|k| d.iter().map(move |&v| [k.as_slice(), &[v]].concat())).collect();
    }
    keys
}

fn literal_text(catalog: &Catalog, attr: AttrId, v: u64) -> String {
    match catalog.decode_literal(attr, v) {
        Some(s) => format!("'{s}'"),
        None => v.to_string(),
    }
}

pub fn predicate_text(p: &Predicate, catalog: &Catalog) -> String {
    let lit = |a, v| literal_text(catalog, a, v);
    match p {
        Predicate::True => "TRUE".into(),
        Predicate::False => "FALSE".into(),
        Predicate::Cmp { attr, op, value } => {
            let sym = match op {
                CmpOp::Eq => "=",
                CmpOp::Neq => "!=",
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
            };
            format!("{} {sym} {}", catalog.name(*attr), lit(*attr, *value))
        }
        Predicate::Between { attr, lo, hi } => {
            format!("{} BETWEEN {} AND {}", catalog.name(*attr), lit(*attr, *lo), lit(*attr, *hi))
        }
        Predicate::In { attr, values } => {
            let vs: Vec<String> = values.iter().map(|&v| lit(*attr, v)).collect();
            format!("{} IN ({})", catalog.name(*attr), vs.join(", "))
        }
        Predicate::Not(q) => format!("NOT ({})", predicate_text(q, catalog)),
        Predicate::And(ps) | Predicate::Or(ps) if ps.is_empty() => {
            if matches!(p, Predicate::And(_)) { "TRUE" } else { "FALSE" }.into()
        }
        Predicate::And(ps) | Predicate::Or(ps) => {
            let join = if matches!(p, Predicate::And(_)) { " AND " } else { " OR " };
            let parts: Vec<String> = ps
                .iter()
                .map(|q| match q {
                    Predicate::And(_) | Predicate::Or(_) => format!("({})", predicate_text(q, catalog)),
                    _ => predicate_text(q, catalog),
                })
                .collect();
            parts.join(join)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident,
    Int,
    Str,
    Sym,
}

#[derive(Clone, Debug)]
struct Token {
    kind: Tok,
    text: String,
    col: usize,
}

fn tokenize(src: &str, line: usize, base: usize) -> Result<Vec<Token>> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (off, c) = chars[i];
        let col = base + off;
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1 != '\'' {
                j += 1;
            }
            if j == chars.len() {
                return Err(Error::Parse { line, col: col + 1, msg: "unterminated string literal".into() });
            }
            let text: String = chars[i + 1..j].iter().map(|(_, c)| c).collect();
            out.push(Token { kind: Tok::Str, text, col });
            i = j + 1;
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            out.push(Token { kind: Tok::Int, text: chars[i..j].iter().map(|(_, c)| c).collect(), col });
            i = j;
        } else if c.is_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                j += 1;
            }
            out.push(Token { kind: Tok::Ident, text: chars[i..j].iter().map(|(_, c)| c).collect(), col });
            i = j;
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().map(|(_, c)| c).collect();
            let sym = if ["<=", ">=", "!=", "<>"].contains(&two.as_str()) {
                two
            } else if "=<>(),".contains(c) {
                c.to_string()
            } else {
                return Err(Error::Parse { line, col: col + 1, msg: format!("unexpected character '{c}'") });
            };
            i += sym.chars().count();
            out.push(Token { kind: Tok::Sym, text: sym, col });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    line: usize,
    end_col: usize,
    catalog: &'a Catalog,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        let col = self.tokens.get(self.pos).map_or(self.end_col, |t| t.col);
        Error::Parse { line: self.line, col: col + 1, msg: msg.into() }
    }

    fn peek_kw(&self, kw: &str) -> bool {
        self.tokens.get(self.pos).is_some_and(|t| t.kind == Tok::Ident && t.text.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.peek_kw(kw);
        self.pos += usize::from(hit);
        hit
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = self.tokens.get(self.pos).is_some_and(|t| t.kind == Tok::Sym && t.text == sym);
        self.pos += usize::from(hit);
        hit
    }

    fn expect_sym(&mut self, sym: &str) -> Result<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{sym}'")))
        }
    }

    fn or(&mut self) -> Result<Predicate> {
        let mut parts = vec![self.and()?];
        while self.eat_kw("OR") {
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Or(parts) })
    }

    fn and(&mut self) -> Result<Predicate> {
        let mut parts = vec![self.unary()?];
        while self.eat_kw("AND") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::And(parts) })
    }

    fn unary(&mut self) -> Result<Predicate> {
        if self.eat_kw("NOT") {
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if self.eat_sym("(") {
            let e = self.or()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        if self.eat_kw("TRUE") {
            return Ok(Predicate::True);
        }
        if self.eat_kw("FALSE") {
            return Ok(Predicate::False);
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Predicate> {
        let tok = self.tokens.get(self.pos).cloned().ok_or_else(|| self.err("expected a condition"))?;
        if tok.kind != Tok::Ident {
            return Err(self.err(format!("expected an attribute, found '{}'", tok.text)));
        }
        let attr = self.catalog.index_of(&tok.text).map_err(|e| self.err(e.to_string()))?;
        self.pos += 1;
        if self.eat_kw("BETWEEN") {
            let lo = self.literal(attr)?;
            if !self.eat_kw("AND") {
                return Err(self.err("expected AND in BETWEEN"));
            }
            let hi = self.literal(attr)?;
            return Ok(Predicate::Between { attr, lo, hi });
        }
        let negated = self.eat_kw("NOT");
        if self.eat_kw("IN") {
            self.expect_sym("(")?;
            let mut values = vec![self.literal(attr)?];
            while self.eat_sym(",") {
                values.push(self.literal(attr)?);
            }
            self.expect_sym(")")?;
            let p = Predicate::In { attr, values };
            return Ok(if negated { Predicate::Not(Box::new(p)) } else { p });
        }
        if negated {
            return Err(self.err("expected IN after NOT"));
        }
        let op = match self.tokens.get(self.pos) {
            Some(t) if t.kind == Tok::Sym => match t.text.as_str() {
                "=" => CmpOp::Eq,
                "!=" | "<>" => CmpOp::Neq,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                ">" => CmpOp::Gt,
                ">=" => CmpOp::Ge,
                _ => return Err(self.err("expected a comparison operator")),
            },
            Some(t) if t.kind == Tok::Ident => match t.text.to_ascii_uppercase().as_str() {
                "EQ" => CmpOp::Eq,
                "NEQ" => CmpOp::Neq,
                "LT" => CmpOp::Lt,
                "LE" => CmpOp::Le,
                "GT" => CmpOp::Gt,
                "GE" => CmpOp::Ge,
                _ => return Err(self.err("expected a comparison operator")),
            },
            _ => return Err(self.err("expected a comparison operator")),
        };
        self.pos += 1;
        let value = self.literal(attr)?;
        Ok(Predicate::Cmp { attr, op, value })
    }

    fn literal(&mut self, attr: AttrId) -> Result<u64> {
        let tok = self.tokens.get(self.pos).cloned().ok_or_else(|| self.err("expected a literal"))?;
        let v = match tok.kind {
            Tok::Int => tok.text.parse::<u64>().map_err(|e| self.err(e.to_string()))?,
            Tok::Str => self.catalog.encode_literal(attr, &tok.text).map_err(|e| self.err(e.to_string()))?,
            _ => return Err(self.err(format!("expected a literal, found '{}'", tok.text))),
        };
        let width = self.catalog.meta(attr).attribute.width_bits;
        if width < 64 && v >> width != 0 {
            return Err(self.err(format!("{v} does not fit {width} bits of {}", self.catalog.name(attr))));
        }
        self.pos += 1;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::layout::Attribute;
    use crate::relation::{AttributeMeta, Hierarchy, FORMAT_TAG};

    fn catalog() -> Catalog {
        let meta = |name: &str, w, kind, domain, dict: Option<&[&str]>| AttributeMeta {
            attribute: Attribute::new(name, w, kind, "x"),
            domain,
            dictionary: dict.map(|d| d.iter().map(|s| s.to_string()).collect()),
        };
        Catalog {
            format: FORMAT_TAG.into(),
            record_count: 0,
            attributes: vec![
                meta("city", 2, AttrKind::Categorical, (0, 3), Some(&["A1", "A2", "B1", "B2"])),
                meta("nation", 1, AttrKind::Categorical, (0, 1), Some(&["A", "B"])),
                meta("year", 11, AttrKind::Integer, (1992, 1998), None),
                meta("rev", 32, AttrKind::Integer, (0, u32::MAX), None),
                meta("day", 15, AttrKind::Date, (8035, 10591), None),
            ],
            hierarchies: vec![Hierarchy {
                leaf: "city".into(),
                leaf_min: 0,
                derived: BTreeMap::from([("nation".to_string(), vec![0, 0, 1, 1])]),
            }],
        }
    }

    #[test]
    fn parses_and_prints() {
        let c = catalog();
        let text = "ID Q\nWHERE nation = 'B' AND (year BETWEEN 1993 AND 1995 OR year IN (1997)) AND NOT day < '1993-01-01'\nAGG SUM rev\nGROUPBY city, year\n";
        let q = Query::parse(text, &c).unwrap();
        assert_eq!(q.group_by, vec![0, 2]);
        assert_eq!(q.agg, AggOp::Sum);
        let again = Query::parse(&q.to_text(&c), &c).unwrap();
        assert_eq!(again, q);
        assert_eq!(q.predicate.conjuncts().len(), 3);
    }

    #[test]
    fn parse_errors_carry_position() {
        let c = catalog();
        let e = Query::parse("AGG SUM rev\nWHERE year = 1993 AND\n", &c).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, col: 22, .. }), "{e:?}");
        let e = Query::parse("WHERE city = 'Z9'\nAGG SUM rev", &c).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, col: 14, .. }), "{e:?}");
        let e = Query::parse("WHERE year = 5000\nAGG SUM rev", &c).unwrap_err();
        assert!(e.to_string().contains("does not fit"), "{e}");
        assert!(Query::parse("WHERE TRUE", &c).is_err());
        assert!(Query::parse("AGG SUM city", &c).is_err());
    }

    #[test]
    fn domains_follow_hierarchies() {
        let c = catalog();
        let q = Query::parse("WHERE nation = 'B' AND year >= 1997\nAGG SUM rev\nGROUPBY city, year", &c).unwrap();
        let d = group_domains(&q, &c).unwrap();
        assert_eq!(d, vec![vec![2, 3], vec![1997, 1998]]);
        assert_eq!(k_max(&d), 4);
        assert_eq!(candidate_keys(&d)[1], vec![2, 1998]);
        let q = Query::parse("WHERE city = 'A2'\nAGG SUM rev\nGROUPBY nation", &c).unwrap();
        assert_eq!(group_domains(&q, &c).unwrap(), vec![vec![0]]);
        let q = Query::parse("AGG SUM rev", &c).unwrap();
        assert_eq!(k_max(&group_domains(&q, &c).unwrap()), 1);
    }
}
