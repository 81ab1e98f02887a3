//! Regnal era table and era/Gregorian year conversion.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_name;

const BUILTIN: &str = include_str!("../../data/eras.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraEntry {
    pub era: String,
    pub dynasty: String,
    pub start: i32,
    pub end: i32,
    /// Other spellings, e.g. the era in Chinese characters.
    pub other_names: Vec<String>,
}

impl EraEntry {
    pub fn len(&self) -> u32 {
        (self.end - self.start + 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.era.as_str()).chain(self.other_names.iter().map(String::as_str))
    }

    /// The era name in CJK script if the table has one.
    pub fn cjk_name(&self) -> Option<&str> {
        self.other_names
            .iter()
            .map(String::as_str)
            .find(|n| n.chars().all(crate::text::is_cjk))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraDate {
    pub era_name: String,
    pub ordinal_year: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<String>,
}

impl EraDate {
    pub fn new(era_name: &str, ordinal_year: u32) -> Self {
        Self {
            era_name: era_name.to_string(),
            ordinal_year,
            month: None,
            day: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EraError {
    #[error("unknown era `{0}`")]
    UnknownEra(String),
    #[error("{era} lasted {max} years; year {ordinal} is out of range")]
    OrdinalOutOfRange { era: String, ordinal: u32, max: u32 },
    #[error("era table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read era table {path}: {message}")]
    Io { path: String, message: String },
}

/// Dynasty names in CJK script.
pub fn dynasty_cjk(dynasty: &str) -> Option<&'static str> {
    Some(match dynasty {
        "Ming" => "明",
        "Qing" => "清",
        "Later Jin" => "后金",
        "Yuan" => "元",
        "Song" => "宋",
        "Tang" => "唐",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraTable {
    pub entries: Vec<EraEntry>,
}

impl EraTable {
    /// The table shipped with the crate (late Ming through Qing).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped era table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, EraError> {
        let text = std::fs::read_to_string(path).map_err(|e| EraError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Tab-separated `era, dynasty, start, end[, other|names]`; `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self, EraError> {
        let mut entries: Vec<EraEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let bad = |message: String| EraError::Parse { line, message };
            let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if !(4..=5).contains(&cols.len()) {
                return Err(bad(format!("expected 4 or 5 tab-separated columns, found {}", cols.len())));
            }
            let year = |s: &str| s.parse::<i32>().map_err(|e| bad(format!("bad year `{s}`: {e}")));
            let entry = EraEntry {
                era: cols[0].to_string(),
                dynasty: cols[1].to_string(),
                start: year(cols[2])?,
                end: year(cols[3])?,
                other_names: cols
                    .get(4)
                    .map(|s| s.split('|').map(str::trim).filter(|n| !n.is_empty()).map(String::from).collect())
                    .unwrap_or_default(),
            };
            if entry.era.is_empty() || entry.dynasty.is_empty() {
                return Err(bad("empty era or dynasty".into()));
            }
            if entry.start > entry.end {
                return Err(bad(format!("{} starts after it ends", entry.era)));
            }
            if entries
                .iter()
                .any(|e| e.dynasty == entry.dynasty && normalize_name(&e.era) == normalize_name(&entry.era))
            {
                return Err(bad(format!("duplicate era {} in {}", entry.era, entry.dynasty)));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    /// Finds an era by any of its names, optionally within one dynasty
    /// (given in Latin or CJK script).
    pub fn find(&self, name: &str, dynasty: Option<&str>) -> Option<&EraEntry> {
        let key = normalize_name(name);
        self.entries.iter().find(|e| {
            e.names().any(|n| normalize_name(n) == key)
                && dynasty.is_none_or(|d| {
                    normalize_name(d) == normalize_name(&e.dynasty) || dynasty_cjk(&e.dynasty) == Some(d)
                })
        })
    }

    pub fn era_to_gregorian(&self, date: &EraDate) -> Result<i32, EraError> {
        let entry = self
            .find(&date.era_name, None)
            .ok_or_else(|| EraError::UnknownEra(date.era_name.clone()))?;
        if date.ordinal_year == 0 || date.ordinal_year > entry.len() {
            return Err(EraError::OrdinalOutOfRange {
                era: entry.era.clone(),
                ordinal: date.ordinal_year,
                max: entry.len(),
            });
        }
        Ok(entry.start + date.ordinal_year as i32 - 1)
    }

    /// Every (era, ordinal) naming `year`. Transition years have several.
    pub fn gregorian_to_era(&self, year: i32) -> Vec<(&EraEntry, u32)> {
        self.entries
            .iter()
            .filter(|e| (e.start..=e.end).contains(&year))
            .map(|e| (e, (year - e.start + 1) as u32))
            .collect()
    }

    /// Ordinal of `year` within the named era.
    pub fn ordinal_in(&self, era: &str, year: i32) -> Option<u32> {
        let e = self.find(era, None)?;
        (e.start..=e.end).contains(&year).then(|| (year - e.start + 1) as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_anchors() {
        let t = EraTable::builtin();
        assert_eq!(t.era_to_gregorian(&EraDate::new("Chongzhen", 3)), Ok(1630));
        assert_eq!(t.era_to_gregorian(&EraDate::new("Shunzhi", 18)), Ok(1661));
        assert_eq!(t.era_to_gregorian(&EraDate::new("Chongzhen", 5)), Ok(1632));
        assert_eq!(t.era_to_gregorian(&EraDate::new("崇祯", 3)), Ok(1630));
    }

    #[test]
    fn conversion_errors() {
        let t = EraTable::builtin();
        assert_eq!(
            t.era_to_gregorian(&EraDate::new("Nowhere", 1)),
            Err(EraError::UnknownEra("Nowhere".into()))
        );
        assert_eq!(
            t.era_to_gregorian(&EraDate::new("Taichang", 2)),
            Err(EraError::OrdinalOutOfRange {
                era: "Taichang".into(),
                ordinal: 2,
                max: 1
            })
        );
        assert!(t.era_to_gregorian(&EraDate::new("Chongzhen", 0)).is_err());
    }

    #[test]
    fn every_entry_round_trips() {
        let t = EraTable::builtin();
        for e in &t.entries {
            for ord in 1..=e.len() {
                let y = t.era_to_gregorian(&EraDate::new(&e.era, ord)).unwrap();
                assert!((e.start..=e.end).contains(&y));
                assert!(t.gregorian_to_era(y).iter().any(|(c, o)| c.era == e.era && *o == ord));
                assert_eq!(t.ordinal_in(&e.era, y), Some(ord));
            }
        }
    }

    #[test]
    fn transition_year_has_two_names() {
        let t = EraTable::builtin();
        let names: Vec<_> = t.gregorian_to_era(1644).iter().map(|(e, o)| (e.era.clone(), *o)).collect();
        assert_eq!(names, vec![("Chongzhen".to_string(), 17), ("Shunzhi".to_string(), 1)]);
    }

    #[test]
    fn parse_rejects_bad_tables() {
        assert!(matches!(EraTable::parse("A\tMing\t1\n"), Err(EraError::Parse { line: 1, .. })));
        assert!(matches!(EraTable::parse("A\tMing\t5\t1\n"), Err(EraError::Parse { .. })));
        assert!(matches!(
            EraTable::parse("A\tMing\t1\t2\nA\tMing\t3\t4\n"),
            Err(EraError::Parse { line: 2, .. })
        ));
        assert_eq!(EraTable::parse("# c\n\nA\tMing\t1\t2\n").unwrap().entries.len(), 1);
    }

    #[test]
    fn find_respects_dynasty() {
        let t = EraTable::builtin();
        assert!(t.find("chongzhen", Some("Ming")).is_some());
        assert!(t.find("崇祯", Some("明")).is_some());
        assert!(t.find("Chongzhen", Some("Qing")).is_none());
    }
}
