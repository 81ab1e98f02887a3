//! Finding and rewriting dates in English and Chinese text.
//!
//! Recognized forms: "third year of Chongzhen (1630)", "the 3rd year of the
//! Chongzhen era in the Ming dynasty", "Chongzhen 3 (1630)", "明崇祯三年（1630）",
//! and bare Gregorian years such as "1630".

use regex::{Captures, Regex};

use super::era::{dynasty_cjk, EraDate, EraEntry, EraTable};

const UNITS: [&str; 9] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth",
];
const TEENS: [&str; 10] = [
    "tenth", "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth",
    "seventeenth", "eighteenth", "nineteenth",
];
const TENS: [(&str, &str); 5] = [
    ("twentieth", "twenty"),
    ("thirtieth", "thirty"),
    ("fortieth", "forty"),
    ("fiftieth", "fifty"),
    ("sixtieth", "sixty"),
];

/// English ordinal word for 1..=69.
pub fn ordinal_word(n: u32) -> Option<String> {
    match n {
        1..=9 => Some(UNITS[n as usize - 1].to_string()),
        10..=19 => Some(TEENS[n as usize - 10].to_string()),
        20..=69 => {
            let (exact, prefix) = TENS[n as usize / 10 - 2];
            Some(match n % 10 {
                0 => exact.to_string(),
                u => format!("{prefix}-{}", UNITS[u as usize - 1]),
            })
        }
        _ => None,
    }
}

fn parse_ordinal_word(w: &str) -> Option<u32> {
    let w = w.to_lowercase().replace(' ', "-");
    (1..=69).find(|&n| ordinal_word(n).as_deref() == Some(w.as_str()))
}

fn numeric_ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

const CJK_DIGITS: [char; 9] = ['一', '二', '三', '四', '五', '六', '七', '八', '九'];

/// Chinese year ordinal: 元 for the first year, otherwise 三, 十八, 二十一 ...
pub fn cjk_ordinal(n: u32) -> String {
    match n {
        1 => "元".into(),
        2..=9 => CJK_DIGITS[n as usize - 1].to_string(),
        10 => "十".into(),
        11..=19 => format!("十{}", CJK_DIGITS[n as usize - 11]),
        20..=99 => {
            let mut s = format!("{}十", CJK_DIGITS[n as usize / 10 - 1]);
            if n % 10 != 0 {
                s.push(CJK_DIGITS[n as usize % 10 - 1]);
            }
            s
        }
        _ => n.to_string(),
    }
}

pub fn parse_cjk_ordinal(s: &str) -> Option<u32> {
    if s == "元" || s == "正" {
        return Some(1);
    }
    let mut total = 0u32;
    let mut cur = 0u32;
    for c in s.chars() {
        if let Some(d) = CJK_DIGITS.iter().position(|&x| x == c) {
            cur = cur * 10 + d as u32 + 1;
        } else if c == '十' {
            total += cur.max(1) * 10;
            cur = 0;
        } else if c == '廿' {
            total += 20;
        } else if c == '〇' || c == '零' {
            cur *= 10;
        } else {
            return None;
        }
    }
    let n = total + cur;
    (n > 0).then_some(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Latin,
    Cjk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OrdinalForm {
    Word { capitalized: bool },
    Suffixed,
    Bare,
    Cjk,
}

/// Byte span inside the scanned text.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DateMention {
    pub span: Span,
    pub script: Script,
    /// Era date as written (era name normalized to the table's name).
    pub era: Option<EraDate>,
    /// Gregorian year written out in the text, if any.
    pub stated_year: Option<i32>,
    era_span: Option<Span>,
    ordinal_span: Option<(Span, OrdinalForm)>,
    year_span: Option<Span>,
    dynasty_span: Option<Span>,
}

impl DateMention {
    /// Year implied by the era date when it converts, else the stated year.
    pub fn year(&self, table: &EraTable) -> Option<i32> {
        self.era
            .as_ref()
            .and_then(|d| table.era_to_gregorian(d).ok())
            .or(self.stated_year)
    }

    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.span.0..self.span.1]
    }
}

/// Compiled date recognizers for one era table.
pub struct DateParser {
    table: EraTable,
    latin_words: Regex,
    latin_compact: Regex,
    cjk: Regex,
    digits: Regex,
}

fn alternation(mut names: Vec<String>) -> String {
    names.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    names.dedup();
    names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|")
}

impl DateParser {
    pub fn new(table: EraTable) -> Self {
        let latin_eras = alternation(table.entries.iter().map(|e| e.era.clone()).collect());
        let cjk_eras = alternation(
            table
                .entries
                .iter()
                .flat_map(|e| e.other_names.iter().filter(|n| n.chars().all(crate::text::is_cjk)).cloned())
                .collect(),
        );
        let dynasties = alternation(table.entries.iter().map(|e| e.dynasty.clone()).collect());
        let cjk_dynasties = alternation(
            table
                .entries
                .iter()
                .filter_map(|e| dynasty_cjk(&e.dynasty).map(String::from))
                .collect(),
        );
        let words: Vec<String> = (1..=69)
            .filter_map(ordinal_word)
            .map(|w| w.replace('-', "[- ]"))
            .rev()
            .collect();
        let dyn_tail = format!(r"(?:\s+(?:in|of)\s+the\s+(?P<{{}}>{dynasties})\s+dynasty)?");
        let latin_words = format!(
            r"(?i)\b(?P<ord>{}|\d{{1,2}}(?:st|nd|rd|th))\s+year\s+of\s+(?:the\s+)?(?P<era>{latin_eras})(?:\s+(?:era|reign))?{}(?:\s*\((?P<year>\d{{3,4}})\))?{}",
            words.join("|"),
            dyn_tail.replace("{}", "dyn1"),
            dyn_tail.replace("{}", "dyn2"),
        );
        let latin_compact = format!(r"\b(?P<era>{latin_eras})\s+(?P<ord>\d{{1,2}})\b(?:\s*\((?P<year>\d{{3,4}})\))?");
        let cjk = format!(
            r"(?:(?P<dyn1>{cjk_dynasties})朝?)?(?P<era>{cjk_eras})(?P<ord>元|正|[一二三四五六七八九十廿〇零]+)年(?:\s*[（(](?P<year>\d{{3,4}})[）)])?"
        );
        Self {
            latin_words: Regex::new(&latin_words).expect("date pattern compiles"),
            latin_compact: Regex::new(&latin_compact).expect("date pattern compiles"),
            cjk: Regex::new(&cjk).expect("date pattern compiles"),
            digits: Regex::new(r"\d+").expect("digit pattern compiles"),
            table,
        }
    }

    pub fn table(&self) -> &EraTable {
        &self.table
    }

    fn mention(&self, caps: &Captures, script: Script, form: OrdinalForm) -> Option<DateMention> {
        let whole = caps.get(0)?;
        let era_m = caps.name("era")?;
        let ord_m = caps.name("ord")?;
        let entry = self.table.find(era_m.as_str(), None)?;
        let (ordinal, form) = match form {
            OrdinalForm::Cjk => (parse_cjk_ordinal(ord_m.as_str())?, form),
            _ => {
                let s = ord_m.as_str();
                if let Some(n) = parse_ordinal_word(s) {
                    let capitalized = s.chars().next().is_some_and(char::is_uppercase);
                    (n, OrdinalForm::Word { capitalized })
                } else {
                    let digits: String = s.chars().take_while(char::is_ascii_digit).collect();
                    let n = digits.parse().ok()?;
                    (n, if digits.len() == s.len() { OrdinalForm::Bare } else { OrdinalForm::Suffixed })
                }
            }
        };
        let span = |m: regex::Match| (m.start(), m.end());
        Some(DateMention {
            span: span(whole),
            script,
            era: Some(EraDate::new(&entry.era, ordinal)),
            stated_year: caps.name("year").and_then(|y| y.as_str().parse().ok()),
            era_span: Some(span(era_m)),
            ordinal_span: Some((span(ord_m), form)),
            year_span: caps.name("year").map(span),
            dynasty_span: caps.name("dyn1").or_else(|| caps.name("dyn2")).map(span),
        })
    }

    /// Every date mention in `text`, in order of appearance.
    pub fn find(&self, text: &str) -> Vec<DateMention> {
        let mut found: Vec<DateMention> = Vec::new();
        for caps in self.latin_words.captures_iter(text) {
            found.extend(self.mention(&caps, Script::Latin, OrdinalForm::Bare));
        }
        for caps in self.latin_compact.captures_iter(text) {
            found.extend(self.mention(&caps, Script::Latin, OrdinalForm::Bare));
        }
        for caps in self.cjk.captures_iter(text) {
            found.extend(self.mention(&caps, Script::Cjk, OrdinalForm::Cjk));
        }
        found.sort_by(|a, b| a.span.0.cmp(&b.span.0).then(b.span.1.cmp(&a.span.1)));
        let mut mentions: Vec<DateMention> = Vec::new();
        for m in found {
            if mentions.last().is_none_or(|last| m.span.0 >= last.span.1) {
                mentions.push(m);
            }
        }
        let covered = |pos: usize, ms: &[DateMention]| ms.iter().any(|m| m.span.0 <= pos && pos < m.span.1);
        let mut bare = Vec::new();
        for d in self.digits.find_iter(text) {
            if d.as_str().len() != 4 || covered(d.start(), &mentions) {
                continue;
            }
            let year: i32 = d.as_str().parse().unwrap_or(0);
            if !(1000..=2100).contains(&year) {
                continue;
            }
            let script = if text[d.end()..].starts_with('年') { Script::Cjk } else { Script::Latin };
            bare.push(DateMention {
                span: (d.start(), d.end()),
                script,
                era: None,
                stated_year: Some(year),
                era_span: None,
                ordinal_span: None,
                year_span: Some((d.start(), d.end())),
                dynasty_span: None,
            });
        }
        mentions.extend(bare);
        mentions.sort_by_key(|m| m.span.0);
        mentions
    }

    /// Era to use when rewriting `mention` to `year`: the evidence's era if
    /// given, else the mention's own era when it covers `year`, else any era
    /// covering it (same dynasty preferred).
    fn target_era<'a>(&'a self, mention: &DateMention, year: i32, preferred: Option<&'a EraEntry>) -> Option<(&'a EraEntry, u32)> {
        if let Some(e) = preferred {
            if (e.start..=e.end).contains(&year) {
                return Some((e, (year - e.start + 1) as u32));
            }
        }
        let own = mention.era.as_ref().and_then(|d| self.table.find(&d.era_name, None));
        if let Some(e) = own {
            if (e.start..=e.end).contains(&year) {
                return Some((e, (year - e.start + 1) as u32));
            }
        }
        let cands = self.table.gregorian_to_era(year);
        cands
            .iter()
            .find(|(e, _)| own.is_some_and(|o| o.dynasty == e.dynasty))
            .or_else(|| cands.last())
            .copied()
    }

    /// Rewrites one mention inside `text` so that it names `year`, keeping
    /// its script and form. `era_hint` names the era the evidence used.
    pub fn rewrite(&self, text: &str, mention: &DateMention, year: i32, era_hint: Option<&str>) -> String {
        let mut edits: Vec<(Span, String)> = Vec::new();
        if let Some(ys) = mention.year_span {
            edits.push((ys, year.to_string()));
        }
        if mention.era.is_some() {
            let preferred = era_hint.and_then(|h| self.table.find(h, None));
            if let Some((entry, ordinal)) = self.target_era(mention, year, preferred) {
                if let Some(es) = mention.era_span {
                    let name = match mention.script {
                        Script::Cjk => entry.cjk_name().unwrap_or(&entry.era).to_string(),
                        Script::Latin => entry.era.clone(),
                    };
                    edits.push((es, name));
                }
                if let Some((os, form)) = mention.ordinal_span {
                    let s = match form {
                        OrdinalForm::Cjk => cjk_ordinal(ordinal),
                        OrdinalForm::Bare => ordinal.to_string(),
                        OrdinalForm::Suffixed => numeric_ordinal(ordinal),
                        OrdinalForm::Word { capitalized } => {
                            let w = ordinal_word(ordinal).unwrap_or_else(|| numeric_ordinal(ordinal));
                            if capitalized {
                                let mut c = w.chars();
                                c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or(w)
                            } else {
                                w
                            }
                        }
                    };
                    edits.push((os, s));
                }
                if let Some(ds) = mention.dynasty_span {
                    let d = match mention.script {
                        Script::Cjk => dynasty_cjk(&entry.dynasty).unwrap_or(&entry.dynasty).to_string(),
                        Script::Latin => entry.dynasty.clone(),
                    };
                    edits.push((ds, d));
                }
            }
        }
        edits.sort_by_key(|(s, _)| s.0);
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        for ((start, end), rep) in edits {
            out.push_str(&text[pos..start]);
            out.push_str(&rep);
            pos = end;
        }
        out.push_str(&text[pos..]);
        out
    }
}
