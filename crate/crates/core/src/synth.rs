//! Seeded synthetic corpus for desk-scale runs and fixtures.
//!
//! Every person entry follows one writing pattern
//! (`姓名，字X，号Y。Z人。` followed by dated events), so the gold chunk of
//! each figure and the gold triples are known by construction. Distractor
//! documents hold unrelated prose and no entries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_id, Document};
use crate::extraction::{Provenance, Triple};
use crate::gateway::{tags, MockScript};
use crate::remediation::era_text::cjk_ordinal;
use crate::remediation::EraTable;

/// Regex that extracts the introduction of a synthetic entry.
pub const ENTRY_PATTERN: &str = r"([^，。\s]+)，字([^，。\s]+)，号([^，。\s]+)。([^，。\s]+)人。";
pub const ENTRY_ROLES: [&str; 4] = ["name", "styled_name", "nickname", "hometown"];
/// Boundary regex for the rule-based chunker: an entry starts a line.
pub const ENTRY_BOUNDARY: &str = r"(?m)^[^，。\s]+，字";

const SURNAMES: &str = "王李张刘陈杨黄赵吴周徐孙马朱胡郭何高林罗郑梁谢宋唐许韩冯邓曹彭曾萧田董潘袁蔡蒋余杜叶程魏苏吕丁沈任姚卢姜崔钟谭陆汪范金石廖贾夏韦傅方邹孟熊秦邱江尹薛闫段雷侯龙史陶黎贺顾毛郝龚邵万钱严覃武戴莫孔向汤";
const GIVEN: &str = "文武德明光辉志远清正仁义礼智信忠孝廉耻恭宽敏惠温良俭让允中庸和平安定永嘉宁康泰华国邦士元亨利贞乾坤震巽坎离艮兑春秋冬夏松柏梅竹兰菊云山川海岳峰泉石玉金珠璧瑞祥";
const HOMETOWNS: [&str; 16] = [
    "余姚", "会稽", "山阴", "钱塘", "仁和", "海宁", "归安", "乌程", "长洲", "吴县", "昆山", "常熟", "无锡", "江阴", "华亭", "上海",
];
const DISTRACTOR_PLACES: [&str; 8] = ["松江府", "苏州府", "杭州府", "绍兴府", "湖州府", "常州府", "嘉兴府", "宁波府"];
const DISTRACTOR_FACTS: [&str; 8] = [
    "地处江南，河网密布",
    "盛产稻米与丝绸",
    "城中多书院",
    "每岁漕粮北运",
    "府治设于城东",
    "境内有湖泊数处",
    "明代设巡检司",
    "清初沿用旧制",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub figures: usize,
    pub distractors: usize,
    pub seed: u64,
    /// Entries per volume document.
    pub per_document: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            figures: 10,
            distractors: 5,
            seed: 42,
            per_document: 4,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("at least one figure is required")]
    NoFigures,
    #[error("at most {max} distinct figures can be generated, {asked} requested")]
    TooMany { asked: usize, max: usize },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Figure {
    pub name: String,
    pub styled_name: String,
    pub nickname: String,
    pub hometown: String,
    pub birth_year: i32,
    pub degree_year: i32,
    pub doc_id: String,
    pub chunk_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Sorted by id, like [`crate::corpus::load_corpus`] returns them.
    pub documents: Vec<Document>,
    pub figures: Vec<Figure>,
    /// Person entry spans per document, in character offsets.
    pub spans: BTreeMap<String, Vec<(usize, usize)>>,
}

fn era_phrase(table: &EraTable, year: i32) -> String {
    let (entry, ordinal) = table
        .gregorian_to_era(year)
        .into_iter()
        .find(|(e, _)| e.cjk_name().is_some())
        .expect("synthetic years lie inside the era table");
    format!("{}{}年（{year}）", entry.cjk_name().unwrap_or(&entry.era), cjk_ordinal(ordinal))
}

fn pick_unique(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
    loop {
        let s = make(rng);
        if used.insert(s.clone()) {
            return s;
        }
    }
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self, SynthError> {
        if config.figures == 0 {
            return Err(SynthError::NoFigures);
        }
        let max = 2000;
        if config.figures > max {
            return Err(SynthError::TooMany {
                asked: config.figures,
                max,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let table = EraTable::builtin();
        let surnames = chars(SURNAMES);
        let given = chars(GIVEN);
        let mut used: BTreeSet<String> = HOMETOWNS.iter().map(|s| s.to_string()).collect();
        let per_doc = config.per_document.max(1);

        let mut figures = Vec::new();
        let mut docs: Vec<(String, String, Vec<(usize, usize)>)> = Vec::new();
        for i in 0..config.figures {
            let vol = i / per_doc + 1;
            if docs.len() < vol {
                let header = format!("列传 卷{}\n", cjk_ordinal(vol as u32).replace('元', "一"));
                docs.push((format!("vol{vol:03}"), header, Vec::new()));
            }
            let name = pick_unique(&mut rng, &mut used, |r| {
                let n = r.random_range(1..=2);
                let mut s = surnames.choose(r).unwrap().to_string();
                (0..n).for_each(|_| s.push(*given.choose(r).unwrap()));
                s
            });
            let two = |r: &mut ChaCha8Rng| -> String { (0..2).map(|_| *given.choose(r).unwrap()).collect() };
            let styled_name = pick_unique(&mut rng, &mut used, two);
            let nickname = pick_unique(&mut rng, &mut used, |r| format!("{}{}", *given.choose(r).unwrap(), ["斋", "庵", "山人", "居士"].choose(r).unwrap()));
            let hometown = HOMETOWNS.choose(&mut rng).unwrap().to_string();
            let birth_year = rng.random_range(1580..=1640);
            let degree_year = birth_year + rng.random_range(20..=35);
            let entry = format!(
                "{name}，字{styled_name}，号{nickname}。{hometown}人。{}生。{}中进士。\n",
                era_phrase(&table, birth_year),
                era_phrase(&table, degree_year)
            );
            let (doc_id, text, spans) = docs.last_mut().unwrap();
            let start = text.chars().count();
            text.push_str(&entry);
            spans.push((start, text.chars().count()));
            // chunk 0 is the volume header
            figures.push(Figure {
                name,
                styled_name,
                nickname,
                hometown,
                birth_year,
                degree_year,
                doc_id: doc_id.clone(),
                chunk_id: chunk_id(doc_id, spans.len()),
            });
        }
        for d in 0..config.distractors {
            let place = DISTRACTOR_PLACES.choose(&mut rng).unwrap();
            let mut facts: Vec<&str> = DISTRACTOR_FACTS.to_vec();
            facts.shuffle(&mut rng);
            let n = rng.random_range(2..=4);
            let text = format!("{place}{}。\n", facts[..n].join("，"));
            docs.push((format!("misc{:03}", d + 1), text, Vec::new()));
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let spans = docs.iter().map(|(id, _, s)| (id.clone(), s.clone())).collect();
        let documents = docs.into_iter().map(|(id, text, _)| Document::new(id, text)).collect();
        Ok(Self {
            documents,
            figures,
            spans,
        })
    }

    /// Gold retrieval: each figure's name maps to its single entry chunk.
    pub fn gold_retrieval(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.figures
            .iter()
            .map(|f| (f.name.clone(), BTreeSet::from([f.chunk_id.clone()])))
            .collect()
    }

    /// Gold triples in chunk order, as the entry regex yields them.
    pub fn gold_triples(&self) -> Vec<Triple> {
        let mut out = Vec::new();
        for f in &self.figures {
            for (relation, tail) in [
                ("styled_name", &f.styled_name),
                ("nickname", &f.nickname),
                ("hometown", &f.hometown),
            ] {
                out.push(Triple {
                    head: f.name.clone(),
                    relation: relation.into(),
                    tail: tail.clone(),
                    chunk_id: f.chunk_id.clone(),
                    provenance: Provenance::Regex,
                });
            }
        }
        out
    }

    /// Scripted gateway answers for indexing this corpus: the entry spans
    /// of every document in id order, the entry regex for every regex
    /// request, and an empty plan-B reply.
    pub fn index_script(&self) -> MockScript {
        let mut script = MockScript::default();
        for doc in &self.documents {
            let spans = &self.spans[&doc.id];
            script.push(tags::CHUNK, serde_json::to_string(spans).expect("spans serialize"));
        }
        let regex = serde_json::json!({"pattern": ENTRY_PATTERN, "roles": ENTRY_ROLES});
        script.push(tags::EXTRACT_REGEX, regex.to_string()).repeat(tags::EXTRACT_REGEX);
        script.push(tags::EXTRACT_DIRECT, "").repeat(tags::EXTRACT_DIRECT);
        script
    }

    /// Scripted answers for generating one figure's biography from its
    /// entry: two supported sentences, then the end marker.
    pub fn generation_script(&self, figure: usize) -> MockScript {
        let f = &self.figures[figure];
        let s0 = format!("{}，字{}，号{}。", f.name, f.styled_name, f.nickname);
        let s1 = format!("{}人。", f.hometown);
        let mut script = MockScript::default();
        script
            .push(tags::GENERATE, s0.clone())
            .push(tags::GENERATE, s1.clone())
            .push(tags::GENERATE, crate::pipeline::END_MARKER);
        script.push(tags::DECOMPOSE, s0).push(tags::DECOMPOSE, s1);
        script.push(tags::VERIFY, "SUPPORTED").repeat(tags::VERIFY);
        script
    }

    /// Writes `corpus/*.txt`, `gold_retrieval.json`, `gold_triples.jsonl`,
    /// `figures.json`, `index_script.json` and `generate_script.json` (for the
    /// first figure) under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |p: &Path, e: std::io::Error| SynthError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let corpus = dir.join("corpus");
        fs::create_dir_all(&corpus).map_err(|e| io(&corpus, e))?;
        let put = |p: &Path, s: String| fs::write(p, s).map_err(|e| io(p, e));
        for doc in &self.documents {
            put(&corpus.join(format!("{}.txt", doc.id)), doc.text.clone())?;
        }
        let json = |v: &dyn erased::Json| format!("{}\n", v.pretty());
        put(&dir.join("gold_retrieval.json"), json(&self.gold_retrieval()))?;
        put(&dir.join("figures.json"), json(&self.figures))?;
        let triples: String = self
            .gold_triples()
            .iter()
            .map(|t| format!("{}\n", serde_json::to_string(t).expect("triples serialize")))
            .collect();
        put(&dir.join("gold_triples.jsonl"), triples)?;
        put(&dir.join("index_script.json"), format!("{}\n", self.index_script().to_json()))?;
        put(&dir.join("generate_script.json"), format!("{}\n", self.generation_script(0).to_json()))
    }
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("synthetic records serialize")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{check_partition, chunks_from_spans, ChunkKind};
    use crate::extraction::{apply_regex, ExtractionRegex, RegexOrigin};

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = SynthConfig::default();
        assert_eq!(SynthCorpus::generate(&c).unwrap(), SynthCorpus::generate(&c).unwrap());
        let other = SynthConfig { seed: 7, ..c };
        assert_ne!(SynthCorpus::generate(&c).unwrap().figures, SynthCorpus::generate(&other).unwrap().figures);
    }

    #[test]
    fn single_figure_no_distractors() {
        let s = SynthCorpus::generate(&SynthConfig {
            figures: 1,
            distractors: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(s.documents.len(), 1);
        assert_eq!(s.figures.len(), 1);
        assert_eq!(s.figures[0].chunk_id, "vol001#00001");
        assert_eq!(SynthCorpus::generate(&SynthConfig { figures: 0, ..SynthConfig::default() }), Err(SynthError::NoFigures));
    }

    #[test]
    fn gold_triples_equal_regex_output() {
        let s = SynthCorpus::generate(&SynthConfig::default()).unwrap();
        let regex = ExtractionRegex::new(ENTRY_PATTERN, &ENTRY_ROLES, RegexOrigin::Handcrafted);
        let mut got = Vec::new();
        for doc in &s.documents {
            let chunks = chunks_from_spans(doc, &s.spans[&doc.id]);
            check_partition(doc, &chunks).unwrap();
            for c in chunks.iter().filter(|c| c.kind == ChunkKind::Biographical) {
                got.extend(apply_regex(&regex, c, "name").unwrap());
            }
        }
        let key = |t: &Triple| (t.chunk_id.clone(), t.relation.clone(), t.tail.clone());
        let mut want = s.gold_triples();
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }

    #[test]
    fn names_are_distinct_and_entries_dated() {
        let s = SynthCorpus::generate(&SynthConfig {
            figures: 200,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut names = BTreeSet::new();
        for f in &s.figures {
            assert!(names.insert(f.name.clone()));
            assert!(names.insert(f.styled_name.clone()));
            assert!(names.insert(f.nickname.clone()));
        }
        let doc = s.documents.iter().find(|d| d.id == s.figures[0].doc_id).unwrap();
        assert!(doc.text.contains(&format!("（{}）生。", s.figures[0].birth_year)));
        assert!(s.documents.iter().filter(|d| d.id.starts_with("misc")).all(|d| !d.text.contains('字')));
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = SynthCorpus::generate(&SynthConfig::default()).unwrap();
        s.write(dir.path()).unwrap();
        for f in ["gold_retrieval.json", "gold_triples.jsonl", "figures.json", "index_script.json", "corpus/vol001.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let loaded = crate::corpus::load_corpus(&dir.path().join("corpus")).unwrap();
        assert_eq!(loaded.documents, s.documents.iter().map(|d| {
            let mut d = d.clone();
            d.source = dir.path().join("corpus").join(format!("{}.txt", d.id)).display().to_string();
            d
        }).collect::<Vec<_>>());
    }
}
