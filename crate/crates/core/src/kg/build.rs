use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Edge, EntityNode, KgError, KnowledgeGraph, NodeKind};
use crate::corpus::Chunk;
use crate::extraction::Triple;
use crate::text::normalize_name;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Relations whose tail is another name for the head.
    pub alias_relations: BTreeSet<String>,
    /// Relations that tell same-named people apart across documents.
    pub discriminators: BTreeSet<String>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            alias_relations: ["styled_name", "nickname"].iter().map(|s| s.to_string()).collect(),
            discriminators: ["hometown"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionOutcome {
    Merged,
    Split,
}

/// A head name seen in more than one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub name: String,
    pub doc_id: String,
    pub outcome: CollisionOutcome,
    pub node_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub nodes: usize,
    pub edges: usize,
    pub orphans: usize,
    pub collisions: Vec<Collision>,
    pub invalid_triples: usize,
}

struct Cluster<'a> {
    id: String,
    docs: BTreeSet<String>,
    disc: BTreeMap<String, BTreeSet<String>>,
    triples: Vec<&'a Triple>,
}

fn compatible(a: &BTreeMap<String, BTreeSet<String>>, b: &BTreeMap<String, BTreeSet<String>>) -> bool {
    a.iter()
        .all(|(rel, va)| b.get(rel).is_none_or(|vb| va.is_empty() || vb.is_empty() || !va.is_disjoint(vb)))
}

fn surface(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds the graph. One node per distinct normalized head, except that a
/// head seen in several documents is split when a discriminator relation
/// disagrees between them; every cross-document name reuse is reported.
pub fn build_graph(
    triples: &[Triple],
    chunks: &[Chunk],
    config: &GraphConfig,
) -> Result<(KnowledgeGraph, BuildReport), KgError> {
    let store: BTreeMap<String, Chunk> = chunks.iter().map(|c| (c.id.clone(), c.clone())).collect();
    let mut report = BuildReport::default();
    let mut valid: Vec<&Triple> = Vec::new();
    for t in triples {
        if !store.contains_key(&t.chunk_id) {
            return Err(KgError::UnknownChunk(t.chunk_id.clone()));
        }
        if [&t.head, &t.relation, &t.tail].iter().any(|s| s.trim().is_empty()) {
            report.invalid_triples += 1;
            continue;
        }
        valid.push(t);
    }

    // normalized name -> doc -> triples
    let mut by_name: BTreeMap<String, BTreeMap<String, Vec<&Triple>>> = BTreeMap::new();
    let mut first_surface: BTreeMap<String, String> = BTreeMap::new();
    for t in &valid {
        let key = normalize_name(&t.head);
        first_surface.entry(key.clone()).or_insert_with(|| surface(&t.head));
        by_name
            .entry(key)
            .or_default()
            .entry(store[&t.chunk_id].doc_id.clone())
            .or_default()
            .push(t);
    }

    let mut clusters_by_name: BTreeMap<String, Vec<Cluster>> = BTreeMap::new();
    for (key, docs) in &by_name {
        let base = first_surface[key].clone();
        let mut clusters: Vec<Cluster> = Vec::new();
        for (doc, ts) in docs {
            let mut disc: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for t in ts.iter().filter(|t| config.discriminators.contains(&t.relation)) {
                disc.entry(t.relation.clone()).or_default().insert(normalize_name(&t.tail));
            }
            let target = clusters
                .iter()
                .position(|c| c.docs.contains(doc) || compatible(&c.disc, &disc));
            let idx = match target {
                Some(i) => {
                    if !clusters[i].docs.contains(doc) {
                        report.collisions.push(Collision {
                            name: base.clone(),
                            doc_id: doc.clone(),
                            outcome: CollisionOutcome::Merged,
                            node_id: clusters[i].id.clone(),
                        });
                    }
                    i
                }
                None => {
                    let id = if clusters.is_empty() {
                        base.clone()
                    } else {
                        format!("{base}#{}", clusters.len() + 1)
                    };
                    if !clusters.is_empty() {
                        report.collisions.push(Collision {
                            name: base.clone(),
                            doc_id: doc.clone(),
                            outcome: CollisionOutcome::Split,
                            node_id: id.clone(),
                        });
                    }
                    clusters.push(Cluster {
                        id,
                        docs: BTreeSet::new(),
                        disc: BTreeMap::new(),
                        triples: Vec::new(),
                    });
                    clusters.len() - 1
                }
            };
            let c = &mut clusters[idx];
            c.docs.insert(doc.clone());
            for (rel, vals) in disc {
                c.disc.entry(rel).or_default().extend(vals);
            }
            c.triples.extend(ts.iter().copied());
        }
        clusters_by_name.insert(key.clone(), clusters);
    }

    let mut nodes: BTreeMap<String, EntityNode> = BTreeMap::new();
    for (key, clusters) in &clusters_by_name {
        for c in clusters {
            let mut node = EntityNode {
                id: c.id.clone(),
                canonical_name: first_surface[key].clone(),
                aliases: BTreeSet::new(),
                chunk_ids: BTreeSet::new(),
                kind: NodeKind::Person,
            };
            for t in &c.triples {
                node.chunk_ids.insert(t.chunk_id.clone());
                if config.alias_relations.contains(&t.relation) {
                    let alias = surface(&t.tail);
                    if normalize_name(&alias) != *key {
                        node.aliases.insert(alias);
                    }
                }
            }
            nodes.insert(node.id.clone(), node);
        }
    }

    let mut edges = Vec::new();
    for clusters in clusters_by_name.values() {
        for c in clusters {
            for t in &c.triples {
                let tail = if config.alias_relations.contains(&t.relation) {
                    c.id.clone()
                } else {
                    let tkey = normalize_name(&t.tail);
                    match clusters_by_name.get(&tkey).and_then(|cs| cs.first()) {
                        Some(person) => person.id.clone(),
                        None => {
                            let id = surface(&t.tail);
                            let entry = nodes.entry(id.clone()).or_insert_with(|| EntityNode {
                                id: id.clone(),
                                canonical_name: id.clone(),
                                aliases: BTreeSet::new(),
                                chunk_ids: BTreeSet::new(),
                                kind: NodeKind::Entity,
                            });
                            entry.chunk_ids.insert(t.chunk_id.clone());
                            id
                        }
                    }
                };
                edges.push(Edge {
                    head: c.id.clone(),
                    relation: t.relation.clone(),
                    tail,
                    chunk_id: t.chunk_id.clone(),
                    tail_surface: surface(&t.tail),
                });
            }
        }
    }
    edges.sort();
    edges.dedup();

    let cited: BTreeSet<&str> = valid.iter().map(|t| t.chunk_id.as_str()).collect();
    let orphan_chunks: BTreeSet<String> = store
        .keys()
        .filter(|id| !cited.contains(id.as_str()))
        .cloned()
        .collect();

    for c in &report.collisions {
        log::info!("name collision `{}` in {}: {:?} as {}", c.name, c.doc_id, c.outcome, c.node_id);
    }
    report.nodes = nodes.len();
    report.edges = edges.len();
    report.orphans = orphan_chunks.len();
    Ok((KnowledgeGraph::from_parts(nodes, edges, store, orphan_chunks), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Provenance;
    use crate::kg::tests::chunk;
    use crate::kg::MatchKind;

    fn t(h: &str, r: &str, tl: &str, c: &str) -> Triple {
        Triple {
            head: h.into(),
            relation: r.into(),
            tail: tl.into(),
            chunk_id: c.into(),
            provenance: Provenance::Regex,
        }
    }

    fn build(triples: &[Triple], chunks: &[Chunk]) -> (KnowledgeGraph, BuildReport) {
        build_graph(triples, chunks, &GraphConfig::default()).unwrap()
    }

    #[test]
    fn hu_e_fixture_graph() {
        let c = chunk("a#00000", "Hu E, styled Zhuo'an, nicknamed X");
        let (g, _) = build(&[t("Hu E", "styled_name", "Zhuo'an", "a#00000")], &[c]);
        assert_eq!(g.nodes.len(), 1);
        let n = &g.nodes["Hu E"];
        assert_eq!(n.aliases, BTreeSet::from(["Zhuo'an".to_string()]));
        assert_eq!(n.chunk_ids, BTreeSet::from(["a#00000".to_string()]));
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].tail, "Hu E");
        assert_eq!(g.edges[0].tail_surface, "Zhuo'an");
        assert_eq!(g.lookup("Hu E").unwrap(), Some(("Hu E".into(), MatchKind::Canonical)));
        assert_eq!(g.lookup("zhuo'an").unwrap(), Some(("Hu E".into(), MatchKind::Alias)));
        assert_eq!(g.lookup("Zhuo\u{2019}an").unwrap(), Some(("Hu E".into(), MatchKind::Alias)));
        assert_eq!(g.check_integrity(), Ok(()));
    }

    #[test]
    fn no_triples_means_all_orphans() {
        let chunks: Vec<_> = (0..3).map(|i| chunk(&format!("a#{i:05}"), "x")).collect();
        let (g, r) = build(&[], &chunks);
        assert!(g.nodes.is_empty());
        assert_eq!(g.orphan_chunks.len(), 3);
        assert_eq!(r.orphans, 3);
    }

    #[test]
    fn two_heads_sharing_a_chunk_both_link_it() {
        let c = chunk("a#00000", "P, styled A. Q, styled B.");
        let (g, _) = build(
            &[t("P", "styled_name", "A", "a#00000"), t("Q", "styled_name", "B", "a#00000")],
            &[c],
        );
        assert!(g.nodes["P"].chunk_ids.contains("a#00000"));
        assert!(g.nodes["Q"].chunk_ids.contains("a#00000"));
    }

    #[test]
    fn unknown_chunk_is_an_error() {
        assert_eq!(
            build_graph(&[t("P", "r", "x", "zz#0")], &[], &GraphConfig::default()).unwrap_err(),
            KgError::UnknownChunk("zz#0".into())
        );
    }

    #[test]
    fn non_alias_tails_become_entity_nodes() {
        let c = chunk("a#00000", "Hu E, native of Yuyao");
        let (g, _) = build(&[t("Hu E", "hometown", "Yuyao", "a#00000")], &[c]);
        assert_eq!(g.nodes["Yuyao"].kind, NodeKind::Entity);
        assert_eq!(g.neighbors("Hu E").collect::<Vec<_>>(), vec!["Yuyao"]);
    }

    #[test]
    fn homonyms_with_different_hometowns_are_split() {
        let chunks = [chunk("a#00000", "Li Wen of Yuyao"), chunk("b#00000", "Li Wen of Suzhou")];
        let (g, r) = build(
            &[
                t("Li Wen", "hometown", "Yuyao", "a#00000"),
                t("Li Wen", "hometown", "Suzhou", "b#00000"),
            ],
            &chunks,
        );
        assert!(g.nodes.contains_key("Li Wen") && g.nodes.contains_key("Li Wen#2"));
        assert_eq!(r.collisions.len(), 1);
        assert_eq!(r.collisions[0].outcome, CollisionOutcome::Split);
        assert!(matches!(g.lookup("li wen"), Err(KgError::Ambiguous { .. })));
        assert_eq!(g.lookup("Li Wen#2").unwrap(), Some(("Li Wen#2".into(), MatchKind::NodeId)));
    }

    #[test]
    fn homonyms_agreeing_or_undiscriminated_are_merged() {
        let chunks = [chunk("a#00000", "Li Wen of Yuyao"), chunk("b#00000", "Li Wen, styled Boyu")];
        let (g, r) = build(
            &[
                t("Li Wen", "hometown", "Yuyao", "a#00000"),
                t("Li Wen", "styled_name", "Boyu", "b#00000"),
            ],
            &chunks,
        );
        assert_eq!(g.nodes["Li Wen"].chunk_ids.len(), 2);
        assert_eq!(r.collisions[0].outcome, CollisionOutcome::Merged);
    }

    #[test]
    fn alias_equal_to_canonical_is_not_stored() {
        let c = chunk("a#00000", "Hu E, styled hu e");
        let (g, _) = build(&[t("Hu E", "styled_name", "hu  e", "a#00000")], &[c]);
        assert!(g.nodes["Hu E"].aliases.is_empty());
    }

    #[test]
    fn invalid_triples_are_counted() {
        let c = chunk("a#00000", "x");
        let (_, r) = build(&[t(" ", "r", "x", "a#00000")], &[c]);
        assert_eq!(r.invalid_triples, 1);
    }
}
