//! Interned triple store, reasoning-path enumeration and the path sentence format.
//!
//! Entities and relations are interned in first-seen order, so ids are dense and
//! stable for the lifetime of a [`KnowledgeGraph`]. Only forward edges are
//! traversed; inverse relations must be materialized in the input file.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opening marker of a formatted reasoning path.
pub const PATH_OPEN: &str = "<PATH>";
/// Closing marker of a formatted reasoning path.
pub const PATH_CLOSE: &str = "</PATH>";
/// Separator between entities and relations inside a formatted path.
pub const ARROW: &str = "→";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedRow { line: usize, found: usize },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("line {line}: invalid QA record: {source}")]
    MalformedRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity id {0} is not part of this graph")]
    InvalidEntityId(u32),
    #[error("hop limit must be at least 1")]
    ZeroHops,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Clone)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }
}

/// A deduplicated set of `(head, relation, tail)` facts with forward and
/// reverse adjacency. Adjacency lists are kept sorted by `(relation, entity)`.
#[derive(Debug, Default, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: HashSet<Triple>,
    out_edges: Vec<Vec<(RelationId, EntityId)>>,
    in_edges: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from string triples, mostly useful for fixtures.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = Self::new();
        for (h, r, t) in triples {
            kg.insert(h, r, t);
        }
        kg
    }

    /// Reads the TSV triple format: `head<TAB>relation<TAB>tail`, one per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self, KgError> {
        let mut kg = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::MalformedRow {
                    line: idx + 1,
                    found: fields.len(),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(KgError::EmptyField { line: idx + 1 });
            }
            kg.insert(fields[0], fields[1], fields[2]);
        }
        Ok(kg)
    }

    /// Interns the surface strings and adds the triple. Returns `false` when the
    /// triple was already present.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = EntityId(self.intern_entity(head));
        let r = RelationId(self.relations.intern(relation));
        let t = EntityId(self.intern_entity(tail));
        let triple = Triple {
            head: h,
            relation: r,
            tail: t,
        };
        if !self.triples.insert(triple) {
            return false;
        }
        let out = &mut self.out_edges[h.0 as usize];
        let pos = out.binary_search(&(r, t)).unwrap_err();
        out.insert(pos, (r, t));
        let inc = &mut self.in_edges[t.0 as usize];
        let pos = inc.binary_search(&(r, h)).unwrap_err();
        inc.insert(pos, (r, h));
        true
    }

    fn intern_entity(&mut self, name: &str) -> u32 {
        let id = self.entities.intern(name);
        if id as usize == self.out_edges.len() {
            self.out_edges.push(Vec::new());
            self.in_edges.push(Vec::new());
        }
        id
    }

    pub fn n_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations.names[id.0 as usize]
    }

    /// Entity surface strings in id order.
    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.names.iter().map(String::as_str)
    }

    /// Relation surface strings in id order.
    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.names.iter().map(String::as_str)
    }

    pub fn contains(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.triples.contains(&Triple {
            head,
            relation,
            tail,
        })
    }

    /// Outgoing `(relation, tail)` pairs, sorted.
    pub fn out_edges(&self, head: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_edges[head.0 as usize]
    }

    /// Incoming `(relation, head)` pairs, sorted.
    pub fn in_edges(&self, tail: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_edges[tail.0 as usize]
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_edges.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Iterates triples in `(head, relation, tail)` id order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.out_edges.iter().enumerate().flat_map(|(h, edges)| {
            edges.iter().map(move |&(relation, tail)| Triple {
                head: EntityId(h as u32),
                relation,
                tail,
            })
        })
    }

    /// Resolves surface strings, failing on the first unknown one.
    pub fn resolve_entities<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<EntityId>, KgError> {
        names
            .iter()
            .map(|n| {
                self.entity_id(n.as_ref())
                    .ok_or_else(|| KgError::UnknownEntity(n.as_ref().to_owned()))
            })
            .collect()
    }

    fn check_entity(&self, id: EntityId) -> Result<(), KgError> {
        if (id.0 as usize) < self.n_entities() {
            Ok(())
        } else {
            Err(KgError::InvalidEntityId(id.0))
        }
    }

    /// All grounded paths of 1..=`max_hops` hops starting at any of `starts`.
    ///
    /// Output is grouped per start (in the order given, duplicates dropped) and
    /// level by level within a start. Entity revisits are allowed.
    pub fn enumerate_paths(
        &self,
        starts: &[EntityId],
        max_hops: usize,
    ) -> Result<Vec<ReasoningPath>, KgError> {
        if max_hops == 0 {
            return Err(KgError::ZeroHops);
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &start in starts {
            self.check_entity(start)?;
            if seen.insert(start) {
                self.bfs_from(start, max_hops, &mut out);
            }
        }
        Ok(out)
    }

    /// Same result as [`enumerate_paths`](Self::enumerate_paths), with starts
    /// split across `jobs` worker threads.
    pub fn enumerate_paths_parallel(
        &self,
        starts: &[EntityId],
        max_hops: usize,
        jobs: usize,
    ) -> Result<Vec<ReasoningPath>, KgError> {
        if max_hops == 0 {
            return Err(KgError::ZeroHops);
        }
        let mut seen = HashSet::new();
        let mut unique = Vec::new();
        for &s in starts {
            self.check_entity(s)?;
            if seen.insert(s) {
                unique.push(s);
            }
        }
        let jobs = jobs.max(1).min(unique.len().max(1));
        if jobs == 1 {
            let mut out = Vec::new();
            for s in unique {
                self.bfs_from(s, max_hops, &mut out);
            }
            return Ok(out);
        }
        let chunk = unique.len().div_ceil(jobs);
        let parts: Vec<Vec<ReasoningPath>> = std::thread::scope(|scope| {
            let handles: Vec<_> = unique
                .chunks(chunk)
                .map(|starts| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        for &s in starts {
                            self.bfs_from(s, max_hops, &mut out);
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("path enumeration worker panicked"))
                .collect()
        });
        Ok(parts.into_iter().flatten().collect())
    }

    fn bfs_from(&self, start: EntityId, max_hops: usize, out: &mut Vec<ReasoningPath>) {
        let mut frontier = vec![ReasoningPath::empty(start)];
        for _ in 0..max_hops {
            let mut next = Vec::new();
            for path in &frontier {
                for &(rel, tail) in self.out_edges(path.end()) {
                    let mut p = path.clone();
                    p.steps.push((rel, tail));
                    next.push(p);
                }
            }
            if next.is_empty() {
                break;
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
    }

    /// Renders `<PATH> e0 → r1 → e1 → ... → el </PATH>`.
    pub fn format_path(&self, path: &ReasoningPath) -> String {
        let mut s = String::with_capacity(16 + path.steps.len() * 32);
        s.push_str(PATH_OPEN);
        s.push(' ');
        s.push_str(self.entity_name(path.start));
        for &(rel, ent) in &path.steps {
            s.push(' ');
            s.push_str(ARROW);
            s.push(' ');
            s.push_str(self.relation_name(rel));
            s.push(' ');
            s.push_str(ARROW);
            s.push(' ');
            s.push_str(self.entity_name(ent));
        }
        s.push(' ');
        s.push_str(PATH_CLOSE);
        s
    }

    /// Parses a formatted path and checks every hop against the graph.
    pub fn parse_path(&self, text: &str) -> Result<ReasoningPath, PathDefect> {
        let inner = text
            .trim()
            .strip_prefix(PATH_OPEN)
            .and_then(|s| s.strip_suffix(PATH_CLOSE))
            .ok_or(PathDefect::MissingMarkers)?
            .trim();
        if inner.is_empty() {
            return Err(PathDefect::Empty);
        }
        let pieces: Vec<&str> = inner.split(ARROW).map(str::trim).collect();
        if pieces.len().is_multiple_of(2) {
            return Err(PathDefect::Truncated {
                pieces: pieces.len(),
            });
        }
        if pieces.len() == 1 {
            return Err(PathDefect::NoHops);
        }
        let entity = |name: &str| {
            self.entity_id(name)
                .ok_or_else(|| PathDefect::UnknownEntity(name.to_owned()))
        };
        let start = entity(pieces[0])?;
        let mut path = ReasoningPath::empty(start);
        for pair in pieces[1..].chunks(2) {
            let rel = self
                .relation_id(pair[0])
                .ok_or_else(|| PathDefect::UnknownRelation(pair[0].to_owned()))?;
            let tail = entity(pair[1])?;
            let head = path.end();
            if !self.contains(head, rel, tail) {
                return Err(PathDefect::Ungrounded {
                    hop: path.steps.len() + 1,
                    head: self.entity_name(head).to_owned(),
                    relation: pair[0].to_owned(),
                    tail: pair[1].to_owned(),
                });
            }
            path.steps.push((rel, tail));
        }
        Ok(path)
    }

    /// All minimum-length forward paths from `src` to `dst`, in lexicographic
    /// `(relation, entity)` order, truncated to `cap`. `src == dst` yields the
    /// single zero-hop path; an unreachable `dst` yields nothing.
    pub fn shortest_paths(&self, src: EntityId, dst: EntityId, cap: usize) -> Vec<ReasoningPath> {
        if cap == 0 || self.check_entity(src).is_err() || self.check_entity(dst).is_err() {
            return Vec::new();
        }
        if src == dst {
            return vec![ReasoningPath::empty(src)];
        }
        // Backward distances to dst let the forward walk prune every dead branch.
        let to_dst = self.distances_to(dst);
        let Some(total) = to_dst[src.0 as usize] else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut path = ReasoningPath::empty(src);
        self.walk_shortest(&mut path, dst, total, &to_dst, cap, &mut out);
        out
    }

    fn walk_shortest(
        &self,
        path: &mut ReasoningPath,
        dst: EntityId,
        total: usize,
        to_dst: &[Option<usize>],
        cap: usize,
        out: &mut Vec<ReasoningPath>,
    ) {
        if out.len() >= cap {
            return;
        }
        let cur = path.end();
        if path.len() == total {
            if cur == dst {
                out.push(path.clone());
            }
            return;
        }
        let remaining = total - path.len() - 1;
        for &(rel, next) in self.out_edges(cur) {
            if to_dst[next.0 as usize] != Some(remaining) {
                continue;
            }
            path.steps.push((rel, next));
            self.walk_shortest(path, dst, total, to_dst, cap, out);
            path.steps.pop();
            if out.len() >= cap {
                return;
            }
        }
    }

    fn distances_to(&self, dst: EntityId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_entities()];
        dist[dst.0 as usize] = Some(0);
        let mut queue = VecDeque::from([dst]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.0 as usize].unwrap();
            for &(_, head) in self.in_edges(v) {
                if dist[head.0 as usize].is_none() {
                    dist[head.0 as usize] = Some(d + 1);
                    queue.push_back(head);
                }
            }
        }
        dist
    }
}

/// An entity followed by `(relation, entity)` hops.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReasoningPath {
    pub start: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl ReasoningPath {
    pub fn empty(start: EntityId) -> Self {
        Self {
            start,
            steps: Vec::new(),
        }
    }

    /// Number of hops.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end(&self) -> EntityId {
        self.steps.last().map_or(self.start, |&(_, e)| e)
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        let heads = std::iter::once(self.start).chain(self.steps.iter().map(|&(_, e)| e));
        heads.zip(&self.steps).map(|(head, &(relation, tail))| Triple {
            head,
            relation,
            tail,
        })
    }
}

/// Why a path string failed to parse as a grounded path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathDefect {
    #[error("missing <PATH>/</PATH> markers")]
    MissingMarkers,
    #[error("empty path")]
    Empty,
    #[error("truncated path: {pieces} entity/relation pieces")]
    Truncated { pieces: usize },
    #[error("path has no hops")]
    NoHops,
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("hop {hop}: triple ({head}, {relation}, {tail}) is not in the graph")]
    Ungrounded {
        hop: usize,
        head: String,
        relation: String,
        tail: String,
    },
}

impl PathDefect {
    /// Structural defects are malformed text; the alternative is a well-formed
    /// path naming a triple the graph does not contain.
    pub fn is_structural(&self) -> bool {
        !matches!(self, PathDefect::Ungrounded { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// One question with pre-linked entities and gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub question_entities: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
}

/// Reads JSON-lines QA records; blank lines are skipped.
pub fn load_qa<R: BufRead>(reader: R) -> Result<Vec<QaRecord>, KgError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| KgError::MalformedRecord {
            line: idx + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const T1: &str = "A\tr1\tB\nB\tr2\tC\nA\tr3\tD\nD\tr2\tC\nB\tr2\tE\n";

    pub(crate) fn t1() -> KnowledgeGraph {
        KnowledgeGraph::from_tsv(T1.as_bytes()).unwrap()
    }

    fn texts(kg: &KnowledgeGraph, paths: &[ReasoningPath]) -> Vec<String> {
        let mut v: Vec<String> = paths.iter().map(|p| kg.format_path(p)).collect();
        v.sort();
        v
    }

    #[test]
    fn load_counts_fixture() {
        let kg = t1();
        assert_eq!(kg.n_entities(), 5);
        assert_eq!(kg.n_relations(), 3);
        assert_eq!(kg.n_triples(), 5);
    }

    #[test]
    fn load_empty_and_duplicates() {
        let kg = KnowledgeGraph::from_tsv("".as_bytes()).unwrap();
        assert_eq!(kg.n_triples(), 0);
        let dup = format!("{T1}A\tr1\tB\n# comment\n\n");
        let kg = KnowledgeGraph::from_tsv(dup.as_bytes()).unwrap();
        assert_eq!(kg.n_triples(), 5);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = KnowledgeGraph::from_tsv("A\tr1\tB\nA\tr1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, KgError::MalformedRow { line: 2, found: 2 }));
        let err = KnowledgeGraph::from_tsv("A\t\tB\n".as_bytes()).unwrap_err();
        assert!(matches!(err, KgError::EmptyField { line: 1 }));
    }

    #[test]
    fn enumerate_t1() {
        let kg = t1();
        let a = kg.entity_id("A").unwrap();
        let paths = kg.enumerate_paths(&[a], 2).unwrap();
        assert_eq!(
            texts(&kg, &paths),
            vec![
                "<PATH> A → r1 → B </PATH>",
                "<PATH> A → r1 → B → r2 → C </PATH>",
                "<PATH> A → r1 → B → r2 → E </PATH>",
                "<PATH> A → r3 → D </PATH>",
                "<PATH> A → r3 → D → r2 → C </PATH>",
            ]
        );
        let one = kg.enumerate_paths(&[a], 1).unwrap();
        assert_eq!(
            texts(&kg, &one),
            vec!["<PATH> A → r1 → B </PATH>", "<PATH> A → r3 → D </PATH>"]
        );
        let c = kg.entity_id("C").unwrap();
        assert!(kg.enumerate_paths(&[c], 2).unwrap().is_empty());
    }

    #[test]
    fn enumerate_errors() {
        let kg = t1();
        let a = kg.entity_id("A").unwrap();
        assert!(matches!(kg.enumerate_paths(&[a], 0), Err(KgError::ZeroHops)));
        assert!(matches!(
            kg.enumerate_paths(&[EntityId(99)], 2),
            Err(KgError::InvalidEntityId(99))
        ));
        assert!(matches!(
            kg.resolve_entities(&["Z"]),
            Err(KgError::UnknownEntity(name)) if name == "Z"
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let kg = t1();
        let starts: Vec<EntityId> = (0..kg.n_entities() as u32).map(EntityId).collect();
        let seq = kg.enumerate_paths(&starts, 3).unwrap();
        for jobs in 1..=4 {
            assert_eq!(kg.enumerate_paths_parallel(&starts, 3, jobs).unwrap(), seq);
        }
    }

    #[test]
    fn format_bieber_example() {
        let kg = KnowledgeGraph::from_triples([
            ("Justin Bieber", "people.person.parents", "Jeremy Bieber"),
            ("Jeremy Bieber", "people.person.children", "Jaxon Bieber"),
        ]);
        let start = kg.entity_id("Justin Bieber").unwrap();
        let paths = kg.enumerate_paths(&[start], 2).unwrap();
        assert_eq!(
            kg.format_path(&paths[1]),
            "<PATH> Justin Bieber → people.person.parents → Jeremy Bieber → people.person.children → Jaxon Bieber </PATH>"
        );
    }

    #[test]
    fn parse_path_cases() {
        let kg = t1();
        let p = kg.parse_path("<PATH> A → r1 → B </PATH>").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(kg.entity_name(p.end()), "B");

        let err = kg.parse_path("<PATH> A → r2 → B </PATH>").unwrap_err();
        assert_eq!(
            err,
            PathDefect::Ungrounded {
                hop: 1,
                head: "A".into(),
                relation: "r2".into(),
                tail: "B".into()
            }
        );
        assert!(!err.is_structural());

        let err = kg.parse_path("<PATH> A → r1 </PATH>").unwrap_err();
        assert_eq!(err, PathDefect::Truncated { pieces: 2 });
        assert!(err.is_structural());

        assert_eq!(kg.parse_path("A → r1 → B"), Err(PathDefect::MissingMarkers));
        assert_eq!(kg.parse_path("<PATH> </PATH>"), Err(PathDefect::Empty));
        assert_eq!(kg.parse_path("<PATH> A </PATH>"), Err(PathDefect::NoHops));
        assert_eq!(
            kg.parse_path("<PATH> A → r9 → B </PATH>"),
            Err(PathDefect::UnknownRelation("r9".into()))
        );
        assert_eq!(
            kg.parse_path("<PATH> Q → r1 → B </PATH>"),
            Err(PathDefect::UnknownEntity("Q".into()))
        );
    }

    #[test]
    fn format_parse_round_trip_t1() {
        let kg = t1();
        let starts: Vec<EntityId> = (0..kg.n_entities() as u32).map(EntityId).collect();
        for p in kg.enumerate_paths(&starts, 3).unwrap() {
            assert_eq!(kg.parse_path(&kg.format_path(&p)).unwrap(), p);
        }
    }

    #[test]
    fn shortest_paths_t1() {
        let kg = t1();
        let id = |n| kg.entity_id(n).unwrap();
        let ac = kg.shortest_paths(id("A"), id("C"), 10);
        assert_eq!(
            texts(&kg, &ac),
            vec![
                "<PATH> A → r1 → B → r2 → C </PATH>",
                "<PATH> A → r3 → D → r2 → C </PATH>"
            ]
        );
        // lexicographic: r1 branch first
        assert_eq!(kg.relation_name(ac[0].steps[0].0), "r1");
        assert_eq!(kg.shortest_paths(id("A"), id("C"), 1), ac[..1].to_vec());
        let ab = kg.shortest_paths(id("A"), id("B"), 10);
        assert_eq!(texts(&kg, &ab), vec!["<PATH> A → r1 → B </PATH>"]);
        assert!(kg.shortest_paths(id("C"), id("A"), 10).is_empty());
        let zero = kg.shortest_paths(id("A"), id("A"), 10);
        assert_eq!(zero, vec![ReasoningPath::empty(id("A"))]);
    }

    #[test]
    fn qa_records_parse() {
        let src = r#"{"id":"q1","question":"what?","question_entities":["A"],"answers":["C"]}

{"id":"q2","question":"pick","question_entities":["A"],"answers":["b"],"choices":[{"label":"a","text":"x"},{"label":"b","text":"y"}]}"#;
        let recs = load_qa(src.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].choices.as_ref().unwrap()[1].label, "b");
        let err = load_qa("{\"id\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, KgError::MalformedRecord { line: 1, .. }));
    }
}
