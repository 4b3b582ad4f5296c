//! Triple stores, vocabularies, the filtered-evaluation index and feature
//! files.

mod corrupt;
mod features;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use corrupt::{corrupt_dataset, CorruptionMode};
pub use features::{load_features, read_mhft, write_mhft, Modality, ModalityFeatures, MhftRecord};

use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VISUAL_FILE: &str = "visual.mhft";
pub const TEXTUAL_FILE: &str = "textual.mhft";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub rel: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, rel: u32, tail: u32) -> Self {
        Self { head, rel, tail }
    }
}

/// Bidirectional name ↔ id map, ids assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut v = Vocab::default();
        for name in iter {
            v.get_or_insert(&name);
        }
        v
    }
}

/// Entities, relations and split triples. `train` holds each original triple
/// followed (in a second block) by its inverse `(t, r + |R|, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    /// Original relations only; inverse ids are `id + relations.len()`.
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Entities first seen in the valid or test file.
    pub unseen_entities: usize,
}

impl KnowledgeGraph {
    /// Builds a graph from original-direction triples. Inverse training
    /// triples are appended; overlaps of valid/test with train are dropped.
    pub fn from_parts(
        entities: Vocab,
        relations: Vocab,
        train_original: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let n_rel = relations.len() as u32;
        let seen: HashSet<Triple> = train_original.iter().copied().collect();
        let mut train = train_original;
        let n = train.len();
        train.reserve(n);
        for i in 0..n {
            let t = train[i];
            train.push(Triple::new(t.tail, t.rel + n_rel, t.head));
        }
        let drop_overlap = |split: Vec<Triple>, name: &str| -> Vec<Triple> {
            let before = split.len();
            let kept: Vec<Triple> = split.into_iter().filter(|t| !seen.contains(t)).collect();
            if kept.len() != before {
                log::warn!("{} {name} triples also appear in train; dropped", before - kept.len());
            }
            kept
        };
        let valid = drop_overlap(valid, "valid");
        let test = drop_overlap(test, "test");
        Self {
            entities,
            relations,
            train,
            valid,
            test,
            unseen_entities: 0,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_original_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation ids including inverses.
    pub fn num_relations(&self) -> usize {
        2 * self.relations.len()
    }

    /// The first half of `train`: triples as they appeared in the file.
    pub fn train_original(&self) -> &[Triple] {
        &self.train[..self.train.len() / 2]
    }

    pub fn inverse(&self, t: Triple) -> Triple {
        let n = self.relations.len() as u32;
        let rel = if t.rel < n { t.rel + n } else { t.rel - n };
        Triple::new(t.tail, rel, t.head)
    }

    pub fn relation_name(&self, rel: u32) -> String {
        let n = self.relations.len() as u32;
        if rel < n {
            self.relations.name(rel).unwrap_or("?").to_owned()
        } else {
            format!("{}^-1", self.relations.name(rel - n).unwrap_or("?"))
        }
    }

    /// Writes train (original direction only), valid and test as TSV.
    pub fn write_tsv_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_tsv(&dir.join(TRAIN_FILE), self.train_original())?;
        self.write_tsv(&dir.join(VALID_FILE), &self.valid)?;
        self.write_tsv(&dir.join(TEST_FILE), &self.test)
    }

    pub fn write_tsv(&self, path: &Path, triples: &[Triple]) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.name(t.head).unwrap_or("?"),
                self.relations.name(t.rel).unwrap_or("?"),
                self.entities.name(t.tail).unwrap_or("?"),
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn parse_triples(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                out.push((h.to_owned(), r.to_owned(), t.to_owned()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: lineno + 1,
                    msg: "expected `head<TAB>relation<TAB>tail`".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Loads the three split files. Vocabularies follow first appearance in
/// train, then valid, then test.
pub fn load_graph(train: &Path, valid: &Path, test: &Path) -> Result<KnowledgeGraph> {
    let raw = [parse_triples(train)?, parse_triples(valid)?, parse_triples(test)?];
    let mut entities = Vocab::default();
    let mut relations = Vocab::default();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    let mut known_after_train = 0;
    for (k, rows) in raw.iter().enumerate() {
        for (h, r, t) in rows {
            let h = entities.get_or_insert(h);
            let r = relations.get_or_insert(r);
            let t = entities.get_or_insert(t);
            splits[k].push(Triple::new(h, r, t));
        }
        if k == 0 {
            known_after_train = entities.len();
        }
    }
    let unseen = entities.len() - known_after_train;
    if unseen > 0 {
        log::warn!("{unseen} entities appear only in valid/test; they are ranked with untrained embeddings");
    }
    let [tr, va, te] = splits;
    let mut g = KnowledgeGraph::from_parts(entities, relations, tr, va, te);
    g.unseen_entities = unseen;
    Ok(g)
}

/// Loads `train.tsv`, `valid.tsv`, `test.tsv` from a dataset directory.
pub fn load_graph_dir(dir: &Path) -> Result<KnowledgeGraph> {
    let p = |f: &str| -> Result<PathBuf> {
        let path = dir.join(f);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset file"),
            ))
        }
    };
    load_graph(&p(TRAIN_FILE)?, &p(VALID_FILE)?, &p(TEST_FILE)?)
}

/// A graph plus its two pooled feature matrices (visual, textual).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub features: Vec<ModalityFeatures>,
}

impl Dataset {
    pub fn modality(&self, m: Modality) -> &ModalityFeatures {
        &self.features[m.index()]
    }
}

/// Loads the standard dataset directory layout. A missing feature file means
/// every entity is masked for that modality.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let graph = load_graph_dir(dir)?;
    let mut features = Vec::with_capacity(2);
    for m in Modality::ALL {
        let path = dir.join(m.file_name());
        if path.is_file() {
            features.push(load_features(&path, &graph, m)?);
        } else {
            log::warn!("{} not found; modality fully masked", path.display());
            features.push(ModalityFeatures::empty(m, graph.num_entities(), 1));
        }
    }
    Ok(Dataset { graph, features })
}

/// Writes the standard dataset directory layout.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.graph.write_tsv_dir(dir)?;
    for f in &ds.features {
        write_mhft(&dir.join(f.modality.file_name()), f.dim, &f.to_records(&ds.graph))?;
    }
    Ok(())
}

/// Known-true tails per `(head, relation)` over every split and its inverse.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build(graph: &KnowledgeGraph) -> Self {
        let mut sets: HashMap<(u32, u32), HashSet<u32>> = HashMap::new();
        let all = graph.train.iter().chain(&graph.valid).chain(&graph.test);
        for &t in all {
            for t in [t, graph.inverse(t)] {
                sets.entry((t.head, t.rel)).or_default().insert(t.tail);
            }
        }
        let tails = sets
            .into_iter()
            .map(|(k, s)| {
                let mut v: Vec<u32> = s.into_iter().collect();
                v.sort_unstable();
                (k, v)
            })
            .collect();
        Self { tails }
    }

    pub fn known_tails(&self, head: u32, rel: u32) -> &[u32] {
        self.tails.get(&(head, rel)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.known_tails(t.head, t.rel).binary_search(&t.tail).is_ok()
    }
}

/// Candidate mask for the query `(head, rel, ?)`: every entity except the
/// known-true tails other than `true_tail`.
pub fn filtered_candidates(
    head: u32,
    rel: u32,
    true_tail: u32,
    index: &FilterIndex,
    num_entities: usize,
) -> Vec<bool> {
    let mut mask = vec![true; num_entities];
    for &t in index.known_tails(head, rel) {
        if t != true_tail {
            mask[t as usize] = false;
        }
    }
    mask
}
