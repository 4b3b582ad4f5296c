//! Small seeded graphs with a known relational pattern, for smoke tests and
//! convergence checks.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, KnowledgeGraph, Modality, ModalityFeatures, Triple, Vocab};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone)]
pub struct ToySpec {
    pub entities: usize,
    /// Relation `k` maps entity `e` to `(e + offsets[k]) mod entities`.
    pub offsets: Vec<usize>,
    pub feature_dim: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    /// 50 entities on a cycle. `+1` and `+7` compose into `+8`; `+25` is
    /// symmetric.
    fn default() -> Self {
        Self {
            entities: 50,
            offsets: vec![1, 7, 8, 25],
            feature_dim: 8,
            valid: 10,
            test: 10,
            seed: 2024,
        }
    }
}

/// Cyclic-offset graph with uniformly random, uninformative modality features.
pub fn toy_dataset(spec: &ToySpec) -> Dataset {
    let n = spec.entities;
    let entities: Vocab = (0..n).map(|i| format!("e{i:03}")).collect();
    let relations: Vocab = (0..spec.offsets.len()).map(|k| format!("plus{}", spec.offsets[k])).collect();

    let mut all: Vec<Triple> = Vec::new();
    for (k, &off) in spec.offsets.iter().enumerate() {
        for h in 0..n {
            all.push(Triple::new(h as u32, k as u32, ((h + off) % n) as u32));
        }
    }
    let mut rng = stream(spec.seed, Stream::Synthetic);
    all.shuffle(&mut rng);
    let test: Vec<Triple> = all.drain(..spec.test.min(all.len())).collect();
    let valid: Vec<Triple> = all.drain(..spec.valid.min(all.len())).collect();
    let mut train = all;
    train.sort_unstable();

    let graph = KnowledgeGraph::from_parts(entities, relations, train, valid, test);
    let mut features: Vec<ModalityFeatures> = Modality::ALL
        .iter()
        .map(|&m| {
            let mut f = ModalityFeatures::empty(m, n, spec.feature_dim);
            for e in 0..n {
                for x in f.row_mut(e) {
                    *x = rng.random_range(-1.0f32..1.0);
                }
                f.mask[e] = true;
            }
            f
        })
        .collect();
    let (graph, order) = relabel_first_appearance(&graph);
    for f in features.iter_mut() {
        let old = f.clone();
        for (new_id, &old_id) in order.iter().enumerate() {
            f.row_mut(new_id).copy_from_slice(old.row(old_id));
            f.mask[new_id] = old.mask[old_id];
        }
    }
    Dataset { graph, features }
}

/// Reassigns entity and relation ids in the order a TSV reload would produce,
/// so in-memory and on-disk copies of a generated graph agree on ids.
/// Returns the graph and `order[new_id] = old_id` for entities.
fn relabel_first_appearance(g: &KnowledgeGraph) -> (KnowledgeGraph, Vec<usize>) {
    let mut ents = Vocab::default();
    let mut rels = Vocab::default();
    let mut order = Vec::new();
    let mut remap = |t: &Triple, ents: &mut Vocab, rels: &mut Vocab| -> Triple {
        let mut ent = |id: u32, ents: &mut Vocab| {
            let name = g.entities.name(id).unwrap();
            if ents.id(name).is_none() {
                order.push(id as usize);
            }
            ents.get_or_insert(name)
        };
        let h = ent(t.head, ents);
        let r = rels.get_or_insert(g.relations.name(t.rel).unwrap());
        let tl = ent(t.tail, ents);
        Triple::new(h, r, tl)
    };
    let train: Vec<Triple> = g.train_original().iter().map(|t| remap(t, &mut ents, &mut rels)).collect();
    let valid: Vec<Triple> = g.valid.iter().map(|t| remap(t, &mut ents, &mut rels)).collect();
    let test: Vec<Triple> = g.test.iter().map(|t| remap(t, &mut ents, &mut rels)).collect();
    let mut out = KnowledgeGraph::from_parts(ents, rels, train, valid, test);
    out.unseen_entities = 0;
    (out, order)
}

/// True when every fact satisfies its relation's offset rule, read through
/// entity and relation names.
pub fn toy_graph_is_consistent(g: &KnowledgeGraph, spec: &ToySpec) -> bool {
    let ent = |id: u32| -> usize { g.entities.name(id).unwrap()[1..].parse().unwrap() };
    let off = |id: u32| -> usize { g.relations.name(id).unwrap()[4..].parse().unwrap() };
    g.train_original()
        .iter()
        .chain(&g.valid)
        .chain(&g.test)
        .all(|t| (ent(t.head) + off(t.rel)) % spec.entities == ent(t.tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_shape() {
        let spec = ToySpec::default();
        let ds = toy_dataset(&spec);
        let g = &ds.graph;
        assert_eq!(g.num_entities(), 50);
        assert_eq!(g.num_relations(), 8);
        assert_eq!(g.train_original().len() + g.valid.len() + g.test.len(), 200);
        assert_eq!(g.test.len(), 10);
        assert!(toy_graph_is_consistent(g, &spec));
        assert_eq!(ds.features.len(), 2);
        assert_eq!(ds.features[0].dim, 8);
    }

    #[test]
    fn seeded() {
        let a = toy_dataset(&ToySpec::default());
        let b = toy_dataset(&ToySpec::default());
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
    }
}
