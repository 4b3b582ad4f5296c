use std::str::FromStr;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use super::{KnowledgeGraph, ModalityFeatures};
use crate::error::{Error, Result};
use crate::model::population_stats;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    ModalityMissing,
    ModalityNoise,
    LinkSparse,
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality-missing" => Ok(Self::ModalityMissing),
            "modality-noise" => Ok(Self::ModalityNoise),
            "link-sparse" => Ok(Self::LinkSparse),
            other => Err(Error::Config(format!(
                "unknown corruption mode `{other}` (expected modality-missing, modality-noise or link-sparse)"
            ))),
        }
    }
}

fn count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Robustness scenarios: drop a fraction of modality rows, add Gaussian noise
/// to a fraction of them, or remove a fraction of original training triples
/// together with their inverses. Deterministic in `seed`.
pub fn corrupt_dataset(
    graph: &KnowledgeGraph,
    features: &[ModalityFeatures],
    mode: CorruptionMode,
    ratio: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, Vec<ModalityFeatures>)> {
    if !(0.0..=1.0).contains(&ratio) || ratio.is_nan() {
        return Err(Error::Config(format!("corruption ratio {ratio} outside [0, 1]")));
    }
    let mut graph = graph.clone();
    let mut features = features.to_vec();
    match mode {
        CorruptionMode::ModalityMissing => {
            for f in features.iter_mut() {
                let mut rng = substream(seed, Stream::Corrupt, f.modality.index() as u64);
                let n = f.num_entities();
                for e in sample(&mut rng, n, count(ratio, n)) {
                    f.remove(e);
                }
            }
        }
        CorruptionMode::ModalityNoise => {
            for f in features.iter_mut() {
                let mut rng = substream(seed, Stream::Corrupt, f.modality.index() as u64);
                let present: Vec<usize> = (0..f.num_entities()).filter(|&e| f.mask[e]).collect();
                if present.is_empty() {
                    continue;
                }
                let (mean, var) = population_stats(present.iter().map(|&e| {
                    f.row(e).iter().map(|&x| x as f64).collect::<Vec<_>>()
                }));
                let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
                let chosen = sample(&mut rng, present.len(), count(ratio, present.len()));
                let mut chosen: Vec<usize> = chosen.into_iter().map(|i| present[i]).collect();
                chosen.sort_unstable();
                for e in chosen {
                    for (j, x) in f.row_mut(e).iter_mut().enumerate() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x += (mean[j] + std[j] * z) as f32;
                    }
                }
            }
        }
        CorruptionMode::LinkSparse => {
            let mut rng = substream(seed, Stream::Corrupt, 0);
            let original = graph.train_original().to_vec();
            let n = original.len();
            let mut drop = vec![false; n];
            for i in sample(&mut rng, n, count(ratio, n)) {
                drop[i] = true;
            }
            let kept = original
                .into_iter()
                .zip(drop)
                .filter_map(|(t, d)| (!d).then_some(t))
                .collect();
            let unseen = graph.unseen_entities;
            graph = KnowledgeGraph::from_parts(
                graph.entities,
                graph.relations,
                kept,
                graph.valid,
                graph.test,
            );
            graph.unseen_entities = unseen;
        }
    }
    Ok((graph, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::{Modality, Triple, Vocab};

    fn toy(n_triples: usize) -> (KnowledgeGraph, Vec<ModalityFeatures>) {
        let n_ent = 60;
        let entities: Vocab = (0..n_ent).map(|i| format!("e{i}")).collect();
        let relations: Vocab = (0..3).map(|i| format!("r{i}")).collect();
        let mut train = Vec::new();
        'outer: for h in 0..n_ent as u32 {
            for r in 0..3u32 {
                for k in 1..7u32 {
                    if train.len() == n_triples {
                        break 'outer;
                    }
                    train.push(Triple::new(h, r, (h + k * (r + 1)) % n_ent as u32));
                }
            }
        }
        assert_eq!(train.len(), n_triples);
        let g = KnowledgeGraph::from_parts(entities, relations, train, vec![], vec![]);
        let feats = Modality::ALL
            .iter()
            .map(|&m| {
                let mut f = ModalityFeatures::empty(m, n_ent, 3);
                for e in 0..n_ent {
                    f.row_mut(e).copy_from_slice(&[e as f32, 1.0, -(e as f32)]);
                    f.mask[e] = true;
                }
                f
            })
            .collect();
        (g, feats)
    }

    #[test]
    fn ratio_zero_is_identity() {
        let (g, f) = toy(100);
        for mode in [
            CorruptionMode::ModalityMissing,
            CorruptionMode::ModalityNoise,
            CorruptionMode::LinkSparse,
        ] {
            let (g2, f2) = corrupt_dataset(&g, &f, mode, 0.0, 7).unwrap();
            assert_eq!(g2, g);
            assert_eq!(f2, f);
        }
    }

    #[test]
    fn full_missing_masks_everything() {
        let (g, f) = toy(50);
        let (_, f2) = corrupt_dataset(&g, &f, CorruptionMode::ModalityMissing, 1.0, 3).unwrap();
        for m in &f2 {
            assert!(m.mask.iter().all(|&x| !x));
            assert!(m.data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn link_sparse_keeps_inverses_paired() {
        let (g, f) = toy(1000);
        let (g2, _) = corrupt_dataset(&g, &f, CorruptionMode::LinkSparse, 0.3, 11).unwrap();
        assert_eq!(g2.train_original().len(), 700);
        assert_eq!(g2.train.len(), 1400);
        for (i, &t) in g2.train_original().iter().enumerate() {
            assert_eq!(g2.train[700 + i], g2.inverse(t));
        }
    }

    #[test]
    fn noise_touches_only_chosen_rows_and_is_seeded() {
        let (g, f) = toy(10);
        let (_, a) = corrupt_dataset(&g, &f, CorruptionMode::ModalityNoise, 0.5, 5).unwrap();
        let (_, b) = corrupt_dataset(&g, &f, CorruptionMode::ModalityNoise, 0.5, 5).unwrap();
        assert_eq!(a, b);
        let changed = (0..60).filter(|&e| a[0].row(e) != f[0].row(e)).count();
        assert_eq!(changed, 30);
        assert!(a[0].mask.iter().all(|&m| m));
    }

    #[test]
    fn bad_ratio_rejected() {
        let (g, f) = toy(10);
        assert!(corrupt_dataset(&g, &f, CorruptionMode::LinkSparse, 1.5, 0).is_err());
        assert!("bogus".parse::<CorruptionMode>().is_err());
    }
}
