//! Filtered link-prediction ranking and MRR / Hit@K.
//!
//! Head prediction for `(h, r, t)` is the tail query `(t, r⁻¹, ?)`. Ties
//! count against the model.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kgdata::{filtered_candidates, FilterIndex, KnowledgeGraph, Triple};
use crate::model::{Ablation, Features, ModelParams, ScoreVariant, Scorer};
use crate::real::Real;

/// `1 + #{masked-in e ≠ true : score(e) ≥ score(true)}`.
///
/// A NaN competitor also counts as ranked above the true entity.
pub fn rank_query<T: Real>(scores: &[T], true_id: usize, mask: &[bool]) -> Result<usize> {
    if scores.len() != mask.len() {
        return Err(Error::dim("rank_query mask", scores.len(), mask.len()));
    }
    if true_id >= scores.len() {
        return Err(Error::OutOfRange {
            what: "entity",
            id: true_id,
            limit: scores.len(),
        });
    }
    if !mask[true_id] {
        return Err(Error::Invalid(format!("filter mask removes the true entity {true_id}")));
    }
    let st = scores[true_id];
    let above = scores
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|&(e, (&s, &keep))| keep && e != true_id && !(s < st))
        .count();
    Ok(1 + above)
}

/// Filtered ranks of one test triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    /// Number of test triples (each contributes two queries).
    pub count: usize,
}

impl Metrics {
    /// `MRR=<pct>  Hit@1=<pct>  Hit@3=<pct>  Hit@10=<pct>`.
    pub fn block(&self) -> String {
        format!(
            "MRR={:.4}  Hit@1={:.4}  Hit@3={:.4}  Hit@10={:.4}",
            100.0 * self.mrr,
            100.0 * self.hit1,
            100.0 * self.hit3,
            100.0 * self.hit10
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.block())
    }
}

/// Sums of reciprocal ranks and hit indicators over both directions,
/// normalized by `2·|results|`.
pub fn aggregate(results: &[RankResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::Invalid("no test triples to aggregate".into()));
    }
    let (mut mrr, mut hits) = (0.0, [0usize; 3]);
    for r in results {
        for rank in [r.head_rank, r.tail_rank] {
            mrr += 1.0 / rank as f64;
            for (h, k) in hits.iter_mut().zip([1, 3, 10]) {
                *h += (rank <= k) as usize;
            }
        }
    }
    let n = 2.0 * results.len() as f64;
    Ok(Metrics {
        mrr: mrr / n,
        hit1: hits[0] as f64 / n,
        hit3: hits[1] as f64 / n,
        hit10: hits[2] as f64 / n,
        count: results.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationMetrics {
    pub rel: u32,
    pub name: String,
    pub count: usize,
    pub mrr: f64,
}

/// MRR per original relation, in relation-id order.
pub fn per_relation(graph: &KnowledgeGraph, results: &[RankResult]) -> Result<Vec<RelationMetrics>> {
    let mut out = Vec::new();
    for rel in 0..graph.num_original_relations() as u32 {
        let subset: Vec<RankResult> = results.iter().copied().filter(|r| r.triple.rel == rel).collect();
        if subset.is_empty() {
            continue;
        }
        let m = aggregate(&subset)?;
        out.push(RelationMetrics {
            rel,
            name: graph.relation_name(rel),
            count: subset.len(),
            mrr: m.mrr,
        });
    }
    Ok(out)
}

/// Tab-separated `relation  count  MRR` with a header line.
pub fn per_relation_table(rows: &[RelationMetrics]) -> String {
    let mut s = String::from("relation\tcount\tMRR\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{:.4}\n", r.name, r.count, 100.0 * r.mrr));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub ablation: Ablation,
    pub variant: ScoreVariant,
    /// Score relation groups in parallel on the current rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Copy)]
struct Query {
    slot: usize,
    head: u32,
    truth: u32,
    is_head: bool,
}

/// Filtered ranks for every triple in `triples`, which must use original
/// relation ids.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    feats: &Features<T>,
    graph: &KnowledgeGraph,
    filter: &FilterIndex,
    triples: &[Triple],
    opts: EvalOptions,
) -> Result<Vec<RankResult>> {
    let n = graph.num_entities();
    if params.dims.num_entities != n || params.dims.num_relations != graph.num_relations() {
        return Err(Error::Invalid(format!(
            "model has {} entities / {} relations, dataset has {} / {}",
            params.dims.num_entities,
            params.dims.num_relations,
            n,
            graph.num_relations()
        )));
    }
    let mut groups: Vec<Vec<Query>> = vec![Vec::new(); graph.num_relations()];
    for (slot, &t) in triples.iter().enumerate() {
        if t.rel as usize >= graph.num_original_relations() {
            return Err(Error::Invalid(format!("evaluation triple {t:?} uses an inverse relation id")));
        }
        let inv = graph.inverse(t);
        groups[t.rel as usize].push(Query {
            slot,
            head: t.head,
            truth: t.tail,
            is_head: false,
        });
        groups[inv.rel as usize].push(Query {
            slot,
            head: inv.head,
            truth: inv.tail,
            is_head: true,
        });
    }
    let scorer = Scorer::new(params, feats, opts.ablation).with_variant(opts.variant);

    let rank_group = |rel: usize, qs: &Vec<Query>| -> Result<Vec<(Query, usize)>> {
        if qs.is_empty() {
            return Ok(Vec::new());
        }
        let heads: Vec<u32> = qs.iter().map(|q| q.head).collect();
        let rows = scorer.score_heads(rel, &heads);
        qs.iter()
            .zip(rows)
            .map(|(q, row)| {
                let mask = filtered_candidates(q.head, rel as u32, q.truth, filter, n);
                Ok((*q, rank_query(&row, q.truth as usize, &mask)?))
            })
            .collect()
    };
    let ranked: Vec<Vec<(Query, usize)>> = if opts.parallel {
        groups
            .par_iter()
            .enumerate()
            .map(|(rel, qs)| rank_group(rel, qs))
            .collect::<Result<_>>()?
    } else {
        groups
            .iter()
            .enumerate()
            .map(|(rel, qs)| rank_group(rel, qs))
            .collect::<Result<_>>()?
    };

    let mut out: Vec<RankResult> = triples
        .iter()
        .map(|&triple| RankResult {
            triple,
            head_rank: 0,
            tail_rank: 0,
        })
        .collect();
    for (q, rank) in ranked.into_iter().flatten() {
        if q.is_head {
            out[q.slot].head_rank = rank;
        } else {
            out[q.slot].tail_rank = rank;
        }
    }
    Ok(out)
}
