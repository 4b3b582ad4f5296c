//! Forward computation: factorized modality embeddings, relation-aware gated
//! fusion, biquaternion assembly and scoring.

use std::fmt;
use std::str::FromStr;

use super::params::{ModelParams, Table, STRUCT, TEXTUAL, VISUAL};
use crate::error::{Error, Result};
use crate::hypercomplex::{complex_block_mul_acc, dot, hamilton_into, Biquat, StructureConstants, QUATERNION};
use crate::kgdata::{Modality, ModalityFeatures};
use crate::real::Real;

/// Components that can be switched off, for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    NoJoint,
    NoStruct,
    NoVision,
    NoText,
    /// Modality representation is the modality-specific part alone; no
    /// reconstruction loss.
    NoFerf,
    /// No self-distillation.
    NoNoise,
    /// Uniform fusion weights.
    NoGate,
    NoTranslation,
    NoRotation,
}

impl Ablation {
    pub const ALL: [Ablation; 10] = [
        Ablation::None,
        Ablation::NoJoint,
        Ablation::NoStruct,
        Ablation::NoVision,
        Ablation::NoText,
        Ablation::NoFerf,
        Ablation::NoNoise,
        Ablation::NoGate,
        Ablation::NoTranslation,
        Ablation::NoRotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoJoint => "no-joint",
            Ablation::NoStruct => "no-struct",
            Ablation::NoVision => "no-vision",
            Ablation::NoText => "no-text",
            Ablation::NoFerf => "no-ferf",
            Ablation::NoNoise => "no-noise",
            Ablation::NoGate => "no-gate",
            Ablation::NoTranslation => "no-translation",
            Ablation::NoRotation => "no-rotation",
        }
    }

    /// Biquaternion block forced to zero in every assembled entity.
    pub fn zeroed_block(self) -> Option<usize> {
        match self {
            Ablation::NoJoint => Some(0),
            Ablation::NoStruct => Some(1 + STRUCT),
            Ablation::NoVision => Some(1 + VISUAL),
            Ablation::NoText => Some(1 + TEXTUAL),
            _ => None,
        }
    }

    /// Modality whose representation `ê^m` is replaced by zeros, which
    /// removes it from its own block and from the fused joint block.
    pub fn zeroed_modality(self) -> Option<usize> {
        match self {
            Ablation::NoStruct => Some(STRUCT),
            Ablation::NoVision => Some(VISUAL),
            Ablation::NoText => Some(TEXTUAL),
            _ => None,
        }
    }

    pub fn gated(self) -> bool {
        self != Ablation::NoGate
    }

    pub fn factorized(self) -> bool {
        self != Ablation::NoFerf
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown ablation `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which score function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreVariant {
    /// `⟨(Q_h ⊕ Q_r^T) ⊗ Q_r^R, Q_t⟩`
    #[default]
    Full,
    /// Joint block only, complex rotation: `⟨(e^j_h + r^T_1) ⊛ r^R_1, e^j_t⟩`.
    Fusion,
    /// Sum of four independent per-block complex rotation scores.
    Ensemble,
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "fusion" => Ok(Self::Fusion),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::Config(format!(
                "unknown score variant `{other}` (expected full, fusion or ensemble)"
            ))),
        }
    }
}

/// Pooled raw features converted to the model's scalar type.
#[derive(Debug, Clone)]
pub struct Features<T> {
    /// Visual, textual; `|E| × d^m`, zero rows for masked entities.
    pub raw: [Table<T>; 2],
}

impl<T: Real> Features<T> {
    pub fn from_modalities(features: &[ModalityFeatures]) -> Result<Self> {
        let get = |m: Modality| -> Result<Table<T>> {
            let f = features
                .iter()
                .find(|f| f.modality == m)
                .ok_or_else(|| Error::Invalid(format!("no {m:?} features supplied")))?;
            Table::from_vec(
                f.num_entities(),
                f.dim,
                f.data.iter().map(|&x| T::of_f32(x)).collect(),
            )
        };
        Ok(Self {
            raw: [get(Modality::Visual)?, get(Modality::Textual)?],
        })
    }
}

/// `out = W x + b` for a `rows × cols` weight.
#[inline]
pub(crate) fn affine_into<T: Real>(w: &Table<T>, b: &[T], x: &[T], out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(w.row(i), x) + b[i];
    }
}

/// Entity-level quantities that do not depend on the relation.
#[derive(Debug, Clone)]
pub struct EntityStage<T> {
    /// Modality-specific representations `e^m_m` (struct, visual, textual).
    pub modal: [Table<T>; 3],
    /// Final modality representations `ê^m`.
    pub hat: [Table<T>; 3],
    /// Entity part of each gate logit, `W^m[..2d] · ê^m`, as `|E| × 3`.
    pub gate_ent: Table<T>,
}

impl<T: Real> EntityStage<T> {
    pub fn compute(params: &ModelParams<T>, feats: &Features<T>, ablation: Ablation) -> Self {
        let dims = params.dims;
        let n = dims.num_entities;
        let w = 2 * dims.d;
        let mut modal: [Table<T>; 3] = std::array::from_fn(|_| Table::zeros(n, w));
        modal[STRUCT] = params.ent_struct.clone();
        for k in 0..2 {
            let slot = 1 + k;
            for e in 0..n {
                affine_into(
                    &params.proj_w[k],
                    &params.proj_b[k].data,
                    feats.raw[k].row(e),
                    modal[slot].row_mut(e),
                );
            }
        }
        let hat: [Table<T>; 3] = std::array::from_fn(|m| {
            let mut h = modal[m].clone();
            if ablation.factorized() {
                for (x, &t) in h.data.iter_mut().zip(&params.task[m].data) {
                    *x += t;
                }
            }
            if ablation.zeroed_modality() == Some(m) {
                h.fill_zero();
            }
            h
        });
        let mut gate_ent = Table::zeros(n, 3);
        for e in 0..n {
            for m in 0..3 {
                gate_ent.row_mut(e)[m] = dot(&params.gate_w[m].data[..w], hat[m].row(e));
            }
        }
        Self { modal, hat, gate_ent }
    }
}

/// Relation quantities with any ablation applied.
#[derive(Debug, Clone)]
pub struct RelationView<T> {
    pub rel: usize,
    pub trans: Vec<T>,
    pub rot: Vec<T>,
    pub tau: T,
    /// Relation part of each gate logit including the bias.
    pub gate_rel: [T; 3],
}

impl<T: Real> RelationView<T> {
    pub fn new(params: &ModelParams<T>, rel: usize, ablation: Ablation) -> Self {
        let d = params.dims.d;
        let trans = if ablation == Ablation::NoTranslation {
            vec![T::zero(); 8 * d]
        } else {
            params.rel_trans.row(rel).to_vec()
        };
        let rot = if ablation == Ablation::NoRotation {
            let mut r = vec![T::zero(); 8 * d];
            r[..d].fill(T::one());
            r
        } else {
            params.rel_rot.row(rel).to_vec()
        };
        let gate_rel = std::array::from_fn(|m| {
            let gw = &params.gate_w[m].data;
            dot(&gw[2 * d..10 * d], &trans) + dot(&gw[10 * d..18 * d], &rot) + params.gate_b[m].data[0]
        });
        Self {
            rel,
            trans,
            rot,
            tau: params.temperature(rel),
            gate_rel,
        }
    }
}

/// Temperature-scaled softmax over three logits.
pub fn gate_weights<T: Real>(logits: [T; 3], tau: T) -> [T; 3] {
    let z = logits.map(|l| l / tau);
    let mx = z[0].max(z[1]).max(z[2]);
    let ex = z.map(|v| (v - mx).exp());
    let s = ex[0] + ex[1] + ex[2];
    ex.map(|v| v / s)
}

/// Gate state of one (entity, relation) fusion, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct GateState<T> {
    pub weights: [T; 3],
    /// Scaled logits `w^m / τ`.
    pub scaled: [T; 3],
}

/// `out = Σ_m ŵ^m ê^m + e^j_t`.
pub(crate) fn fuse_into<T: Real>(
    hat: [&[T]; 3],
    ent_logit: [T; 3],
    rv: &RelationView<T>,
    task_joint: &[T],
    gated: bool,
    out: &mut [T],
) -> GateState<T> {
    let logits = std::array::from_fn(|m| ent_logit[m] + rv.gate_rel[m]);
    let (weights, scaled) = if gated {
        (gate_weights(logits, rv.tau), logits.map(|l| l / rv.tau))
    } else {
        let third = T::one() / T::lit(3.0);
        ([third; 3], [T::zero(); 3])
    };
    for (i, o) in out.iter_mut().enumerate() {
        *o = weights[0] * hat[0][i] + weights[1] * hat[1][i] + weights[2] * hat[2][i] + task_joint[i];
    }
    GateState { weights, scaled }
}

/// Fused joint representation `ê^j` of entity `e` under a relation.
pub fn gate_fuse<T: Real>(
    params: &ModelParams<T>,
    stage: &EntityStage<T>,
    e: usize,
    rv: &RelationView<T>,
    ablation: Ablation,
) -> (Vec<T>, GateState<T>) {
    let hat = [stage.hat[0].row(e), stage.hat[1].row(e), stage.hat[2].row(e)];
    let ent_logit = std::array::from_fn(|m| stage.gate_ent.row(e)[m]);
    let mut out = vec![T::zero(); 2 * params.dims.d];
    let g = fuse_into(hat, ent_logit, rv, params.task[3].row(e), ablation.gated(), &mut out);
    (out, g)
}

/// Entity point from its four `2d` blocks: `1 ← joint`, `i ← struct`,
/// `j ← visual`, `k ← textual`; each block is `d` real then `d` imaginary
/// parts.
pub fn assemble_entity<T: Real>(joint: &[T], modal: [&[T]; 3]) -> Result<Biquat<T>> {
    let w = joint.len();
    if w == 0 || w % 2 != 0 {
        return Err(Error::Invalid(format!("block width {w} is not a positive even number")));
    }
    let mut flat = Vec::with_capacity(4 * w);
    flat.extend_from_slice(joint);
    for b in modal {
        if b.len() != w {
            return Err(Error::dim("entity block width", w, b.len()));
        }
        flat.extend_from_slice(b);
    }
    Biquat::from_flat(flat)
}

/// One pass of the reconstruction network `E^m` for entity `e`, keeping
/// the intermediate values for the backward pass.
#[derive(Debug, Clone)]
pub struct ReconPass<T> {
    /// `[e^m_t; e^a_m; e^b_m]` with `a < b` the other two modalities.
    pub input: Vec<T>,
    pub pre: Vec<T>,
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

/// The two modalities other than `m`, in increasing order.
pub fn other_modalities(m: usize) -> [usize; 2] {
    match m {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

pub fn reconstruct<T: Real>(params: &ModelParams<T>, stage: &EntityStage<T>, e: usize, m: usize) -> ReconPass<T> {
    let w = 2 * params.dims.d;
    let [a, b] = other_modalities(m);
    let mut input = Vec::with_capacity(3 * w);
    input.extend_from_slice(params.task[m].row(e));
    input.extend_from_slice(stage.modal[a].row(e));
    input.extend_from_slice(stage.modal[b].row(e));
    let mut pre = vec![T::zero(); w];
    affine_into(&params.recon_w1[m], &params.recon_b1[m].data, &input, &mut pre);
    let hidden: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
    let mut out = vec![T::zero(); w];
    affine_into(&params.recon_w2[m], &params.recon_b2[m].data, &hidden, &mut out);
    ReconPass { input, pre, hidden, out }
}

/// `Σ_m ‖E^m(e^m_t; others) − e^m_m‖²` averaged over `entities`.
pub fn reconstruction_loss<T: Real>(params: &ModelParams<T>, stage: &EntityStage<T>, entities: &[u32]) -> T {
    if entities.is_empty() {
        return T::zero();
    }
    let mut total = T::zero();
    for &e in entities {
        for m in 0..3 {
            let pass = reconstruct(params, stage, e as usize, m);
            total += pass
                .out
                .iter()
                .zip(stage.modal[m].row(e as usize))
                .map(|(&o, &t)| (o - t) * (o - t))
                .fold(T::zero(), |a, b| a + b);
        }
    }
    total / T::lit(entities.len() as f64)
}

/// Every entity assembled as a biquaternion under one relation: rows of `8d`
/// laid out `[joint; struct; visual; textual]`.
#[derive(Debug, Clone)]
pub struct Candidates<T> {
    pub d: usize,
    pub flat: Vec<T>,
    pub gates: Vec<GateState<T>>,
}

impl<T: Real> Candidates<T> {
    pub fn build(params: &ModelParams<T>, stage: &EntityStage<T>, rv: &RelationView<T>, ablation: Ablation) -> Self {
        let d = params.dims.d;
        let n = params.dims.num_entities;
        let w = 2 * d;
        let mut flat = vec![T::zero(); n * 8 * d];
        let mut gates = Vec::with_capacity(n);
        for (e, row) in flat.chunks_exact_mut(8 * d).enumerate() {
            let hat = [stage.hat[0].row(e), stage.hat[1].row(e), stage.hat[2].row(e)];
            let ent_logit = [stage.gate_ent.row(e)[0], stage.gate_ent.row(e)[1], stage.gate_ent.row(e)[2]];
            let g = fuse_into(hat, ent_logit, rv, params.task[3].row(e), ablation.gated(), &mut row[..w]);
            gates.push(g);
            for m in 0..3 {
                row[(m + 1) * w..(m + 2) * w].copy_from_slice(hat[m]);
            }
            if let Some(b) = ablation.zeroed_block() {
                row[b * w..(b + 1) * w].fill(T::zero());
            }
        }
        Self { d, flat, gates }
    }

    #[inline]
    pub fn row(&self, e: usize) -> &[T] {
        &self.flat[e * 8 * self.d..(e + 1) * 8 * self.d]
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Scores of one query vector against every candidate.
    pub fn scores(&self, query: &[T]) -> Vec<T> {
        self.flat.chunks_exact(8 * self.d).map(|c| dot(c, query)).collect()
    }
}

/// Query vector for head row `head` under a relation view and score variant.
/// For the full score, also returns the translated head `Q_h ⊕ Q_r^T`.
pub fn query_vector<T: Real>(
    sc: &StructureConstants,
    head: &[T],
    rv: &RelationView<T>,
    variant: ScoreVariant,
) -> (Vec<T>, Vec<T>) {
    let d = head.len() / 8;
    let translated: Vec<T> = head.iter().zip(&rv.trans).map(|(&h, &t)| h + t).collect();
    let mut q = vec![T::zero(); 8 * d];
    match variant {
        ScoreVariant::Full => hamilton_into(sc, &translated, &rv.rot, &mut q, d),
        ScoreVariant::Fusion | ScoreVariant::Ensemble => {
            let blocks = if variant == ScoreVariant::Fusion { 1 } else { 4 };
            for b in 0..blocks {
                let s = b * 2 * d..(b + 1) * 2 * d;
                complex_block_mul_acc(&translated[s.clone()], &rv.rot[s.clone()], &mut q[s]);
            }
        }
    }
    (q, translated)
}

/// Read-only scorer over fixed parameters, used for evaluation.
pub struct Scorer<'a, T> {
    pub params: &'a ModelParams<T>,
    pub stage: EntityStage<T>,
    pub ablation: Ablation,
    pub variant: ScoreVariant,
    pub sc: StructureConstants,
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn new(params: &'a ModelParams<T>, feats: &Features<T>, ablation: Ablation) -> Self {
        Self {
            params,
            stage: EntityStage::compute(params, feats, ablation),
            ablation,
            variant: ScoreVariant::Full,
            sc: QUATERNION,
        }
    }

    pub fn with_variant(mut self, variant: ScoreVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_structure_constants(mut self, sc: StructureConstants) -> Self {
        self.sc = sc;
        self
    }

    pub fn relation(&self, rel: usize) -> RelationView<T> {
        RelationView::new(self.params, rel, self.ablation)
    }

    pub fn candidates(&self, rel: usize) -> Candidates<T> {
        Candidates::build(self.params, &self.stage, &self.relation(rel), self.ablation)
    }

    /// Score rows for several heads under one relation, sharing the
    /// candidate assembly.
    pub fn score_heads(&self, rel: usize, heads: &[u32]) -> Vec<Vec<T>> {
        let rv = self.relation(rel);
        let cands = Candidates::build(self.params, &self.stage, &rv, self.ablation);
        heads
            .iter()
            .map(|&h| {
                let (q, _) = query_vector(&self.sc, cands.row(h as usize), &rv, self.variant);
                cands.scores(&q)
            })
            .collect()
    }

    /// Score matrix `batch × |E|` for arbitrary (head, relation) pairs.
    pub fn score_batch(&self, heads: &[u32], rels: &[u32]) -> Result<Vec<Vec<T>>> {
        if heads.len() != rels.len() {
            return Err(Error::dim("score_batch relation ids", heads.len(), rels.len()));
        }
        let dims = self.params.dims;
        for (&h, &r) in heads.iter().zip(rels) {
            check_id("entity", h as usize, dims.num_entities)?;
            check_id("relation", r as usize, dims.num_relations)?;
        }
        let mut out = vec![Vec::new(); heads.len()];
        for (rel, idx) in group_by_relation(rels) {
            let hs: Vec<u32> = idx.iter().map(|&i| heads[i]).collect();
            for (i, row) in idx.into_iter().zip(self.score_heads(rel as usize, &hs)) {
                out[i] = row;
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_id(what: &'static str, id: usize, limit: usize) -> Result<()> {
    if id >= limit {
        return Err(Error::OutOfRange { what, id, limit });
    }
    Ok(())
}

/// Positions grouped by relation id, in increasing relation order.
pub(crate) fn group_by_relation(rels: &[u32]) -> Vec<(u32, Vec<usize>)> {
    let mut map: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &r) in rels.iter().enumerate() {
        map.entry(r).or_default().push(i);
    }
    map.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_weight_examples() {
        let w = gate_weights([0.3f64, 0.3, 0.3], 0.2);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = gate_weights([2.0f64, 1.0, 0.0], 1.0);
        let expect = [0.6652409557748219, 0.24472847105479764, 0.09003057317038046];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let hot = gate_weights([1.0f64, 0.0, 0.0], 1e9);
        for x in hot {
            assert!((x - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("no-everything".parse::<Ablation>().is_err());
        assert!("hybrid".parse::<ScoreVariant>().is_err());
    }

    #[test]
    fn relation_grouping_is_sorted() {
        let g = group_by_relation(&[3, 1, 3, 0]);
        assert_eq!(g, vec![(0, vec![3]), (1, vec![1]), (3, vec![0, 2])]);
    }
}
