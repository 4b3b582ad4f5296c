//! Training objective and its exact gradient.
//!
//! `L = w_triple·L_triple + w_recon·L_recon + w_distill·L_distill + w_reg·L_reg`
//! with all weights 1 by default. The backward pass is written by hand,
//! mirroring the forward code in [`super::forward`] step by step.

use std::collections::HashSet;

use super::forward::{
    check_id, fuse_into, group_by_relation, other_modalities, query_vector, reconstruct, Ablation, Candidates,
    EntityStage, Features, GateState, ReconPass, RelationView, ScoreVariant,
};
use super::noise::NoiseDraw;
use super::params::{ModelParams, Table, STRUCT};
use crate::error::{Error, Result};
use crate::hypercomplex::{dot, hamilton_backward, StructureConstants, QUATERNION};
use crate::kgdata::Triple;
use crate::real::{sigmoid, softplus, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub triple: T,
    pub recon: T,
    pub distill: T,
    pub reg: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            triple: T::one(),
            recon: T::one(),
            distill: T::one(),
            reg: T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig<T> {
    /// N3 coefficient λ.
    pub lambda: T,
    pub weights: LossWeights<T>,
    pub ablation: Ablation,
    pub sc: StructureConstants,
}

impl<T: Real> LossConfig<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) {
            return Err(Error::Config(format!("regularization λ = {lambda} must be >= 0")));
        }
        Ok(Self {
            lambda,
            weights: LossWeights::default(),
            ablation: Ablation::None,
            sc: QUATERNION,
        })
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub triple: T,
    pub recon: T,
    pub distill: T,
    pub reg: T,
}

impl<T: Real> LossBreakdown<T> {
    pub fn to_f64(self) -> LossBreakdown<f64> {
        LossBreakdown {
            total: self.total.to_f64_lossy(),
            triple: self.triple.to_f64_lossy(),
            recon: self.recon.to_f64_lossy(),
            distill: self.distill.to_f64_lossy(),
            reg: self.reg.to_f64_lossy(),
        }
    }
}

/// `Σ_e softplus(y_e φ_e)` per row with `y = -1` on the true tail and `+1`
/// elsewhere, averaged over rows.
pub fn triple_loss<T: Real>(rows: &[Vec<T>], true_ids: &[u32]) -> T {
    let mut total = T::zero();
    for (row, &t) in rows.iter().zip(true_ids) {
        for (e, &s) in row.iter().enumerate() {
            let y = if e == t as usize { -T::one() } else { T::one() };
            total += softplus(y * s);
        }
    }
    total / T::lit(rows.len().max(1) as f64)
}

/// `Σ |x|³`.
pub fn n3<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v.abs() * v * v).sum()
}

/// `grad += coef · 3·x·|x|`, the gradient of `coef · Σ|x|³`.
pub fn n3_grad_acc<T: Real>(coef: T, x: &[T], grad: &mut [T]) {
    let three = T::lit(3.0);
    for (g, &v) in grad.iter_mut().zip(x) {
        *g += coef * three * v * v.abs();
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Heads then tails of a batch, deduplicated, first appearance order.
pub fn batch_entities(triples: &[Triple]) -> Vec<u32> {
    let mut seen = HashSet::new();
    triples
        .iter()
        .map(|t| t.head)
        .chain(triples.iter().map(|t| t.tail))
        .filter(|e| seen.insert(*e))
        .collect()
}

/// Per-relation accumulator for gate and temperature gradients.
struct GateGrad<T> {
    ent_w: [Vec<T>; 3],
    rel: [T; 3],
    tau: T,
}

impl<T: Real> GateGrad<T> {
    fn new(w: usize) -> Self {
        Self {
            ent_w: std::array::from_fn(|_| vec![T::zero(); w]),
            rel: [T::zero(); 3],
            tau: T::zero(),
        }
    }
}

/// Adjoint of [`fuse_into`]: pushes `grad_joint` into the three modality
/// inputs, the joint task row and the gate accumulator.
#[allow(clippy::too_many_arguments)]
fn fuse_backward<T: Real>(
    grad_joint: &[T],
    hat: [&[T]; 3],
    gs: &GateState<T>,
    tau: T,
    gate_w_ent: [&[T]; 3],
    gated: bool,
    g_hat: [&mut [T]; 3],
    g_task_joint: &mut [T],
    acc: &mut GateGrad<T>,
) {
    axpy(g_task_joint, T::one(), grad_joint);
    for m in 0..3 {
        axpy(g_hat[m], gs.weights[m], grad_joint);
    }
    if !gated {
        return;
    }
    let dw: [T; 3] = std::array::from_fn(|m| dot(grad_joint, hat[m]));
    let s = gs.weights[0] * dw[0] + gs.weights[1] * dw[1] + gs.weights[2] * dw[2];
    for m in 0..3 {
        let dz = gs.weights[m] * (dw[m] - s);
        let dlogit = dz / tau;
        acc.tau -= dz * gs.scaled[m] / tau;
        acc.rel[m] += dlogit;
        axpy(g_hat[m], dlogit, gate_w_ent[m]);
        axpy(&mut acc.ent_w[m], dlogit, hat[m]);
    }
}

/// Total loss on a batch and, accumulated into a fresh table set, its
/// gradient with respect to every parameter.
///
/// `noise` fixes the student-path perturbation; `None` (or the `no-noise`
/// ablation) disables the distillation term.
pub fn compute_loss<T: Real>(
    params: &ModelParams<T>,
    feats: &Features<T>,
    triples: &[Triple],
    noise: Option<&NoiseDraw<T>>,
    cfg: &LossConfig<T>,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    loss_impl(params, None, feats, triples, noise, cfg)
}

/// [`compute_loss`] with the distillation teacher evaluated at `teacher`
/// instead of `params`. The gradient is identical at `teacher == params`;
/// away from it this is the function whose derivative that gradient is,
/// which is what a finite-difference check must perturb.
pub fn compute_loss_frozen_teacher<T: Real>(
    params: &ModelParams<T>,
    teacher: &ModelParams<T>,
    feats: &Features<T>,
    triples: &[Triple],
    noise: Option<&NoiseDraw<T>>,
    cfg: &LossConfig<T>,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    if teacher.dims != params.dims {
        return Err(Error::Invalid("teacher parameters have different dims".into()));
    }
    loss_impl(params, Some(teacher), feats, triples, noise, cfg)
}

fn loss_impl<T: Real>(
    params: &ModelParams<T>,
    teacher: Option<&ModelParams<T>>,
    feats: &Features<T>,
    triples: &[Triple],
    noise: Option<&NoiseDraw<T>>,
    cfg: &LossConfig<T>,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    let dims = params.dims;
    let (d, n) = (dims.d, dims.num_entities);
    let w = 2 * d;
    if triples.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    for t in triples {
        check_id("entity", t.head as usize, n)?;
        check_id("entity", t.tail as usize, n)?;
        check_id("relation", t.rel as usize, dims.num_relations)?;
    }
    for (k, raw) in feats.raw.iter().enumerate() {
        if raw.rows != n || raw.cols != params.proj_w[k].cols {
            return Err(Error::dim("feature table width", params.proj_w[k].cols, raw.cols));
        }
    }

    let abl = cfg.ablation;
    let wt = cfg.weights;
    let stage = EntityStage::compute(params, feats, abl);
    let teacher_stage = teacher.map(|tp| EntityStage::compute(tp, feats, abl));
    let (tp, tstage) = match (teacher, &teacher_stage) {
        (Some(tp), Some(ts)) => (tp, ts),
        _ => (params, &stage),
    };
    let mut g = ModelParams::<T>::zeros(dims);
    let mut g_hat: [Table<T>; 3] = std::array::from_fn(|_| Table::zeros(n, w));
    let mut g_modal: [Table<T>; 3] = std::array::from_fn(|_| Table::zeros(n, w));
    let mut g_gate_ent: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); w]);

    let bsz = T::lit(triples.len() as f64);
    let n_pairs = T::lit(2.0 * triples.len() as f64);
    let distill_on = noise.is_some() && abl != Ablation::NoNoise;
    let gate_w_ent: [&[T]; 3] = std::array::from_fn(|m| &params.gate_w[m].data[..w]);

    let (mut triple, mut reg, mut distill, mut recon) = (T::zero(), T::zero(), T::zero(), T::zero());

    let rels: Vec<u32> = triples.iter().map(|t| t.rel).collect();
    for (rel, idx) in group_by_relation(&rels) {
        let rel = rel as usize;
        let rv = RelationView::new(params, rel, abl);
        let cands = Candidates::build(params, &stage, &rv, abl);
        let mut g_c = vec![T::zero(); n * 8 * d];
        let mut g_trans = vec![T::zero(); 8 * d];
        let mut g_rot = vec![T::zero(); 8 * d];
        let mut acc = GateGrad::new(w);

        for &i in &idx {
            let Triple { head, tail, .. } = triples[i];
            let (h, t) = (head as usize, tail as usize);

            // 1-vs-all logistic loss over every candidate tail
            let (q, translated) = query_vector(&cfg.sc, cands.row(h), &rv, ScoreVariant::Full);
            let scores = cands.scores(&q);
            let mut g_q = vec![T::zero(); 8 * d];
            for (e, &s) in scores.iter().enumerate() {
                let y = if e == t { -T::one() } else { T::one() };
                triple += softplus(y * s) / bsz;
                let ge = wt.triple * y * sigmoid(y * s) / bsz;
                axpy(&mut g_c[e * 8 * d..(e + 1) * 8 * d], ge, &q);
                axpy(&mut g_q, ge, cands.row(e));
            }
            let mut g_translated = vec![T::zero(); 8 * d];
            hamilton_backward(&cfg.sc, &translated, &rv.rot, &g_q, &mut g_translated, &mut g_rot, d);
            axpy(&mut g_c[h * 8 * d..(h + 1) * 8 * d], T::one(), &g_translated);
            axpy(&mut g_trans, T::one(), &g_translated);

            // N3 on the head, both relation embeddings and the true tail
            let coef = cfg.lambda / bsz;
            reg += coef * (n3(cands.row(h)) + n3(&rv.trans) + n3(&rv.rot) + n3(cands.row(t)));
            let gc = wt.reg * coef;
            n3_grad_acc(gc, cands.row(h), &mut g_c[h * 8 * d..(h + 1) * 8 * d]);
            n3_grad_acc(gc, cands.row(t), &mut g_c[t * 8 * d..(t + 1) * 8 * d]);
            n3_grad_acc(gc, &rv.trans, &mut g_trans);
            n3_grad_acc(gc, &rv.rot, &mut g_rot);
        }

        // candidate rows → modality representations and gate
        let zeroed = abl.zeroed_block();
        for e in 0..n {
            let row = &g_c[e * 8 * d..(e + 1) * 8 * d];
            for m in 0..3 {
                if zeroed != Some(m + 1) {
                    axpy(g_hat[m].row_mut(e), T::one(), &row[(m + 1) * w..(m + 2) * w]);
                }
            }
            if zeroed == Some(0) {
                continue;
            }
            let hat = [stage.hat[0].row(e), stage.hat[1].row(e), stage.hat[2].row(e)];
            let [h0, h1, h2] = &mut g_hat;
            fuse_backward(
                &row[..w],
                hat,
                &cands.gates[e],
                rv.tau,
                gate_w_ent,
                abl.gated(),
                [h0.row_mut(e), h1.row_mut(e), h2.row_mut(e)],
                g.task[3].row_mut(e),
                &mut acc,
            );
        }

        // self-distillation: clean teacher (constant) vs noised student
        if distill_on {
            let draw = noise.unwrap();
            let trv = RelationView::new(tp, rel, abl);
            for &i in &idx {
                for e in [triples[i].head, triples[i].tail] {
                    let Some(shift) = draw.rows.get(&e) else {
                        continue;
                    };
                    let e = e as usize;
                    let hat = [tstage.hat[0].row(e), tstage.hat[1].row(e), tstage.hat[2].row(e)];
                    let ent_logit: [T; 3] = std::array::from_fn(|m| tstage.gate_ent.row(e)[m]);
                    let mut teacher = vec![T::zero(); w];
                    fuse_into(hat, ent_logit, &trv, tp.task[3].row(e), abl.gated(), &mut teacher);

                    let hat_s: [Vec<T>; 3] = std::array::from_fn(|m| {
                        let mut v: Vec<T> = stage.modal[m].row(e).iter().zip(&shift[m]).map(|(&x, &z)| x + z).collect();
                        if abl.factorized() {
                            axpy(&mut v, T::one(), params.task[m].row(e));
                        }
                        if abl.zeroed_modality() == Some(m) {
                            v.fill(T::zero());
                        }
                        v
                    });
                    let hat_s_ref = [hat_s[0].as_slice(), hat_s[1].as_slice(), hat_s[2].as_slice()];
                    let logit_s: [T; 3] = std::array::from_fn(|m| dot(gate_w_ent[m], hat_s_ref[m]));
                    let mut student = vec![T::zero(); w];
                    let gs = fuse_into(hat_s_ref, logit_s, &rv, params.task[3].row(e), abl.gated(), &mut student);

                    let diff: Vec<T> = teacher.iter().zip(&student).map(|(&a, &b)| a - b).collect();
                    distill += dot(&diff, &diff) / n_pairs;
                    let scale = -wt.distill * T::lit(2.0) / n_pairs;
                    let g_student: Vec<T> = diff.iter().map(|&x| scale * x).collect();
                    let mut gh: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); w]);
                    let [a, b, c] = &mut gh;
                    fuse_backward(
                        &g_student,
                        hat_s_ref,
                        &gs,
                        rv.tau,
                        gate_w_ent,
                        abl.gated(),
                        [a.as_mut_slice(), b.as_mut_slice(), c.as_mut_slice()],
                        g.task[3].row_mut(e),
                        &mut acc,
                    );
                    for m in (0..3).filter(|&m| abl.zeroed_modality() != Some(m)) {
                        axpy(g_modal[m].row_mut(e), T::one(), &gh[m]);
                        if abl.factorized() {
                            axpy(g.task[m].row_mut(e), T::one(), &gh[m]);
                        }
                    }
                }
            }
        }

        // relation-side gate inputs and temperature
        for m in 0..3 {
            let r = acc.rel[m];
            g.gate_b[m].data[0] += r;
            let gw = &params.gate_w[m].data;
            axpy(&mut g.gate_w[m].data[2 * d..10 * d], r, &rv.trans);
            axpy(&mut g.gate_w[m].data[10 * d..18 * d], r, &rv.rot);
            axpy(&mut g_trans, r, &gw[2 * d..10 * d]);
            axpy(&mut g_rot, r, &gw[10 * d..18 * d]);
            axpy(&mut g_gate_ent[m], T::one(), &acc.ent_w[m]);
        }
        g.rel_temp_raw.data[rel] += acc.tau * sigmoid(params.rel_temp_raw.data[rel]);
        if abl != Ablation::NoTranslation {
            axpy(g.rel_trans.row_mut(rel), T::one(), &g_trans);
        }
        if abl != Ablation::NoRotation {
            axpy(g.rel_rot.row_mut(rel), T::one(), &g_rot);
        }
    }

    // cross-modal reconstruction of each modality-specific embedding
    if abl.factorized() {
        let ents = batch_entities(triples);
        let n_ent = T::lit(ents.len() as f64);
        for &e in &ents {
            let e = e as usize;
            for m in 0..3 {
                let others = other_modalities(m);
                let ReconPass { input: x, pre, hidden: hid, out } = reconstruct(params, &stage, e, m);
                let (w1, w2) = (&params.recon_w1[m], &params.recon_w2[m]);
                let diff: Vec<T> = out.iter().zip(stage.modal[m].row(e)).map(|(&o, &t)| o - t).collect();
                recon += dot(&diff, &diff) / n_ent;

                let scale = wt.recon * T::lit(2.0) / n_ent;
                let g_out: Vec<T> = diff.iter().map(|&v| scale * v).collect();
                let mut g_hid = vec![T::zero(); w];
                for (i, &go) in g_out.iter().enumerate() {
                    axpy(g.recon_w2[m].row_mut(i), go, &hid);
                    g.recon_b2[m].data[i] += go;
                    axpy(&mut g_hid, go, w2.row(i));
                }
                let mut g_x = vec![T::zero(); 3 * w];
                for i in 0..w {
                    if pre[i] <= T::zero() {
                        continue;
                    }
                    let gp = g_hid[i];
                    axpy(g.recon_w1[m].row_mut(i), gp, &x);
                    g.recon_b1[m].data[i] += gp;
                    axpy(&mut g_x, gp, w1.row(i));
                }
                axpy(g.task[m].row_mut(e), T::one(), &g_x[..w]);
                axpy(g_modal[others[0]].row_mut(e), T::one(), &g_x[w..2 * w]);
                axpy(g_modal[others[1]].row_mut(e), T::one(), &g_x[2 * w..]);
                axpy(g_modal[m].row_mut(e), -T::one(), &g_out);
            }
        }
    }

    // ê^m = e^m_m + e^m_t
    for m in 0..3 {
        axpy(&mut g.gate_w[m].data[..w], T::one(), &g_gate_ent[m]);
        if abl.zeroed_modality() == Some(m) {
            continue;
        }
        axpy(&mut g_modal[m].data, T::one(), &g_hat[m].data);
        if abl.factorized() {
            axpy(&mut g.task[m].data, T::one(), &g_hat[m].data);
        }
    }
    axpy(&mut g.ent_struct.data, T::one(), &g_modal[STRUCT].data);
    for k in 0..2 {
        let slot = 1 + k;
        for e in 0..n {
            let gr = g_modal[slot].row(e);
            if gr.iter().all(|v| v.is_zero()) {
                continue;
            }
            axpy(&mut g.proj_b[k].data, T::one(), gr);
            let x = feats.raw[k].row(e);
            for (i, &gi) in gr.iter().enumerate() {
                axpy(g.proj_w[k].row_mut(i), gi, x);
            }
        }
    }

    let breakdown = {
        let triple = wt.triple * triple;
        let recon = wt.recon * recon;
        let distill = wt.distill * distill;
        let reg = wt.reg * reg;
        LossBreakdown {
            total: triple + recon + distill + reg,
            triple,
            recon,
            distill,
            reg,
        }
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            table: "(total)".into(),
        });
    }
    Ok((breakdown, g))
}
