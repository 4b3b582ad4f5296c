//! Forward-pass and loss examples with hand-computed expectations.

use std::collections::HashMap;

use mhyper::diagnostics::random_instance;
use mhyper::hypercomplex::{complex_mul, score_composed, Biquat, ComplexBlock, QUATERNION};
use mhyper::kgdata::Triple;
use mhyper::model::{
    assemble_entity, compute_loss, gate_fuse, gate_weights, query_vector, reconstruction_loss, Ablation, Dims,
    EntityStage, Features, LossConfig, LossWeights, ModelParams, NoiseDraw, RelationView, ScoreVariant, Scorer, Table,
    STRUCT, TEXTUAL, VISUAL,
};
use proptest::prelude::*;

fn dims(d: usize, e: usize) -> Dims {
    Dims {
        d,
        num_entities: e,
        num_relations: 2,
        visual_dim: 1,
        textual_dim: 1,
    }
}

fn zero_feats(n: usize) -> Features<f64> {
    Features {
        raw: [Table::zeros(n, 1), Table::zeros(n, 1)],
    }
}

fn only(w: LossWeights<f64>) -> LossConfig<f64> {
    let mut cfg = LossConfig::new(0.0).unwrap();
    cfg.weights = w;
    cfg
}

const ZERO_W: LossWeights<f64> = LossWeights {
    triple: 0.0,
    recon: 0.0,
    distill: 0.0,
    reg: 0.0,
};

#[test]
fn zero_features_and_task_give_projection_bias() {
    let mut p = ModelParams::<f64>::zeros(dims(1, 3));
    p.proj_b[0].data = vec![0.3, -0.2];
    let stage = EntityStage::compute(&p, &zero_feats(3), Ablation::None);
    for e in 0..3 {
        assert_eq!(stage.hat[VISUAL].row(e), &[0.3, -0.2]);
    }
    let again = EntityStage::compute(&p, &zero_feats(3), Ablation::None);
    assert_eq!(stage.hat[VISUAL].data, again.hat[VISUAL].data);
}

/// One entity, d = 1, modality-specific rows fixed through the struct table
/// and projection biases; `E^m(x) = [relu(x_2), relu(-x_4)]`.
fn recon_instance() -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::zeros(dims(1, 1));
    p.ent_struct.data = vec![1.0, 0.0];
    p.proj_b[0].data = vec![0.5, 0.25];
    p.proj_b[1].data = vec![-0.75, 2.0];
    for m in 0..3 {
        p.recon_w1[m].data = vec![0., 0., 1., 0., 0., 0., 0., 0., 0., 0., -1., 0.];
        p.recon_w2[m].data = vec![1., 0., 0., 1.];
    }
    p
}

#[test]
fn reconstruction_hand_example() {
    // struct: out (0.5, 0.75) vs (1, 0)      → 0.25 + 0.5625
    // visual: out (1, 0.75)   vs (0.5, 0.25) → 0.25 + 0.25
    // textual: out (1, 0)     vs (-0.75, 2)  → 3.0625 + 4
    let expect = 8.375;
    let p = recon_instance();
    let feats = zero_feats(1);
    let stage = EntityStage::compute(&p, &feats, Ablation::None);
    assert!((reconstruction_loss(&p, &stage, &[0]) - expect).abs() < 1e-12);
    let (loss, _) = compute_loss(
        &p,
        &feats,
        &[Triple::new(0, 0, 0)],
        None,
        &only(LossWeights { recon: 1.0, ..ZERO_W }),
    )
    .unwrap();
    assert!((loss.recon - expect).abs() < 1e-12);
    assert_eq!(loss.total, loss.recon);
}

#[test]
fn perfect_reconstruction_is_zero() {
    let mut p = recon_instance();
    let feats = zero_feats(1);
    let stage = EntityStage::compute(&p, &feats, Ablation::None);
    for m in 0..3 {
        p.recon_w1[m].fill_zero();
        p.recon_b2[m].data = stage.modal[m].row(0).to_vec();
    }
    assert_eq!(reconstruction_loss(&p, &stage, &[0]), 0.0);
}

#[test]
fn distillation_hand_example() {
    // All gate weights zero → uniform 1/3 weights for both paths, so the
    // fused difference is −(1/3)·Σ_m shift_m = (−0.2, −0.1), squared 0.05.
    // Head and tail are the same noised entity: two pairs, mean 0.05.
    let p = ModelParams::<f64>::zeros(dims(1, 1));
    let feats = zero_feats(1);
    let shift = [vec![0.3, 0.0], vec![0.0, 0.6], vec![0.3, -0.3]];
    let draw = NoiseDraw {
        rows: HashMap::from([(0u32, shift)]),
    };
    let cfg = only(LossWeights { distill: 1.0, ..ZERO_W });
    let (loss, _) = compute_loss(&p, &feats, &[Triple::new(0, 0, 0)], Some(&draw), &cfg).unwrap();
    assert!((loss.distill - 0.05).abs() < 1e-15, "{}", loss.distill);

    let zero = NoiseDraw {
        rows: HashMap::from([(0u32, [vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]])]),
    };
    let (loss, _) = compute_loss(&p, &feats, &[Triple::new(0, 0, 0)], Some(&zero), &cfg).unwrap();
    assert_eq!(loss.distill, 0.0);
}

fn random(seed: u64) -> (ModelParams<f64>, Features<f64>) {
    let d = Dims {
        d: 3,
        num_entities: 6,
        num_relations: 4,
        visual_dim: 3,
        textual_dim: 2,
    };
    random_instance(d, 0.5, seed)
}

fn batch() -> Vec<Triple> {
    vec![Triple::new(0, 1, 2), Triple::new(3, 0, 4), Triple::new(5, 2, 1), Triple::new(2, 3, 2)]
}

fn draw_all(n: usize, seed: f64) -> NoiseDraw<f64> {
    let rows = (0..n as u32)
        .map(|e| {
            let v = |k: f64| (0..6).map(|i| ((e as f64 + k) * 0.37 + i as f64 * seed).sin() * 0.1).collect();
            (e, [v(1.0), v(2.0), v(3.0)])
        })
        .collect();
    NoiseDraw { rows }
}

#[test]
fn breakdown_adds_up_and_terms_are_nonnegative() {
    for seed in 0..5 {
        let (p, f) = random(seed);
        let cfg = LossConfig::new(0.05).unwrap();
        let (l, _) = compute_loss(&p, &f, &batch(), Some(&draw_all(6, 0.3)), &cfg).unwrap();
        assert!((l.triple + l.recon + l.distill + l.reg - l.total).abs() <= 1e-6 * l.total.abs().max(1.0));
        for x in [l.triple, l.recon, l.distill, l.reg] {
            assert!(x >= 0.0 && x.is_finite());
        }
    }
}

#[test]
fn without_noise_total_is_the_other_three_terms() {
    let (p, f) = random(7);
    let cfg = LossConfig::new(0.05).unwrap();
    let (l, _) = compute_loss(&p, &f, &batch(), None, &cfg).unwrap();
    assert_eq!(l.distill, 0.0);
    assert_eq!(l.total, l.triple + l.recon + l.reg);
    let (z, _) = compute_loss(&p, &f, &batch(), Some(&draw_all(6, 0.3)), &only(ZERO_W)).unwrap();
    assert_eq!(z.total, 0.0);
}

#[test]
fn halving_lambda_halves_the_regularizer() {
    let (p, f) = random(8);
    let a = compute_loss(&p, &f, &batch(), None, &LossConfig::new(0.1).unwrap()).unwrap().0;
    let b = compute_loss(&p, &f, &batch(), None, &LossConfig::new(0.05).unwrap()).unwrap().0;
    assert_eq!(a.reg, 2.0 * b.reg);
}

#[test]
fn masked_modalities_stay_finite() {
    let (p, mut f) = random(9);
    for t in f.raw.iter_mut() {
        t.fill_zero();
    }
    let (l, g) = compute_loss(&p, &f, &batch(), Some(&draw_all(6, 0.1)), &LossConfig::new(0.05).unwrap()).unwrap();
    assert!(l.total.is_finite());
    assert!(g.first_non_finite().is_none());
}

#[test]
fn candidate_rows_are_assembled_joint_struct_visual_textual() {
    let (p, f) = random(3);
    let scorer = Scorer::new(&p, &f, Ablation::None);
    let rv = scorer.relation(1);
    let cands = scorer.candidates(1);
    for e in 0..p.dims.num_entities {
        let (joint, gate) = gate_fuse(&p, &scorer.stage, e, &rv, Ablation::None);
        let hats = [STRUCT, VISUAL, TEXTUAL].map(|m| scorer.stage.hat[m].row(e));
        let q = assemble_entity(&joint, hats).unwrap();
        assert_eq!(q.as_flat(), cands.row(e));
        let s: f64 = gate.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(gate.weights.iter().all(|&w| w > 0.0 && w < 1.0));
    }
}

#[test]
fn assembly_layout_and_round_trip() {
    let block = |b: f64| vec![b + 0.1, b + 0.2, b + 0.3, b + 0.4];
    let (j, s, v, t) = (block(0.0), block(1.0), block(2.0), block(3.0));
    let q = assemble_entity(&j, [&s, &v, &t]).unwrap();
    assert_eq!(q.d(), 2);
    // coefficient c is the c-th block: d real parts then d imaginary parts
    for (c, b) in [&j, &s, &v, &t].into_iter().enumerate() {
        let coeff = q.coeff(c);
        assert_eq!(coeff.re, b[..2]);
        assert_eq!(coeff.im, b[2..]);
    }
    let zero = assemble_entity(&[0.0; 4], [&[0.0; 4], &[0.0; 4], &[0.0; 4]]).unwrap();
    assert_eq!(zero, Biquat::zeros(2));
    assert!(assemble_entity(&j, [&s, &v, &t[..2]]).is_err());
}

fn view(trans: Vec<f64>, rot: Vec<f64>) -> RelationView<f64> {
    RelationView {
        rel: 0,
        trans,
        rot,
        tau: 1.0,
        gate_rel: [0.0; 3],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn identity_relation_scores_plain_dot() {
    let (mut p, f) = random(11);
    let d = p.dims.d;
    for r in 0..p.dims.num_relations {
        p.rel_trans.row_mut(r).fill(0.0);
        p.rel_rot.row_mut(r).copy_from_slice(Biquat::<f64>::identity(d).as_flat());
    }
    let scorer = Scorer::new(&p, &f, Ablation::None);
    let cands = scorer.candidates(2);
    let rows = scorer.score_heads(2, &[0, 4]);
    for (h, row) in [0usize, 4].iter().zip(rows) {
        for (t, s) in row.iter().enumerate() {
            assert!((s - dot(cands.row(*h), cands.row(t))).abs() < 1e-12);
        }
    }
}

#[test]
fn all_ones_score_matches_hand_expansion() {
    // (h + T) has every coefficient 2 + 2i and R has 1 + i, so each pair
    // product is 4i. The real quaternion pattern gives (−8i, 8i, 8i, 8i),
    // whose inner product with an all-ones tail is −8 + 8 + 8 + 8 = 16.
    let ones = Biquat::from_flat(vec![1.0f64; 8]).unwrap();
    assert_eq!(score_composed(&QUATERNION, &ones, &ones, &ones, &ones).unwrap(), 16.0);
    let (q, _) = query_vector(&QUATERNION, &[1.0; 8], &view(vec![1.0; 8], vec![1.0; 8]), ScoreVariant::Full);
    assert_eq!(dot(&q, &[1.0; 8]), 16.0);
}

fn block(x: &[f64], b: usize, d: usize) -> ComplexBlock<f64> {
    let s = &x[b * 2 * d..(b + 1) * 2 * d];
    ComplexBlock::new(s[..d].to_vec(), s[d..].to_vec()).unwrap()
}

/// `⟨(h_b + T_b) ⊛ R_b, t_b⟩` for one block, through the complex kernel.
fn block_score(h: &[f64], trans: &[f64], rot: &[f64], t: &[f64], b: usize, d: usize) -> f64 {
    let a: Vec<f64> = h.iter().zip(trans).map(|(x, y)| x + y).collect();
    let p = complex_mul(&block(&a, b, d), &block(rot, b, d)).unwrap();
    let tb = block(t, b, d);
    dot(&p.re, &tb.re) + dot(&p.im, &tb.im)
}

#[test]
fn score_variants_decompose_per_block() {
    let d = 3;
    let v = |k: f64| -> Vec<f64> { (0..8 * d).map(|i| ((i as f64 + 1.0) * k).sin()).collect() };
    let (h, t, trans, rot) = (v(0.7), v(1.3), v(2.1), v(0.4));
    let rv = view(trans.clone(), rot.clone());

    let (qe, _) = query_vector(&QUATERNION, &h, &rv, ScoreVariant::Ensemble);
    let parts: f64 = (0..4).map(|b| block_score(&h, &trans, &rot, &t, b, d)).sum();
    assert!((dot(&qe, &t) - parts).abs() < 1e-12);

    let (qf, _) = query_vector(&QUATERNION, &h, &rv, ScoreVariant::Fusion);
    assert!((dot(&qf, &t) - block_score(&h, &trans, &rot, &t, 0, d)).abs() < 1e-12);

    // modality blocks zeroed on both sides: ensemble reduces to fusion
    let mut h0 = h.clone();
    let mut t0 = t.clone();
    h0[2 * d..].fill(0.0);
    t0[2 * d..].fill(0.0);
    let mut trans0 = trans.clone();
    trans0[2 * d..].fill(0.0);
    let rv0 = view(trans0, rot.clone());
    let (a, _) = query_vector(&QUATERNION, &h0, &rv0, ScoreVariant::Ensemble);
    let (b, _) = query_vector(&QUATERNION, &h0, &rv0, ScoreVariant::Fusion);
    assert_eq!(dot(&a, &t0), dot(&b, &t0));

    // fusion with identity rotation and no translation is the joint dot
    let (q, _) = query_vector(&QUATERNION, &h, &view(vec![0.0; 8 * d], Biquat::<f64>::identity(d).into_flat()), ScoreVariant::Fusion);
    assert!((dot(&q, &t) - dot(&h[..2 * d], &t[..2 * d])).abs() < 1e-12);
}

#[test]
fn temperature_flattens_the_gate() {
    let logits = [1.5f64, -0.3, 0.4];
    let gap = |tau: f64| {
        let w = gate_weights(logits, tau);
        w.iter().cloned().fold(f64::MIN, f64::max) - w.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert!(gap(1.0) > gap(10.0) && gap(10.0) > gap(100.0) && gap(100.0) > 0.0);
}

proptest! {
    #[test]
    fn gate_weights_are_a_shift_invariant_distribution(
        l in prop::array::uniform3(-20.0f64..20.0),
        c in -50.0f64..50.0,
        tau in 0.05f64..50.0,
    ) {
        let w = gate_weights(l, tau);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        let s = gate_weights(l.map(|x| x + c), tau);
        for (a, b) in w.iter().zip(s) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
