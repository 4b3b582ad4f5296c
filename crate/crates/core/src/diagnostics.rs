//! Randomized self-check suites: algebra identities, the pairwise-expansion
//! oracle, finite-difference gradients and the ranking oracle. Shared by the
//! `selfcheck` command and the test suites.

use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{aggregate, rank_query, RankResult};
use crate::hypercomplex::{
    hamilton_into, hamilton_unrolled_into, score_expansion_oracle, Biquat, StructureConstants, QUATERNION,
};
use crate::kgdata::{filtered_candidates, FilterIndex, KnowledgeGraph, Triple, Vocab};
use crate::model::{
    batch_entities, compute_loss, compute_loss_frozen_teacher, noise_stats, Ablation, Dims, EntityStage, Features,
    LossConfig, ModelParams, NoiseDraw, Scorer, Table,
};
use crate::real::Real;
use crate::rng::{substream, Stream};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest error seen (relative unless the suite says otherwise).
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} max_err={:.3e} tol={:.0e} time={:.2}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        if !self.detail.is_empty() {
            write!(f, " [{}]", self.detail)?;
        }
        Ok(())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖x - y‖ / ‖y‖`, or `‖x‖` when `y` is zero.
pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base = norm(y);
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; 8 * d];
    hamilton_into(&QUATERNION, a, b, &mut out, d);
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Complex quadratic form `Σ_c q_c²` per slot, as `[re..., im...]`.
fn quad_form(q: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * d];
    for c in 0..4 {
        for n in 0..d {
            let (re, im) = (q[2 * c * d + n], q[2 * c * d + d + n]);
            out[n] += re * re - im * im;
            out[d + n] += 2.0 * re * im;
        }
    }
    out
}

fn complex_mul_vec(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * d];
    for n in 0..d {
        out[n] = a[n] * b[n] - a[d + n] * b[d + n];
        out[d + n] = a[n] * b[d + n] + a[d + n] * b[n];
    }
    out
}

/// Real quaternion norm² per slot; imaginary parts must be zero.
fn real_norms(q: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|n| (0..4).map(|c| q[2 * c * d + n].powi(2)).sum()).collect()
}

/// Identity, associativity, distributivity, anti-commutation of distinct
/// imaginary bases, norm multiplicativity and agreement of the table-driven
/// and unrolled kernels: `cases` random instances per property and width.
pub fn algebra_suite(cases: usize, widths: &[usize], tol: f64, seed: u64) -> Vec<SuiteReport> {
    type Check = fn(&mut ChaCha8Rng, usize) -> f64;
    let checks: [(&str, Check); 6] = [
        ("identity", |rng, d| {
            let a = random_vec(rng, 8 * d);
            let one = Biquat::<f64>::identity(d).into_flat();
            rel_err(&mul(&a, &one, d), &a).max(rel_err(&mul(&one, &a, d), &a))
        }),
        ("associativity", |rng, d| {
            let (a, b, c) = (random_vec(rng, 8 * d), random_vec(rng, 8 * d), random_vec(rng, 8 * d));
            rel_err(&mul(&mul(&a, &b, d), &c, d), &mul(&a, &mul(&b, &c, d), d))
        }),
        ("distributivity", |rng, d| {
            let (a, b, c) = (random_vec(rng, 8 * d), random_vec(rng, 8 * d), random_vec(rng, 8 * d));
            let left = rel_err(&mul(&a, &add(&b, &c), d), &add(&mul(&a, &b, d), &mul(&a, &c, d)));
            let right = rel_err(&mul(&add(&b, &c), &a, d), &add(&mul(&b, &a, d), &mul(&c, &a, d)));
            left.max(right)
        }),
        ("anti-commutation", |rng, d| {
            // α·e_u ⊗ β·e_v = −β·e_v ⊗ α·e_u for distinct imaginary bases
            let u = rng.random_range(1..4usize);
            let v = 1 + (u % 3);
            let mut x = vec![0.0; 8 * d];
            let mut y = vec![0.0; 8 * d];
            x[2 * u * d..2 * (u + 1) * d].copy_from_slice(&random_vec(rng, 2 * d));
            y[2 * v * d..2 * (v + 1) * d].copy_from_slice(&random_vec(rng, 2 * d));
            let neg: Vec<f64> = mul(&y, &x, d).iter().map(|z| -z).collect();
            rel_err(&mul(&x, &y, d), &neg)
        }),
        ("norm-multiplicativity", |rng, d| {
            let real_only = |rng: &mut ChaCha8Rng| {
                let mut q = random_vec(rng, 8 * d);
                for c in 0..4 {
                    q[2 * c * d + d..2 * (c + 1) * d].fill(0.0);
                }
                q
            };
            let (p, q) = (real_only(rng), real_only(rng));
            let prod: Vec<f64> = real_norms(&p, d)
                .iter()
                .zip(real_norms(&q, d))
                .map(|(a, b)| a * b)
                .collect();
            let real = rel_err(&real_norms(&mul(&p, &q, d), d), &prod);
            // complex coefficients: the quadratic form Σ q_c² is multiplicative
            let (a, b) = (random_vec(rng, 8 * d), random_vec(rng, 8 * d));
            let expect = complex_mul_vec(&quad_form(&a, d), &quad_form(&b, d), d);
            real.max(rel_err(&quad_form(&mul(&a, &b, d), d), &expect))
        }),
        ("kernel-agreement", |rng, d| {
            let (a, b) = (random_vec(rng, 8 * d), random_vec(rng, 8 * d));
            let mut unrolled = vec![0.0; 8 * d];
            hamilton_unrolled_into(&a, &b, &mut unrolled, d);
            rel_err(&mul(&a, &b, d), &unrolled)
        }),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(k, (name, check))| {
            let start = Instant::now();
            let mut worst: f64 = 0.0;
            let mut count = 0;
            for &d in widths {
                let mut rng = substream(seed, Stream::Synthetic, (k * 1000 + d) as u64);
                for _ in 0..cases {
                    let e = check(&mut rng, d);
                    worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
                    count += 1;
                }
            }
            SuiteReport {
                name: format!("algebra/{name}"),
                passed: worst <= tol,
                cases: count,
                max_error: worst,
                tolerance: tol,
                elapsed: start.elapsed(),
                detail: format!("d in {widths:?}"),
            }
        })
        .collect()
}

/// Random model with every table uniform in `±scale` (drawn in `f64`, then
/// cast, so both precisions see the same values) and random features.
/// Entity `num_entities - 1` has its visual features masked to zero.
pub fn random_instance<T: Real>(dims: Dims, scale: f64, seed: u64) -> (ModelParams<T>, Features<T>) {
    let mut rng = substream(seed, Stream::Init, 0);
    let mut p = ModelParams::<f64>::zeros(dims);
    for t in p.tables_mut() {
        for v in t.data.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    let mut vis = Table::<f64>::uniform(dims.num_entities, dims.visual_dim, 1.0, &mut rng);
    let txt = Table::<f64>::uniform(dims.num_entities, dims.textual_dim, 1.0, &mut rng);
    vis.row_mut(dims.num_entities - 1).fill(0.0);
    (p.cast(), Features { raw: [vis.cast(), txt.cast()] })
}

fn to_f64_biquat<T: Real>(x: &[T]) -> Biquat<f64> {
    Biquat::from_flat(x.iter().map(|v| v.to_f64_lossy()).collect()).expect("8d row")
}

/// `score_batch` (through the given structure constants) against the
/// sixteen-term expansion, `cases` random triples per width. The error is
/// relative to `max(|oracle|, 1e-2·‖h+T‖‖R‖‖t‖)` so that near-cancelling
/// scores are judged against the magnitude of their inputs.
pub fn score_expansion_suite<T: Real>(
    sc: &StructureConstants,
    cases: usize,
    widths: &[usize],
    tol: f64,
    seed: u64,
) -> SuiteReport {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &d in widths {
        let dims = Dims {
            d,
            num_entities: 7,
            num_relations: 4,
            visual_dim: 3,
            textual_dim: 5,
        };
        let (params, feats) = random_instance::<T>(dims, 1.0, seed ^ d as u64);
        let scorer = Scorer::new(&params, &feats, Ablation::None).with_structure_constants(*sc);
        let mut rng = substream(seed, Stream::Synthetic, 7000 + d as u64);
        for _ in 0..cases {
            let h = rng.random_range(0..dims.num_entities);
            let r = rng.random_range(0..dims.num_relations);
            let t = rng.random_range(0..dims.num_entities);
            let s = scorer.score_batch(&[h as u32], &[r as u32]).expect("valid ids")[0][t].to_f64_lossy();
            let cands = scorer.candidates(r);
            let rv = scorer.relation(r);
            let (hq, tq) = (to_f64_biquat(cands.row(h)), to_f64_biquat(cands.row(t)));
            let (tr, rot) = (to_f64_biquat(&rv.trans), to_f64_biquat(&rv.rot));
            let o = score_expansion_oracle(&hq, &tr, &rot, &tq).expect("same width");
            let a: Vec<f64> = add(hq.as_flat(), tr.as_flat());
            let floor = 1e-2 * norm(&a) * norm(rot.as_flat()) * norm(tq.as_flat());
            let e = (s - o).abs() / o.abs().max(floor).max(f64::MIN_POSITIVE);
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            count += 1;
        }
    }
    SuiteReport {
        name: format!("score-expansion/{}", T::NAME),
        passed: worst <= tol,
        cases: count,
        max_error: worst,
        tolerance: tol,
        elapsed: start.elapsed(),
        detail: format!("d in {widths:?}"),
    }
}

/// Per-table relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub tables: Vec<(String, f64)>,
    pub loss: f64,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.tables.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Finite-difference check of [`compute_loss`] on a 5-entity, 2-relation,
/// `d = 4` random instance with all four loss terms active.
pub fn gradient_check(seed: u64, beta: f64, step: f64) -> GradientReport {
    gradient_check_with(seed, beta, step, &LossConfig::new(0.05).expect("valid lambda"))
}

/// [`gradient_check`] under an arbitrary loss configuration.
pub fn gradient_check_with(seed: u64, beta: f64, step: f64, cfg: &LossConfig<f64>) -> GradientReport {
    let dims = Dims {
        d: 4,
        num_entities: 5,
        num_relations: 2,
        visual_dim: 3,
        textual_dim: 4,
    };
    let (params, feats) = random_instance::<f64>(dims, 0.5, seed);
    let mut rng = substream(seed, Stream::Synthetic, 9000);
    let triples: Vec<Triple> = (0..4)
        .map(|i| {
            Triple::new(
                rng.random_range(0..5),
                (i % 2) as u32,
                rng.random_range(0..5),
            )
        })
        .collect();
    let stage = EntityStage::compute(&params, &feats, cfg.ablation);
    let model = noise_stats(&stage.modal, beta).expect("valid ratio");
    let draw: NoiseDraw<f64> = model.sample(&batch_entities(&triples), &mut substream(seed, Stream::Noise, 0));

    let (base, grads) = compute_loss(&params, &feats, &triples, Some(&draw), cfg).expect("finite loss");
    let eval = |p: &ModelParams<f64>| {
        compute_loss_frozen_teacher(p, &params, &feats, &triples, Some(&draw), cfg)
            .expect("finite loss")
            .0
            .total
    };

    let mut work = params.clone();
    let names: Vec<String> = params.tables().into_iter().map(|(n, _)| n).collect();
    let mut tables = Vec::new();
    for (k, name) in names.into_iter().enumerate() {
        let analytic = grads.tables()[k].1.data.clone();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, g) in numeric.iter_mut().enumerate() {
            let orig = params.tables()[k].1.data[i];
            work.tables_mut()[k].data[i] = orig + step;
            let up = eval(&work);
            work.tables_mut()[k].data[i] = orig - step;
            let down = eval(&work);
            work.tables_mut()[k].data[i] = orig;
            *g = (up - down) / (2.0 * step);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, f)| a - f).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        // tables with (numerically) no gradient are judged absolutely
        let err = if scale < 1e-12 { norm(&diff) } else { norm(&diff) / scale };
        tables.push((name, err));
    }
    GradientReport { tables, loss: base.total }
}

pub fn gradient_suite(seed: u64, beta: f64, tol: f64) -> SuiteReport {
    let start = Instant::now();
    let report = gradient_check(seed, beta, 1e-4);
    let worst = report
        .tables
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| format!("worst table {n} {e:.2e}"))
        .unwrap_or_default();
    let max = report.max_error();
    SuiteReport {
        name: "gradients".into(),
        passed: max <= tol && report.tables.iter().all(|(_, e)| e.is_finite()),
        cases: report.tables.len(),
        max_error: max,
        tolerance: tol,
        elapsed: start.elapsed(),
        detail: worst,
    }
}

/// Rank by sorting: candidates ordered by score descending with the true
/// entity placed after every tie.
fn sort_rank(scores: &[f64], truth: usize, excluded: &HashSet<usize>) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).filter(|e| !excluded.contains(e)).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| (a == truth).cmp(&(b == truth)))
    });
    order.iter().position(|&e| e == truth).unwrap() + 1
}

/// Ranks and aggregates on every query of a random 10-entity graph against a
/// sort-based oracle, plus Hit@K monotonicity on random rank sets.
pub fn metric_oracle_suite(seed: u64, rank_sets: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = substream(seed, Stream::Synthetic, 11_000);
    let n = 10usize;
    let mut facts = HashSet::new();
    while facts.len() < 30 {
        facts.insert(Triple::new(
            rng.random_range(0..n as u32),
            rng.random_range(0..2),
            rng.random_range(0..n as u32),
        ));
    }
    let mut facts: Vec<Triple> = facts.into_iter().collect();
    facts.sort();
    let test = facts.split_off(24);
    let graph = KnowledgeGraph::from_parts(
        (0..n).map(|i| format!("e{i}")).collect::<Vocab>(),
        ["a", "b"].iter().map(|s| s.to_string()).collect::<Vocab>(),
        facts.clone(),
        Vec::new(),
        test.clone(),
    );
    let index = FilterIndex::build(&graph);
    let all: Vec<Triple> = facts.iter().chain(&test).copied().collect();

    let mut mismatches = 0;
    let mut queries = 0;
    let mut results = Vec::new();
    let mut oracle_rr = 0.0;
    let mut oracle_hits = [0usize; 3];
    for &t in &all {
        let mut ranks = [0usize; 2];
        for (slot, (head, rel, truth)) in [(t.tail, t.rel + 2, t.head), (t.head, t.rel, t.tail)].into_iter().enumerate() {
            // coarse integer scores force ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
            let mask = filtered_candidates(head, rel, truth, &index, n);
            let got = rank_query(&scores, truth as usize, &mask).expect("truth unmasked");
            let excluded: HashSet<usize> = all
                .iter()
                .flat_map(|f| [(f.head, f.rel, f.tail), (f.tail, f.rel + 2, f.head)])
                .filter(|&(h, r, e)| h == head && r == rel && e != truth)
                .map(|(_, _, e)| e as usize)
                .collect();
            let want = sort_rank(&scores, truth as usize, &excluded);
            mismatches += (got != want) as usize;
            queries += 1;
            ranks[slot] = got;
            oracle_rr += 1.0 / want as f64;
            for (h, k) in oracle_hits.iter_mut().zip([1, 3, 10]) {
                *h += (want <= k) as usize;
            }
        }
        results.push(RankResult {
            triple: t,
            head_rank: ranks[0],
            tail_rank: ranks[1],
        });
    }
    let m = aggregate(&results).expect("nonempty");
    let denom = queries as f64;
    let agg_ok = m.mrr == oracle_rr / denom
        && m.hit1 == oracle_hits[0] as f64 / denom
        && m.hit3 == oracle_hits[1] as f64 / denom
        && m.hit10 == oracle_hits[2] as f64 / denom;

    let mut monotone_fail = 0;
    for _ in 0..rank_sets {
        let len = rng.random_range(1..20);
        let rs: Vec<RankResult> = (0..len)
            .map(|_| RankResult {
                triple: Triple::new(0, 0, 0),
                head_rank: rng.random_range(1..30),
                tail_rank: rng.random_range(1..30),
            })
            .collect();
        let m = aggregate(&rs).expect("nonempty");
        let ok = m.hit1 <= m.hit3 && m.hit3 <= m.hit10 && m.hit10 <= 1.0 && m.hit1 <= m.mrr && m.mrr <= 1.0;
        monotone_fail += (!ok) as usize;
    }
    SuiteReport {
        name: "metric-oracle".into(),
        passed: mismatches == 0 && agg_ok && monotone_fail == 0,
        cases: queries + rank_sets,
        max_error: (mismatches + monotone_fail + (!agg_ok) as usize) as f64,
        tolerance: 0.0,
        elapsed: start.elapsed(),
        detail: format!("rank mismatches {mismatches}/{queries}, aggregate exact {agg_ok}, monotonicity failures {monotone_fail}/{rank_sets}"),
    }
}

/// Every suite at its acceptance settings.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    run_all_with(seed, &QUATERNION)
}

/// [`run_all`] with the score path driven by `sc`; any table other than the
/// quaternion one must fail the score-expansion suites.
pub fn run_all_with(seed: u64, sc: &StructureConstants) -> Vec<SuiteReport> {
    let mut out = algebra_suite(1000, &[1, 4, 32], 1e-9, seed);
    out.push(score_expansion_suite::<f64>(sc, 100, &[1, 2, 8], 1e-9, seed));
    out.push(score_expansion_suite::<f32>(sc, 100, &[1, 2, 8], 1e-4, seed));
    out.push(gradient_suite(seed, 0.5, 1e-4));
    out.push(metric_oracle_suite(seed, 1000));
    out
}
