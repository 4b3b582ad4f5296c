//! Adagrad and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate, EvalOptions};
use crate::kgdata::{Dataset, FilterIndex, Modality, Triple};
use crate::model::{
    batch_entities, compute_loss, noise_stats, pca_init, Ablation, Dims, EntityStage, Features, LossBreakdown,
    LossConfig, LossWeights, ModelParams, NoiseDraw, Table,
};
use crate::real::Real;
use crate::rng::{stream, substream, Stream};

pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::Config(format!("unknown precision `{s}` (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub d: usize,
    pub lambda: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Validation MRR every this many epochs (and after the last one).
    pub eval_every: usize,
    pub seed: u64,
    pub precision: Precision,
    pub weights: LossWeights<f64>,
    pub ablation: Ablation,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub grad_cap: Option<f64>,
    /// PCA-initialize the visual and textual task embeddings.
    pub pca_init: bool,
    /// Parallel candidate scoring during validation.
    pub parallel_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            d: 128,
            lambda: 0.005,
            beta: 0.2,
            batch_size: 1000,
            epochs: 200,
            eval_every: 10,
            seed: 0,
            precision: Precision::F32,
            weights: LossWeights::default(),
            ablation: Ablation::None,
            patience: None,
            grad_cap: None,
            pca_init: true,
            parallel_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("learning rate α = {} must be > 0", self.alpha));
        }
        if self.d == 0 {
            return bad("dimension d must be >= 1".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("λ = {} must be >= 0", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("noise ratio β = {} outside [0, 1]", self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if let Some(c) = self.grad_cap {
            if !(c > 0.0) {
                return bad(format!("gradient cap {c} must be > 0"));
            }
        }
        let w = self.weights;
        if [w.triple, w.recon, w.distill, w.reg].iter().any(|&x| !(x >= 0.0)) {
            return bad("loss-term weights must be >= 0".into());
        }
        Ok(())
    }

    pub fn loss_config<T: Real>(&self) -> Result<LossConfig<T>> {
        let mut cfg = LossConfig::new(T::lit(self.lambda))?;
        cfg.weights = LossWeights {
            triple: T::lit(self.weights.triple),
            recon: T::lit(self.weights.recon),
            distill: T::lit(self.weights.distill),
            reg: T::lit(self.weights.reg),
        };
        cfg.ablation = self.ablation;
        Ok(cfg)
    }
}

/// Squared-gradient accumulators, one per parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState<T> {
    pub accum: Vec<Table<T>>,
    pub eps: T,
}

impl<T: Real> AdagradState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            accum: params.tables().into_iter().map(|(_, t)| Table::zeros(t.rows, t.cols)).collect(),
            eps: T::lit(ADAGRAD_EPS),
        }
    }
}

/// `G += g²; θ −= α·g / (√G + ε)`, skipping rows whose gradient is all zero.
pub fn adagrad_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdagradState<T>,
    alpha: T,
) -> Result<()> {
    let grad_tables = grads.tables();
    let param_tables = params.tables_mut();
    if grad_tables.len() != param_tables.len() || state.accum.len() != param_tables.len() {
        return Err(Error::dim("optimizer table count", param_tables.len(), grad_tables.len()));
    }
    for ((p, (name, g)), acc) in param_tables.into_iter().zip(grad_tables).zip(state.accum.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != acc.shape() {
            return Err(Error::dim(format!("gradient table {name} size"), p.data.len(), g.data.len()));
        }
        let cols = p.cols.max(1);
        for ((pr, gr), ar) in p
            .data
            .chunks_mut(cols)
            .zip(g.data.chunks(cols))
            .zip(acc.data.chunks_mut(cols))
        {
            if gr.iter().all(|x| x.is_zero()) {
                continue;
            }
            for ((pv, &gv), av) in pr.iter_mut().zip(gr).zip(ar.iter_mut()) {
                *av += gv * gv;
                *pv -= alpha * gv / (av.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}

/// Loss and gradient for one batch; a non-finite gradient names its table.
pub fn compute_gradients<T: Real>(
    params: &ModelParams<T>,
    feats: &Features<T>,
    batch: &[Triple],
    noise: Option<&NoiseDraw<T>>,
    cfg: &LossConfig<T>,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    let (loss, grads) = compute_loss(params, feats, batch, noise, cfg)?;
    if let Some(table) = grads.first_non_finite() {
        return Err(Error::NonFinite { what: "gradient", table });
    }
    Ok((loss, grads))
}

fn clip_global_norm<T: Real>(grads: &mut ModelParams<T>, cap: f64) {
    let sq: f64 = grads
        .tables()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| x.to_f64_lossy().powi(2))
        .sum();
    let norm = sq.sqrt();
    if norm > cap {
        let s = T::lit(cap / norm);
        for t in grads.tables_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Mean batch losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    pub seconds: f64,
    pub valid_mrr: Option<f64>,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\tL_total\tL_triple\tL_recon\tL_distill\tL_reg\tseconds";

    /// `epoch  L_total  L_triple  L_recon  L_distill  L_reg  seconds`.
    pub fn log_line(&self) -> String {
        let l = self.loss;
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, l.total, l.triple, l.recon, l.distill, l.reg, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation MRR (the final ones when no
    /// validation ran).
    pub best: ModelParams<T>,
    pub best_valid_mrr: Option<f64>,
    pub best_epoch: usize,
    pub last: ModelParams<T>,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on an error; `best` is still the last good
    /// checkpoint.
    pub aborted: Option<String>,
}

pub fn model_dims(ds: &Dataset, d: usize) -> Dims {
    Dims {
        d,
        num_entities: ds.graph.num_entities(),
        num_relations: ds.graph.num_relations(),
        visual_dim: ds.modality(Modality::Visual).dim,
        textual_dim: ds.modality(Modality::Textual).dim,
    }
}

/// Seeded initial parameters for a dataset.
pub fn init_params<T: Real>(ds: &Dataset, cfg: &TrainConfig) -> ModelParams<T> {
    let dims = model_dims(ds, cfg.d);
    let mut rng = stream(cfg.seed, Stream::Init);
    let pca = cfg.pca_init.then(|| {
        [
            pca_init(ds.modality(Modality::Visual), 2 * cfg.d, &mut rng),
            pca_init(ds.modality(Modality::Textual), 2 * cfg.d, &mut rng),
        ]
    });
    ModelParams::init(dims, &mut rng, pca)
}

/// Filtered validation MRR, or `None` without validation triples.
pub fn validation_mrr<T: Real>(
    params: &ModelParams<T>,
    feats: &Features<T>,
    ds: &Dataset,
    filter: &FilterIndex,
    opts: EvalOptions,
) -> Result<Option<f64>> {
    if ds.graph.valid.is_empty() {
        return Ok(None);
    }
    let ranks = evaluate(params, feats, &ds.graph, filter, &ds.graph.valid, opts)?;
    Ok(Some(aggregate(&ranks)?.mrr))
}

/// Runs the full training loop from seeded initial parameters.
///
/// `on_epoch` sees every record as soon as it is complete.
pub fn train<T: Real>(
    ds: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let params = init_params::<T>(ds, cfg);
    train_from(ds, cfg, params, on_epoch)
}

/// Training loop from given parameters.
pub fn train_from<T: Real>(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut params: ModelParams<T>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let feats = Features::<T>::from_modalities(&ds.features)?;
    let loss_cfg = cfg.loss_config::<T>()?;
    let filter = FilterIndex::build(&ds.graph);
    let eval_opts = EvalOptions {
        ablation: cfg.ablation,
        parallel: cfg.parallel_eval,
        ..Default::default()
    };
    let alpha = T::lit(cfg.alpha);
    let mut state = AdagradState::new(&params);
    let train = &ds.graph.train;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::Invalid("no training triples".into()));
    }
    let use_noise = cfg.beta > 0.0 && cfg.ablation != Ablation::NoNoise;

    let mut out = TrainOutcome {
        best: params.clone(),
        best_valid_mrr: None,
        best_epoch: 0,
        last: params.clone(),
        history: Vec::new(),
        aborted: None,
    };
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let noise_model = if use_noise {
            let stage = EntityStage::compute(&params, &feats, cfg.ablation);
            Some(noise_stats(&stage.modal, cfg.beta)?)
        } else {
            None
        };
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut noise_rng = substream(cfg.seed, Stream::Noise, epoch as u64);

        let mut sum = LossBreakdown::<f64>::default();
        let mut batches = 0usize;
        let mut failure = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Triple> = chunk.iter().map(|&i| train[i]).collect();
            let draw = noise_model
                .as_ref()
                .map(|m| m.sample(&batch_entities(&batch), &mut noise_rng));
            let (loss, mut grads) = match compute_gradients(&params, &feats, &batch, draw.as_ref(), &loss_cfg) {
                Ok(x) => x,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            if let Some(cap) = cfg.grad_cap {
                clip_global_norm(&mut grads, cap);
            }
            adagrad_step(&mut params, &grads, &mut state, alpha)?;
            if let Some(table) = params.first_non_finite() {
                failure = Some(Error::NonFinite { what: "parameter", table });
                break;
            }
            let l = loss.to_f64();
            sum.total += l.total;
            sum.triple += l.triple;
            sum.recon += l.recon;
            sum.distill += l.distill;
            sum.reg += l.reg;
            batches += 1;
        }
        if let Some(e) = failure {
            log::error!("epoch {epoch}: {e}; keeping the last good checkpoint");
            out.aborted = Some(e.to_string());
            out.last = params;
            return Ok(out);
        }

        let nb = batches.max(1) as f64;
        let mean = LossBreakdown {
            total: sum.total / nb,
            triple: sum.triple / nb,
            recon: sum.recon / nb,
            distill: sum.distill / nb,
            reg: sum.reg / nb,
        };
        let valid_mrr = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            validation_mrr(&params, &feats, ds, &filter, eval_opts)?
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: mean,
            seconds: start.elapsed().as_secs_f64(),
            valid_mrr,
        };
        on_epoch(&record);
        out.history.push(record);

        if let Some(mrr) = valid_mrr {
            // ties move the checkpoint to the later epoch but are not progress
            let improved = out.best_valid_mrr.is_none_or(|b| mrr > b);
            if out.best_valid_mrr.is_none_or(|b| mrr >= b) {
                out.best_valid_mrr = Some(mrr);
                out.best_epoch = epoch;
                out.best = params.clone();
            }
            if improved {
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    log::info!("early stop at epoch {epoch}: no improvement in {since_best} evaluations");
                    break;
                }
            }
        }
    }
    if out.best_valid_mrr.is_none() {
        out.best = params.clone();
        out.best_epoch = out.history.len();
    }
    out.last = params;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParams<f64> {
        let dims = Dims {
            d: 1,
            num_entities: 2,
            num_relations: 2,
            visual_dim: 1,
            textual_dim: 1,
        };
        ModelParams::zeros(dims)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        p.ent_struct.data.fill(0.3);
        let before = p.clone();
        let g = ModelParams::zeros(p.dims);
        let mut st = AdagradState::new(&p);
        adagrad_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert!(st.accum.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn adagrad_one_and_two_steps() {
        let mut p = tiny();
        let mut g = ModelParams::zeros(p.dims);
        g.ent_struct.data[0] = 1.0;
        let mut st = AdagradState::new(&p);
        adagrad_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert!((p.ent_struct.data[0] + 0.1 / (1.0 + 1e-10)).abs() < 1e-15);
        let first = p.ent_struct.data[0];
        adagrad_step(&mut p, &g, &mut st, 0.1).unwrap();
        let step = p.ent_struct.data[0] - first;
        assert!((step + 0.1 / (2f64.sqrt() + 1e-10)).abs() < 1e-15);
        assert_eq!(st.accum[0].data[0], 2.0);
    }

    #[test]
    fn untouched_rows_keep_their_accumulator() {
        let mut p = tiny();
        let mut g = ModelParams::zeros(p.dims);
        g.ent_struct.row_mut(1)[0] = 0.5;
        let mut st = AdagradState::new(&p);
        adagrad_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert!(st.accum[0].row(0).iter().all(|&x| x == 0.0));
        assert_eq!(p.ent_struct.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { alpha: 0.0, ..Default::default() },
            TrainConfig { d: 0, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { beta: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = tiny();
        g.ent_struct.data.fill(3.0);
        g.rel_rot.data[0] = 4.0;
        clip_global_norm(&mut g, 1.0);
        let n: f64 = g.tables().iter().flat_map(|(_, t)| t.data.iter()).map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-12);
    }
}
