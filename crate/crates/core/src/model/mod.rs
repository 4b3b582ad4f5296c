//! Parameters, forward pass, losses and gradients.

mod forward;
mod loss;
mod noise;
mod params;
mod pca;

pub use forward::{
    assemble_entity, gate_fuse, gate_weights, other_modalities, query_vector, reconstruct, reconstruction_loss,
    Ablation, Candidates, EntityStage, Features, GateState, ReconPass, RelationView, ScoreVariant, Scorer,
};
pub use loss::{batch_entities, compute_loss, compute_loss_frozen_teacher, n3, n3_grad_acc, triple_loss, LossBreakdown, LossConfig, LossWeights};
pub use noise::{noise_stats, population_stats, NoiseDraw, NoiseModel};
pub use params::{Dims, ModelParams, Table, EMBED_INIT_BOUND, MODAL_NAMES, STRUCT, TEXTUAL, VISUAL};
pub use pca::{pca_init, pca_project};
