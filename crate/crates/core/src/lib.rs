//! A from-scratch soft mixture-of-experts stack: dense `f64` tensor
//! primitives, two-layer ReLU MLP experts under a fixed parameter budget, the
//! soft MoE layer with analytic gradients, combine-mass expert-subset
//! selection with its random and exhaustive baselines, training loops, data
//! generators, and experiment runners.

pub mod datasets;
pub mod error;
pub mod experiments;
pub mod experts;
pub mod layer;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use experts::{build_bank, ExpertBank, MlpExpert};
pub use layer::{LayerActivations, RouterParams, SoftMoELayer};
pub use selection::{
    algorithm1_forward, batched_select, combine_mass, exhaustive_best_subset, random_subset,
    select_top_k, SubsetMask,
};
pub use tensor::{
    frobenius_norm, matmul, permute_rows, sample_gaussian, softmax_over_columns_per_row,
    softmax_over_rows_per_column, Matrix, RngStream,
};
pub use training::{
    adam_step, cross_entropy_loss, head_forward, mse_loss, train_model, AdamState, Head, HeadKind,
    Model, ModelConfig, Prediction, TrainConfig, TrainTask,
};
