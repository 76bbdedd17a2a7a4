//! Toy encoder-decoder segmentation network in five variants: a single-frame
//! baseline (`bl`), temporal fusion with ConvGRU or SSMA cells (`t-gru`,
//! `t-atte`), and their spatial-temporal counterparts that register each
//! prior into the current camera before fusing (`st-gru`, `st-atte`).

pub mod data;
pub mod model;
pub mod train;

pub use data::{draw_samples, PoseProvider, SequenceSpec, Split, Subset};
pub use model::{
    build_model, forward_sequence, predict, sequence_graph, sequence_plans, CellKind, Model, ModelConfig,
    ModelVars, Variant,
};
pub use train::{evaluate, train_toy, EpochRecord, EvalConfig, EvalReport, TrainConfig, TrainOutcome};
