//! Pointwise reranker: features, model, loss, trainer and the external
//! trainer protocol.

mod external;
mod features;
mod loss;
mod model;
mod train;

pub use external::{prepare_external_inputs, ExternalInputs, ExternalTrainer};
pub use features::{
    extract_features, FeatureVector, QueryContext, TermStats, BM25_FEATURE, FEATURE_NAMES,
    NUM_FEATURES,
};
pub use loss::{lce_gradient, lce_loss, lce_loss_and_gradient};
pub use model::{
    Architecture, RerankerModel, TrainingMetadata, ValidationPoint, CHECKPOINT_FORMAT_VERSION,
};
pub use train::{
    fit, group_loss_and_gradient, prepare_groups, train, train_on_judgments,
    DirectTrainingLimits, GroupFeatures, OptimizerKind, Schedule, TrainerConfig,
};
