//! Per-building aggregation, stratified splitting and the random-forest grader.

mod aggregate;
mod forest;
mod split;

pub use aggregate::{
    aggregate_building_vector, percentile_sorted, summary_statistics, vector_names, Aggregate,
    BuildingFeatureVector, DAMAGED_SHARE, STATISTICS,
};
pub use forest::{
    argmax_severe, load_model, save_model, train_forest, ForestModel, ForestParams, Node,
    Prediction, TrainingConfig, Tree, FORMAT_VERSION,
};
pub use split::{split_train_test, DEFAULT_TRAIN_RATIO};
