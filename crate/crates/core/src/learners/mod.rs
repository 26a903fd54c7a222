//! Classifiers: a weighted random forest for questionnaire and video
//! features, and logistic regression for score fusion.

mod forest;
mod logistic;

pub use forest::{
    rank_importances, train_forest, FeaturesPerSplit, ForestModel, ForestParams, Node,
    MODEL_FORMAT_VERSION,
};
pub use logistic::{
    sigmoid, train_logistic, LogisticModel, LogisticObjective, LogisticParams, GRADIENT_LIMIT,
};
