//! Maneuver probabilities from a random forest over per-frame vehicle features.

mod features;
mod forest;
mod metrics;
mod protocol;
mod smote;

pub use features::{
    dataset_features, extract_features, feature_row, label_maneuver, FeatureMode, LabeledFeatures,
    ManeuverFeatures,
};
pub use forest::{
    fit_tree, predict_maneuver_proba, predict_row_proba, train_forest, train_random_forest, DecisionTree,
    ForestGrid, ForestModel, GridSelection, ManeuverDistribution, Node, N_CLASSES,
};
pub use metrics::{evaluate_predictions, ClassMetrics, ClassificationReport};
pub use protocol::{
    mean_std, run_protocol, split_groups, split_seed, ForestConfig, GroupSplit, MetricSummary, ProtocolOutcome,
    SplitOutcome,
};
pub use smote::smote_oversample;

/// Scores a forest on labeled rows.
pub fn evaluate_classifier(model: &ForestModel, test: &LabeledFeatures) -> crate::Result<ClassificationReport> {
    if test.is_empty() {
        return Err(crate::Error::Empty("classifier test set"));
    }
    let pred: Vec<usize> = test.rows.iter().map(|r| model.predict(r)).collect();
    Ok(evaluate_predictions(&test.labels, &pred, model.n_classes))
}
