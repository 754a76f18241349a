//! End-to-end helpers shared by the command line and the acceptance suite.

use crate::artifact::TrainedModel;
use crate::error::Result;
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::gat::{train, TrainConfig, TrainingSample};
use crate::graph::GlobalCallGraph;
use crate::obs::RequestBundle;
use crate::rca::{fit_normal_patterns, NormalPatternStore};

pub fn training_samples(graphs: &[GlobalCallGraph]) -> Vec<TrainingSample> {
    graphs
        .iter()
        .map(|g| TrainingSample {
            x: g.x.clone(),
            neighborhoods: g.neighborhoods(),
        })
        .collect()
}

/// Fit the feature extractor on `bundles`, assemble their graphs and train
/// the auto-encoder. The feature seed is the training seed.
pub fn train_model(
    bundles: &[RequestBundle],
    feature_config: FeatureConfig,
    train_config: TrainConfig,
) -> Result<TrainedModel> {
    let features = FeatureExtractor::fit(bundles, feature_config, train_config.seed)?;
    let graphs = features.assemble_all(bundles)?;
    let (network, report) = train(&training_samples(&graphs), &train_config)?;
    Ok(TrainedModel {
        train_config,
        features,
        network,
        epoch_losses: report.epoch_losses,
    })
}

/// Assemble fault-free bundles and fit normal patterns for `model`.
pub fn fit_store(model: &TrainedModel, bundles: &[RequestBundle]) -> Result<NormalPatternStore> {
    let graphs = model.features.assemble_all(bundles)?;
    fit_normal_patterns(&model.network, &graphs, &model.fingerprint()?)
}
