//! Hybrid recommender built on a feedforward network whose inputs are
//! induced latent item vectors concatenated with given item descriptions.
//!
//! Training presents known ratings one at a time and refines both the
//! weights and the latent inputs by gradient descent. Items that have never
//! been rated are predicted by borrowing latent vectors from items with the
//! same description.

pub mod baselines;
pub mod coldstart;
pub mod data;
pub mod error;
pub mod eval;
mod model_file;
pub mod network;
pub mod trainer;

pub use baselines::{make_variant, ModelVariant, VariantKind};
pub use coldstart::{
    new_item_prediction, weighted_mode, ColdStartConfig, ColdStartPredictor, NeighborIndex, RatingHistogram,
};
pub use data::{
    hold_out_items, kfold, load_csv, load_movielens, split_holdout, Dataset, ItemProfiles, Rating, RatingScale,
    SparseRatings, SplitAssignment,
};
pub use error::{Error, Result};
pub use eval::{coldstart_experiment, evaluate_cv, evaluate_holdout, grid_search, mae, rmse, GridSpec, MetricReport};
pub use network::{assemble_input, Activation, Network, Topology, WeightSet};
pub use trainer::{train, train_with_observer, LatentMatrix, Phase, TrainConfig, TrainedModel};
