//! Link reconstruction from queried posteriors.
//!
//! The attacker only ever sees its own subgraph and whatever a
//! [`PosteriorQuery`] returns. Evaluation labels travel in
//! [`SealedLabels`], which no function in this module accepts.

mod attention;
mod features;
mod mlp;
mod model;
mod pipeline;

pub use attention::AttentionNet;
pub use features::{
    cosine_similarity, pair_features, pair_features_with, Distance, FeatureOptions, PairFeatures, NUM_BLOCKS,
    NUM_DISTANCES,
};
pub use mlp::Mlp;
pub use model::{
    train_attack_model, AttackModel, AttackTraining, AttackVariant, BinaryClassifier, Standardizer, TrainedAttack,
};
pub use pipeline::{
    all_pairs_evaluation, build_shadow_set, default_evaluation_pairs, reconstruct, EvaluationPairs, PosteriorCache,
    PosteriorQuery, ReconstructionResult, SealedLabels, ShadowPairSet, MAX_ALL_PAIRS_NODES,
};
