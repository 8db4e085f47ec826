//! Forethought: behavior features, the narration grammar, task predicates,
//! selection backends and the latent classifier baseline.

mod backend;
mod classifier;
mod features;
mod narration;
mod task;

pub use backend::{
    oracle_monitor, oracle_select, CandidateScore, MonitorVerdict, NarrateRequest,
    OracleVerifier, Verdict, VerifierBackend,
};
pub use classifier::{classify, pooled_features, train_latent_classifier, ClassifierConfig, ClassifierParams};
pub use features::{extract_features, nearest_region, thresholds, BehaviorFeatures, CrushLevel, LiftHeight};
pub use narration::{grammar_templates, parse, render, Narration};
pub use task::{Predicate, TaskSpec, WeightedPredicate};
