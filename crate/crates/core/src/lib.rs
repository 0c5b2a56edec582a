//! Training-free LLM routing from pairwise feedback.
//!
//! A global ELO table summarises every comparison ever collected; for each
//! query a local table is derived by replaying the most similar past
//! comparisons on top of it. The two are blended and the best model within
//! the caller's per-query budget is chosen.
//!
//! ```
//! use eagle_core::{route, FeedbackStore, ModelRegistry, RatingTable, RouterConfig, RoutingRequest, Embedding};
//!
//! let registry = ModelRegistry::new([("small", 0.1), ("large", 1.0)]).unwrap();
//! let store = FeedbackStore::new(3).unwrap();
//! let request = RoutingRequest {
//!     embedding: Embedding::new(vec![0.2, 0.1, 0.7]).unwrap(),
//!     budget: 0.5,
//!     request_id: "r-1".into(),
//! };
//! let decision = route(&request, &RatingTable::new(), &store, &registry, &RouterConfig::default()).unwrap();
//! assert_eq!(decision.chosen.as_str(), "small");
//! ```

pub mod baselines;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod rating;
pub mod router;
pub mod store;

pub use baselines::{
    baseline_select, knn_predict, oracle_select, KnnBaseline, KnnBaselineConfig, QualityRecord,
};
pub use error::{Error, Result};
pub use exec::Exec;
pub use model::ModelId;
pub use rating::{
    compute_global, expected_score, extend_in_place, incremental_update, update_rating, EloConfig,
    MatchOutcome, RatingTable,
};
pub use router::{
    combined_scores, fused_scores, local_scores, pick_comparison, route, select, FusedScores,
    ModelEntry, ModelRegistry, RouterConfig, RoutingDecision, RoutingRequest,
};
pub use store::{
    cosine_similarity, for_each_record, Embedding, FeedbackRecord, FeedbackStore, Neighbor,
};
