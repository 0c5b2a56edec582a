//! HTTP front end for the router: routing, feedback ingestion with online
//! rating updates, registry management, and snapshots.
//!
//! Files kept under the data directory:
//!
//! - `feedback.jsonl`: append-only feedback log, one record per line
//! - `registry.json`: model registry
//! - `ratings.json`: global table as of the last write, for auditing

mod embed;
mod error;
mod http;
mod state;
mod verify;

pub use embed::{EmbedError, EmbeddingClient, EmbeddingClientConfig, DEFAULT_EMBED_TIMEOUT_MS};
pub use error::ApiError;
pub use http::{app, serve};
pub use state::{
    FeedbackRequest, FeedbackResponse, ModelUpdate, RatingsFile, RestoreRequest, RouteRequest,
    Service, ServiceConfig, SnapshotInfo, SnapshotRequest, DEFAULT_DIM, FEEDBACK_FILE,
    RATINGS_FILE, REGISTRY_FILE, SNAPSHOT_DIR,
};
pub use verify::{verify_data_dir, Divergence, VerifyReport};
