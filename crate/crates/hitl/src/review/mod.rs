//! Human review queue: persistent store and HTTP service.

pub mod server;
pub mod store;

pub use server::{router, serve, AppState};
pub use store::{DecidedTotals, ItemContent, ModelVote, Progress, ReviewError, ReviewItem, ReviewStatus, ReviewStore, Snapshot};
